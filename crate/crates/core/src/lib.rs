//! Synthesis of collective programs that redistribute sharded arrays across
//! a device mesh without exceeding a per-device memory bound.
//!
//! The pipeline: parse a mesh and two distributed types, split composite mesh
//! axes into prime axes, find a cheapest program over local shapes, lower it
//! to concrete collectives on devices, and check the result by simulation.

pub mod collectives;
pub mod cost;
pub mod decompose;
pub mod mesh;
pub mod normalizer;
pub mod parse;
pub mod problem;
pub mod search;
pub mod semantics;
pub mod simulator;
pub mod types;

pub use collectives::{apply_low_level, apply_typed, typed_steps_of, CollectiveOp, OpKind, Plan, Step};
pub use cost::{count_transfers, plan_cost, step_cost, CostModel, CostReport, TransferCost};
pub use decompose::{decompose_primes, AxisSplitMap, Decomposition};
pub use mesh::{Axis, Mesh};
pub use parse::{parse_mesh, parse_type, ParseError};
pub use search::{synthesize, SynthesisError, SynthesisOptions, SynthesisResult};
pub use semantics::{
    assignment_equivalent, find_permutation, offset_map_of, weak_equal, BaseOffsetMap, DeviceAssignment, DeviceMap,
    Permutation,
};
pub use simulator::{verify, VerificationReport};
pub use types::{DistDim, DistType, WellFormedError};
