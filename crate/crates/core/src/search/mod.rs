//! End-to-end synthesis: prime decomposition, cheapest path over local
//! shapes, lowering to device steps, and placement of the single permute.

mod graph;
mod lower;

pub use graph::{
    shortest_paths, sub_multisets, Node, SearchFailure, ShortestPaths, WeakEdge, WeakGraph, WeakOp, WeakPath,
};
pub use lower::{concretize, lower_path, place_final_permute};

use thiserror::Error;

use crate::collectives::{CollectiveError, OpKind, Plan, PlanRecord};
use crate::decompose::{decompose_primes, AxisSplitMap};
use crate::mesh::Mesh;
use crate::semantics::DeviceMap;
use crate::types::{DistType, WellFormedError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisOptions {
    /// Per-device element bound; defaults to the larger endpoint local size.
    pub memory_bound: Option<u64>,
    /// How many mesh factors beyond those of the endpoints an intermediate
    /// shape may partition with. `None` leaves it to the memory bound.
    pub over_partition_cap: Option<usize>,
    /// Among cheapest weak paths, take the one whose lowering costs least,
    /// which usually means the one needing no permute.
    pub prefer_permute_free: bool,
    /// Settled-node limit for the search.
    pub node_limit: usize,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            memory_bound: None,
            over_partition_cap: None,
            prefer_permute_free: true,
            node_limit: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SynthesisError {
    #[error("global types differ: {source_type} has {from:?}, {target_type} has {to:?}")]
    InvalidRedistribution {
        source_type: String,
        target_type: String,
        from: Vec<u64>,
        to: Vec<u64>,
    },
    #[error(transparent)]
    IllFormed(#[from] WellFormedError),
    #[error("global size overflows 64 bits")]
    Overflow,
    #[error("memory bound {bound} is below the endpoint local size {required}")]
    BoundTooSmall { bound: u64, required: u64 },
    #[error("no program within the memory bound and over-partition cap")]
    NoPath,
    #[error("search exceeded {0} settled nodes")]
    TooLarge(usize),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<CollectiveError> for SynthesisError {
    fn from(e: CollectiveError) -> Self {
        SynthesisError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    /// Steps over the prime mesh. Device ids coincide with the original mesh.
    pub plan: Plan,
    pub original_mesh: Mesh,
    pub splits: AxisSplitMap,
    pub weak_path: WeakPath,
    /// Index of the permute step, if one was needed.
    pub final_permute: Option<usize>,
    pub bound: u64,
    pub settled_nodes: usize,
}

impl SynthesisResult {
    pub fn cost(&self) -> u64 {
        self.plan.cost
    }

    pub fn height(&self) -> u64 {
        self.plan.height
    }

    /// The plan with axes shown over the original mesh where possible.
    pub fn record(&self) -> PlanRecord {
        let mut r = self.plan.to_record(Some(&self.splits));
        r.mesh = self.original_mesh.to_string();
        r
    }
}

/// Checks well-formedness and equal global shapes.
pub fn check_problem(mesh: &Mesh, t1: &DistType, t2: &DistType) -> Result<(), SynthesisError> {
    t1.validate(mesh)?;
    t2.validate(mesh)?;
    if t1.globaltype() != t2.globaltype() {
        return Err(SynthesisError::InvalidRedistribution {
            source_type: t1.to_string(),
            target_type: t2.to_string(),
            from: t1.globaltype(),
            to: t2.globaltype(),
        });
    }
    if t1.checked_globalsize().is_none() {
        return Err(SynthesisError::Overflow);
    }
    Ok(())
}

/// Per-prime maximum of two sorted multisets.
fn max_union(a: &[u64], b: &[u64]) -> usize {
    let mut primes: Vec<u64> = a.iter().chain(b).copied().collect();
    primes.sort_unstable();
    primes.dedup();
    primes
        .iter()
        .map(|p| {
            a.iter()
                .filter(|&x| x == p)
                .count()
                .max(b.iter().filter(|&x| x == p).count())
        })
        .sum()
}

/// Builds the bounded weak graph of a problem already over a prime mesh.
pub fn weak_graph(
    mesh: &Mesh,
    t1: &DistType,
    t2: &DistType,
    options: &SynthesisOptions,
) -> Result<WeakGraph, SynthesisError> {
    let required = t1.localsize().max(t2.localsize());
    let bound = options.memory_bound.unwrap_or(required);
    if bound < required {
        return Err(SynthesisError::BoundTooSmall { bound, required });
    }
    let unbounded = WeakGraph::new(mesh, t1.globaltype(), bound, None);
    let max_used = options
        .over_partition_cap
        .map(|cap| max_union(&unbounded.used(&t1.localtype()), &unbounded.used(&t2.localtype())) + cap);
    Ok(WeakGraph::new(mesh, t1.globaltype(), bound, max_used))
}

/// Synthesizes a device-level program taking `t1` to `t2` within the memory
/// bound. The plan starts and ends under the identity device map.
pub fn synthesize(
    mesh: &Mesh,
    t1: &DistType,
    t2: &DistType,
    options: &SynthesisOptions,
) -> Result<SynthesisResult, SynthesisError> {
    check_problem(mesh, t1, t2)?;
    let d = decompose_primes(mesh, t1, t2)?;
    let graph = weak_graph(&d.mesh, &d.source, &d.target, options)?;
    let sp =
        shortest_paths(&graph, &d.source.localtype(), &d.target.localtype(), options.node_limit).map_err(
            |f| match f {
                SearchFailure::NoPath => SynthesisError::NoPath,
                SearchFailure::TooLarge { settled } => SynthesisError::TooLarge(settled),
            },
        )?;
    let phi0 = DeviceMap::identity(d.mesh.device_count());
    let lower = |path: &WeakPath| -> Result<(Plan, Option<usize>), SynthesisError> {
        let (steps, placed) = lower_path(&d.mesh, &d.source, &d.target, &phi0, &path.ops)?;
        let plan = Plan::new(d.mesh.clone(), d.source.clone(), d.target.clone(), phi0.clone(), steps);
        Ok((plan, placed))
    };
    let mut path = sp.best();
    let (mut plan, mut placed) = lower(&path)?;
    if options.prefer_permute_free && placed.is_some() {
        for other in sp.enumerate(64).into_iter().skip(1) {
            let (p, at) = lower(&other)?;
            if (p.cost, p.permute_count()) < (plan.cost, plan.permute_count()) {
                plan = p;
                placed = at;
                path = other;
            }
        }
    }
    debug_assert!(plan.check().is_ok(), "{:?}", plan.check());
    if plan.height > graph.bound() {
        return Err(SynthesisError::Internal(format!(
            "plan height {} exceeds bound {}",
            plan.height,
            graph.bound()
        )));
    }
    debug_assert!(plan.steps.iter().filter(|s| s.op.kind() == OpKind::AllPermute).count() <= 1);
    Ok(SynthesisResult {
        bound: graph.bound(),
        settled_nodes: sp.settled,
        plan,
        original_mesh: mesh.clone(),
        splits: d.splits,
        weak_path: path,
        final_permute: placed,
    })
}
