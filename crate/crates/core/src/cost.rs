//! Data-transfer cost model.
//!
//! Costs are element counts normalized per device. `count_transfers` derives
//! the unnormalized totals from how each collective moves data, which must
//! equal the device count times the normalized cost.

use serde::Serialize;

use crate::collectives::{CollectiveOp, OpKind, Plan, Step};
use crate::types::DistType;

/// Maps an op and the local sizes around it to a nonnegative cost.
pub trait CostModel {
    fn cost(&self, kind: OpKind, before_localsize: u64, after_localsize: u64) -> u64;
}

/// Elements communicated per device: permutes and all-to-alls ship the whole
/// source tile, gathers receive the whole destination tile, slices are local.
#[derive(Debug, Clone, Copy, Default)]
pub struct TransferCost;

impl CostModel for TransferCost {
    fn cost(&self, kind: OpKind, before: u64, after: u64) -> u64 {
        match kind {
            OpKind::AllPermute | OpKind::AllToAll => before,
            OpKind::AllGather => after,
            OpKind::DynSlice => 0,
        }
    }
}

pub fn step_cost(t1: &DistType, op: &CollectiveOp, t2: &DistType) -> u64 {
    TransferCost.cost(op.kind(), t1.localsize(), t2.localsize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub per_step: Vec<u64>,
    pub total: u64,
    pub height: u64,
}

/// Costs a chain `types[0] -ops[0]-> types[1] ...`.
pub fn sequence_cost(types: &[DistType], ops: &[CollectiveOp]) -> CostReport {
    assert_eq!(types.len(), ops.len() + 1, "a chain has one more type than ops");
    let per_step: Vec<u64> = ops
        .iter()
        .enumerate()
        .map(|(i, op)| step_cost(&types[i], op, &types[i + 1]))
        .collect();
    CostReport {
        total: per_step.iter().sum(),
        height: types.iter().map(DistType::localsize).max().unwrap_or(0),
        per_step,
    }
}

pub fn plan_cost(plan: &Plan) -> CostReport {
    let per_step: Vec<u64> = plan
        .steps
        .iter()
        .map(|s| step_cost(&s.before_type, &s.op, &s.after_type))
        .collect();
    let height = plan
        .steps
        .iter()
        .map(|s| s.after_type.localsize())
        .chain(std::iter::once(plan.source.localsize()))
        .max()
        .expect("nonempty");
    CostReport {
        total: per_step.iter().sum(),
        height,
        per_step,
    }
}

/// Total elements moved by a step, summed over all devices.
pub fn count_transfers(step: &Step) -> u64 {
    let devices = step.before.device_count() as u64;
    let local = step.before_type.localsize();
    let mesh = step.before.beta.mesh();
    let group = || -> u64 {
        step.op
            .axes()
            .iter()
            .map(|a| mesh.size_of(a).expect("op axes belong to the mesh"))
            .product()
    };
    match step.op.kind() {
        OpKind::DynSlice => 0,
        OpKind::AllPermute => devices * local,
        // Every ordered pair inside each group exchanges one source tile.
        OpKind::AllGather => {
            let n = group();
            (devices / n) * n * n * local
        }
        // Every device sends one of its n chunks to each group member.
        OpKind::AllToAll => {
            let n = group();
            devices * n * (local / n)
        }
    }
}
