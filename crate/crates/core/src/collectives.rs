//! Collective operations on distributed types and on device assignments.
//!
//! The typed level only ever touches the minor-most axes of a dimension.
//! The device level may act on any axis of a dimension: the type is first
//! re-read with those axes minor-most, and the device map is adjusted so that
//! every device keeps its tile, so the re-reading moves no data.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::cost::{plan_cost, step_cost, CostReport};
use crate::decompose::AxisSplitMap;
use crate::mesh::Mesh;
use crate::parse::fmt_name;
use crate::semantics::{
    assignment_equivalent, find_permutation, match_devices, BaseOffsetMap, DeviceAssignment, DeviceMap, Permutation,
    SemanticsError,
};
use crate::types::{DistDim, DistType, WellFormedError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OpKind {
    AllGather,
    DynSlice,
    AllToAll,
    AllPermute,
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OpKind::AllGather => "AllGather",
            OpKind::DynSlice => "DynSlice",
            OpKind::AllToAll => "AllToAll",
            OpKind::AllPermute => "AllPermute",
        })
    }
}

/// A collective. Dimensions are 0-based; axis lists are minor-most first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CollectiveOp {
    AllGather {
        dim: usize,
        axes: Vec<String>,
    },
    DynSlice {
        dim: usize,
        axes: Vec<String>,
    },
    AllToAll {
        from: usize,
        to: usize,
        axes: Vec<String>,
    },
    /// Typed permute: re-distribute to a type with the same local shape.
    AllPermute {
        target: DistType,
    },
    /// Device permute: device `d` receives the tile held by device `pi[d]`.
    DevicePermute {
        pi: Permutation,
    },
}

fn names(axes: &[&str]) -> Vec<String> {
    axes.iter().map(|a| a.to_string()).collect()
}

impl CollectiveOp {
    pub fn all_gather(dim: usize, axes: &[&str]) -> Self {
        CollectiveOp::AllGather { dim, axes: names(axes) }
    }

    pub fn dyn_slice(dim: usize, axes: &[&str]) -> Self {
        CollectiveOp::DynSlice { dim, axes: names(axes) }
    }

    pub fn all_to_all(from: usize, to: usize, axes: &[&str]) -> Self {
        CollectiveOp::AllToAll {
            from,
            to,
            axes: names(axes),
        }
    }

    pub fn all_permute(target: DistType) -> Self {
        CollectiveOp::AllPermute { target }
    }

    pub fn kind(&self) -> OpKind {
        match self {
            CollectiveOp::AllGather { .. } => OpKind::AllGather,
            CollectiveOp::DynSlice { .. } => OpKind::DynSlice,
            CollectiveOp::AllToAll { .. } => OpKind::AllToAll,
            CollectiveOp::AllPermute { .. } | CollectiveOp::DevicePermute { .. } => OpKind::AllPermute,
        }
    }

    /// Axes acted on; empty for permutes.
    pub fn axes(&self) -> &[String] {
        match self {
            CollectiveOp::AllGather { axes, .. }
            | CollectiveOp::DynSlice { axes, .. }
            | CollectiveOp::AllToAll { axes, .. } => axes,
            _ => &[],
        }
    }

    fn with_axes(&self, new_axes: Vec<String>) -> Self {
        match self {
            CollectiveOp::AllGather { dim, .. } => CollectiveOp::AllGather {
                dim: *dim,
                axes: new_axes,
            },
            CollectiveOp::DynSlice { dim, .. } => CollectiveOp::DynSlice {
                dim: *dim,
                axes: new_axes,
            },
            CollectiveOp::AllToAll { from, to, .. } => CollectiveOp::AllToAll {
                from: *from,
                to: *to,
                axes: new_axes,
            },
            other => other.clone(),
        }
    }

    /// The same op with axis names rewritten for display over an original mesh.
    pub fn merged(&self, splits: &AxisSplitMap) -> Self {
        match self {
            CollectiveOp::AllPermute { target } => CollectiveOp::AllPermute {
                target: splits.merge_type(target),
            },
            _ => self.with_axes(splits.merge_axes(self.axes())),
        }
    }
}

impl fmt::Display for CollectiveOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let set = |axes: &[String]| {
            let inner: Vec<String> = axes.iter().map(|a| fmt_name(a)).collect();
            format!("{{{}}}", inner.join(","))
        };
        match self {
            CollectiveOp::AllGather { dim, axes } => write!(f, "allGather({dim}, {})", set(axes)),
            CollectiveOp::DynSlice { dim, axes } => write!(f, "dynSlice({dim}, {})", set(axes)),
            CollectiveOp::AllToAll { from, to, axes } => {
                write!(f, "allToAll({from}, {to}, {})", set(axes))
            }
            CollectiveOp::AllPermute { .. } | CollectiveOp::DevicePermute { .. } => f.write_str("allPermute"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CollectiveError {
    #[error("{op}: {premise}")]
    Precondition { op: String, premise: String },
    #[error(transparent)]
    IllFormed(#[from] WellFormedError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("step {index}: {source}")]
    AtStep { index: usize, source: Box<CollectiveError> },
}

fn violation(op: &CollectiveOp, premise: impl Into<String>) -> CollectiveError {
    CollectiveError::Precondition {
        op: op.to_string(),
        premise: premise.into(),
    }
}

fn axis_product(mesh: &Mesh, op: &CollectiveOp) -> Result<u64, CollectiveError> {
    let axes = op.axes();
    if axes.is_empty() {
        return Err(violation(op, "axis list is empty"));
    }
    let mut n = 1u64;
    for (k, a) in axes.iter().enumerate() {
        if axes[..k].contains(a) {
            return Err(violation(op, format!("axis {a} listed twice")));
        }
        let size = mesh
            .size_of(a)
            .ok_or_else(|| violation(op, format!("axis {a} is not in the mesh")))?;
        n = n
            .checked_mul(size)
            .ok_or_else(|| violation(op, "axis product overflows"))?;
    }
    Ok(n)
}

fn check_dim(t: &DistType, op: &CollectiveOp, dim: usize) -> Result<(), CollectiveError> {
    if dim >= t.rank() {
        return Err(violation(op, format!("dim {dim} out of range for rank {}", t.rank())));
    }
    Ok(())
}

fn check_prefix(t: &DistType, op: &CollectiveOp, dim: usize) -> Result<(), CollectiveError> {
    let have = &t.dims[dim].axes;
    for (k, a) in op.axes().iter().enumerate() {
        if have.get(k) != Some(a) {
            return Err(violation(op, format!("{a} not minor-most in dim {dim}")));
        }
    }
    Ok(())
}

/// Applies a collective to a type, checking the op's typing premises.
pub fn apply_typed(mesh: &Mesh, t: &DistType, op: &CollectiveOp) -> Result<DistType, CollectiveError> {
    t.validate(mesh)?;
    let mut out = t.clone();
    match op {
        CollectiveOp::AllGather { dim, axes } => {
            check_dim(t, op, *dim)?;
            let n = axis_product(mesh, op)?;
            check_prefix(t, op, *dim)?;
            let d = &mut out.dims[*dim];
            d.tile *= n;
            d.axes.drain(..axes.len());
        }
        CollectiveOp::DynSlice { dim, axes } => {
            check_dim(t, op, *dim)?;
            let n = axis_product(mesh, op)?;
            if let Some(a) = axes.iter().find(|a| t.uses(a)) {
                return Err(violation(op, format!("axis {a} already in use")));
            }
            let d = &mut out.dims[*dim];
            if !d.tile.is_multiple_of(n) {
                return Err(violation(
                    op,
                    format!("divisibility: tile {} of dim {dim} is not divisible by {n}", d.tile),
                ));
            }
            d.tile /= n;
            d.axes.splice(0..0, axes.iter().cloned());
        }
        CollectiveOp::AllToAll { from, to, axes } => {
            check_dim(t, op, *from)?;
            check_dim(t, op, *to)?;
            if from == to {
                return Err(violation(op, "source and destination dims coincide"));
            }
            let n = axis_product(mesh, op)?;
            check_prefix(t, op, *from)?;
            if !out.dims[*to].tile.is_multiple_of(n) {
                return Err(violation(
                    op,
                    format!(
                        "divisibility: tile {} of dim {to} is not divisible by {n}",
                        out.dims[*to].tile
                    ),
                ));
            }
            let src = &mut out.dims[*from];
            src.tile *= n;
            src.axes.drain(..axes.len());
            let dst = &mut out.dims[*to];
            dst.tile /= n;
            dst.axes.splice(0..0, axes.iter().cloned());
        }
        CollectiveOp::AllPermute { target } => {
            target.validate(mesh)?;
            if target.globaltype() != t.globaltype() {
                return Err(violation(op, "global types differ"));
            }
            if target.localtype() != t.localtype() {
                return Err(violation(
                    op,
                    format!("local types differ: {:?} vs {:?}", t.localtype(), target.localtype()),
                ));
            }
            out = target.clone();
        }
        CollectiveOp::DevicePermute { .. } => {
            return Err(violation(op, "a device permutation has no typed form"));
        }
    }
    debug_assert!(out.well_formed(mesh));
    Ok(out)
}

/// Chains `apply_typed`, reporting the index of the first failing op.
pub fn typed_steps_of(
    mesh: &Mesh,
    t1: &DistType,
    ops: &[CollectiveOp],
) -> Result<Vec<(DistType, CollectiveOp, DistType)>, CollectiveError> {
    let mut cur = t1.clone();
    let mut out = Vec::with_capacity(ops.len());
    for (index, op) in ops.iter().enumerate() {
        let next = apply_typed(mesh, &cur, op).map_err(|e| CollectiveError::AtStep {
            index,
            source: Box::new(e),
        })?;
        out.push((cur, op.clone(), next.clone()));
        cur = next;
    }
    Ok(out)
}

/// One device-level step with its syntactic witnesses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub op: CollectiveOp,
    pub before: DeviceAssignment,
    pub after: DeviceAssignment,
    pub before_type: DistType,
    pub after_type: DistType,
}

impl Step {
    pub fn cost(&self) -> u64 {
        step_cost(&self.before_type, &self.op, &self.after_type)
    }
}

/// Moves `axes` (all in `dim`) to the front of that dimension's list.
fn bring_forward(t: &DistType, dim: usize, axes: &[String]) -> DistType {
    let mut out = t.clone();
    let d = &mut out.dims[dim];
    let rest: Vec<String> = d.axes.iter().filter(|a| !axes.contains(a)).cloned().collect();
    d.axes = axes.iter().cloned().chain(rest).collect();
    out
}

/// Applies a collective to a device assignment read as `witness`.
///
/// A typed `AllPermute` becomes a `DevicePermute` that keeps the device map
/// and switches to the target type. A `DevicePermute` keeps the type and
/// changes the device map.
pub fn apply_low_level(
    mesh: &Mesh,
    before: &DeviceAssignment,
    witness: &DistType,
    op: &CollectiveOp,
) -> Result<Step, CollectiveError> {
    let beta = BaseOffsetMap::of(mesh, witness)?;
    if !beta.pointwise_eq(&before.beta) {
        return Err(violation(
            op,
            format!("witness {witness} does not denote the assignment"),
        ));
    }
    let step = |op: CollectiveOp, phi: DeviceMap, t: DistType| -> Result<Step, CollectiveError> {
        Ok(Step {
            op,
            before: before.clone(),
            after: DeviceAssignment::of_type(mesh, &t, phi)?,
            before_type: witness.clone(),
            after_type: t,
        })
    };
    match op {
        CollectiveOp::AllGather { dim, axes } | CollectiveOp::AllToAll { from: dim, axes, .. } => {
            check_dim(witness, op, *dim)?;
            axis_product(mesh, op)?;
            if let Some(a) = axes.iter().find(|a| !witness.dims[*dim].axes.contains(a)) {
                return Err(violation(op, format!("{a} does not partition dim {dim}")));
            }
            let relabelled = bring_forward(witness, *dim, axes);
            let sigma = find_permutation(mesh, witness, &relabelled)?;
            let phi = DeviceMap::from_table(before.phi.table().after(&sigma));
            let next = apply_typed(mesh, &relabelled, op)?;
            step(op.clone(), phi, next)
        }
        CollectiveOp::DynSlice { .. } => {
            let next = apply_typed(mesh, witness, op)?;
            step(op.clone(), before.phi.clone(), next)
        }
        CollectiveOp::AllPermute { target } => {
            apply_typed(mesh, witness, op)?;
            let rho = find_permutation(mesh, witness, target)?;
            let phi = &before.phi;
            let pi: Vec<usize> = (0..phi.len())
                .map(|d| phi.device_of(rho.apply(phi.point_of(d))))
                .collect();
            let pi = Permutation::from_vec(pi)?;
            step(CollectiveOp::DevicePermute { pi }, phi.clone(), target.clone())
        }
        CollectiveOp::DevicePermute { pi } => {
            if pi.len() != before.device_count() {
                return Err(violation(op, "permutation size differs from the device count"));
            }
            let table: Vec<usize> = (0..pi.len())
                .map(|p| pi.inverse().apply(before.phi.device_of(p)))
                .collect();
            let phi = DeviceMap::from_table(Permutation::from_vec(table)?);
            step(op.clone(), phi, witness.clone())
        }
    }
}

/// A device permute taking `before` to exactly `after`, if they hold the same tiles.
pub fn permute_step(
    before: &DeviceAssignment,
    before_type: &DistType,
    after: DeviceAssignment,
    after_type: &DistType,
) -> Result<Step, CollectiveError> {
    let pi = match_devices(before, &after).ok_or_else(|| CollectiveError::Precondition {
        op: "allPermute".into(),
        premise: format!("{before_type} and {after_type} hold different tiles"),
    })?;
    Ok(Step {
        op: CollectiveOp::DevicePermute { pi },
        before: before.clone(),
        after,
        before_type: before_type.clone(),
        after_type: after_type.clone(),
    })
}

/// Lowers a typed op list to device steps starting from `<phi0, [[t1]]>`.
pub fn lower_ops(
    mesh: &Mesh,
    t1: &DistType,
    phi0: DeviceMap,
    ops: &[CollectiveOp],
) -> Result<Vec<Step>, CollectiveError> {
    let mut state = DeviceAssignment::of_type(mesh, t1, phi0)?;
    let mut ty = t1.clone();
    let mut out = Vec::with_capacity(ops.len());
    for (index, op) in ops.iter().enumerate() {
        let s = apply_low_level(mesh, &state, &ty, op).map_err(|e| CollectiveError::AtStep {
            index,
            source: Box::new(e),
        })?;
        state = s.after.clone();
        ty = s.after_type.clone();
        out.push(s);
    }
    Ok(out)
}

/// A device-level program for one redistribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plan {
    pub mesh: Mesh,
    pub source: DistType,
    pub target: DistType,
    /// Device map the source starts under, which the target must end under.
    pub phi0: DeviceMap,
    pub steps: Vec<Step>,
    pub cost: u64,
    pub height: u64,
}

impl Plan {
    pub fn new(mesh: Mesh, source: DistType, target: DistType, phi0: DeviceMap, steps: Vec<Step>) -> Self {
        let mut plan = Plan {
            mesh,
            source,
            target,
            phi0,
            steps,
            cost: 0,
            height: 0,
        };
        plan.refresh();
        plan
    }

    /// Recomputes cost and height after editing steps.
    pub fn refresh(&mut self) {
        let report = plan_cost(self);
        self.cost = report.total;
        self.height = report.height;
    }

    pub fn cost_report(&self) -> CostReport {
        plan_cost(self)
    }

    pub fn permute_count(&self) -> usize {
        self.steps.iter().filter(|s| s.op.kind() == OpKind::AllPermute).count()
    }

    pub fn initial(&self) -> DeviceAssignment {
        DeviceAssignment::of_type(&self.mesh, &self.source, self.phi0.clone()).expect("plan source is well-formed")
    }

    pub fn expected_final(&self) -> DeviceAssignment {
        DeviceAssignment::of_type(&self.mesh, &self.target, self.phi0.clone()).expect("plan target is well-formed")
    }

    /// Checks that steps chain, each is a valid device-level transition,
    /// and the result puts the target tiles on the original device map.
    pub fn check(&self) -> Result<(), CollectiveError> {
        let mut state = self.initial();
        for (index, s) in self.steps.iter().enumerate() {
            let at = |e: CollectiveError| CollectiveError::AtStep {
                index,
                source: Box::new(e),
            };
            let witness = BaseOffsetMap::of(&self.mesh, &s.before_type).map_err(|e| at(e.into()))?;
            if !witness.pointwise_eq(&s.before.beta) || !assignment_equivalent(&s.before, &state) {
                return Err(at(violation(&s.op, "step does not continue the previous one")));
            }
            let consistent = if let CollectiveOp::DevicePermute { pi } = &s.op {
                let typed = BaseOffsetMap::of(&self.mesh, &s.after_type).map_err(|e| at(e.into()))?;
                pi.len() == s.before.device_count()
                    && (0..pi.len()).all(|d| s.after.offset_of_device(d) == s.before.offset_of_device(pi.apply(d)))
                    && typed.pointwise_eq(&s.after.beta)
            } else {
                let redo = apply_low_level(&self.mesh, &s.before, &s.before_type, &s.op).map_err(at)?;
                redo.after_type == s.after_type && assignment_equivalent(&redo.after, &s.after)
            };
            if !consistent {
                return Err(at(violation(&s.op, "recorded result disagrees with the op")));
            }
            state = s.after.clone();
        }
        if !assignment_equivalent(&state, &self.expected_final()) {
            return Err(CollectiveError::Precondition {
                op: "plan".into(),
                premise: format!("final tiles do not match {}", self.target),
            });
        }
        Ok(())
    }

    /// Serializable view; with `splits`, axes are shown over the original mesh.
    pub fn to_record(&self, splits: Option<&AxisSplitMap>) -> PlanRecord {
        let show = |t: &DistType| match splits {
            Some(s) => s.merge_type(t).to_string(),
            None => t.to_string(),
        };
        let report = self.cost_report();
        let steps = self
            .steps
            .iter()
            .zip(&report.per_step)
            .map(|(s, &cost)| {
                let op = match splits {
                    Some(sp) => s.op.merged(sp),
                    None => s.op.clone(),
                };
                StepRecord {
                    op: OpRecord::from(&op),
                    before: show(&s.before_type),
                    after: show(&s.after_type),
                    before_local: s.before_type.localtype(),
                    after_local: s.after_type.localtype(),
                    cost,
                }
            })
            .collect();
        PlanRecord {
            mesh: self.mesh.to_string(),
            source: show(&self.source),
            target: show(&self.target),
            steps,
            height: report.height,
            cost: report,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum OpRecord {
    AllGather {
        dim: usize,
        axes: Vec<String>,
    },
    DynSlice {
        dim: usize,
        axes: Vec<String>,
    },
    AllToAll {
        from_dim: usize,
        to_dim: usize,
        axes: Vec<String>,
    },
    AllPermute {
        #[serde(skip_serializing_if = "Option::is_none")]
        target: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        permutation: Option<Vec<usize>>,
    },
}

impl From<&CollectiveOp> for OpRecord {
    fn from(op: &CollectiveOp) -> Self {
        match op {
            CollectiveOp::AllGather { dim, axes } => OpRecord::AllGather {
                dim: *dim,
                axes: axes.clone(),
            },
            CollectiveOp::DynSlice { dim, axes } => OpRecord::DynSlice {
                dim: *dim,
                axes: axes.clone(),
            },
            CollectiveOp::AllToAll { from, to, axes } => OpRecord::AllToAll {
                from_dim: *from,
                to_dim: *to,
                axes: axes.clone(),
            },
            CollectiveOp::AllPermute { target } => OpRecord::AllPermute {
                target: Some(target.to_string()),
                permutation: None,
            },
            CollectiveOp::DevicePermute { pi } => OpRecord::AllPermute {
                target: None,
                permutation: Some(pi.as_slice().to_vec()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepRecord {
    pub op: OpRecord,
    pub before: String,
    pub after: String,
    pub before_local: Vec<u64>,
    pub after_local: Vec<u64>,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PlanRecord {
    pub mesh: String,
    pub source: String,
    pub target: String,
    pub steps: Vec<StepRecord>,
    pub cost: CostReport,
    pub height: u64,
}

/// Builds a dimension list for tests and examples: `dims(&[(3, &["x"], 12)])`.
pub fn dims(layout: &[(u64, &[&str], u64)]) -> DistType {
    DistType::new(
        layout
            .iter()
            .map(|&(tile, axes, global)| DistDim::new(tile, axes.iter().copied(), global))
            .collect(),
    )
}
