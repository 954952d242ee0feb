//! Executes plans on concrete data.
//!
//! Every device holds a box of element ids, where an element's id is its
//! row-major index in the global array. Steps copy ids between devices the
//! way the collective would, reading source boxes from the data itself, and
//! the result is compared with the tiles the types say should be there.
//!
//! Memory convention: a gather is charged its destination buffer only, as if
//! the source tile were released before the result is assembled.

use serde::Serialize;

use crate::collectives::{CollectiveOp, OpKind, Plan, Step};
use crate::cost::count_transfers;
use crate::mesh::Mesh;
use crate::semantics::{DeviceAssignment, DeviceMap};
use crate::types::DistType;

/// Default cap on simulated global elements; `REDISTILL_MAX_SIM_ELEMENTS`
/// overrides it.
pub const DEFAULT_MAX_ELEMENTS: u64 = 1 << 24;

/// Marks tile slots not yet written; element ids stay below it.
const EMPTY: u32 = u32::MAX;

pub fn max_elements() -> u64 {
    std::env::var("REDISTILL_MAX_SIM_ELEMENTS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(DEFAULT_MAX_ELEMENTS)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceState {
    pub global: Vec<u64>,
    pub tile: Vec<u64>,
    /// Row-major tile contents, indexed by device id.
    pub data: Vec<Vec<u32>>,
}

fn row_major_strides(shape: &[u64]) -> Vec<u64> {
    let mut strides = vec![1u64; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

impl DeviceState {
    pub fn device_count(&self) -> usize {
        self.data.len()
    }

    /// The lowest global index of a device's box, read off its first element.
    pub fn origin(&self, device: usize) -> Vec<u64> {
        let mut id = self.data[device].first().copied().unwrap_or(0) as u64;
        let strides = row_major_strides(&self.global);
        strides
            .iter()
            .map(|&s| {
                let c = id / s;
                id %= s;
                c
            })
            .collect()
    }

    pub fn total_elements(&self) -> usize {
        self.data.iter().map(Vec::len).sum()
    }
}

/// Fills every device with the box its assignment gives it.
pub fn materialize(mesh: &Mesh, t: &DistType, phi: &DeviceMap) -> DeviceState {
    let assignment = DeviceAssignment::of_type(mesh, t, phi.clone()).expect("well-formed type");
    let global = t.globaltype();
    let tile = t.localtype();
    let strides = row_major_strides(&global);
    let data = (0..assignment.device_count())
        .map(|d| {
            let origin = assignment.offset_of_device(d);
            let mut out = Vec::with_capacity(tile.iter().product::<u64>() as usize);
            for_each_row(&tile, |idx| {
                let base: u64 = idx
                    .iter()
                    .zip(&origin)
                    .zip(&strides)
                    .map(|((i, o), s)| (i + o) * s)
                    .sum();
                let len = *tile.last().expect("rank >= 1");
                out.extend((base..base + len).map(|x| x as u32));
            });
            out
        })
        .collect();
    DeviceState { global, tile, data }
}

/// Calls `f` with the index of the first element of every row of `shape`
/// (last coordinate zero).
fn for_each_row(shape: &[u64], mut f: impl FnMut(&[u64])) {
    if shape.contains(&0) {
        return;
    }
    let r = shape.len();
    let mut idx = vec![0u64; r];
    loop {
        f(&idx);
        let mut k = r.saturating_sub(1);
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepTrace {
    pub op: String,
    /// Largest buffer any device holds during the step.
    pub peak: u64,
    /// Elements received from other devices, over all devices.
    pub moved: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub steps: Vec<StepTrace>,
    pub initial_peak: u64,
    pub state: DeviceState,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub step: usize,
    pub message: String,
}

impl std::fmt::Display for Divergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step {}: {}", self.step, self.message)
    }
}

/// Devices whose points differ from `device`'s only along `axes`, under `phi`.
fn group(mesh: &Mesh, phi: &DeviceMap, device: usize, axes: &[String]) -> Vec<usize> {
    let base = mesh.coord(phi.point_of(device));
    let positions: Vec<usize> = axes.iter().map(|a| mesh.position(a).expect("mesh axis")).collect();
    let mut out = vec![device];
    let mut coord = base.clone();
    let sizes: Vec<u64> = positions.iter().map(|&p| mesh.axes()[p].size).collect();
    let mut digits = vec![0u64; positions.len()];
    loop {
        let mut k = 0;
        while k < digits.len() {
            digits[k] += 1;
            if digits[k] < sizes[k] {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
        if k == digits.len() {
            break;
        }
        for (j, &p) in positions.iter().enumerate() {
            coord[p] = (base[p] + digits[j]) % sizes[j];
        }
        out.push(phi.device_of(mesh.point(&coord)));
    }
    out
}

/// The part of a source device's box that lands in a destination box.
struct Piece {
    source: usize,
    origin: Vec<u64>,
    lo: Vec<u64>,
    hi: Vec<u64>,
}

/// Executes one step. Each destination box is assembled from the step's
/// source devices; the device's own data is used first.
pub fn execute_step(
    mesh: &Mesh,
    state: &DeviceState,
    step: &Step,
    index: usize,
) -> Result<(DeviceState, StepTrace), Divergence> {
    let diverge = |message: String| Divergence { step: index, message };
    let n = state.device_count();
    let tile = step.after_type.localtype();
    let size: u64 = tile.iter().product();
    let global = &state.global;
    let mut data = Vec::with_capacity(n);
    let mut moved = 0u64;
    for d in 0..n {
        let sources: Vec<usize> = match &step.op {
            CollectiveOp::DynSlice { .. } => vec![d],
            CollectiveOp::AllGather { axes, .. } | CollectiveOp::AllToAll { axes, .. } => {
                group(mesh, &step.after.phi, d, axes)
            }
            CollectiveOp::DevicePermute { pi } => vec![pi.apply(d)],
            CollectiveOp::AllPermute { .. } => return Err(diverge("typed permute has no device form".into())),
        };
        let dest_origin = step.after.offset_of_device(d);
        let boxes: Vec<Piece> = sources
            .iter()
            .filter_map(|&s| {
                let src_origin = state.origin(s);
                let lo: Vec<u64> = dest_origin.iter().zip(&src_origin).map(|(a, b)| *a.max(b)).collect();
                let hi: Vec<u64> = (0..global.len())
                    .map(|k| (dest_origin[k] + tile[k]).min(src_origin[k] + state.tile[k]))
                    .collect();
                lo.iter().zip(&hi).all(|(l, h)| l < h).then_some(Piece {
                    source: s,
                    origin: src_origin,
                    lo,
                    hi,
                })
            })
            .collect();
        // Disjoint pieces can be copied blindly; overlaps keep the first writer.
        let disjoint = boxes.iter().enumerate().all(|(i, a)| {
            boxes[i + 1..]
                .iter()
                .all(|b| (0..global.len()).any(|k| a.hi[k] <= b.lo[k] || b.hi[k] <= a.lo[k]))
        });
        let mut out = vec![if disjoint { 0 } else { EMPTY }; size as usize];
        let mut missing = size;
        let dst_strides = row_major_strides(&tile);
        let src_strides = row_major_strides(&state.tile);
        for Piece {
            source: s,
            origin: src_origin,
            lo,
            hi,
        } in &boxes
        {
            let s = *s;
            let src = &state.data[s];
            let ext: Vec<u64> = lo.iter().zip(hi).map(|(l, h)| h - l).collect();
            let len = *ext.last().expect("rank >= 1") as usize;
            for_each_row(&ext, |idx| {
                let at = |origin: &[u64], strides: &[u64]| -> usize {
                    idx.iter()
                        .enumerate()
                        .map(|(k, i)| (lo[k] + i - origin[k]) * strides[k])
                        .sum::<u64>() as usize
                };
                let di = at(&dest_origin, &dst_strides);
                let si = at(src_origin, &src_strides);
                if disjoint || out[di..di + len].iter().all(|&v| v == EMPTY) {
                    out[di..di + len].copy_from_slice(&src[si..si + len]);
                    missing -= len as u64;
                    if s != d {
                        moved += len as u64;
                    }
                    return;
                }
                for k in 0..len {
                    if out[di + k] == EMPTY {
                        out[di + k] = src[si + k];
                        missing -= 1;
                        if s != d {
                            moved += 1;
                        }
                    }
                }
            });
        }
        if missing != 0 {
            return Err(diverge(format!(
                "device {d}: {missing} elements of the tile at {dest_origin:?} are held by no source"
            )));
        }
        data.push(out);
    }
    let peak = match step.op.kind() {
        OpKind::AllGather => data.iter().map(Vec::len).max().unwrap_or(0),
        _ => state.data.iter().map(Vec::len).max().unwrap_or(0),
    } as u64;
    let next = DeviceState {
        global: global.clone(),
        tile,
        data,
    };
    Ok((
        next,
        StepTrace {
            op: step.op.to_string(),
            peak,
            moved,
        },
    ))
}

/// Describes the first element where `actual` differs from the tiles `t`
/// puts on devices under `phi`.
fn mismatch(mesh: &Mesh, t: &DistType, phi: &DeviceMap, actual: &DeviceState) -> Option<String> {
    let assignment = DeviceAssignment::of_type(mesh, t, phi.clone()).expect("well-formed type");
    let tile = t.localtype();
    if actual.tile != tile {
        return Some(format!("tile shape {:?}, expected {tile:?}", actual.tile));
    }
    let strides = row_major_strides(&actual.global);
    let len = *tile.last().expect("rank >= 1");
    for d in 0..actual.device_count() {
        let origin = assignment.offset_of_device(d);
        let data = &actual.data[d];
        let mut k = 0usize;
        let mut bad = None;
        for_each_row(&tile, |idx| {
            if bad.is_some() {
                return;
            }
            let base: u64 = idx
                .iter()
                .zip(&origin)
                .zip(&strides)
                .map(|((i, o), s)| (i + o) * s)
                .sum();
            let row = &data[k..k + len as usize];
            if let Some(j) = (base..base + len).zip(row).position(|(e, &a)| e != a as u64) {
                bad = Some((k + j, base + j as u64, row[j]));
            }
            k += len as usize;
        });
        if let Some((at, want, found)) = bad {
            return Some(format!(
                "device {d} differs at tile offset {at}: expected element {want}, found {found}"
            ));
        }
    }
    None
}

/// Runs a plan from the materialized source, checking every step against
/// the assignment it claims to produce and the end against the target.
pub fn execute(plan: &Plan) -> Result<ExecutionTrace, Divergence> {
    let mut state = materialize(&plan.mesh, &plan.source, &plan.phi0);
    let initial_peak = state.data.iter().map(Vec::len).max().unwrap_or(0) as u64;
    let mut steps = Vec::with_capacity(plan.steps.len());
    for (index, step) in plan.steps.iter().enumerate() {
        let (next, trace) = execute_step(&plan.mesh, &state, step, index)?;
        if let Some(m) = mismatch(&plan.mesh, &step.after_type, &step.after.phi, &next) {
            return Err(Divergence {
                step: index,
                message: m,
            });
        }
        state = next;
        steps.push(trace);
    }
    if let Some(m) = mismatch(&plan.mesh, &plan.target, &plan.phi0, &state) {
        return Err(Divergence {
            step: plan.steps.len(),
            message: format!("final state: {m}"),
        });
    }
    Ok(ExecutionTrace {
        steps,
        initial_peak,
        state,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub correct: bool,
    pub type_checks: bool,
    pub measured_height: u64,
    pub plan_height: u64,
    pub bound: u64,
    pub within_bound: bool,
    pub per_step_moved: Vec<u64>,
    pub model_counts: Vec<u64>,
    pub model_cost: u64,
    pub failures: Vec<String>,
}

impl VerificationReport {
    pub fn ok(&self) -> bool {
        self.correct && self.type_checks && self.within_bound && self.failures.is_empty()
    }
}

/// Simulates a plan and compares the measurements with the cost model.
/// The bound is the larger endpoint local size.
pub fn verify(plan: &Plan) -> VerificationReport {
    let bound = plan.source.localsize().max(plan.target.localsize());
    let model_counts: Vec<u64> = plan.steps.iter().map(count_transfers).collect();
    let mut report = VerificationReport {
        correct: false,
        type_checks: true,
        measured_height: 0,
        plan_height: plan.height,
        bound,
        within_bound: false,
        per_step_moved: Vec::new(),
        model_counts,
        model_cost: plan.cost,
        failures: Vec::new(),
    };
    if let Err(e) = plan.check() {
        report.type_checks = false;
        report.failures.push(format!("type check: {e}"));
    }
    let limit = max_elements();
    if plan.source.globalsize() > limit {
        report.failures.push(format!(
            "global array of {} elements exceeds the simulation limit {limit}",
            plan.source.globalsize()
        ));
        return report;
    }
    match execute(plan) {
        Ok(trace) => {
            report.correct = true;
            report.measured_height = trace
                .steps
                .iter()
                .map(|s| s.peak)
                .chain([trace.initial_peak])
                .max()
                .unwrap_or(0);
            report.per_step_moved = trace.steps.iter().map(|s| s.moved).collect();
        }
        Err(e) => report.failures.push(format!("divergence at {e}")),
    }
    if report.correct && report.measured_height != plan.height {
        report.failures.push(format!(
            "measured height {} differs from plan height {}",
            report.measured_height, plan.height
        ));
    }
    report.within_bound = report.correct && report.measured_height <= bound;
    let delta = plan.mesh.device_count() as u64;
    for (k, (s, (&moved, &model))) in plan
        .steps
        .iter()
        .zip(report.per_step_moved.iter().zip(&report.model_counts))
        .enumerate()
    {
        if moved > model {
            report
                .failures
                .push(format!("step {k}: moved {moved} exceeds the model count {model}"));
        }
        if model != delta * s.cost() {
            report.failures.push(format!(
                "step {k}: transfer count {model} is not {delta} x {}",
                s.cost()
            ));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collectives::lower_ops;

    fn mesh(s: &str) -> Mesh {
        s.parse().unwrap()
    }
    fn ty(s: &str) -> DistType {
        s.parse().unwrap()
    }

    #[test]
    fn replicated_and_single_device() {
        let m = mesh("{x:2}");
        let s = materialize(&m, &ty("[2, 3]"), &DeviceMap::identity(2));
        assert_eq!(s.data[0], (0..6).collect::<Vec<u32>>());
        assert_eq!(s.data[0], s.data[1]);
        let one = materialize(&mesh("{u:1}"), &ty("[4]"), &DeviceMap::identity(1));
        assert_eq!(one.data, vec![vec![0, 1, 2, 3]]);
    }

    #[test]
    fn column_split() {
        let m = mesh("{devs:32}");
        let s = materialize(&m, &ty("[32, 64{devs}2048]"), &DeviceMap::identity(32));
        for k in 0..32u32 {
            assert_eq!(s.origin(k as usize), vec![0, 64 * k as u64]);
            assert_eq!(s.data[k as usize][..3], [64 * k, 64 * k + 1, 64 * k + 2]);
        }
    }

    #[test]
    fn gather_then_slice_round_trip() {
        let m = mesh("{x:2, y:2}");
        let t = ty("[2{x}4, 2{y}4]");
        let steps = lower_ops(
            &m,
            &t,
            DeviceMap::identity(4),
            &[CollectiveOp::all_gather(0, &["x"]), CollectiveOp::dyn_slice(0, &["x"])],
        )
        .unwrap();
        let plan = Plan::new(m, t.clone(), t, DeviceMap::identity(4), steps);
        let r = verify(&plan);
        assert!(r.correct && r.type_checks && r.failures.is_empty(), "{r:?}");
        assert!(!r.within_bound);
        assert_eq!(r.measured_height, 8);
        assert_eq!(r.per_step_moved, vec![16, 0]);
    }
}
