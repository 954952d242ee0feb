//! Turning a weak path into device steps.
//!
//! Each weak op is given concrete axes, chosen so that the final type comes
//! out as close to the target as possible. If the end state still differs
//! from the target assignment, one device permute fixes it up; that permute
//! is then moved in front of any trailing gathers, where tiles are smaller.

use std::cmp::Reverse;

use crate::collectives::{apply_low_level, permute_step, CollectiveError, CollectiveOp, Step};
use crate::mesh::Mesh;
use crate::semantics::{assignment_equivalent, DeviceAssignment, DeviceMap};
use crate::types::DistType;

use super::graph::WeakOp;

/// Where an axis sits in the target: the dimension and list position.
fn target_slot(t2: &DistType, axis: &str) -> Option<(usize, usize)> {
    let dim = t2.dim_of(axis)?;
    let pos = t2.dims[dim].axes.iter().position(|a| a == axis)?;
    Some((dim, pos))
}

/// Picks one candidate of each prime size in `factors`, smallest key first.
fn pick<K: Ord>(mesh: &Mesh, candidates: &[String], factors: &[u64], key: impl Fn(&str) -> K) -> Option<Vec<String>> {
    let mut sorted: Vec<&String> = candidates.iter().collect();
    sorted.sort_by_key(|a| key(a));
    let mut chosen: Vec<String> = Vec::new();
    for &p in factors {
        let a = sorted
            .iter()
            .find(|a| mesh.size_of(a) == Some(p) && !chosen.contains(a))?;
        chosen.push((*a).clone());
    }
    Some(chosen)
}

/// Concrete axes for a weak op applied to `current`, biased toward `t2`.
pub fn concretize(mesh: &Mesh, current: &DistType, t2: &DistType, op: &WeakOp) -> Option<CollectiveOp> {
    let position_in = |dim: usize, a: &str| current.dims[dim].axes.iter().position(|b| b == a).unwrap_or(usize::MAX);
    let mesh_pos = |a: &str| mesh.position(a).unwrap_or(usize::MAX);
    match op {
        WeakOp::AllGather { dim, factors } => {
            let i = *dim;
            // Gather axes the target does not keep in this dimension, minor-most first.
            let mut axes = pick(mesh, &current.dims[i].axes, factors, |a| {
                let kept = matches!(target_slot(t2, a), Some((d, _)) if d == i);
                (kept, position_in(i, a), mesh_pos(a))
            })?;
            axes.sort_by_key(|a| position_in(i, a));
            Some(CollectiveOp::AllGather { dim: i, axes })
        }
        WeakOp::AllToAll { from, to, factors } => {
            let (i, j) = (*from, *to);
            // Later moves land minor of earlier ones, so move the target's
            // most-major axes of dimension j first.
            let rank = |a: &str| match target_slot(t2, a) {
                Some((d, p)) if d == j => (0, Reverse(p)),
                None => (1, Reverse(0)),
                Some(_) => (2, Reverse(0)),
            };
            let mut axes = pick(mesh, &current.dims[i].axes, factors, |a| {
                (rank(a), position_in(i, a), mesh_pos(a))
            })?;
            axes.sort_by_key(|a| {
                (
                    target_slot(t2, a)
                        .filter(|&(d, _)| d == j)
                        .map_or(usize::MAX, |(_, p)| p),
                    position_in(i, a),
                )
            });
            Some(CollectiveOp::AllToAll { from: i, to: j, axes })
        }
        WeakOp::DynSlice { dim, factors } => {
            let i = *dim;
            let unused: Vec<String> = mesh
                .axes()
                .iter()
                .filter(|a| !current.uses(&a.name))
                .map(|a| a.name.clone())
                .collect();
            let rank = |a: &str| match target_slot(t2, a) {
                Some((d, p)) if d == i => (0, Reverse(p)),
                None => (1, Reverse(0)),
                Some(_) => (2, Reverse(0)),
            };
            let mut axes = pick(mesh, &unused, factors, |a| (rank(a), mesh_pos(a)))?;
            axes.sort_by_key(|a| {
                (
                    target_slot(t2, a)
                        .filter(|&(d, _)| d == i)
                        .map_or(usize::MAX, |(_, p)| p),
                    mesh_pos(a),
                )
            });
            Some(CollectiveOp::DynSlice { dim: i, axes })
        }
    }
}

fn internal(msg: String) -> CollectiveError {
    CollectiveError::Precondition {
        op: "lowering".into(),
        premise: msg,
    }
}

/// Lowers a weak path from `<phi0, [[t1]]>` and appends a device permute if
/// the end state differs from `<phi0, [[t2]]>`. Returns the steps and the
/// index of that permute.
pub fn lower_path(
    mesh: &Mesh,
    t1: &DistType,
    t2: &DistType,
    phi0: &DeviceMap,
    ops: &[WeakOp],
) -> Result<(Vec<Step>, Option<usize>), CollectiveError> {
    let mut state = DeviceAssignment::of_type(mesh, t1, phi0.clone())?;
    let mut ty = t1.clone();
    let mut steps = Vec::with_capacity(ops.len() + 1);
    for op in ops {
        let concrete = concretize(mesh, &ty, t2, op).ok_or_else(|| internal(format!("{op} does not apply to {ty}")))?;
        let s = apply_low_level(mesh, &state, &ty, &concrete)?;
        state = s.after.clone();
        ty = s.after_type.clone();
        steps.push(s);
    }
    let goal = DeviceAssignment::of_type(mesh, t2, phi0.clone())?;
    if assignment_equivalent(&state, &goal) {
        return Ok((steps, None));
    }
    steps.push(permute_step(&state, &ty, goal, t2)?);
    let index = steps.len() - 1;
    place_final_permute(mesh, t2, phi0, steps, index)
}

/// Moves the permute at `index` (the last step) in front of the gathers
/// directly preceding it. Its replacement targets a type that un-gathers
/// `t2`, so the gathers after it finish exactly on `<phi0, [[t2]]>`.
pub fn place_final_permute(
    mesh: &Mesh,
    t2: &DistType,
    phi0: &DeviceMap,
    steps: Vec<Step>,
    index: usize,
) -> Result<(Vec<Step>, Option<usize>), CollectiveError> {
    debug_assert_eq!(index + 1, steps.len());
    let mut first = index;
    while first > 0 && matches!(steps[first - 1].op, CollectiveOp::AllGather { .. }) {
        first -= 1;
    }
    if first == index {
        return Ok((steps, Some(index)));
    }
    // Rebuild the type before the gathers by prepending axes to t2.
    let mut before = t2.clone();
    let mut gathers = Vec::new();
    for s in steps[first..index].iter().rev() {
        let CollectiveOp::AllGather { dim, axes } = &s.op else {
            unreachable!()
        };
        let mut chosen: Vec<String> = Vec::new();
        for a in axes {
            let size = mesh.size_of(a).expect("mesh axis");
            let fresh = |b: &str| !before.uses(b) && !chosen.iter().any(|c| c == b);
            let z = if fresh(a) {
                a.clone()
            } else {
                mesh.axes()
                    .iter()
                    .find(|b| b.size == size && fresh(&b.name))
                    .map(|b| b.name.clone())
                    .ok_or_else(|| internal(format!("no free axis of size {size} to un-gather {t2}")))?
            };
            chosen.push(z);
        }
        let n: u64 = chosen.iter().map(|a| mesh.size_of(a).expect("mesh axis")).product();
        let d = &mut before.dims[*dim];
        d.tile /= n;
        d.axes.splice(0..0, chosen.iter().cloned());
        gathers.push(CollectiveOp::AllGather {
            dim: *dim,
            axes: chosen,
        });
    }
    gathers.reverse();
    let start = &steps[first];
    let (state, witness) = (start.before.clone(), start.before_type.clone());
    let mut out: Vec<Step> = steps[..first].to_vec();
    let goal = DeviceAssignment::of_type(mesh, &before, phi0.clone())?;
    let mut placed = None;
    // An equivalent assignment needs no permute; the gathers simply continue
    // from the rebuilt type.
    let mut cur = if assignment_equivalent(&state, &goal) {
        goal
    } else {
        let p = permute_step(&state, &witness, goal, &before)?;
        let next = p.after.clone();
        out.push(p);
        placed = Some(out.len() - 1);
        next
    };
    let mut ty = before;
    for g in &gathers {
        let s = apply_low_level(mesh, &cur, &ty, g)?;
        cur = s.after.clone();
        ty = s.after_type.clone();
        out.push(s);
    }
    debug_assert_eq!(&ty, t2);
    Ok((out, placed))
}
