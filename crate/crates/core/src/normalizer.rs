//! Rewriting collective sequences into the shape
//! `DynSlice* {AllToAll|AllPermute}* AllGather*`.
//!
//! Slices are moved left and gathers right, so no intermediate type is
//! larger than the larger endpoint. Sequences come in two modes: strong
//! sequences are exact typed traces, weak sequences relate consecutive types
//! only up to a permutation of mesh points and never contain permutes.
//!
//! All rewrites act on two adjacent single-axis ops over a prime mesh and
//! replace the middle type by strictly smaller ones, which bounds the number
//! of rewrites.

use std::cmp::Ordering;
use std::fmt;

use thiserror::Error;

use crate::collectives::{apply_typed, CollectiveError, CollectiveOp, OpKind};
use crate::cost::{sequence_cost, CostReport};
use crate::mesh::Mesh;
use crate::semantics::weak_equal;
use crate::types::DistType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Strong,
    Weak,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NormalizeError {
    #[error("global types differ: {from:?} vs {to:?}")]
    InvalidRedistribution { from: Vec<u64>, to: Vec<u64> },
    #[error("step {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("fragment does not match the rewrite pattern: {0}")]
    PatternMismatch(String),
    #[error("rewriting requires a mesh with prime axis sizes")]
    NotPrime,
    #[error("no fixpoint within {budget} rewrites")]
    NonTermination { budget: usize },
    #[error("rewrite did not decrease the termination measure at op {index}")]
    MeasureNotDecreasing { index: usize },
    #[error(transparent)]
    Collective(#[from] CollectiveError),
}

/// Types `types[0..=n]` linked by `ops[0..n]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedSequence {
    pub mesh: Mesh,
    pub types: Vec<DistType>,
    pub ops: Vec<CollectiveOp>,
    pub mode: Mode,
}

impl TypedSequence {
    /// Builds a strong sequence by applying each op's typing rule.
    pub fn strong(mesh: &Mesh, start: &DistType, ops: &[CollectiveOp]) -> Result<Self, NormalizeError> {
        let mut types = vec![start.clone()];
        for (index, op) in ops.iter().enumerate() {
            let next = apply_typed(mesh, &types[index], op).map_err(|e| NormalizeError::Invalid {
                index,
                reason: e.to_string(),
            })?;
            types.push(next);
        }
        Ok(TypedSequence {
            mesh: mesh.clone(),
            types,
            ops: ops.to_vec(),
            mode: Mode::Strong,
        })
    }

    /// Builds a weak sequence. Op axes are only binding through their sizes;
    /// labels are rewritten to the axes actually used.
    pub fn weak(mesh: &Mesh, start: &DistType, ops: &[CollectiveOp]) -> Result<Self, NormalizeError> {
        let mut types = vec![start.clone()];
        let mut labels = Vec::with_capacity(ops.len());
        for (index, op) in ops.iter().enumerate() {
            let (label, next) =
                weak_apply(mesh, &types[index], op).map_err(|reason| NormalizeError::Invalid { index, reason })?;
            labels.push(label);
            types.push(next);
        }
        Ok(TypedSequence {
            mesh: mesh.clone(),
            types,
            ops: labels,
            mode: Mode::Weak,
        })
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn source(&self) -> &DistType {
        &self.types[0]
    }

    pub fn target(&self) -> &DistType {
        self.types.last().expect("a sequence has at least one type")
    }

    pub fn labels(&self) -> Vec<OpKind> {
        self.ops.iter().map(CollectiveOp::kind).collect()
    }

    pub fn cost(&self) -> CostReport {
        sequence_cost(&self.types, &self.ops)
    }

    pub fn height(&self) -> u64 {
        self.types.iter().map(DistType::localsize).max().unwrap_or(0)
    }

    pub fn is_normal_form(&self) -> bool {
        is_normal_form(&self.labels())
    }

    /// Checks every link under the sequence's mode.
    pub fn validate(&self) -> Result<(), NormalizeError> {
        if self.types.len() != self.ops.len() + 1 {
            return Err(NormalizeError::Invalid {
                index: 0,
                reason: "a sequence needs one more type than ops".into(),
            });
        }
        for (index, op) in self.ops.iter().enumerate() {
            let (from, to) = (&self.types[index], &self.types[index + 1]);
            let ok = match self.mode {
                Mode::Strong => apply_typed(&self.mesh, from, op)
                    .map(|t| &t == to)
                    .map_err(|e| e.to_string()),
                Mode::Weak => to
                    .validate(&self.mesh)
                    .map_err(|e| e.to_string())
                    .and_then(|_| weak_apply(&self.mesh, from, op))
                    .map(|(_, t)| weak_equal(&t, to)),
            };
            match ok {
                Ok(true) => {}
                Ok(false) => {
                    return Err(NormalizeError::Invalid {
                        index,
                        reason: format!("{op} does not lead from {from} to {to}"),
                    })
                }
                Err(reason) => return Err(NormalizeError::Invalid { index, reason }),
            }
        }
        Ok(())
    }

    fn fragment(&self, k: usize) -> TypedSequence {
        TypedSequence {
            mesh: self.mesh.clone(),
            types: self.types[k..=k + 2].to_vec(),
            ops: self.ops[k..=k + 1].to_vec(),
            mode: self.mode,
        }
    }

    /// Replaces ops `k, k+1` (and the type between them) by `piece`.
    fn splice(&self, k: usize, width: usize, piece: TypedSequence) -> TypedSequence {
        let mut out = self.clone();
        out.types.splice(k..=k + width, piece.types);
        out.ops.splice(k..k + width, piece.ops);
        out
    }

    /// Interior local sizes, largest first, then the length. Every rewrite
    /// makes this strictly smaller.
    fn measure(&self) -> (Vec<u64>, usize) {
        let interior = self.types.get(1..self.types.len().saturating_sub(1)).unwrap_or(&[]);
        let mut sizes: Vec<u64> = interior.iter().map(DistType::localsize).collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        (sizes, self.ops.len())
    }
}

impl fmt::Display for TypedSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.types[0])?;
        for (op, t) in self.ops.iter().zip(&self.types[1..]) {
            write!(f, " --{op}--> {t}")?;
        }
        Ok(())
    }
}

/// Matches `DynSlice* {AllToAll|AllPermute}* AllGather*`.
pub fn is_normal_form(labels: &[OpKind]) -> bool {
    let phase = |k: &OpKind| match k {
        OpKind::DynSlice => 0,
        OpKind::AllToAll | OpKind::AllPermute => 1,
        OpKind::AllGather => 2,
    };
    labels.windows(2).all(|w| phase(&w[0]) <= phase(&w[1]))
}

fn size(mesh: &Mesh, axis: &str) -> u64 {
    mesh.size_of(axis).expect("axis of a validated op")
}

/// Axes in the place an op takes them from: the partitioning list of the
/// source dimension, or the unused mesh axes for a slice.
fn pool(mesh: &Mesh, t: &DistType, op: &CollectiveOp) -> Vec<String> {
    match op {
        CollectiveOp::AllGather { dim, .. } | CollectiveOp::AllToAll { from: dim, .. } => {
            t.dims.get(*dim).map(|d| d.axes.clone()).unwrap_or_default()
        }
        _ => mesh
            .axes()
            .iter()
            .filter(|a| !t.uses(&a.name))
            .map(|a| a.name.clone())
            .collect(),
    }
}

/// Applies `op` up to a permutation of mesh points: only the sizes of its
/// axes matter. Returns the op with the axes actually used and the result.
fn weak_apply(mesh: &Mesh, t: &DistType, op: &CollectiveOp) -> Result<(CollectiveOp, DistType), String> {
    t.validate(mesh).map_err(|e| e.to_string())?;
    if op.kind() == OpKind::AllPermute {
        return Err("weak sequences contain no permutes".into());
    }
    let dims_ok = match op {
        CollectiveOp::AllGather { dim, .. } | CollectiveOp::DynSlice { dim, .. } => *dim < t.rank(),
        CollectiveOp::AllToAll { from, to, .. } => *from < t.rank() && *to < t.rank() && from != to,
        _ => false,
    };
    if !dims_ok {
        return Err(format!("{op}: bad dimension for rank {}", t.rank()));
    }
    let available = pool(mesh, t, op);
    let wanted = op.axes();
    if wanted.is_empty() {
        return Err(format!("{op}: axis list is empty"));
    }
    let mut chosen: Vec<String> = Vec::new();
    for (k, a) in wanted.iter().enumerate() {
        let s = mesh
            .size_of(a)
            .ok_or_else(|| format!("{op}: axis {a} is not in the mesh"))?;
        let pick = if available.contains(a) && !chosen.contains(a) {
            Some(a.clone())
        } else {
            available
                .iter()
                .filter(|b| size(mesh, b) == s && !chosen.contains(b))
                .min_by_key(|b| wanted[k + 1..].contains(b))
                .cloned()
        };
        chosen.push(pick.ok_or_else(|| format!("{op}: no axis of size {s} available in {t}"))?);
    }
    let n: u64 = chosen.iter().map(|a| size(mesh, a)).product();
    let mut out = t.clone();
    let label = match op {
        CollectiveOp::AllGather { dim, .. } => {
            let d = &mut out.dims[*dim];
            d.axes.retain(|a| !chosen.contains(a));
            d.tile *= n;
            CollectiveOp::AllGather {
                dim: *dim,
                axes: chosen,
            }
        }
        CollectiveOp::DynSlice { dim, .. } => {
            let d = &mut out.dims[*dim];
            if !d.tile.is_multiple_of(n) {
                return Err(format!("{op}: tile {} not divisible by {n}", d.tile));
            }
            d.tile /= n;
            d.axes.splice(0..0, chosen.iter().cloned());
            CollectiveOp::DynSlice {
                dim: *dim,
                axes: chosen,
            }
        }
        CollectiveOp::AllToAll { from, to, .. } => {
            if !out.dims[*to].tile.is_multiple_of(n) {
                return Err(format!("{op}: tile {} not divisible by {n}", out.dims[*to].tile));
            }
            let src = &mut out.dims[*from];
            src.axes.retain(|a| !chosen.contains(a));
            src.tile *= n;
            let dst = &mut out.dims[*to];
            dst.tile /= n;
            dst.axes.splice(0..0, chosen.iter().cloned());
            CollectiveOp::AllToAll {
                from: *from,
                to: *to,
                axes: chosen,
            }
        }
        _ => unreachable!(),
    };
    Ok((label, out))
}

/// The shortest possible naive program: gather every partitioned dimension
/// of `t1`, then slice into `t2`.
pub fn naive_sequence(mesh: &Mesh, t1: &DistType, t2: &DistType, mode: Mode) -> Result<TypedSequence, NormalizeError> {
    if t1.globaltype() != t2.globaltype() {
        return Err(NormalizeError::InvalidRedistribution {
            from: t1.globaltype(),
            to: t2.globaltype(),
        });
    }
    t2.validate(mesh).map_err(|e| NormalizeError::Invalid {
        index: 0,
        reason: e.to_string(),
    })?;
    let mut ops = Vec::new();
    if t1 != t2 {
        for (i, d) in t1.dims.iter().enumerate() {
            if !d.axes.is_empty() {
                ops.push(CollectiveOp::AllGather {
                    dim: i,
                    axes: d.axes.clone(),
                });
            }
        }
        for (i, d) in t2.dims.iter().enumerate() {
            if !d.axes.is_empty() {
                ops.push(CollectiveOp::DynSlice {
                    dim: i,
                    axes: d.axes.clone(),
                });
            }
        }
    }
    let seq = TypedSequence::strong(mesh, t1, &ops)?;
    debug_assert_eq!(seq.target(), t2);
    Ok(TypedSequence { mode, ..seq })
}

/// Rewrites every multi-axis op as single-axis ops.
fn single_axis(seq: &TypedSequence) -> Result<TypedSequence, NormalizeError> {
    let mut ops = Vec::new();
    for (i, op) in seq.ops.iter().enumerate() {
        let axes = op.axes();
        if axes.len() <= 1 {
            ops.push(op.clone());
            continue;
        }
        match op {
            CollectiveOp::AllGather { dim, .. } => {
                ops.extend(axes.iter().map(|a| CollectiveOp::AllGather {
                    dim: *dim,
                    axes: vec![a.clone()],
                }));
            }
            CollectiveOp::DynSlice { dim, .. } => {
                ops.extend(axes.iter().rev().map(|a| CollectiveOp::DynSlice {
                    dim: *dim,
                    axes: vec![a.clone()],
                }));
            }
            CollectiveOp::AllToAll { from, to, .. } => {
                ops.extend(axes.iter().map(|a| CollectiveOp::AllToAll {
                    from: *from,
                    to: *to,
                    axes: vec![a.clone()],
                }));
                if seq.mode == Mode::Strong {
                    ops.push(CollectiveOp::AllPermute {
                        target: seq.types[i + 1].clone(),
                    });
                }
            }
            _ => ops.push(op.clone()),
        }
    }
    let out = match seq.mode {
        Mode::Strong => TypedSequence::strong(&seq.mesh, seq.source(), &ops)?,
        Mode::Weak => {
            let mut s = TypedSequence::weak(&seq.mesh, seq.source(), &ops)?;
            *s.types.last_mut().expect("nonempty") = seq.target().clone();
            s
        }
    };
    Ok(drop_identity_permutes(out))
}

fn drop_identity_permutes(mut seq: TypedSequence) -> TypedSequence {
    let mut k = 0;
    while k < seq.ops.len() {
        if seq.ops[k].kind() == OpKind::AllPermute && seq.types[k] == seq.types[k + 1] {
            seq.ops.remove(k);
            seq.types.remove(k + 1);
        } else {
            k += 1;
        }
    }
    seq
}

fn single(op: &CollectiveOp) -> Result<&str, NormalizeError> {
    match op.axes() {
        [a] => Ok(a.as_str()),
        _ => Err(NormalizeError::PatternMismatch(format!("{op} is not a single-axis op"))),
    }
}

/// First unused axis of `t` with the given size, preferring `hint`.
fn free_axis(mesh: &Mesh, t: &DistType, s: u64, hint: &str) -> Result<String, NormalizeError> {
    if !t.uses(hint) && mesh.size_of(hint) == Some(s) {
        return Ok(hint.to_string());
    }
    mesh.axes()
        .iter()
        .find(|a| a.size == s && !t.uses(&a.name))
        .map(|a| a.name.clone())
        .ok_or_else(|| NormalizeError::PatternMismatch(format!("no unused axis of size {s} in {t}")))
}

/// `t` with the axis list of `dim` replaced.
fn with_axes(t: &DistType, dim: usize, axes: Vec<String>) -> DistType {
    let mut out = t.clone();
    out.dims[dim].axes = axes;
    out
}

/// Builds the replacement fragment from `ops` and checks it ends at the
/// original fragment's end.
fn rebuild(frag: &TypedSequence, ops: Vec<CollectiveOp>) -> Result<TypedSequence, NormalizeError> {
    let end = frag.target();
    let out = match frag.mode {
        Mode::Strong => {
            let s = TypedSequence::strong(&frag.mesh, frag.source(), &ops)?;
            if s.target() != end {
                return Err(NormalizeError::PatternMismatch(format!(
                    "rewrite of {frag} ends at {}",
                    s.target()
                )));
            }
            s
        }
        Mode::Weak => {
            let mut s = TypedSequence::weak(&frag.mesh, frag.source(), &ops)?;
            if !weak_equal(s.target(), end) {
                return Err(NormalizeError::PatternMismatch(format!(
                    "rewrite of {frag} ends at {}",
                    s.target()
                )));
            }
            *s.types.last_mut().expect("nonempty") = end.clone();
            s
        }
    };
    Ok(drop_identity_permutes(out))
}

fn expect_pair(frag: &TypedSequence) -> Result<(), NormalizeError> {
    if frag.ops.len() != 2 || frag.types.len() != 3 {
        return Err(NormalizeError::PatternMismatch("a fragment has exactly two ops".into()));
    }
    if !frag.mesh.is_prime() {
        return Err(NormalizeError::NotPrime);
    }
    Ok(())
}

/// Rewrites `AllGather(i, y); DynSlice(j, x)` so that no type exceeds the
/// larger endpoint.
pub fn eliminate_peak(frag: &TypedSequence) -> Result<TypedSequence, NormalizeError> {
    expect_pair(frag)?;
    let (CollectiveOp::AllGather { dim: i, .. }, CollectiveOp::DynSlice { dim: j, .. }) = (&frag.ops[0], &frag.ops[1])
    else {
        return Err(NormalizeError::PatternMismatch(format!(
            "{frag} is not a gather followed by a slice"
        )));
    };
    let (i, j) = (*i, *j);
    let y = single(&frag.ops[0])?.to_string();
    let x = single(&frag.ops[1])?.to_string();
    let mesh = &frag.mesh;
    let (m, n) = (size(mesh, &y), size(mesh, &x));
    let s0 = &frag.types[0];
    let gather = |d: usize, a: &str| CollectiveOp::AllGather {
        dim: d,
        axes: vec![a.to_string()],
    };
    let slice = |d: usize, a: &str| CollectiveOp::DynSlice {
        dim: d,
        axes: vec![a.to_string()],
    };
    let ops = match frag.mode {
        Mode::Strong => {
            if i == j && x == y {
                vec![]
            } else if i == j && m == n {
                vec![CollectiveOp::AllPermute {
                    target: frag.types[2].clone(),
                }]
            } else if i == j {
                // [y, rest] -> [x, y, rest] -> [y, x, rest] -> [x, rest]
                let mut order = vec![y.clone(), x.clone()];
                order.extend(s0.dims[i].axes[1..].iter().cloned());
                let mut mid = apply_typed(mesh, s0, &slice(i, &x))?;
                mid = with_axes(&mid, i, order);
                vec![slice(i, &x), CollectiveOp::AllPermute { target: mid }, gather(i, &y)]
            } else if x == y {
                vec![CollectiveOp::AllToAll {
                    from: i,
                    to: j,
                    axes: vec![y],
                }]
            } else {
                vec![slice(j, &x), gather(i, &y)]
            }
        }
        Mode::Weak => {
            if i == j && m == n {
                vec![]
            } else if i != j && m == n {
                vec![CollectiveOp::AllToAll {
                    from: i,
                    to: j,
                    axes: vec![y],
                }]
            } else {
                vec![slice(j, &x), gather(i, &y)]
            }
        }
    };
    rebuild(frag, ops)
}

/// Moves a gather right past an all-to-all or permute (rising edge), or a
/// slice left past one (falling edge).
pub fn move_edge(frag: &TypedSequence) -> Result<TypedSequence, NormalizeError> {
    expect_pair(frag)?;
    let mesh = &frag.mesh;
    let [s0, _, s2] = [&frag.types[0], &frag.types[1], &frag.types[2]];
    let gather = |d: usize, a: &str| CollectiveOp::AllGather {
        dim: d,
        axes: vec![a.to_string()],
    };
    let slice = |d: usize, a: &str| CollectiveOp::DynSlice {
        dim: d,
        axes: vec![a.to_string()],
    };
    let a2a = |k: usize, l: usize, a: &str| CollectiveOp::AllToAll {
        from: k,
        to: l,
        axes: vec![a.to_string()],
    };
    let permute = |t: DistType| CollectiveOp::AllPermute { target: t };
    let strong = frag.mode == Mode::Strong;

    let ops = match (&frag.ops[0], &frag.ops[1]) {
        (CollectiveOp::AllGather { dim: i, .. }, CollectiveOp::AllToAll { from: k, to: l, .. }) => {
            let (i, k, l) = (*i, *k, *l);
            let x = single(&frag.ops[0])?.to_string();
            let y = single(&frag.ops[1])?.to_string();
            let (m, n) = (size(mesh, &x), size(mesh, &y));
            if i == k {
                if strong {
                    // [x, y, rest] -> [y, x, rest]
                    let mut order = vec![y.clone(), x.clone()];
                    order.extend(s0.dims[i].axes[2..].iter().cloned());
                    vec![permute(with_axes(s0, i, order)), a2a(i, l, &y), gather(i, &x)]
                } else {
                    vec![a2a(i, l, &y), gather(i, &x)]
                }
            } else if i == l {
                if m == n {
                    if strong {
                        let mut swapped = s0.clone();
                        swapped.dims[i].axes[0] = y.clone();
                        swapped.dims[k].axes[0] = x.clone();
                        vec![permute(swapped), gather(k, &x)]
                    } else {
                        vec![gather(k, &y)]
                    }
                } else if strong {
                    // after the all-to-all dim i is [y, x, rest]; gather needs [x, y, rest]
                    let mid = apply_typed(mesh, s0, &a2a(k, i, &y))?;
                    let mut order = vec![x.clone(), y.clone()];
                    order.extend(mid.dims[i].axes[2..].iter().cloned());
                    vec![a2a(k, i, &y), permute(with_axes(&mid, i, order)), gather(i, &x)]
                } else {
                    vec![a2a(k, i, &y), gather(i, &x)]
                }
            } else {
                vec![a2a(k, l, &y), gather(i, &x)]
            }
        }
        (CollectiveOp::AllGather { dim: i, .. }, CollectiveOp::AllPermute { .. }) if strong => {
            let i = *i;
            let x = single(&frag.ops[0])?.to_string();
            let z = free_axis(mesh, s2, size(mesh, &x), &x)?;
            let mut before = s2.clone();
            before.dims[i].tile /= size(mesh, &z);
            before.dims[i].axes.insert(0, z.clone());
            vec![permute(before), gather(i, &z)]
        }
        (CollectiveOp::AllToAll { from: k, to: l, .. }, CollectiveOp::DynSlice { dim: j, .. }) => {
            let (k, l, j) = (*k, *l, *j);
            let y = single(&frag.ops[0])?.to_string();
            let x = single(&frag.ops[1])?.to_string();
            let (m, n) = (size(mesh, &y), size(mesh, &x));
            if j == k {
                if m == n {
                    let mut v = vec![slice(l, &x)];
                    if strong {
                        v.push(permute(s2.clone()));
                    }
                    v
                } else if strong {
                    // after the slice dim k is [x, y, rest]; the all-to-all needs [y, x, rest]
                    let mid = apply_typed(mesh, s0, &slice(k, &x))?;
                    let mut order = vec![y.clone(), x.clone()];
                    order.extend(mid.dims[k].axes[2..].iter().cloned());
                    vec![slice(k, &x), permute(with_axes(&mid, k, order)), a2a(k, l, &y)]
                } else {
                    vec![slice(k, &x), a2a(k, l, &y)]
                }
            } else if j == l {
                let mut v = vec![slice(l, &x), a2a(k, l, &y)];
                if strong {
                    v.push(permute(s2.clone()));
                }
                v
            } else {
                vec![slice(j, &x), a2a(k, l, &y)]
            }
        }
        (CollectiveOp::AllPermute { .. }, CollectiveOp::DynSlice { dim: j, .. }) if strong => {
            let x = single(&frag.ops[1])?.to_string();
            let z = free_axis(mesh, s0, size(mesh, &x), &x)?;
            vec![slice(*j, &z), permute(s2.clone())]
        }
        _ => {
            return Err(NormalizeError::PatternMismatch(format!(
                "{frag} is not a rising or falling edge"
            )));
        }
    };
    rebuild(frag, ops)
}

fn is_peak(a: OpKind, b: OpKind) -> bool {
    a == OpKind::AllGather && b == OpKind::DynSlice
}

fn is_edge(a: OpKind, b: OpKind) -> bool {
    let middle = |k: OpKind| matches!(k, OpKind::AllToAll | OpKind::AllPermute);
    (a == OpKind::AllGather && middle(b)) || (middle(a) && b == OpKind::DynSlice)
}

/// Performs the leftmost applicable rewrite, preferring permute clean-up,
/// then peaks, then edges.
fn rewrite_once(seq: &TypedSequence) -> Result<Option<(usize, TypedSequence)>, NormalizeError> {
    let labels = seq.labels();
    for k in 0..labels.len().saturating_sub(1) {
        if labels[k] == OpKind::AllPermute && labels[k + 1] == OpKind::AllPermute {
            let ops = if seq.types[k] == seq.types[k + 2] {
                vec![]
            } else {
                vec![CollectiveOp::AllPermute {
                    target: seq.types[k + 2].clone(),
                }]
            };
            let piece = rebuild(&seq.fragment(k), ops)?;
            return Ok(Some((k, seq.splice(k, 2, piece))));
        }
    }
    for k in 0..labels.len().saturating_sub(1) {
        if is_peak(labels[k], labels[k + 1]) {
            let piece = eliminate_peak(&seq.fragment(k))?;
            return Ok(Some((k, seq.splice(k, 2, piece))));
        }
    }
    for k in 0..labels.len().saturating_sub(1) {
        if is_edge(labels[k], labels[k + 1]) {
            let piece = move_edge(&seq.fragment(k))?;
            return Ok(Some((k, seq.splice(k, 2, piece))));
        }
    }
    Ok(None)
}

/// Merges neighbouring weak ops of the same kind on the same dimensions.
fn merge_weak(seq: TypedSequence) -> TypedSequence {
    let mut out = seq;
    let mut k = 0;
    while k + 1 < out.ops.len() {
        let merged = match (&out.ops[k], &out.ops[k + 1]) {
            (CollectiveOp::AllGather { dim: a, axes: x }, CollectiveOp::AllGather { dim: b, axes: y }) if a == b => {
                Some(CollectiveOp::AllGather {
                    dim: *a,
                    axes: [x.clone(), y.clone()].concat(),
                })
            }
            (CollectiveOp::DynSlice { dim: a, axes: x }, CollectiveOp::DynSlice { dim: b, axes: y }) if a == b => {
                Some(CollectiveOp::DynSlice {
                    dim: *a,
                    axes: [y.clone(), x.clone()].concat(),
                })
            }
            (
                CollectiveOp::AllToAll {
                    from: a,
                    to: b,
                    axes: x,
                },
                CollectiveOp::AllToAll {
                    from: c,
                    to: d,
                    axes: y,
                },
            ) if a == c && b == d => Some(CollectiveOp::AllToAll {
                from: *a,
                to: *b,
                axes: [y.clone(), x.clone()].concat(),
            }),
            _ => None,
        };
        match merged {
            Some(op) => {
                out.ops.splice(k..k + 2, [op]);
                out.types.remove(k + 1);
            }
            None => k += 1,
        }
    }
    out
}

/// Rewrites a valid sequence over a prime mesh into normal form with the
/// same endpoints.
pub fn normalize(seq: &TypedSequence) -> Result<TypedSequence, NormalizeError> {
    seq.validate()?;
    if !seq.mesh.is_prime() {
        return Err(NormalizeError::NotPrime);
    }
    let mut cur = single_axis(seq)?;
    let n = cur.len().max(1);
    let budget = 10 * n * n;
    let mut rewrites = 0;
    while let Some((index, next)) = rewrite_once(&cur)? {
        if next.measure().cmp(&cur.measure()) != Ordering::Less {
            return Err(NormalizeError::MeasureNotDecreasing { index });
        }
        rewrites += 1;
        if rewrites > budget {
            return Err(NormalizeError::NonTermination { budget });
        }
        cur = next;
    }
    if cur.mode == Mode::Weak {
        cur = merge_weak(cur);
    }
    debug_assert!(cur.validate().is_ok());
    Ok(cur)
}
