//! Base offset maps, device maps and the equivalences between them.
//!
//! A type denotes a map from mesh points to the lowest global index of the
//! tile held there. Offsets are evaluated in closed form: the axis at
//! position `k` of a dimension's list contributes `tile * (sizes before k)`
//! times its coordinate.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Mesh;
use crate::types::{DistType, WellFormedError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SemanticsError {
    #[error(transparent)]
    IllFormed(#[from] WellFormedError),
    #[error("{left} and {right} do not denote the same weak type")]
    NotWeaklyEqual { left: String, right: String },
    #[error("not a bijection on 0..{0}")]
    NotABijection(usize),
    #[error("device map covers {found} devices, mesh has {expected}")]
    SizeMismatch { expected: usize, found: usize },
}

/// The offset map of a well-formed type, kept as per-axis strides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BaseOffsetMap {
    mesh: Mesh,
    globaltype: Vec<u64>,
    /// For every array dimension, `(mesh axis position, stride)` pairs.
    terms: Vec<Vec<(usize, u64)>>,
}

impl BaseOffsetMap {
    pub fn of(mesh: &Mesh, t: &DistType) -> Result<Self, WellFormedError> {
        t.validate(mesh)?;
        let terms = t
            .dims
            .iter()
            .map(|d| {
                let mut stride = d.tile;
                d.axes
                    .iter()
                    .map(|a| {
                        let pos = mesh.position(a).expect("validated axis");
                        let term = (pos, stride);
                        stride *= mesh.axes()[pos].size;
                        term
                    })
                    .collect()
            })
            .collect();
        Ok(BaseOffsetMap {
            mesh: mesh.clone(),
            globaltype: t.globaltype(),
            terms,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn globaltype(&self) -> &[u64] {
        &self.globaltype
    }

    pub fn at_coord(&self, coord: &[u64]) -> Vec<u64> {
        self.terms
            .iter()
            .map(|ts| ts.iter().map(|&(p, s)| s * coord[p]).sum())
            .collect()
    }

    /// Offset tuple at the point with linear index `point`.
    pub fn at(&self, point: usize) -> Vec<u64> {
        self.at_coord(&self.mesh.coord(point))
    }

    /// Enumerates the map over all points in linear order.
    pub fn tabulate(&self) -> Vec<Vec<u64>> {
        (0..self.mesh.device_count()).map(|p| self.at(p)).collect()
    }

    pub fn image(&self) -> BTreeSet<Vec<u64>> {
        self.tabulate().into_iter().collect()
    }

    /// True iff distinct points get distinct offsets, i.e. every axis of size
    /// greater than one partitions some dimension.
    pub fn is_injective(&self) -> bool {
        self.mesh
            .axes()
            .iter()
            .enumerate()
            .all(|(p, a)| a.size == 1 || self.terms.iter().any(|ts| ts.iter().any(|&(q, _)| q == p)))
    }

    pub fn pointwise_eq(&self, other: &BaseOffsetMap) -> bool {
        self.mesh.device_count() == other.mesh.device_count()
            && (0..self.mesh.device_count()).all(|p| self.at(p) == other.at(p))
    }
}

pub fn offset_map_of(mesh: &Mesh, t: &DistType) -> Result<BaseOffsetMap, WellFormedError> {
    BaseOffsetMap::of(mesh, t)
}

/// A bijection on `0..n`, stored as its image table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn from_vec(v: Vec<usize>) -> Result<Self, SemanticsError> {
        let mut seen = vec![false; v.len()];
        for &x in &v {
            if x >= v.len() || std::mem::replace(&mut seen[x], true) {
                return Err(SemanticsError::NotABijection(v.len()));
            }
        }
        Ok(Permutation(v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &x) in self.0.iter().enumerate() {
            inv[x] = i;
        }
        Permutation(inv)
    }

    /// `self ∘ inner`: first `inner`, then `self`.
    pub fn after(&self, inner: &Permutation) -> Self {
        Permutation(inner.0.iter().map(|&i| self.0[i]).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &x)| i == x)
    }
}

/// A bijection from mesh points to device ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeviceMap {
    to_device: Permutation,
    to_point: Permutation,
}

impl DeviceMap {
    pub fn identity(n: usize) -> Self {
        DeviceMap {
            to_device: Permutation::identity(n),
            to_point: Permutation::identity(n),
        }
    }

    /// `table[point]` is the device at that point.
    pub fn from_table(table: Permutation) -> Self {
        DeviceMap {
            to_point: table.inverse(),
            to_device: table,
        }
    }

    pub fn len(&self) -> usize {
        self.to_device.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_device.is_empty()
    }

    pub fn device_of(&self, point: usize) -> usize {
        self.to_device.apply(point)
    }

    pub fn point_of(&self, device: usize) -> usize {
        self.to_point.apply(device)
    }

    pub fn table(&self) -> &Permutation {
        &self.to_device
    }

    pub fn is_identity(&self) -> bool {
        self.to_device.is_identity()
    }
}

/// A device map paired with a base offset map: device `d` holds the tile at
/// `beta(phi⁻¹(d))`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceAssignment {
    pub phi: DeviceMap,
    pub beta: BaseOffsetMap,
}

impl DeviceAssignment {
    pub fn new(phi: DeviceMap, beta: BaseOffsetMap) -> Result<Self, SemanticsError> {
        let expected = beta.mesh().device_count();
        if phi.len() != expected {
            return Err(SemanticsError::SizeMismatch {
                expected,
                found: phi.len(),
            });
        }
        Ok(DeviceAssignment { phi, beta })
    }

    pub fn of_type(mesh: &Mesh, t: &DistType, phi: DeviceMap) -> Result<Self, SemanticsError> {
        DeviceAssignment::new(phi, BaseOffsetMap::of(mesh, t)?)
    }

    pub fn device_count(&self) -> usize {
        self.phi.len()
    }

    pub fn offset_of_device(&self, device: usize) -> Vec<u64> {
        self.beta.at(self.phi.point_of(device))
    }

    /// Offsets indexed by device id.
    pub fn device_offsets(&self) -> Vec<Vec<u64>> {
        (0..self.device_count()).map(|d| self.offset_of_device(d)).collect()
    }
}

pub fn weak_equal(t1: &DistType, t2: &DistType) -> bool {
    t1.globaltype() == t2.globaltype() && t1.localtype() == t2.localtype()
}

/// Finds `pi` on mesh points with `offsets(t2)(i) = offsets(t1)(pi(i))`.
///
/// Points are visited in linear order and each takes the lowest unused
/// point of `t1` carrying the required offset.
pub fn find_permutation(mesh: &Mesh, t1: &DistType, t2: &DistType) -> Result<Permutation, SemanticsError> {
    let b1 = BaseOffsetMap::of(mesh, t1)?;
    let b2 = BaseOffsetMap::of(mesh, t2)?;
    let not_weak = || SemanticsError::NotWeaklyEqual {
        left: t1.to_string(),
        right: t2.to_string(),
    };
    if !weak_equal(t1, t2) {
        return Err(not_weak());
    }
    let mut pools: HashMap<Vec<u64>, std::collections::VecDeque<usize>> = HashMap::new();
    for p in 0..mesh.device_count() {
        pools.entry(b1.at(p)).or_default().push_back(p);
    }
    let mut out = Vec::with_capacity(mesh.device_count());
    for p in 0..mesh.device_count() {
        let q = pools
            .get_mut(&b2.at(p))
            .and_then(|pool| pool.pop_front())
            .ok_or_else(not_weak)?;
        out.push(q);
    }
    Ok(Permutation(out))
}

/// True iff both assignments put the same tile on every device.
pub fn assignment_equivalent(a1: &DeviceAssignment, a2: &DeviceAssignment) -> bool {
    a1.device_count() == a2.device_count()
        && (0..a1.device_count()).all(|d| a1.offset_of_device(d) == a2.offset_of_device(d))
}

/// A device permutation `pi` with `to(d) = from(pi(d))`, keeping `pi(d) = d`
/// wherever device `d` already holds the tile it needs. `None` when the two
/// assignments do not hold the same multiset of tiles.
pub fn match_devices(from: &DeviceAssignment, to: &DeviceAssignment) -> Option<Permutation> {
    let n = from.device_count();
    if to.device_count() != n {
        return None;
    }
    let have = from.device_offsets();
    let want = to.device_offsets();
    let mut pi = vec![usize::MAX; n];
    let mut spare: HashMap<&[u64], Vec<usize>> = HashMap::new();
    for d in 0..n {
        if have[d] == want[d] {
            pi[d] = d;
        } else {
            spare.entry(have[d].as_slice()).or_default().push(d);
        }
    }
    for pool in spare.values_mut() {
        pool.reverse();
    }
    for d in 0..n {
        if pi[d] == usize::MAX {
            pi[d] = spare.get_mut(want[d].as_slice())?.pop()?;
        }
    }
    Some(Permutation(pi))
}
