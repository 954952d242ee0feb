//! Splitting composite mesh axes into runs of prime axes.

use std::collections::HashSet;

use crate::mesh::{prime_factors, Axis, Mesh};
use crate::types::{DistDim, DistType, WellFormedError};

/// How one original axis was rewritten.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitEntry {
    pub original: String,
    pub size: u64,
    /// Prime parts, minor-most first. Empty when the axis had size 1.
    pub parts: Vec<Axis>,
}

/// Records the original-to-prime axis renaming of a decomposed mesh.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AxisSplitMap {
    entries: Vec<SplitEntry>,
}

impl AxisSplitMap {
    pub fn entries(&self) -> &[SplitEntry] {
        &self.entries
    }

    pub fn parts_of(&self, original: &str) -> Option<&[Axis]> {
        self.entries
            .iter()
            .find(|e| e.original == original)
            .map(|e| e.parts.as_slice())
    }

    /// The original axis a prime part came from.
    pub fn original_of(&self, part: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.parts.iter().any(|p| p.name == part))
            .map(|e| e.original.as_str())
    }

    /// True when decomposition renamed or dropped nothing.
    pub fn is_identity(&self) -> bool {
        self.entries
            .iter()
            .all(|e| e.parts.len() == 1 && e.parts[0].name == e.original)
    }

    /// Rewrites a type over the original mesh into one over the prime mesh.
    pub fn split_type(&self, t: &DistType) -> DistType {
        DistType::new(
            t.dims
                .iter()
                .map(|d| DistDim {
                    tile: d.tile,
                    axes: d
                        .axes
                        .iter()
                        .flat_map(|a| match self.parts_of(a) {
                            Some(parts) => parts.iter().map(|p| p.name.clone()).collect(),
                            None => vec![a.clone()],
                        })
                        .collect(),
                    global: d.global,
                })
                .collect(),
        )
    }

    /// Replaces every complete, in-order run of an axis's parts by the original name.
    pub fn merge_axes(&self, axes: &[String]) -> Vec<String> {
        let mut out = Vec::with_capacity(axes.len());
        let mut k = 0;
        'scan: while k < axes.len() {
            for e in &self.entries {
                if e.parts.len() >= 2
                    && axes.len() - k >= e.parts.len()
                    && e.parts.iter().zip(&axes[k..]).all(|(p, a)| &p.name == a)
                {
                    out.push(e.original.clone());
                    k += e.parts.len();
                    continue 'scan;
                }
            }
            out.push(axes[k].clone());
            k += 1;
        }
        out
    }

    pub fn merge_type(&self, t: &DistType) -> DistType {
        DistType::new(
            t.dims
                .iter()
                .map(|d| DistDim {
                    tile: d.tile,
                    axes: self.merge_axes(&d.axes),
                    global: d.global,
                })
                .collect(),
        )
    }
}

/// Replaces every composite axis `x:k` by prime axes whose sizes multiply to `k`,
/// in nondecreasing order with the first factor minor-most. Size-1 axes are dropped.
///
/// Linear point indices are preserved: the parts occupy `x`'s place and expand
/// its coordinate as mixed-radix digits.
pub fn decompose_mesh(mesh: &Mesh) -> (Mesh, AxisSplitMap) {
    let mut taken: HashSet<String> = mesh.axes().iter().map(|a| a.name.clone()).collect();
    let mut axes = Vec::new();
    let mut entries = Vec::new();
    for a in mesh.axes() {
        let factors = prime_factors(a.size);
        let parts: Vec<Axis> = if factors.len() == 1 {
            vec![a.clone()]
        } else {
            let mut sep = String::new();
            let name = |sep: &str, i: usize| format!("{}{}{}", a.name, sep, i);
            while (0..factors.len()).any(|i| taken.contains(&name(&sep, i))) {
                sep.push('_');
            }
            factors
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    taken.insert(name(&sep, i));
                    Axis::new(name(&sep, i), p)
                })
                .collect()
        };
        axes.extend(parts.iter().cloned());
        entries.push(SplitEntry {
            original: a.name.clone(),
            size: a.size,
            parts,
        });
    }
    let prime = Mesh::new(axes).expect("decomposition keeps names unique and sizes positive");
    (prime, AxisSplitMap { entries })
}

/// A redistribution problem rewritten over the prime mesh.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub mesh: Mesh,
    pub source: DistType,
    pub target: DistType,
    pub splits: AxisSplitMap,
}

pub fn decompose_primes(mesh: &Mesh, t1: &DistType, t2: &DistType) -> Result<Decomposition, WellFormedError> {
    t1.validate(mesh)?;
    t2.validate(mesh)?;
    let (prime, splits) = decompose_mesh(mesh);
    Ok(Decomposition {
        source: splits.split_type(t1),
        target: splits.split_type(t2),
        mesh: prime,
        splits,
    })
}
