//! Distributed array types: one `tile{axes}global` entry per array dimension.

use std::fmt;

use thiserror::Error;

use crate::mesh::Mesh;
use crate::parse::fmt_name;

/// One dimension of a distributed type. `axes` is listed minor-to-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistDim {
    pub tile: u64,
    pub axes: Vec<String>,
    pub global: u64,
}

impl DistDim {
    pub fn new<S: Into<String>>(tile: u64, axes: impl IntoIterator<Item = S>, global: u64) -> Self {
        DistDim {
            tile,
            axes: axes.into_iter().map(Into::into).collect(),
            global,
        }
    }

    /// An unpartitioned dimension of extent `n`.
    pub fn replicated(n: u64) -> Self {
        DistDim {
            tile: n,
            axes: Vec::new(),
            global: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DistType {
    pub dims: Vec<DistDim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WellFormedError {
    #[error("dim {dim}: extents must be positive")]
    ZeroExtent { dim: usize },
    #[error("dim {dim}: axis `{axis}` is not in the mesh")]
    UnknownAxis { dim: usize, axis: String },
    #[error("dim {dim}: axis `{axis}` is listed twice")]
    RepeatedAxis { dim: usize, axis: String },
    #[error("axis `{axis}` partitions both dim {first} and dim {second}")]
    SharedAxis { axis: String, first: usize, second: usize },
    #[error("dim {dim}: tile {tile} times axis product {product} is not {global}")]
    ProductMismatch {
        dim: usize,
        tile: u64,
        product: u64,
        global: u64,
    },
    #[error("dim {dim}: size product overflows 64 bits")]
    Overflow { dim: usize },
}

impl DistType {
    pub fn new(dims: Vec<DistDim>) -> Self {
        DistType { dims }
    }

    /// The fully replicated type with the given global extents.
    pub fn replicated(globaltype: &[u64]) -> Self {
        DistType {
            dims: globaltype.iter().map(|&n| DistDim::replicated(n)).collect(),
        }
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// All axes in order of appearance.
    pub fn axes(&self) -> Vec<&str> {
        self.dims
            .iter()
            .flat_map(|d| d.axes.iter().map(String::as_str))
            .collect()
    }

    pub fn globaltype(&self) -> Vec<u64> {
        self.dims.iter().map(|d| d.global).collect()
    }

    pub fn localtype(&self) -> Vec<u64> {
        self.dims.iter().map(|d| d.tile).collect()
    }

    pub fn checked_globalsize(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, d| acc.checked_mul(d.global))
    }

    /// Product of the global extents. Panics on overflow, which `validate` rules out.
    pub fn globalsize(&self) -> u64 {
        self.checked_globalsize().expect("global size overflows u64")
    }

    pub fn localsize(&self) -> u64 {
        self.dims
            .iter()
            .try_fold(1u64, |acc, d| acc.checked_mul(d.tile))
            .expect("local size overflows u64")
    }

    /// Index of the dimension partitioned by `axis`, if any.
    pub fn dim_of(&self, axis: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.axes.iter().any(|a| a == axis))
    }

    pub fn uses(&self, axis: &str) -> bool {
        self.dim_of(axis).is_some()
    }

    /// True iff every dimension is unpartitioned.
    pub fn is_replicated(&self) -> bool {
        self.dims.iter().all(|d| d.axes.is_empty())
    }

    pub fn well_formed(&self, mesh: &Mesh) -> bool {
        self.validate(mesh).is_ok()
    }

    /// Checks the per-dimension product rule and cross-dimension disjointness.
    pub fn validate(&self, mesh: &Mesh) -> Result<(), WellFormedError> {
        for (i, d) in self.dims.iter().enumerate() {
            if d.tile == 0 || d.global == 0 {
                return Err(WellFormedError::ZeroExtent { dim: i });
            }
            let mut product = 1u64;
            for (k, a) in d.axes.iter().enumerate() {
                let size = mesh.size_of(a).ok_or_else(|| WellFormedError::UnknownAxis {
                    dim: i,
                    axis: a.clone(),
                })?;
                if d.axes[..k].contains(a) {
                    return Err(WellFormedError::RepeatedAxis {
                        dim: i,
                        axis: a.clone(),
                    });
                }
                if let Some(first) = self.dims[..i].iter().position(|e| e.axes.contains(a)) {
                    return Err(WellFormedError::SharedAxis {
                        axis: a.clone(),
                        first,
                        second: i,
                    });
                }
                product = product.checked_mul(size).ok_or(WellFormedError::Overflow { dim: i })?;
            }
            let full = d
                .tile
                .checked_mul(product)
                .ok_or(WellFormedError::Overflow { dim: i })?;
            if full != d.global {
                return Err(WellFormedError::ProductMismatch {
                    dim: i,
                    tile: d.tile,
                    product,
                    global: d.global,
                });
            }
        }
        if self.checked_globalsize().is_none() {
            return Err(WellFormedError::Overflow {
                dim: self.dims.len().saturating_sub(1),
            });
        }
        Ok(())
    }
}

impl fmt::Display for DistDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.axes.is_empty() && self.tile == self.global {
            return write!(f, "{}", self.global);
        }
        write!(f, "{}{{", self.tile)?;
        for (i, a) in self.axes.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(&fmt_name(a))?;
        }
        write!(f, "}}{}", self.global)
    }
}

impl fmt::Display for DistType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, d) in self.dims.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}
