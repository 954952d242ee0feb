//! Logical device meshes.
//!
//! Axes are listed minor-to-major: the first axis changes fastest when
//! mesh points are enumerated by linear index. This makes the linear index
//! of a point invariant under splitting an axis into its prime factors.

use std::fmt;

use thiserror::Error;

use crate::parse::fmt_name;

/// A named mesh axis.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Axis {
    pub name: String,
    pub size: u64,
}

impl Axis {
    pub fn new(name: impl Into<String>, size: u64) -> Self {
        Axis {
            name: name.into(),
            size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeshError {
    #[error("axis `{0}` is declared more than once")]
    DuplicateAxis(String),
    #[error("axis `{0}` has size 0")]
    ZeroSize(String),
    #[error("mesh has more points than fit in memory addressing")]
    TooManyPoints,
}

/// An ordered list of uniquely named axes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mesh {
    axes: Vec<Axis>,
    points: usize,
}

impl Mesh {
    pub fn new(axes: Vec<Axis>) -> Result<Self, MeshError> {
        let mut points: usize = 1;
        for (i, a) in axes.iter().enumerate() {
            if axes[..i].iter().any(|b| b.name == a.name) {
                return Err(MeshError::DuplicateAxis(a.name.clone()));
            }
            if a.size == 0 {
                return Err(MeshError::ZeroSize(a.name.clone()));
            }
            points = usize::try_from(a.size)
                .ok()
                .and_then(|s| points.checked_mul(s))
                .ok_or(MeshError::TooManyPoints)?;
        }
        Ok(Mesh { axes, points })
    }

    /// Convenience constructor from `(name, size)` pairs.
    pub fn from_pairs<S: AsRef<str>>(pairs: &[(S, u64)]) -> Result<Self, MeshError> {
        Mesh::new(pairs.iter().map(|(n, s)| Axis::new(n.as_ref(), *s)).collect())
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn rank(&self) -> usize {
        self.axes.len()
    }

    /// Number of points, which is also the number of devices.
    pub fn device_count(&self) -> usize {
        self.points
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.axes.iter().position(|a| a.name == name)
    }

    pub fn size_of(&self, name: &str) -> Option<u64> {
        self.axes.iter().find(|a| a.name == name).map(|a| a.size)
    }

    pub fn is_prime(&self) -> bool {
        self.axes.iter().all(|a| is_prime(a.size))
    }

    /// Linear-index stride of every axis (first axis has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.axes.len());
        let mut s = 1usize;
        for a in &self.axes {
            out.push(s);
            s *= a.size as usize;
        }
        out
    }

    /// Coordinates of the point with the given linear index.
    pub fn coord(&self, point: usize) -> Vec<u64> {
        let mut rest = point;
        self.axes
            .iter()
            .map(|a| {
                let k = a.size as usize;
                let c = rest % k;
                rest /= k;
                c as u64
            })
            .collect()
    }

    /// Linear index of a coordinate tuple.
    pub fn point(&self, coord: &[u64]) -> usize {
        debug_assert_eq!(coord.len(), self.axes.len());
        let mut p = 0usize;
        for (a, &c) in self.axes.iter().zip(coord).rev() {
            p = p * a.size as usize + c as usize;
        }
        p
    }
}

impl fmt::Display for Mesh {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("mesh {")?;
        for (i, a) in self.axes.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}:{}", fmt_name(&a.name), a.size)?;
        }
        f.write_str("}")
    }
}

pub fn is_prime(n: u64) -> bool {
    n >= 2 && prime_factors(n).len() == 1
}

/// Prime factors of `n` in nondecreasing order; empty for `n <= 1`.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut p = 2u64;
    while n > 1 && p.saturating_mul(p) <= n {
        while n.is_multiple_of(p) {
            out.push(p);
            n /= p;
        }
        p += if p == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push(n);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorization() {
        assert_eq!(prime_factors(1), Vec::<u64>::new());
        assert_eq!(prime_factors(12), vec![2, 2, 3]);
        assert_eq!(prime_factors(97), vec![97]);
        assert_eq!(prime_factors(360), vec![2, 2, 2, 3, 3, 5]);
        assert!(is_prime(2) && is_prime(3) && !is_prime(4) && !is_prime(1));
    }

    #[test]
    fn coordinates_round_trip() {
        let m = Mesh::from_pairs(&[("x", 4), ("y", 6)]).unwrap();
        assert_eq!(m.device_count(), 24);
        assert_eq!(m.coord(5), vec![1, 1]);
        for p in 0..24 {
            assert_eq!(m.point(&m.coord(p)), p);
        }
        assert_eq!(m.strides(), vec![1, 4]);
    }

    #[test]
    fn rejects_bad_meshes() {
        assert_eq!(
            Mesh::from_pairs(&[("x", 2), ("x", 3)]),
            Err(MeshError::DuplicateAxis("x".into()))
        );
        assert_eq!(Mesh::from_pairs(&[("x", 0)]), Err(MeshError::ZeroSize("x".into())));
    }
}
