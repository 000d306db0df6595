//! Multi-indices and half-open boxes on the integer lattice `Z^d`.
//!
//! The coordinate-wise partial order `s <= t`, the join `s v t`, the floor
//! map from `R^d`, and the product `<n> = n_1 ... n_d` are the primitives
//! every other module builds on. Boxes are half-open:
//! `(lower, upper] = { u : lower < u <= upper }`, so the standard sampling
//! window `U_n = (0, n]` has exactly `<n>` points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("multi-index must have at least one coordinate")]
    EmptyIndex,
    #[error("product overflow on coordinates {coords:?}")]
    ProductOverflow { coords: Vec<i64> },
    #[error("coordinate {value} at axis {axis} must be >= 1")]
    NotPositive { axis: usize, value: i64 },
}

/// A point of `Z^d`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<i64>);

impl std::fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl MultiIndex {
    pub fn new(coords: impl Into<Vec<i64>>) -> Result<Self, LatticeError> {
        let coords = coords.into();
        if coords.is_empty() {
            return Err(LatticeError::EmptyIndex);
        }
        Ok(MultiIndex(coords))
    }

    /// `v * 1 = (v, ..., v)` in dimension `d`.
    pub fn splat(d: usize, v: i64) -> Self {
        assert!(d > 0, "dimension must be positive");
        MultiIndex(vec![v; d])
    }

    pub fn ones(d: usize) -> Self {
        Self::splat(d, 1)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn get(&self, axis: usize) -> i64 {
        self.0[axis]
    }

    fn check_dim(&self, other: &Self) -> Result<(), LatticeError> {
        if self.dim() != other.dim() {
            return Err(LatticeError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(())
    }

    /// Coordinate-wise `self <= other`.
    pub fn leq(&self, other: &Self) -> Result<bool, LatticeError> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).all(|(a, b)| a <= b))
    }

    /// Coordinate-wise strict `self < other`.
    pub fn lt(&self, other: &Self) -> Result<bool, LatticeError> {
        self.check_dim(other)?;
        Ok(self.0.iter().zip(&other.0).all(|(a, b)| a < b))
    }

    /// Coordinate-wise maximum `self v other`.
    pub fn join(&self, other: &Self) -> Result<Self, LatticeError> {
        self.check_dim(other)?;
        Ok(MultiIndex(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| *a.max(b))
                .collect(),
        ))
    }

    /// Coordinate-wise floor `[x]` of a real vector.
    pub fn floor_of(x: &[f64]) -> Result<Self, LatticeError> {
        if x.is_empty() {
            return Err(LatticeError::EmptyIndex);
        }
        Ok(MultiIndex(x.iter().map(|v| v.floor() as i64).collect()))
    }

    /// `<n> = n_1 ... n_d` with overflow detection. Requires every
    /// coordinate `>= 1`; callers use it for box side products only.
    pub fn product(&self) -> Result<i64, LatticeError> {
        for (axis, &v) in self.0.iter().enumerate() {
            if v < 1 {
                return Err(LatticeError::NotPositive { axis, value: v });
            }
        }
        self.0
            .iter()
            .try_fold(1i64, |acc, &v| acc.checked_mul(v))
            .ok_or_else(|| LatticeError::ProductOverflow {
                coords: self.0.clone(),
            })
    }

    /// Coordinate-wise map.
    pub fn map(&self, f: impl FnMut(i64) -> i64) -> Self {
        MultiIndex(self.0.iter().copied().map(f).collect())
    }
}

impl std::ops::Index<usize> for MultiIndex {
    type Output = i64;
    fn index(&self, i: usize) -> &i64 {
        &self.0[i]
    }
}

impl From<MultiIndex> for Vec<i64> {
    fn from(m: MultiIndex) -> Vec<i64> {
        m.0
    }
}

/// Half-open box `(lower, upper]`. Empty unless `lower < upper`
/// coordinate-wise.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexBox {
    lower: MultiIndex,
    upper: MultiIndex,
}

impl IndexBox {
    pub fn new(lower: MultiIndex, upper: MultiIndex) -> Result<Self, LatticeError> {
        lower.check_dim(&upper)?;
        Ok(IndexBox { lower, upper })
    }

    /// The sampling window `U_n = (0, n]`. Requires `n >= 1`.
    pub fn prefix(n: &MultiIndex) -> Result<Self, LatticeError> {
        for (axis, &v) in n.coords().iter().enumerate() {
            if v < 1 {
                return Err(LatticeError::NotPositive { axis, value: v });
            }
        }
        Ok(IndexBox {
            lower: MultiIndex::splat(n.dim(), 0),
            upper: n.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    pub fn lower(&self) -> &MultiIndex {
        &self.lower
    }

    pub fn upper(&self) -> &MultiIndex {
        &self.upper
    }

    pub fn is_empty(&self) -> bool {
        !self
            .lower
            .lt(&self.upper)
            .expect("box invariant: equal dims")
    }

    /// Side lengths, all zero-clamped.
    pub fn sides(&self) -> Vec<i64> {
        self.lower
            .coords()
            .iter()
            .zip(self.upper.coords())
            .map(|(l, u)| (u - l).max(0))
            .collect()
    }

    /// Number of lattice points, with overflow detection.
    pub fn cardinality(&self) -> Result<i64, LatticeError> {
        if self.is_empty() {
            return Ok(0);
        }
        self.sides()
            .iter()
            .try_fold(1i64, |acc, &v| acc.checked_mul(v))
            .ok_or_else(|| LatticeError::ProductOverflow {
                coords: self.sides(),
            })
    }

    pub fn contains_point(&self, u: &MultiIndex) -> Result<bool, LatticeError> {
        u.check_dim(&self.lower)?;
        Ok(u
            .coords()
            .iter()
            .zip(self.lower.coords().iter().zip(self.upper.coords()))
            .all(|(x, (l, u))| l < x && x <= u))
    }

    pub fn contains_box(&self, other: &IndexBox) -> Result<bool, LatticeError> {
        self.lower.check_dim(&other.lower)?;
        if other.is_empty() {
            return Ok(true);
        }
        Ok(self.lower.leq(&other.lower)? && other.upper.leq(&self.upper)?)
    }

    pub fn intersects(&self, other: &IndexBox) -> Result<bool, LatticeError> {
        self.lower.check_dim(&other.lower)?;
        if self.is_empty() || other.is_empty() {
            return Ok(false);
        }
        Ok(self
            .lower
            .coords()
            .iter()
            .zip(self.upper.coords())
            .zip(other.lower.coords().iter().zip(other.upper.coords()))
            .all(|((al, au), (bl, bu))| al.max(bl) < au.min(bu)))
    }

    /// Lexicographic enumeration (first coordinate slowest). This order is
    /// the layout contract for realization values.
    pub fn iter_points(&self) -> BoxIter {
        BoxIter {
            bx: self.clone(),
            cursor: if self.is_empty() {
                None
            } else {
                Some(self.lower.map(|v| v + 1))
            },
        }
    }

    /// Position of `u` in the lexicographic enumeration, if present.
    pub fn linear_index(&self, u: &MultiIndex) -> Result<Option<usize>, LatticeError> {
        if !self.contains_point(u)? {
            return Ok(None);
        }
        let sides = self.sides();
        let mut idx: i64 = 0;
        for k in 0..self.dim() {
            idx = idx
                .checked_mul(sides[k])
                .and_then(|v| v.checked_add(u[k] - self.lower[k] - 1))
                .ok_or_else(|| LatticeError::ProductOverflow {
                    coords: sides.clone(),
                })?;
        }
        Ok(Some(idx as usize))
    }
}

pub struct BoxIter {
    bx: IndexBox,
    cursor: Option<MultiIndex>,
}

impl Iterator for BoxIter {
    type Item = MultiIndex;

    fn next(&mut self) -> Option<MultiIndex> {
        let current = self.cursor.clone()?;
        // Odometer increment, last axis fastest.
        let mut next = current.clone();
        let d = next.dim();
        let mut axis = d;
        loop {
            if axis == 0 {
                self.cursor = None;
                break;
            }
            axis -= 1;
            let mut coords: Vec<i64> = next.coords().to_vec();
            if coords[axis] < self.bx.upper[axis] {
                coords[axis] += 1;
                next = MultiIndex(coords);
                self.cursor = Some(next);
                break;
            }
            coords[axis] = self.bx.lower[axis] + 1;
            next = MultiIndex(coords);
        }
        Some(current)
    }
}
