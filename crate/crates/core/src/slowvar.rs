//! Slow-variation probes: `L` is slowly varying when `L(a.x)/L(x) -> 1` as
//! every coordinate of `x` diverges, for each fixed scaling vector `a >= 1`.
//!
//! Functions live on the lattice `N^d` or on the continuum `R^d_+`; a
//! coordinate-wise nondecreasing lattice function extends to the continuum
//! via `H(x) = L(floor(x v 1))`. Convergence is probed along finite
//! schedules and asserted at the last point with a stated tolerance; it is
//! never "proven", slow variation being an asymptotic property.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::covariance::CovarianceModel;
use crate::lattice::{LatticeError, MultiIndex};
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum SlowVarError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("dimension mismatch: argument has {got}, function has {want}")]
    Dimension { got: usize, want: usize },
    #[error("continuum argument must be positive, got {coords:?}")]
    DomainNotPositive { coords: Vec<f64> },
    #[error("evaluator returned 0 at {at:?}; slowly varying functions are nonzero")]
    ZeroValue { at: Vec<f64> },
    #[error("evaluator returned a non-finite value at {at:?}")]
    NonFinite { at: Vec<f64> },
    #[error("{name} is lattice-tagged; extend_to_continuum it before continuum evaluation")]
    LatticeTagged { name: String },
    #[error("{name} is already continuum-tagged; extension applies to lattice functions")]
    NotLatticeTagged { name: String },
    #[error("extension requires assume_monotone (the coordinate-wise nondecreasing hypothesis)")]
    MonotoneAssumptionRequired,
    #[error(
        "monotonicity violated between {at:?} and its successor along axis {axis}: \
         {value} > {next_value}"
    )]
    MonotoneViolation {
        at: MultiIndex,
        axis: usize,
        value: f64,
        next_value: f64,
    },
    #[error("probe schedule must be nonempty")]
    EmptySchedule,
    #[error("probe schedule must increase strictly coordinate-wise (violated at step {index})")]
    ScheduleNotIncreasing { index: usize },
    #[error("scaling vector must be >= 1 coordinate-wise, got {coords:?}")]
    ScaleBelowOne { coords: Vec<i64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainTag {
    Lattice,
    Continuum,
}

type LatticeFn<F> = Arc<dyn Fn(&[i64]) -> F + Send + Sync>;
type ContinuumFn<F> = Arc<dyn Fn(&[f64]) -> F + Send + Sync>;

#[derive(Clone)]
enum Evaluator<F> {
    Lattice(LatticeFn<F>),
    Continuum(ContinuumFn<F>),
}

/// A candidate slowly varying function with its domain tag. The evaluator
/// must never return 0 (enforced at every evaluation).
#[derive(Clone)]
pub struct SlowVaryFn<F> {
    name: String,
    dimension: usize,
    evaluator: Evaluator<F>,
}

impl<F> fmt::Debug for SlowVaryFn<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SlowVaryFn")
            .field("name", &self.name)
            .field("dimension", &self.dimension)
            .field("domain", &self.domain())
            .finish()
    }
}

impl<F> SlowVaryFn<F> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn domain(&self) -> DomainTag {
        match self.evaluator {
            Evaluator::Lattice(_) => DomainTag::Lattice,
            Evaluator::Continuum(_) => DomainTag::Continuum,
        }
    }
}

/// One probe step: the base point and the ratio `L(a.x)/L(x)`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SvRatioPoint<F> {
    pub x: MultiIndex,
    pub ratio: F,
}

impl<F: Scalar> SlowVaryFn<F> {
    pub fn from_lattice_fn(
        name: impl Into<String>,
        dimension: usize,
        f: impl Fn(&[i64]) -> F + Send + Sync + 'static,
    ) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        SlowVaryFn {
            name: name.into(),
            dimension,
            evaluator: Evaluator::Lattice(Arc::new(f)),
        }
    }

    pub fn from_continuum_fn(
        name: impl Into<String>,
        dimension: usize,
        f: impl Fn(&[f64]) -> F + Send + Sync + 'static,
    ) -> Self {
        assert!(dimension > 0, "dimension must be positive");
        SlowVaryFn {
            name: name.into(),
            dimension,
            evaluator: Evaluator::Continuum(Arc::new(f)),
        }
    }

    pub fn constant(dimension: usize, value: F) -> Self {
        Self::from_continuum_fn("constant", dimension, move |_| value)
    }

    /// The classical example `L(x) = prod_k log(x_k v 1)`. Zero on the set
    /// where any coordinate is <= 1; evaluations there report the zero-value
    /// contract violation.
    pub fn log_product(dimension: usize) -> Self {
        Self::from_continuum_fn("log-product", dimension, |x: &[f64]| {
            x.iter()
                .map(|&v| crate::scalar::cast::<F>(v.max(1.0).ln()))
                .fold(F::one(), |a, b| a * b)
        })
    }

    /// `L(x) = prod_k x_k`: not slowly varying; useful as a negative probe.
    pub fn coordinate_product(dimension: usize) -> Self {
        Self::from_continuum_fn("coordinate-product", dimension, |x: &[f64]| {
            x.iter()
                .map(|&v| crate::scalar::cast::<F>(v))
                .fold(F::one(), |a, b| a * b)
        })
    }

    /// The rectangular susceptibility of a model, as a lattice function of
    /// the box size. Nondecreasing for every nonnegative covariance.
    pub fn from_kx(model: &CovarianceModel<F>) -> Self {
        let model = model.clone();
        Self::from_lattice_fn("K_X", model.dimension(), move |coords: &[i64]| {
            MultiIndex::new(coords.to_vec())
                .ok()
                .and_then(|n| model.k_rect(&n).ok())
                .unwrap_or_else(F::nan)
        })
    }

    fn check_value(&self, raw: F, at: &[f64]) -> Result<F, SlowVarError> {
        if raw == F::zero() {
            return Err(SlowVarError::ZeroValue { at: at.to_vec() });
        }
        if !raw.is_finite() {
            return Err(SlowVarError::NonFinite { at: at.to_vec() });
        }
        Ok(raw)
    }

    /// Like [`eval_lattice`] but tolerates a zero value: monotonicity scans
    /// legitimately visit points like `n = 1` where log-type examples vanish.
    ///
    /// [`eval_lattice`]: SlowVaryFn::eval_lattice
    fn eval_lattice_raw(&self, n: &MultiIndex) -> Result<F, SlowVarError> {
        if n.dim() != self.dimension {
            return Err(SlowVarError::Dimension {
                got: n.dim(),
                want: self.dimension,
            });
        }
        for (axis, &v) in n.coords().iter().enumerate() {
            if v < 1 {
                return Err(LatticeError::NotPositive { axis, value: v }.into());
            }
        }
        let raw = match &self.evaluator {
            Evaluator::Lattice(f) => f(n.coords()),
            Evaluator::Continuum(f) => {
                let x: Vec<f64> = n.coords().iter().map(|&v| v as f64).collect();
                f(&x)
            }
        };
        if !raw.is_finite() {
            return Err(SlowVarError::NonFinite {
                at: n.coords().iter().map(|&v| v as f64).collect(),
            });
        }
        Ok(raw)
    }

    /// Evaluate at a lattice point `n >= 1` (both tags admit this).
    pub fn eval_lattice(&self, n: &MultiIndex) -> Result<F, SlowVarError> {
        let raw = self.eval_lattice_raw(n)?;
        let at: Vec<f64> = n.coords().iter().map(|&v| v as f64).collect();
        self.check_value(raw, &at)
    }

    /// Evaluate at a continuum point `x > 0`; lattice-tagged functions must
    /// be extended first.
    pub fn eval_continuum(&self, x: &[f64]) -> Result<F, SlowVarError> {
        if x.len() != self.dimension {
            return Err(SlowVarError::Dimension {
                got: x.len(),
                want: self.dimension,
            });
        }
        if x.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(SlowVarError::DomainNotPositive { coords: x.to_vec() });
        }
        match &self.evaluator {
            Evaluator::Continuum(f) => self.check_value(f(x), x),
            Evaluator::Lattice(_) => Err(SlowVarError::LatticeTagged {
                name: self.name.clone(),
            }),
        }
    }

    /// First monotonicity violation on the grid `1 <= n <= grid_max`, as
    /// `(point, axis)` with the two offending values; `None` if nondecreasing
    /// along every unit step on the grid.
    pub(crate) fn monotone_violation(
        &self,
        grid_max: &MultiIndex,
    ) -> Result<Option<(MultiIndex, usize, F, F)>, SlowVarError> {
        if grid_max.dim() != self.dimension {
            return Err(SlowVarError::Dimension {
                got: grid_max.dim(),
                want: self.dimension,
            });
        }
        let ones = MultiIndex::ones(self.dimension);
        if !ones.leq(grid_max)? {
            return Err(LatticeError::NotPositive {
                axis: 0,
                value: *grid_max.coords().iter().min().unwrap(),
            }
            .into());
        }
        let bx = crate::lattice::IndexBox::new(
            MultiIndex::splat(self.dimension, 0),
            grid_max.clone(),
        )?;
        for n in bx.iter_points() {
            let here = self.eval_lattice_raw(&n)?;
            // Nondecreasing up to accumulated rounding in the evaluator.
            let slack = here.abs() * crate::scalar::cast::<F>(1e-12);
            for axis in 0..self.dimension {
                if n.coords()[axis] + 1 > grid_max.coords()[axis] {
                    continue;
                }
                let up = MultiIndex::new(
                    n.coords()
                        .iter()
                        .enumerate()
                        .map(|(k, &v)| if k == axis { v + 1 } else { v })
                        .collect::<Vec<i64>>(),
                )?;
                let there = self.eval_lattice_raw(&up)?;
                if here > there + slack {
                    return Ok(Some((n, axis, here, there)));
                }
            }
        }
        Ok(None)
    }

    /// True iff `L(n) <= L(n + e_k)` for every `n <= grid_max` and axis `k`.
    pub fn monotone_grid_check(&self, grid_max: &MultiIndex) -> Result<bool, SlowVarError> {
        Ok(self.monotone_violation(grid_max)?.is_none())
    }

    /// Continuum extension `H(x) = L(floor(x v 1))` of a lattice-tagged
    /// nondecreasing function. The hypothesis is spot-checked on the grid up
    /// to `spot_check_max`; a violation is reported with the offending pair.
    /// Restricted to `N^d`, the extension reproduces `L` exactly.
    pub fn extend_to_continuum(
        &self,
        assume_monotone: bool,
        spot_check_max: &MultiIndex,
    ) -> Result<SlowVaryFn<F>, SlowVarError> {
        if !assume_monotone {
            return Err(SlowVarError::MonotoneAssumptionRequired);
        }
        let inner = match &self.evaluator {
            Evaluator::Lattice(f) => Arc::clone(f),
            Evaluator::Continuum(_) => {
                return Err(SlowVarError::NotLatticeTagged {
                    name: self.name.clone(),
                })
            }
        };
        if let Some((at, axis, value, next_value)) = self.monotone_violation(spot_check_max)? {
            return Err(SlowVarError::MonotoneViolation {
                at,
                axis,
                value: value.to_f64().unwrap_or(f64::NAN),
                next_value: next_value.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(SlowVaryFn {
            name: format!("extended({})", self.name),
            dimension: self.dimension,
            evaluator: Evaluator::Continuum(Arc::new(move |x: &[f64]| {
                let floored: Vec<i64> = x.iter().map(|&v| v.max(1.0).floor() as i64).collect();
                inner(&floored)
            })),
        })
    }
}

/// Ratios `L(a.x)/L(x)` along a strictly increasing schedule. The caller
/// judges convergence to 1 at the last point against its own tolerance.
pub fn sv_ratio_probe<F: Scalar>(
    l: &SlowVaryFn<F>,
    a: &MultiIndex,
    x_schedule: &[MultiIndex],
) -> Result<Vec<SvRatioPoint<F>>, SlowVarError> {
    if a.dim() != l.dimension() {
        return Err(SlowVarError::Dimension {
            got: a.dim(),
            want: l.dimension(),
        });
    }
    if a.coords().iter().any(|&v| v < 1) {
        return Err(SlowVarError::ScaleBelowOne {
            coords: a.coords().to_vec(),
        });
    }
    if x_schedule.is_empty() {
        return Err(SlowVarError::EmptySchedule);
    }
    for (i, pair) in x_schedule.windows(2).enumerate() {
        if !pair[0].lt(&pair[1])? {
            return Err(SlowVarError::ScheduleNotIncreasing { index: i + 1 });
        }
    }
    let mut out = Vec::with_capacity(x_schedule.len());
    for x in x_schedule {
        let scaled = MultiIndex::new(
            x.coords()
                .iter()
                .zip(a.coords())
                .map(|(&xv, &av)| {
                    xv.checked_mul(av).ok_or(LatticeError::ProductOverflow {
                        coords: vec![xv, av],
                    })
                })
                .collect::<Result<Vec<i64>, _>>()?,
        )?;
        let denom = l.eval_lattice(x)?;
        let numer = l.eval_lattice(&scaled)?;
        out.push(SvRatioPoint {
            x: x.clone(),
            ratio: numer / denom,
        });
    }
    Ok(out)
}

/// Diagonal dyadic schedule `2^j * 1` for `j_lo..=j_hi`: the default probe
/// grid, spanning decades at trivial cost.
pub fn dyadic_schedule(dimension: usize, j_lo: u32, j_hi: u32) -> Vec<MultiIndex> {
    assert!(j_lo <= j_hi && j_hi < 62);
    (j_lo..=j_hi)
        .map(|j| MultiIndex::splat(dimension, 1i64 << j))
        .collect()
}
