//! Covariance models on `Z^d` and the summed-covariance functionals that
//! control variance growth of box sums.
//!
//! For a stationary field with covariance `R(m) = cov(X_0, X_m)` and a box
//! `U_n = (0, n]`, the exact variance of `S(U_n) = sum_{u in U_n} X_u` is
//!
//! ```text
//! var S(U_n) = sum_{|m_k| <= n_k - 1} prod_k (n_k - |m_k|) * R(m)
//! ```
//!
//! a single weighted lattice sum. The rectangular susceptibility
//! `K_X(n) = sum_{-n <= m <= n} R(m)` dominates it: `var S(U_n) <= <n> K_X(n)`
//! when `R >= 0`, with a matching lower bound at a shrunken box. All sums use
//! compensated accumulation in a deterministic lattice order.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::lattice::{IndexBox, LatticeError, MultiIndex};
use crate::scalar::{cast, cast_i64, CompensatedSum, Scalar};

#[derive(Debug, Error)]
pub enum CovarianceError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("covariance entry at {lag:?} is negative ({value}); nonnegative covariances required")]
    NegativeEntry { lag: Vec<i64>, value: f64 },
    #[error("R(0) must be present and positive")]
    ZeroLagMissing,
    #[error("entries at {lag:?} and its reflection disagree")]
    AsymmetricEntries { lag: Vec<i64> },
    #[error("entry lag {lag:?} has dimension {got}, model dimension is {want}")]
    EntryDimension { lag: Vec<i64>, got: usize, want: usize },
    #[error("radial profile requires scale > 0 and alpha >= 0 (got scale={scale}, alpha={alpha})")]
    BadProfile { scale: f64, alpha: f64 },
    #[error("dimension mismatch: argument has {got}, model has {want}")]
    Dimension { got: usize, want: usize },
    #[error("radius must be >= 0, got {0}")]
    NegativeRadius(i64),
    #[error("brute-force variance limited to boxes with <n> <= {limit}, got {got}")]
    BruteForceTooLarge { got: i64, limit: i64 },
    #[error("sandwich precondition failed: {0}")]
    SandwichPrecondition(String),
    #[error("internal inequality violated: {0}")]
    InternalInvariant(String),
}

/// Stationary covariance model: either finitely supported entries or an
/// isotropic power-law tail. Entries are required nonnegative (the positive
/// association setting); positive semidefiniteness is deliberately *not*
/// checked here — the Gaussian synthesizer performs the only PSD check, on
/// its torus spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct CovarianceModel<F> {
    dimension: usize,
    kind: Kind<F>,
}

#[derive(Clone, Debug, PartialEq)]
enum Kind<F> {
    Finite {
        entries: BTreeMap<Vec<i64>, F>,
        radius: i64,
    },
    RadialPower {
        alpha: F,
        scale: F,
    },
}

/// Total covariance sum over all of `Z^d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Susceptibility<F> {
    /// Sum converges; `tail_bound` is a rigorous bound on the truncation
    /// error of `value` (zero for finitely supported models).
    Convergent { value: F, tail_bound: F },
    Diverged,
}

impl<F: Scalar> CovarianceModel<F> {
    /// Finitely supported model. Entries are symmetrized (`R(-m) = R(m)`);
    /// providing both `m` and `-m` with different values is an error.
    pub fn finite(
        dimension: usize,
        entries: impl IntoIterator<Item = (Vec<i64>, F)>,
    ) -> Result<Self, CovarianceError> {
        assert!(dimension > 0, "dimension must be positive");
        let mut map: BTreeMap<Vec<i64>, F> = BTreeMap::new();
        for (lag, value) in entries {
            if lag.len() != dimension {
                return Err(CovarianceError::EntryDimension {
                    got: lag.len(),
                    lag,
                    want: dimension,
                });
            }
            if value < F::zero() {
                return Err(CovarianceError::NegativeEntry {
                    value: value.to_f64().unwrap_or(f64::NAN),
                    lag,
                });
            }
            let neg: Vec<i64> = lag.iter().map(|v| -v).collect();
            for key in [lag.clone(), neg] {
                match map.get(&key) {
                    Some(&existing) if existing != value => {
                        return Err(CovarianceError::AsymmetricEntries { lag });
                    }
                    _ => {
                        map.insert(key, value);
                    }
                }
            }
        }
        match map.get(vec![0i64; dimension].as_slice()) {
            Some(&v) if v > F::zero() => {}
            _ => return Err(CovarianceError::ZeroLagMissing),
        }
        let radius = map
            .keys()
            .map(|k| k.iter().map(|v| v.abs()).max().unwrap_or(0))
            .max()
            .unwrap_or(0);
        Ok(CovarianceModel {
            dimension,
            kind: Kind::Finite {
                entries: map,
                radius,
            },
        })
    }

    /// Independent field: `R(0) = variance`, zero elsewhere.
    pub fn iid(dimension: usize, variance: F) -> Result<Self, CovarianceError> {
        Self::finite(dimension, [(vec![0i64; dimension], variance)])
    }

    /// Isotropic power tail `R(m) = scale * (1 + |m|_2)^(-alpha)`.
    /// `alpha = 0` degenerates to the constant covariance `scale`.
    pub fn radial_power(dimension: usize, alpha: F, scale: F) -> Result<Self, CovarianceError> {
        assert!(dimension > 0, "dimension must be positive");
        if !(scale > F::zero()) || !(alpha >= F::zero()) {
            return Err(CovarianceError::BadProfile {
                scale: scale.to_f64().unwrap_or(f64::NAN),
                alpha: alpha.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(CovarianceModel {
            dimension,
            kind: Kind::RadialPower { alpha, scale },
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Sup-norm radius of the support for finite models, `None` for tails.
    pub fn support_radius(&self) -> Option<i64> {
        match &self.kind {
            Kind::Finite { radius, .. } => Some(*radius),
            Kind::RadialPower { .. } => None,
        }
    }

    pub fn is_finite_range(&self) -> bool {
        matches!(self.kind, Kind::Finite { .. })
    }

    /// All nonzero lags with their values, for finite models.
    pub(crate) fn finite_entries(&self) -> Option<&BTreeMap<Vec<i64>, F>> {
        match &self.kind {
            Kind::Finite { entries, .. } => Some(entries),
            Kind::RadialPower { .. } => None,
        }
    }

    /// `R(m)`.
    pub fn eval(&self, lag: &[i64]) -> F {
        debug_assert_eq!(lag.len(), self.dimension);
        match &self.kind {
            Kind::Finite { entries, .. } => entries.get(lag).copied().unwrap_or_else(F::zero),
            Kind::RadialPower { alpha, scale } => {
                let norm2: F = lag
                    .iter()
                    .map(|&v| {
                        let x = cast_i64::<F>(v);
                        x * x
                    })
                    .fold(F::zero(), |a, b| a + b);
                let r = norm2.sqrt();
                *scale * (F::one() + r).powf(-*alpha)
            }
        }
    }

    pub fn eval_at(&self, lag: &MultiIndex) -> Result<F, CovarianceError> {
        self.check_dim(lag.dim())?;
        Ok(self.eval(lag.coords()))
    }

    fn check_dim(&self, got: usize) -> Result<(), CovarianceError> {
        if got != self.dimension {
            return Err(CovarianceError::Dimension {
                got,
                want: self.dimension,
            });
        }
        Ok(())
    }

    fn check_positive(n: &MultiIndex) -> Result<(), CovarianceError> {
        for (axis, &v) in n.coords().iter().enumerate() {
            if v < 1 {
                return Err(CovarianceError::Lattice(LatticeError::NotPositive {
                    axis,
                    value: v,
                }));
            }
        }
        Ok(())
    }

    /// Rectangular susceptibility `K_X(n) = sum_{-n <= m <= n} R(m)`,
    /// summed exactly over the whole box.
    pub fn k_rect(&self, n: &MultiIndex) -> Result<F, CovarianceError> {
        self.check_dim(n.dim())?;
        Self::check_positive(n)?;
        match &self.kind {
            Kind::Finite { entries, .. } => {
                let mut acc = CompensatedSum::new();
                for (lag, &v) in entries {
                    if lag.iter().zip(n.coords()).all(|(m, nk)| m.abs() <= *nk) {
                        acc.add(v);
                    }
                }
                Ok(acc.value())
            }
            Kind::RadialPower { .. } => {
                let mut acc = CompensatedSum::new();
                for_each_in_sym_box(n.coords(), |lag| acc.add(self.eval(lag)));
                Ok(acc.value())
            }
        }
    }

    /// Euclidean-ball sum `K(r) = sum_{|m|_2 <= r} R(m)`.
    pub fn k_ball_euclid(&self, r: i64) -> Result<F, CovarianceError> {
        if r < 0 {
            return Err(CovarianceError::NegativeRadius(r));
        }
        let b = match self.support_radius() {
            Some(rad) => rad.min(r),
            None => r,
        };
        let bounds = vec![b; self.dimension];
        let rr = r.checked_mul(r).ok_or(LatticeError::ProductOverflow {
            coords: vec![r; 2],
        })?;
        let mut acc = CompensatedSum::new();
        for_each_in_sym_box(&bounds, |lag| {
            let norm2: i64 = lag.iter().map(|v| v * v).sum();
            if norm2 <= rr {
                acc.add(self.eval(lag));
            }
        });
        Ok(acc.value())
    }

    /// Sup-norm-ball sum `sum_{|m|_inf <= r} R(m)`; equals `k_rect(r * 1)`.
    pub fn k_ball_sup(&self, r: i64) -> Result<F, CovarianceError> {
        if r < 0 {
            return Err(CovarianceError::NegativeRadius(r));
        }
        if r == 0 {
            return Ok(self.eval(&vec![0i64; self.dimension]));
        }
        self.k_rect(&MultiIndex::splat(self.dimension, r))
    }

    /// Total covariance sum over `Z^d`, with a rigorous truncation bound.
    ///
    /// Finite models sum exactly. Power tails diverge iff `alpha <= d`;
    /// convergent 1-d tails use an Euler-Maclaurin correction (bound well
    /// below 1e-10), higher dimensions enlarge the summation ball until the
    /// comparison-integral bound is met or a cost ceiling is reached, and
    /// report the bound actually achieved.
    pub fn susceptibility(&self) -> Susceptibility<F> {
        match &self.kind {
            Kind::Finite { entries, .. } => {
                let mut acc = CompensatedSum::new();
                for &v in entries.values() {
                    acc.add(v);
                }
                Susceptibility::Convergent {
                    value: acc.value(),
                    tail_bound: F::zero(),
                }
            }
            Kind::RadialPower { alpha, scale } => {
                let d = cast_i64::<F>(self.dimension as i64);
                if *alpha <= d {
                    return Susceptibility::Diverged;
                }
                if self.dimension == 1 {
                    self.susceptibility_1d(*alpha, *scale)
                } else {
                    self.susceptibility_nd(*alpha, *scale)
                }
            }
        }
    }

    fn susceptibility_1d(&self, alpha: F, scale: F) -> Susceptibility<F> {
        let m0 = 10_000i64;
        let mut head = CompensatedSum::new();
        for m in 1..=m0 {
            head.add((F::one() + cast_i64::<F>(m)).powf(-alpha));
        }
        // Euler-Maclaurin for sum_{m >= m0+1} (1+m)^(-alpha), g = 1 + (m0+1).
        let g = F::one() + cast_i64::<F>(m0 + 1);
        let one = F::one();
        let integral = g.powf(one - alpha) / (alpha - one);
        let f0 = g.powf(-alpha);
        let f1 = -alpha * g.powf(-alpha - one);
        let f3 = -alpha * (alpha + one) * (alpha + cast(2.0)) * g.powf(-alpha - cast(3.0));
        let tail = integral + f0 / cast(2.0) - f1 / cast(12.0) + f3 / cast(720.0);
        let f5 = alpha
            * (alpha + one)
            * (alpha + cast(2.0))
            * (alpha + cast(3.0))
            * (alpha + cast(4.0))
            * g.powf(-alpha - cast(5.0));
        let remainder = f5 / cast(15_000.0); // |B_6|/6! = 1/30240, doubled for safety
        let value = scale * (one + cast::<F>(2.0) * (head.value() + tail));
        Susceptibility::Convergent {
            value,
            tail_bound: scale * cast::<F>(2.0) * remainder.abs(),
        }
    }

    fn susceptibility_nd(&self, alpha: F, scale: F) -> Susceptibility<F> {
        let d = self.dimension;
        let df = cast_i64::<F>(d as i64);
        let mut m = 64i64;
        loop {
            let mf = cast_i64::<F>(m);
            // Tail over |m|_inf > M: the shell at sup-distance s holds at most
            // 2d(2s+1)^(d-1) <= 2d((2+1/M)s)^(d-1) points, each with
            // R <= scale s^(-alpha); the shell series is bounded by the
            // integral from M since the summand decreases.
            let shell_const =
                cast::<F>(2.0 * d as f64 * (2.0 + 1.0 / m as f64).powi(d as i32 - 1));
            let tail_bound = scale * shell_const * mf.powf(df - alpha) / (alpha - df);
            let next_points = (4 * m + 1).pow(d as u32);
            if tail_bound <= cast::<F>(1e-10) || next_points > 200_000_000 {
                let bounds = vec![m; d];
                let mut acc = CompensatedSum::new();
                for_each_in_sym_box(&bounds, |lag| acc.add(self.eval(lag)));
                return Susceptibility::Convergent {
                    value: acc.value(),
                    tail_bound,
                };
            }
            m *= 2;
        }
    }

    /// Exact variance of the box sum, as the single weighted lattice sum
    /// `sum_m prod_k (n_k - |m_k|) R(m)` over `|m_k| <= n_k - 1`.
    pub fn variance_exact(&self, n: &MultiIndex) -> Result<F, CovarianceError> {
        self.check_dim(n.dim())?;
        Self::check_positive(n)?;
        let weight = |lag: &[i64]| -> F {
            lag.iter()
                .zip(n.coords())
                .map(|(m, nk)| cast_i64::<F>(nk - m.abs()))
                .fold(F::one(), |a, b| a * b)
        };
        match &self.kind {
            Kind::Finite { entries, .. } => {
                let mut acc = CompensatedSum::new();
                for (lag, &v) in entries {
                    if lag.iter().zip(n.coords()).all(|(m, nk)| m.abs() < *nk) {
                        acc.add(weight(lag) * v);
                    }
                }
                Ok(acc.value())
            }
            Kind::RadialPower { .. } => {
                let bounds: Vec<i64> = n.coords().iter().map(|v| v - 1).collect();
                let mut acc = CompensatedSum::new();
                for_each_in_sym_box(&bounds, |lag| acc.add(weight(lag) * self.eval(lag)));
                Ok(acc.value())
            }
        }
    }

    /// Independent oracle for [`variance_exact`]: the double sum
    /// `sum_{u, v in U_n} R(u - v)` over all point pairs. Quadratic cost,
    /// restricted to `<n> <= 10^4`.
    ///
    /// [`variance_exact`]: CovarianceModel::variance_exact
    pub fn variance_bruteforce(&self, n: &MultiIndex) -> Result<F, CovarianceError> {
        self.check_dim(n.dim())?;
        let total = n.product()?;
        const LIMIT: i64 = 10_000;
        if total > LIMIT {
            return Err(CovarianceError::BruteForceTooLarge {
                got: total,
                limit: LIMIT,
            });
        }
        let bx = IndexBox::prefix(n)?;
        let points: Vec<MultiIndex> = bx.iter_points().collect();
        let table = LagTable::build(self, n)?;
        let mut acc = CompensatedSum::new();
        let mut lag = vec![0i64; self.dimension];
        for u in &points {
            for v in &points {
                for k in 0..self.dimension {
                    lag[k] = u[k] - v[k];
                }
                acc.add(table.get(&lag));
            }
        }
        Ok(acc.value())
    }

    /// Two-sided variance growth bounds plus the converse susceptibility
    /// bound, all evaluated exactly:
    ///
    /// ```text
    /// (1-c)^d <n> K_X([cn] v 1)  <=  var S(U_n)  <=  <n> K_X(n)
    /// K_X(n)  <=  (q/(q-1))^d var S(U_qn) / <qn>
    /// ```
    pub fn variance_sandwich(
        &self,
        n: &MultiIndex,
        c: f64,
        q: i64,
    ) -> Result<VarianceSandwich<F>, CovarianceError> {
        self.check_dim(n.dim())?;
        Self::check_positive(n)?;
        if !(0.0 < c && c < 1.0) {
            return Err(CovarianceError::SandwichPrecondition(format!(
                "need 0 < c < 1, got c={c}"
            )));
        }
        if q < 2 {
            return Err(CovarianceError::SandwichPrecondition(format!(
                "need q >= 2, got q={q}"
            )));
        }
        let min_n = (1.0 / (1.0 - c)).ceil() as i64;
        if n.coords().iter().any(|&v| v < min_n) {
            return Err(CovarianceError::SandwichPrecondition(format!(
                "need n >= {min_n} per axis for c={c}, got {:?}",
                n.coords()
            )));
        }

        let d = self.dimension as i32;
        let total = cast_i64::<F>(n.product()?);
        let floor_cn = n.map(|v| ((c * v as f64).floor() as i64).max(1));
        let lower = cast::<F>((1.0 - c).powi(d)) * total * self.k_rect(&floor_cn)?;
        let exact = self.variance_exact(n)?;
        let kx_n = self.k_rect(n)?;
        let upper = total * kx_n;

        let qn = n.map(|v| v * q);
        let qn_total = cast_i64::<F>(qn.product()?);
        let ratio = cast::<F>((q as f64 / (q as f64 - 1.0)).powi(d));
        let converse_upper = ratio * self.variance_exact(&qn)? / qn_total;

        let sandwich = VarianceSandwich {
            n: n.clone(),
            floor_cn,
            lower,
            exact,
            upper,
            kx_n,
            converse_upper,
        };
        sandwich.verify()?;
        Ok(sandwich)
    }
}

/// Output of [`CovarianceModel::variance_sandwich`], already verified.
#[derive(Clone, Debug, Serialize)]
pub struct VarianceSandwich<F> {
    pub n: MultiIndex,
    pub floor_cn: MultiIndex,
    pub lower: F,
    pub exact: F,
    pub upper: F,
    pub kx_n: F,
    pub converse_upper: F,
}

impl<F: Scalar> VarianceSandwich<F> {
    fn verify(&self) -> Result<(), CovarianceError> {
        let tol = cast::<F>(1e-9);
        let slack = |x: F| x.abs() * tol + tol;
        if self.lower > self.exact + slack(self.exact) {
            return Err(CovarianceError::InternalInvariant(format!(
                "lower {} > exact {}",
                self.lower, self.exact
            )));
        }
        if self.exact > self.upper + slack(self.upper) {
            return Err(CovarianceError::InternalInvariant(format!(
                "exact {} > upper {}",
                self.exact, self.upper
            )));
        }
        if self.kx_n > self.converse_upper + slack(self.converse_upper) {
            return Err(CovarianceError::InternalInvariant(format!(
                "K_X {} > converse bound {}",
                self.kx_n, self.converse_upper
            )));
        }
        Ok(())
    }
}

/// Dense cache of `R` over the lag box `prod [-(n_k-1), n_k-1]`, for the
/// quadratic oracle and corridor sums.
pub(crate) struct LagTable<F> {
    bounds: Vec<i64>,
    strides: Vec<i64>,
    values: Vec<F>,
}

impl<F: Scalar> LagTable<F> {
    pub(crate) fn build(
        model: &CovarianceModel<F>,
        n: &MultiIndex,
    ) -> Result<Self, CovarianceError> {
        let bounds: Vec<i64> = n.coords().iter().map(|v| v - 1).collect();
        let sides: Vec<i64> = bounds.iter().map(|b| 2 * b + 1).collect();
        let mut strides = vec![1i64; bounds.len()];
        for k in (0..bounds.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1]
                .checked_mul(sides[k + 1])
                .ok_or(LatticeError::ProductOverflow {
                    coords: sides.clone(),
                })?;
        }
        let total = sides
            .iter()
            .try_fold(1i64, |a, &b| a.checked_mul(b))
            .ok_or(LatticeError::ProductOverflow {
                coords: sides.clone(),
            })?;
        let mut values = vec![F::zero(); total as usize];
        let strides_ref = &strides;
        let bounds_ref = &bounds;
        for_each_in_sym_box(&bounds, |lag| {
            let mut idx = 0i64;
            for k in 0..lag.len() {
                idx += (lag[k] + bounds_ref[k]) * strides_ref[k];
            }
            values[idx as usize] = model.eval(lag);
        });
        Ok(LagTable {
            bounds,
            strides,
            values,
        })
    }

    #[inline]
    pub(crate) fn get(&self, lag: &[i64]) -> F {
        let mut idx = 0i64;
        for k in 0..lag.len() {
            let c = lag[k] + self.bounds[k];
            debug_assert!(c >= 0 && c <= 2 * self.bounds[k]);
            idx += c * self.strides[k];
        }
        self.values[idx as usize]
    }
}

/// Visits every lattice point of `prod_k [-b_k, b_k]` in lexicographic
/// order without per-point allocation.
pub(crate) fn for_each_in_sym_box(bounds: &[i64], mut f: impl FnMut(&[i64])) {
    debug_assert!(bounds.iter().all(|&b| b >= 0));
    let d = bounds.len();
    let mut cur: Vec<i64> = bounds.iter().map(|b| -b).collect();
    loop {
        f(&cur);
        let mut k = d;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if cur[k] < bounds[k] {
                cur[k] += 1;
                break;
            }
            cur[k] = -bounds[k];
        }
    }
}

/// Covariance functionals tabulated over grids, for reporting.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceSummary<F> {
    pub k_rect: Vec<(MultiIndex, F)>,
    pub k_ball_euclid: Vec<(i64, F)>,
    pub k_ball_sup: Vec<(i64, F)>,
    pub susceptibility: Susceptibility<F>,
}

impl<F: Scalar> CovarianceSummary<F> {
    pub fn compute(
        model: &CovarianceModel<F>,
        n_grid: &[MultiIndex],
        r_grid: &[i64],
    ) -> Result<Self, CovarianceError> {
        let mut k_rect = Vec::with_capacity(n_grid.len());
        for n in n_grid {
            k_rect.push((n.clone(), model.k_rect(n)?));
        }
        let mut k_ball_euclid = Vec::with_capacity(r_grid.len());
        let mut k_ball_sup = Vec::with_capacity(r_grid.len());
        for &r in r_grid {
            k_ball_euclid.push((r, model.k_ball_euclid(r)?));
            k_ball_sup.push((r, model.k_ball_sup(r)?));
        }
        Ok(CovarianceSummary {
            k_rect,
            k_ball_euclid,
            k_ball_sup,
            susceptibility: model.susceptibility(),
        })
    }
}
