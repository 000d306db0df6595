//! Seeded generators of strictly stationary positively associated fields on
//! finite boxes, each carrying the exact covariance model its output obeys.
//!
//! Association is by construction, never estimated: independent variables
//! are associated, nondecreasing maps of them (nonnegative moving averages)
//! stay associated, and Gaussian fields with nonnegative covariance are
//! associated. The [`pa_diagnostic`] probe exists only to falsify, not to
//! certify. Downstream normality diagnostics read second moments from the
//! attached model, so no variance is ever estimated from samples.

mod circulant;
mod streams;

pub use streams::{stream_rng, CHANNEL_BLOCK, CHANNEL_REALIZATION};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::covariance::{CovarianceError, CovarianceModel};
use crate::lattice::{IndexBox, LatticeError, MultiIndex};
use crate::scalar::{cast, cast_i64, CompensatedSum, Scalar};

use circulant::NdFft;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error("variance must be positive, got {got}")]
    NonPositiveVariance { got: f64 },
    #[error("moving-average kernel must have at least one positive tap")]
    KernelEmpty,
    #[error("kernel tap at {at:?} is {value}; association needs nonnegative taps")]
    KernelNegative { at: Vec<i64>, value: f64 },
    #[error("kernel tap at {at:?} has dimension {got}, sampler has {want}")]
    KernelDimension {
        at: Vec<i64>,
        got: usize,
        want: usize,
    },
    #[error("torus dimension {got} does not match the model dimension {want}")]
    TorusDimension { got: usize, want: usize },
    #[error("torus side {side} at axis {axis} is below the minimum 4")]
    TorusTooSmall { axis: usize, side: i64 },
    #[error("torus holds {total} points, above the {cap} synthesis cap")]
    TorusTooLarge { total: i64, cap: i64 },
    #[error(
        "covariance is not embeddable at this torus size \
         (eigenvalues span [{min_eig:.3e}, {max_eig:.3e}]); increase torus"
    )]
    NotEmbeddable { min_eig: f64, max_eig: f64 },
    #[error("box dimension {got} does not match the sampler dimension {want}")]
    BoxDimension { got: usize, want: usize },
    #[error("cannot sample an empty box")]
    EmptyBox,
    #[error(
        "box side {side} at axis {axis} exceeds the synthesis range; \
         the torus side {torus} must be at least 4x the box side"
    )]
    BoxExceedsSynthesisRange { axis: usize, side: i64, torus: i64 },
    #[error("sub-box is not contained in the realization box")]
    SubBoxNotContained,
    #[error("index sets must be disjoint; {at:?} appears in both")]
    OverlappingIndexSets { at: Vec<i64> },
    #[error("index sets must be nonempty")]
    EmptyIndexSet,
    #[error("index point has dimension {got}, sampler has {want}")]
    PointDimension { got: usize, want: usize },
    #[error("diagnostic needs at least 2 replicates, got {got}")]
    TooFewReplicates { got: usize },
}

/// Marginal law of the independent generator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IidLaw {
    Normal,
    /// Uniform on `[-sqrt(3 v), sqrt(3 v)]`, so the variance is exactly `v`.
    BoundedUniform,
}

enum Kind<F: Scalar> {
    Iid {
        law: IidLaw,
        sigma: F,
    },
    MovingAverage {
        offsets: Vec<Vec<i64>>,
        weights: Vec<F>,
        noise_sigma: F,
        min_off: Vec<i64>,
        max_off: Vec<i64>,
    },
    Gaussian {
        torus: MultiIndex,
        fft: Arc<NdFft<F>>,
        weights: Arc<Vec<F>>,
    },
    /// One symmetric two-point variable copied to every site. Perfectly
    /// dependent, still associated; exists to exercise the degenerate-law
    /// verdict, not as a production generator.
    ConstantDouble {
        scale: F,
    },
}

impl<F: Scalar> Clone for Kind<F> {
    fn clone(&self) -> Self {
        match self {
            Kind::Iid { law, sigma } => Kind::Iid {
                law: *law,
                sigma: *sigma,
            },
            Kind::MovingAverage {
                offsets,
                weights,
                noise_sigma,
                min_off,
                max_off,
            } => Kind::MovingAverage {
                offsets: offsets.clone(),
                weights: weights.clone(),
                noise_sigma: *noise_sigma,
                min_off: min_off.clone(),
                max_off: max_off.clone(),
            },
            Kind::Gaussian { torus, fft, weights } => Kind::Gaussian {
                torus: torus.clone(),
                fft: Arc::clone(fft),
                weights: Arc::clone(weights),
            },
            Kind::ConstantDouble { scale } => Kind::ConstantDouble { scale: *scale },
        }
    }
}

/// A stationary associated field generator with its exact covariance.
/// Immutable after construction; sampling is pure given the seed, so
/// concurrent calls are safe and deterministic.
#[derive(Clone)]
pub struct FieldSampler<F: Scalar> {
    dimension: usize,
    kind: Kind<F>,
    model: CovarianceModel<F>,
    id: String,
}

impl<F: Scalar> fmt::Debug for FieldSampler<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FieldSampler")
            .field("id", &self.id)
            .finish_non_exhaustive()
    }
}

/// Independent variables are associated; the attached covariance is
/// `R(m) = variance * 1{m = 0}`.
pub fn make_iid<F: Scalar>(
    dimension: usize,
    variance: F,
    law: IidLaw,
) -> Result<FieldSampler<F>, FieldError> {
    if !(variance > F::zero()) {
        return Err(FieldError::NonPositiveVariance {
            got: variance.to_f64().unwrap_or(f64::NAN),
        });
    }
    let model = CovarianceModel::iid(dimension, variance)?;
    let label = match law {
        IidLaw::Normal => "normal",
        IidLaw::BoundedUniform => "bounded-uniform",
    };
    Ok(FieldSampler {
        dimension,
        kind: Kind::Iid {
            law,
            sigma: variance.sqrt(),
        },
        model,
        id: format!("iid-{label}(d={dimension}, variance={variance})"),
    })
}

/// `X_t = sum_j c_j eps_(t-j)` driven by iid Gaussian noise. Nonnegative
/// taps make `X` a coordinate-wise nondecreasing map of independent inputs,
/// hence associated. The attached covariance is the exact autocorrelation
/// of the given (truncated) kernel, `R(m) = noise_variance * sum_j c_j
/// c_(j+m)`, not of any infinite ideal.
pub fn make_moving_average<F: Scalar>(
    dimension: usize,
    kernel: impl IntoIterator<Item = (Vec<i64>, F)>,
    noise_variance: F,
) -> Result<FieldSampler<F>, FieldError> {
    if !(noise_variance > F::zero()) {
        return Err(FieldError::NonPositiveVariance {
            got: noise_variance.to_f64().unwrap_or(f64::NAN),
        });
    }
    let mut offsets: Vec<Vec<i64>> = Vec::new();
    let mut weights: Vec<F> = Vec::new();
    for (at, value) in kernel {
        if at.len() != dimension {
            return Err(FieldError::KernelDimension {
                got: at.len(),
                at,
                want: dimension,
            });
        }
        if !(value >= F::zero()) || !value.is_finite() {
            return Err(FieldError::KernelNegative {
                at,
                value: value.to_f64().unwrap_or(f64::NAN),
            });
        }
        offsets.push(at);
        weights.push(value);
    }
    if !weights.iter().any(|w| *w > F::zero()) {
        return Err(FieldError::KernelEmpty);
    }

    let mut entries: BTreeMap<Vec<i64>, F> = BTreeMap::new();
    for (j, cj) in offsets.iter().zip(&weights) {
        for (jj, cjj) in offsets.iter().zip(&weights) {
            let m: Vec<i64> = jj.iter().zip(j).map(|(a, b)| a - b).collect();
            *entries.entry(m).or_insert_with(F::zero) += *cj * *cjj * noise_variance;
        }
    }
    let model = CovarianceModel::finite(dimension, entries)?;

    let mut min_off = vec![i64::MAX; dimension];
    let mut max_off = vec![i64::MIN; dimension];
    for off in &offsets {
        for k in 0..dimension {
            min_off[k] = min_off[k].min(off[k]);
            max_off[k] = max_off[k].max(off[k]);
        }
    }
    let taps = offsets.len();
    Ok(FieldSampler {
        dimension,
        kind: Kind::MovingAverage {
            offsets,
            weights,
            noise_sigma: noise_variance.sqrt(),
            min_off,
            max_off,
        },
        model,
        id: format!("moving-average(d={dimension}, taps={taps})"),
    })
}

const TORUS_POINT_CAP: i64 = 1 << 22;

/// Exact stationary Gaussian synthesis by circulant embedding: the model is
/// folded onto the torus, its spectrum checked for nonnegativity, and every
/// realization is one FFT of weighted white noise. Gaussian fields with
/// nonnegative covariance are associated. Boxes up to a quarter of the
/// torus per axis sample the exact covariance `R`.
pub fn make_gaussian<F: Scalar>(
    model: &CovarianceModel<F>,
    torus: &MultiIndex,
) -> Result<FieldSampler<F>, FieldError> {
    if torus.dim() != model.dimension() {
        return Err(FieldError::TorusDimension {
            got: torus.dim(),
            want: model.dimension(),
        });
    }
    for (axis, &side) in torus.coords().iter().enumerate() {
        if side < 4 {
            return Err(FieldError::TorusTooSmall { axis, side });
        }
    }
    let total = torus.product()?;
    if total > TORUS_POINT_CAP {
        return Err(FieldError::TorusTooLarge {
            total,
            cap: TORUS_POINT_CAP,
        });
    }
    let sides: Vec<usize> = torus.coords().iter().map(|&v| v as usize).collect();
    let fft = NdFft::new(&sides);
    let weights = circulant::synthesis_weights(model, torus, &fft)?;
    Ok(FieldSampler {
        dimension: model.dimension(),
        kind: Kind::Gaussian {
            torus: torus.clone(),
            fft: Arc::new(fft),
            weights: Arc::new(weights),
        },
        model: model.clone(),
        id: format!(
            "gaussian(d={}, torus={:?})",
            model.dimension(),
            torus.coords()
        ),
    })
}

/// The degenerate test double `X_t = xi` with `xi = +-scale` equally
/// likely: associated (every site is the same nondecreasing function of one
/// variable) with covariance `R(m) = scale^2` everywhere, but its
/// normalized sums converge to a two-point law, not a normal one.
pub fn constant_double<F: Scalar>(
    dimension: usize,
    scale: F,
) -> Result<FieldSampler<F>, FieldError> {
    if !(scale > F::zero()) {
        return Err(FieldError::NonPositiveVariance {
            got: scale.to_f64().unwrap_or(f64::NAN),
        });
    }
    let model = CovarianceModel::radial_power(dimension, F::zero(), scale * scale)?;
    Ok(FieldSampler {
        dimension,
        kind: Kind::ConstantDouble { scale },
        model,
        id: format!("constant-double(d={dimension}, scale={scale})"),
    })
}

impl<F: Scalar> FieldSampler<F> {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// The exact covariance obeyed by every realization.
    pub fn model(&self) -> &CovarianceModel<F> {
        &self.model
    }

    /// `E X_0`; every built-in generator is centered.
    pub fn mean(&self) -> F {
        F::zero()
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            Kind::Iid { .. } => "iid",
            Kind::MovingAverage { .. } => "moving-average",
            Kind::Gaussian { .. } => "gaussian",
            Kind::ConstantDouble { .. } => "constant-double",
        }
    }

    /// One realization on stream (replicate 0, realization channel).
    pub fn sample(&self, bx: &IndexBox, seed: u64) -> Result<Realization<F>, FieldError> {
        self.sample_stream(bx, seed, 0, CHANNEL_REALIZATION)
    }

    /// One realization on an explicit (replicate, channel) stream. Same
    /// arguments give bit-identical values; distinct streams are
    /// independent, which is what makes parallel replication reproducible.
    pub fn sample_stream(
        &self,
        bx: &IndexBox,
        seed: u64,
        replicate: u32,
        channel: u32,
    ) -> Result<Realization<F>, FieldError> {
        if bx.dim() != self.dimension {
            return Err(FieldError::BoxDimension {
                got: bx.dim(),
                want: self.dimension,
            });
        }
        if bx.is_empty() {
            return Err(FieldError::EmptyBox);
        }
        let mut rng = stream_rng(seed, replicate, channel);
        let values = self.draw_values(bx, &mut rng)?;
        debug_assert_eq!(values.len() as i64, bx.cardinality()?);
        Ok(Realization {
            bx: bx.clone(),
            values,
            seed,
            replicate,
            channel,
            sampler_id: self.id.clone(),
        })
    }

    fn draw_values(&self, bx: &IndexBox, rng: &mut ChaCha8Rng) -> Result<Vec<F>, FieldError> {
        let count = bx.cardinality()? as usize;
        match &self.kind {
            Kind::Iid { law, sigma } => {
                let mut values = Vec::with_capacity(count);
                match law {
                    IidLaw::Normal => {
                        for _ in 0..count {
                            values.push(*sigma * F::standard_normal(rng));
                        }
                    }
                    IidLaw::BoundedUniform => {
                        let half = *sigma * cast::<F>(3f64.sqrt());
                        let two = cast::<F>(2.0);
                        for _ in 0..count {
                            values.push(half * (two * F::unit_uniform(rng) - F::one()));
                        }
                    }
                }
                Ok(values)
            }
            Kind::MovingAverage {
                offsets,
                weights,
                noise_sigma,
                min_off,
                max_off,
            } => {
                let d = self.dimension;
                let noise_lower = MultiIndex::new(
                    bx.lower()
                        .coords()
                        .iter()
                        .zip(max_off)
                        .map(|(l, o)| l - o)
                        .collect::<Vec<i64>>(),
                )?;
                let noise_upper = MultiIndex::new(
                    bx.upper()
                        .coords()
                        .iter()
                        .zip(min_off)
                        .map(|(u, o)| u - o)
                        .collect::<Vec<i64>>(),
                )?;
                let noise_box = IndexBox::new(noise_lower, noise_upper)?;
                let noise_count = noise_box.cardinality()? as usize;
                let mut noise = Vec::with_capacity(noise_count);
                for _ in 0..noise_count {
                    noise.push(*noise_sigma * F::standard_normal(rng));
                }
                let sides = noise_box.sides();
                let lower = noise_box.lower().coords();
                let mut values = Vec::with_capacity(count);
                for u in bx.iter_points() {
                    let mut acc = F::zero();
                    for (off, w) in offsets.iter().zip(weights) {
                        // eps index of t - j inside the enlarged noise box
                        let mut idx = 0i64;
                        for k in 0..d {
                            idx = idx * sides[k] + (u.coords()[k] - off[k] - lower[k] - 1);
                        }
                        acc += *w * noise[idx as usize];
                    }
                    values.push(acc);
                }
                Ok(values)
            }
            Kind::Gaussian { torus, fft, weights } => {
                for (axis, (&side, &t)) in
                    bx.sides().iter().zip(torus.coords()).enumerate()
                {
                    if 4 * side > t {
                        return Err(FieldError::BoxExceedsSynthesisRange {
                            axis,
                            side,
                            torus: t,
                        });
                    }
                }
                // X = Re IFFT(sqrt(lambda/<T>) . (a + ib)) has covariance
                // exactly the folded model; on a quarter-torus box the fold
                // is invisible, so the covariance is exactly R.
                let mut data = Vec::with_capacity(fft.len());
                for w in weights.iter() {
                    let a = F::standard_normal(rng);
                    let b = F::standard_normal(rng);
                    data.push(Complex::new(*w * a, *w * b));
                }
                fft.inverse(&mut data);
                let mut values = Vec::with_capacity(count);
                for u in bx.iter_points() {
                    values.push(data[fft.index_of(u.coords(), torus.coords())].re);
                }
                Ok(values)
            }
            Kind::ConstantDouble { scale } => {
                let sign = if F::unit_uniform(rng) < cast::<F>(0.5) {
                    -F::one()
                } else {
                    F::one()
                };
                Ok(vec![sign * *scale; count])
            }
        }
    }
}

/// One sampled field restricted to a box. Values follow the box's
/// lexicographic point enumeration.
#[derive(Clone, Debug, Serialize)]
pub struct Realization<F> {
    #[serde(rename = "box")]
    bx: IndexBox,
    values: Vec<F>,
    seed: u64,
    replicate: u32,
    channel: u32,
    sampler_id: String,
}

impl<F: Scalar> Realization<F> {
    pub fn index_box(&self) -> &IndexBox {
        &self.bx
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sampler_id(&self) -> &str {
        &self.sampler_id
    }

    pub fn value_at(&self, u: &MultiIndex) -> Result<Option<F>, FieldError> {
        Ok(self.bx.linear_index(u)?.map(|i| self.values[i]))
    }

    /// `S(sub) = sum of X_t over sub`, exactly (compensated); `sub` must
    /// lie inside the realization box. The empty box sums to zero.
    pub fn partial_sum(&self, sub: &IndexBox) -> Result<F, FieldError> {
        if sub.dim() != self.bx.dim() {
            return Err(FieldError::BoxDimension {
                got: sub.dim(),
                want: self.bx.dim(),
            });
        }
        if sub.is_empty() {
            return Ok(F::zero());
        }
        if !self.bx.contains_box(sub)? {
            return Err(FieldError::SubBoxNotContained);
        }
        let mut acc = CompensatedSum::new();
        for u in sub.iter_points() {
            let idx = self
                .bx
                .linear_index(&u)?
                .expect("point of a contained box is in the box");
            acc.add(self.values[idx]);
        }
        Ok(acc.value())
    }

    /// Sum over the whole realization box.
    pub fn total_sum(&self) -> F {
        let mut acc = CompensatedSum::new();
        for v in &self.values {
            acc.add(*v);
        }
        acc.value()
    }
}

/// Bounded nondecreasing Lipschitz probes for the association diagnostic.
/// Multivariate use applies the scalar map coordinate-wise and sums, which
/// stays bounded, nondecreasing, and Lipschitz.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneMap {
    /// `x` clamped to `[-1, 1]`.
    ClippedIdentity,
    /// `tanh(x)`: smooth saturation.
    Tanh,
    /// Logistic `1/(1 + exp(-4x))`: a smoothed indicator of `x > 0`.
    SmoothIndicator,
}

impl MonotoneMap {
    pub fn apply<F: Scalar>(self, x: F) -> F {
        match self {
            MonotoneMap::ClippedIdentity => x.max(-F::one()).min(F::one()),
            MonotoneMap::Tanh => x.tanh(),
            MonotoneMap::SmoothIndicator => {
                (F::one() + (-cast::<F>(4.0) * x).exp()).recip()
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PaVerdict {
    /// Estimate not significantly negative.
    ConsistentWithPa,
    /// Covariance below -3 standard errors: evidence against association.
    NegativeCovariance,
}

/// Monte Carlo covariance of monotone probes over disjoint index sets.
#[derive(Clone, Debug, Serialize)]
pub struct PaDiagnostic<F> {
    pub estimate: F,
    pub stderr: F,
    pub replicates: usize,
    pub f: MonotoneMap,
    pub g: MonotoneMap,
    pub verdict: PaVerdict,
}

/// Estimates `cov(f(X on s_set), g(X on t_set))` over independent
/// replicates. Association demands this be nonnegative for disjoint sets
/// and monotone probes; a significantly negative estimate falsifies the
/// generator. The converse is untestable (the defining inequality
/// quantifies over all monotone Lipschitz functions), so a passing probe
/// is only "consistent".
pub fn pa_diagnostic<F: Scalar>(
    sampler: &FieldSampler<F>,
    s_set: &[MultiIndex],
    t_set: &[MultiIndex],
    f: MonotoneMap,
    g: MonotoneMap,
    replicates: usize,
    seed: u64,
) -> Result<PaDiagnostic<F>, FieldError> {
    if s_set.is_empty() || t_set.is_empty() {
        return Err(FieldError::EmptyIndexSet);
    }
    let d = sampler.dimension();
    for u in s_set.iter().chain(t_set) {
        if u.dim() != d {
            return Err(FieldError::PointDimension {
                got: u.dim(),
                want: d,
            });
        }
    }
    let s_keys: BTreeSet<&[i64]> = s_set.iter().map(MultiIndex::coords).collect();
    for u in t_set {
        if s_keys.contains(u.coords()) {
            return Err(FieldError::OverlappingIndexSets {
                at: u.coords().to_vec(),
            });
        }
    }
    if replicates < 2 {
        return Err(FieldError::TooFewReplicates { got: replicates });
    }

    let mut lo = vec![i64::MAX; d];
    let mut hi = vec![i64::MIN; d];
    for u in s_set.iter().chain(t_set) {
        for k in 0..d {
            lo[k] = lo[k].min(u.coords()[k] - 1);
            hi[k] = hi[k].max(u.coords()[k]);
        }
    }
    let bx = IndexBox::new(MultiIndex::new(lo)?, MultiIndex::new(hi)?)?;

    let mut fs = Vec::with_capacity(replicates);
    let mut gs = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let real = sampler.sample_stream(&bx, seed, r as u32, CHANNEL_REALIZATION)?;
        let mut fsum = F::zero();
        for u in s_set {
            fsum += f.apply(real.value_at(u)?.expect("probe point is in the box"));
        }
        let mut gsum = F::zero();
        for u in t_set {
            gsum += g.apply(real.value_at(u)?.expect("probe point is in the box"));
        }
        fs.push(fsum);
        gs.push(gsum);
    }

    let nf = cast_i64::<F>(replicates as i64);
    let mean = |xs: &[F]| {
        let mut acc = CompensatedSum::new();
        for &x in xs {
            acc.add(x);
        }
        acc.value() / nf
    };
    let fbar = mean(&fs);
    let gbar = mean(&gs);
    let products: Vec<F> = fs
        .iter()
        .zip(&gs)
        .map(|(&a, &b)| (a - fbar) * (b - gbar))
        .collect();
    let mut sum_w = CompensatedSum::new();
    for &w in &products {
        sum_w.add(w);
    }
    let estimate = sum_w.value() / (nf - F::one());
    let wbar = sum_w.value() / nf;
    let mut sum_sq = CompensatedSum::new();
    for &w in &products {
        sum_sq.add((w - wbar) * (w - wbar));
    }
    let var_w = sum_sq.value() / (nf - F::one());
    let stderr = (var_w / nf).sqrt();

    let verdict = if estimate >= -cast::<F>(3.0) * stderr {
        PaVerdict::ConsistentWithPa
    } else {
        PaVerdict::NegativeCovariance
    };
    Ok(PaDiagnostic {
        estimate,
        stderr,
        replicates,
        f,
        g,
        verdict,
    })
}
