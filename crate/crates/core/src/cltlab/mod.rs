//! Monte Carlo laboratory for normalized partial sums of associated
//! fields: normality distances, the uniform-integrability tail table, and
//! a three-term certificate (corridor, covariance tail, Lindeberg) that
//! mirrors the Bernstein blocking argument behind the limit theorem.
//!
//! Every normalization is computed from the attached covariance model,
//! never estimated from samples. Replicates ride independent RNG streams
//! gathered into replicate-indexed slots, so reports are deterministic in
//! (config, seed) regardless of thread scheduling. Verdicts are
//! three-valued: finite runs give evidence about an asymptotic statement,
//! they do not decide it.

mod stats;

pub use stats::{cf_distance, ks_normal};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocking::{
    build_schedule_dyadic, BlockingError, BlockingPlan, ScheduleOptions,
};
use crate::covariance::{CovarianceError, CovarianceModel};
use crate::fields::{FieldError, FieldSampler, CHANNEL_BLOCK, CHANNEL_REALIZATION};
use crate::lattice::{IndexBox, LatticeError, MultiIndex};
use crate::scalar::{cast, cast_i64, CompensatedSum, Scalar};
use crate::slowvar::SlowVaryFn;

#[derive(Debug, Error)]
pub enum CltError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Covariance(#[from] CovarianceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Blocking(#[from] BlockingError),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("sample {index} is not finite")]
    NonFiniteSample { index: usize },
    #[error("target variance must be positive and finite, got {got}")]
    NonPositiveTargetVariance { got: f64 },
    #[error("normalization vanished at n={n:?} (v^2 = {v_sq})")]
    ZeroNormalization { n: Vec<i64>, v_sq: f64 },
    #[error("{what} must be nonempty")]
    EmptyGrid { what: &'static str },
    #[error("c-grid must be nonnegative and strictly increasing; entry {index} violates this")]
    BadCGrid { index: usize },
    #[error("this diagnostic is defined under k-normalization, got exact-variance")]
    NotKNormalization,
    #[error("need at least 1 replicate")]
    NoReplicates,
    #[error("replicate count {got} exceeds the stream cap {cap}")]
    TooManyReplicates { got: usize, cap: u64 },
    #[error("{what} has dimension {got}, sampler has {want}")]
    Dimension {
        what: &'static str,
        got: usize,
        want: usize,
    },
    #[error("internal invariant violated: {0}")]
    InternalInvariant(String),
}

const REPLICATE_CAP: u64 = u32::MAX as u64;

fn checked_replicates(replicates: usize) -> Result<u32, CltError> {
    if replicates == 0 {
        return Err(CltError::NoReplicates);
    }
    u32::try_from(replicates).map_err(|_| CltError::TooManyReplicates {
        got: replicates,
        cap: REPLICATE_CAP,
    })
}

/// Which deterministic constant divides the centered sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationMode {
    /// `v_n = sqrt(var S(U_n))`, the exact standard deviation.
    ExactVariance,
    /// `v_n = sqrt(<n> K_X(n))`, the susceptibility surrogate.
    KNormalization,
}

/// Normalization constants `v_n`, computed from a covariance model on
/// demand and cached per `n`. The cache is bound to the model it was
/// filled from and resets when a different model shows up, so one spec
/// can safely serve several samplers. Shared by reference across threads.
pub struct NormalizationSpec<F: Scalar> {
    mode: NormalizationMode,
    cache: Mutex<Option<VnCache<F>>>,
}

struct VnCache<F> {
    model: CovarianceModel<F>,
    values: BTreeMap<Vec<i64>, F>,
}

impl<F: Scalar> fmt::Debug for NormalizationSpec<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NormalizationSpec")
            .field("mode", &self.mode)
            .finish_non_exhaustive()
    }
}

impl<F: Scalar> NormalizationSpec<F> {
    pub fn new(mode: NormalizationMode) -> Self {
        NormalizationSpec {
            mode,
            cache: Mutex::new(None),
        }
    }

    pub fn exact_variance() -> Self {
        Self::new(NormalizationMode::ExactVariance)
    }

    pub fn k_normalization() -> Self {
        Self::new(NormalizationMode::KNormalization)
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    /// `v_n > 0` in the chosen mode, exact from the model.
    pub fn v_n(&self, model: &CovarianceModel<F>, n: &MultiIndex) -> Result<F, CltError> {
        let mut guard = self.cache.lock().expect("cache lock");
        match guard.as_mut() {
            Some(cache) if cache.model == *model => {
                if let Some(v) = cache.values.get(n.coords()) {
                    return Ok(*v);
                }
            }
            _ => {
                *guard = Some(VnCache {
                    model: model.clone(),
                    values: BTreeMap::new(),
                });
            }
        }
        let v_sq = match self.mode {
            NormalizationMode::ExactVariance => model.variance_exact(n)?,
            NormalizationMode::KNormalization => {
                cast_i64::<F>(n.product()?) * model.k_rect(n)?
            }
        };
        let v = v_sq.sqrt();
        if !(v > F::zero()) || !v.is_finite() {
            return Err(CltError::ZeroNormalization {
                n: n.coords().to_vec(),
                v_sq: v_sq.to_f64().unwrap_or(f64::NAN),
            });
        }
        guard
            .as_mut()
            .expect("cache populated above")
            .values
            .insert(n.coords().to_vec(), v);
        Ok(v)
    }
}

/// Draws `replicates` independent realizations on the prefix box of `n`
/// and returns `(S(U_n) - E S(U_n)) / v_n` in replicate order. The mean is
/// the sampler's exact mean, the normalization the spec's exact constant.
pub fn normalized_sums<F: Scalar>(
    sampler: &FieldSampler<F>,
    n: &MultiIndex,
    spec: &NormalizationSpec<F>,
    replicates: usize,
    seed: u64,
) -> Result<Vec<F>, CltError> {
    let reps = checked_replicates(replicates)?;
    let bx = IndexBox::prefix(n)?;
    let v = spec.v_n(sampler.model(), n)?;
    let mean_total = cast_i64::<F>(bx.cardinality()?) * sampler.mean();
    let samples: Result<Vec<F>, FieldError> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let real = sampler.sample_stream(&bx, seed, r, CHANNEL_REALIZATION)?;
            Ok((real.total_sum() - mean_total) / v)
        })
        .collect();
    Ok(samples?)
}

fn validate_c_grid<F: Scalar>(c_grid: &[F]) -> Result<(), CltError> {
    if c_grid.is_empty() {
        return Err(CltError::EmptyGrid { what: "c-grid" });
    }
    let mut prev = -F::one();
    for (index, &c) in c_grid.iter().enumerate() {
        if !(c >= F::zero()) || !c.is_finite() || c <= prev {
            return Err(CltError::BadCGrid { index });
        }
        prev = c;
    }
    Ok(())
}

/// Truncated second moments of one normalized sum at one box size.
#[derive(Clone, Debug, Serialize)]
pub struct UiRow<F> {
    pub n: MultiIndex,
    /// `tail[i]` estimates `E[Y^2 1{Y^2 > c_i}]` for `Y = S_n/v_n`.
    pub tail: Vec<F>,
}

/// Tail table of the family `{S_n^2/(<n> K_X(n))}` over a grid of box
/// sizes: the Monte Carlo face of uniform integrability. Rows are exactly
/// nonincreasing in `c` by construction.
#[derive(Clone, Debug, Serialize)]
pub struct UiDiagnostic<F> {
    pub c_grid: Vec<F>,
    pub rows: Vec<UiRow<F>>,
    /// `sup_tail[i] = max over rows of tail[i]`.
    pub sup_tail: Vec<F>,
    pub replicates: usize,
    pub seed: u64,
}

/// Estimates `E[Y^2 1{Y^2 > c}]` for every `n` in the grid and `c` in the
/// increasing grid, plus the sup over `n` per `c`. The family is the
/// k-normalized one, so the spec must be in k-normalization mode.
pub fn ui_diagnostic<F: Scalar>(
    sampler: &FieldSampler<F>,
    n_grid: &[MultiIndex],
    spec: &NormalizationSpec<F>,
    c_grid: &[F],
    replicates: usize,
    seed: u64,
) -> Result<UiDiagnostic<F>, CltError> {
    if spec.mode() != NormalizationMode::KNormalization {
        return Err(CltError::NotKNormalization);
    }
    if n_grid.is_empty() {
        return Err(CltError::EmptyGrid { what: "n-grid" });
    }
    validate_c_grid(c_grid)?;
    let nf = cast_i64::<F>(replicates.max(1) as i64);
    let mut rows = Vec::with_capacity(n_grid.len());
    for n in n_grid {
        let samples = normalized_sums(sampler, n, spec, replicates, seed)?;
        let tail: Vec<F> = c_grid
            .iter()
            .map(|&c| {
                let mut acc = CompensatedSum::new();
                for &y in &samples {
                    let y_sq = y * y;
                    if y_sq > c {
                        acc.add(y_sq);
                    }
                }
                acc.value() / nf
            })
            .collect();
        rows.push(UiRow {
            n: n.clone(),
            tail,
        });
    }
    let sup_tail = (0..c_grid.len())
        .map(|i| {
            rows.iter()
                .map(|row| row.tail[i])
                .fold(F::neg_infinity(), F::max)
        })
        .collect();
    Ok(UiDiagnostic {
        c_grid: c_grid.to_vec(),
        rows,
        sup_tail,
        replicates,
        seed,
    })
}

/// Knobs for the Monte Carlo Lindeberg term of [`q_certificate`].
#[derive(Clone, Debug, Serialize)]
pub struct CertificateOptions<F> {
    /// Truncation level for `E[Z^2 1{|Z| > epsilon}]`.
    pub epsilon: F,
    pub replicates: usize,
    pub seed: u64,
}

impl<F: Scalar> Default for CertificateOptions<F> {
    fn default() -> Self {
        CertificateOptions {
            epsilon: cast::<F>(0.1),
            replicates: 4000,
            seed: 0,
        }
    }
}

/// The three error terms controlling how far the normalized sum's
/// characteristic function can sit from the normal one at argument `t`.
#[derive(Clone, Debug, Serialize)]
pub struct QCertificate<F> {
    pub n: MultiIndex,
    pub p: MultiIndex,
    pub q: MultiIndex,
    pub t: F,
    /// Corridor term: `|t| sqrt(card G K_X(n) / (<n> K_X(n)))`.
    pub q1_bound: F,
    /// Covariance tail between blocks: `4 t^2 (K_X(n) - K_X(q)) / K_X(n)`.
    pub q2_bound: F,
    /// `M_n E[Z^2 1{|Z| > epsilon}]` for `Z` a single block sum over
    /// `v_n`, estimated on independent copies.
    pub lindeberg_sum: F,
    pub epsilon: F,
    pub block_count: i64,
    pub lindeberg_replicates: usize,
}

/// Evaluates the certificate for one blocking plan. `q1` and `q2` are
/// deterministic functions of the plan and the model; the Lindeberg term
/// draws single-block realizations on a dedicated RNG channel, matching
/// the independent-copy construction rather than slicing one realization.
pub fn q_certificate<F: Scalar>(
    sampler: &FieldSampler<F>,
    plan: &BlockingPlan,
    spec: &NormalizationSpec<F>,
    t: F,
    opts: &CertificateOptions<F>,
) -> Result<QCertificate<F>, CltError> {
    if spec.mode() != NormalizationMode::KNormalization {
        return Err(CltError::NotKNormalization);
    }
    if plan.n.dim() != sampler.dimension() {
        return Err(CltError::Dimension {
            what: "blocking plan",
            got: plan.n.dim(),
            want: sampler.dimension(),
        });
    }
    let reps = checked_replicates(opts.replicates)?;
    let model = sampler.model();
    let v = spec.v_n(model, &plan.n)?;
    let kx_n = model.k_rect(&plan.n)?;
    let kx_q = model.k_rect(&plan.q)?;
    if kx_q > kx_n {
        return Err(CltError::InternalInvariant(format!(
            "susceptibility not monotone: K_X(q) = {kx_q} exceeds K_X(n) = {kx_n}"
        )));
    }
    let total = cast_i64::<F>(plan.n.product()?);
    let card_g = cast_i64::<F>(plan.corridor_cardinality);
    let q1_bound = t.abs() * (card_g * kx_n / (total * kx_n)).sqrt();
    let q2_bound = cast::<F>(4.0) * t * t * (kx_n - kx_q) / kx_n;

    // All blocks are translates of the p-box, so by stationarity one block
    // law serves for every s; the sum is block_count times one tail mean.
    let block_box = IndexBox::prefix(&plan.p)?;
    let mean_total = cast_i64::<F>(block_box.cardinality()?) * sampler.mean();
    let zs: Result<Vec<F>, FieldError> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let real = sampler.sample_stream(&block_box, opts.seed, r, CHANNEL_BLOCK)?;
            Ok((real.total_sum() - mean_total) / v)
        })
        .collect();
    let zs = zs?;
    let mut acc = CompensatedSum::new();
    for &z in &zs {
        if z.abs() > opts.epsilon {
            acc.add(z * z);
        }
    }
    let lindeberg_sum =
        cast_i64::<F>(plan.block_count) * acc.value() / cast_i64::<F>(opts.replicates as i64);

    Ok(QCertificate {
        n: plan.n.clone(),
        p: plan.p.clone(),
        q: plan.q.clone(),
        t,
        q1_bound,
        q2_bound,
        lindeberg_sum,
        epsilon: opts.epsilon,
        block_count: plan.block_count,
        lindeberg_replicates: opts.replicates,
    })
}

/// Acceptance bands for the normality and tail diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", default, bound = "")]
pub struct Thresholds<F: Scalar> {
    /// KS threshold is `ks_coeff / sqrt(N) + ks_slack`: the asymptotic
    /// band plus slack for dependence-induced finite-n bias.
    pub ks_coeff: F,
    pub ks_slack: F,
    pub cf_distance: F,
    /// Sup tail at the largest `c` must sit below this.
    pub ui_tail: F,
    /// Spread over `n` of the tail at the largest `c` must sit below this.
    pub ui_flat: F,
}

impl<F: Scalar> Default for Thresholds<F> {
    fn default() -> Self {
        Thresholds {
            ks_coeff: cast::<F>(1.63),
            ks_slack: cast::<F>(0.01),
            cf_distance: cast::<F>(0.05),
            ui_tail: cast::<F>(0.05),
            ui_flat: cast::<F>(0.05),
        }
    }
}

impl<F: Scalar> Thresholds<F> {
    pub fn ks(&self, replicates: usize) -> F {
        self.ks_coeff / cast_i64::<F>(replicates.max(1) as i64).sqrt() + self.ks_slack
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    /// Distances and tails within thresholds at every grid point.
    ConsistentWithClt,
    /// The largest box fails the normality distances while all smaller
    /// ones passed: the scaling is drifting away from normal.
    Inconsistent,
    /// Anything else: evidence incomplete or mixed.
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Verdict::ConsistentWithClt => "consistent-with-clt",
            Verdict::Inconsistent => "inconsistent",
            Verdict::Inconclusive => "inconclusive",
        };
        f.write_str(s)
    }
}

/// Normality diagnostics for one box size.
#[derive(Clone, Debug, Serialize)]
pub struct CltEntry<F> {
    pub n: MultiIndex,
    pub v_n: F,
    /// `var S_n / v_n^2`: the exact variance of the normalized samples,
    /// hence the KS target. Exactly 1 in exact-variance mode.
    pub target_variance: F,
    pub ks_distance: F,
    pub cf_distance: F,
    pub normalized_samples: Vec<F>,
    pub certificate: Option<QCertificate<F>>,
}

/// Full output of [`run_clt`]: per-box diagnostics, the tail table, and a
/// three-valued verdict with its reasoning.
#[derive(Clone, Debug, Serialize)]
pub struct CltReport<F: Scalar> {
    pub sampler_id: String,
    pub normalization: NormalizationMode,
    pub replicates: usize,
    pub seed: u64,
    pub t_grid: Vec<F>,
    pub thresholds: Thresholds<F>,
    pub per_n: Vec<CltEntry<F>>,
    pub ui: Option<UiDiagnostic<F>>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

const FINITE_SAMPLE_NOTE: &str = "verdict is finite-sample evidence about an asymptotic \
     statement; no finite run decides the limit";

/// Judges a report against thresholds. Consistent needs every box size to
/// pass both distances and the tail table to be flat in `n` and small at
/// the largest `c`; inconsistent needs the largest box to fail while all
/// smaller ones passed; anything else is inconclusive.
pub fn clt_verdict<F: Scalar>(
    report: &CltReport<F>,
    thresholds: &Thresholds<F>,
) -> (Verdict, Vec<String>) {
    let mut notes = vec![FINITE_SAMPLE_NOTE.to_string()];
    if report.per_n.is_empty() {
        notes.push("no normalized-sum entries; nothing to judge".to_string());
        return (Verdict::Inconclusive, notes);
    }
    let ks_thr = thresholds.ks(report.replicates);
    let passes = |e: &CltEntry<F>| {
        e.ks_distance < ks_thr && e.cf_distance < thresholds.cf_distance
    };
    for e in &report.per_n {
        notes.push(format!(
            "n={:?}: ks {:.4} (threshold {:.4}), cf {:.4} (threshold {:.4}) -> {}",
            e.n.coords(),
            e.ks_distance,
            ks_thr,
            e.cf_distance,
            thresholds.cf_distance,
            if passes(e) { "pass" } else { "fail" },
        ));
    }

    let ui_ok = match &report.ui {
        None => {
            notes.push(
                "uniform-integrability table absent; consistency cannot be certified"
                    .to_string(),
            );
            false
        }
        Some(ui) if ui.rows.is_empty() || ui.c_grid.is_empty() => {
            notes.push("uniform-integrability table empty; consistency cannot be certified"
                .to_string());
            false
        }
        Some(ui) => {
            let last = ui.c_grid.len() - 1;
            let sup = ui.sup_tail[last];
            let (mut lo, mut hi) = (F::infinity(), F::neg_infinity());
            for row in &ui.rows {
                lo = lo.min(row.tail[last]);
                hi = hi.max(row.tail[last]);
            }
            let vanishing = sup <= thresholds.ui_tail;
            let flat = hi - lo <= thresholds.ui_flat;
            notes.push(format!(
                "ui tail at c={}: sup over n {:.4} (threshold {:.4}), spread over n {:.4} \
                 (threshold {:.4}) -> {}",
                ui.c_grid[last].to_f64().unwrap_or(f64::NAN),
                sup,
                thresholds.ui_tail,
                hi - lo,
                thresholds.ui_flat,
                if vanishing && flat { "pass" } else { "fail" },
            ));
            vanishing && flat
        }
    };

    let all_pass = report.per_n.iter().all(passes);
    if all_pass && ui_ok {
        return (Verdict::ConsistentWithClt, notes);
    }
    let last = report.per_n.last().expect("nonempty checked above");
    let smaller_pass = report.per_n[..report.per_n.len() - 1].iter().all(passes);
    if !passes(last) && smaller_pass {
        notes.push(format!(
            "largest box n={:?} fails the normality distances{}",
            last.n.coords(),
            if report.per_n.len() > 1 {
                " while every smaller box passed"
            } else {
                ""
            },
        ));
        return (Verdict::Inconsistent, notes);
    }
    notes.push("evidence mixed or incomplete".to_string());
    (Verdict::Inconclusive, notes)
}

/// Everything [`run_clt`] needs beyond the sampler, grid, and spec.
#[derive(Clone, Debug)]
pub struct RunOptions<F: Scalar> {
    pub replicates: usize,
    pub seed: u64,
    /// Characteristic-function grid.
    pub t_grid: Vec<F>,
    /// Truncation grid for the tail table; empty skips the table (and
    /// thereby caps the verdict at inconclusive).
    pub c_grid: Vec<F>,
    /// Box sizes for the tail table; empty reuses the main grid.
    pub ui_n_grid: Vec<MultiIndex>,
    /// Replicates for the tail table; `None` reuses the main count.
    pub ui_replicates: Option<usize>,
    /// Argument for the per-box certificate; `None` skips certificates.
    pub certificate_t: Option<F>,
    pub lindeberg_epsilon: F,
    pub lindeberg_replicates: usize,
    pub thresholds: Thresholds<F>,
}

impl<F: Scalar> Default for RunOptions<F> {
    fn default() -> Self {
        RunOptions {
            replicates: 2000,
            seed: 0,
            t_grid: vec![cast::<F>(0.5), F::one(), cast::<F>(2.0)],
            c_grid: vec![cast::<F>(2.0), cast::<F>(4.0), cast::<F>(8.0)],
            ui_n_grid: Vec::new(),
            ui_replicates: None,
            certificate_t: Some(F::one()),
            lindeberg_epsilon: cast::<F>(0.1),
            lindeberg_replicates: 2000,
            thresholds: Thresholds::default(),
        }
    }
}

/// The full pipeline: normalized sums, KS and CF distances, tail table,
/// certificates where a certified blocking schedule exists, and the
/// verdict. Deterministic in (sampler, grid, spec mode, options).
pub fn run_clt<F: Scalar>(
    sampler: &FieldSampler<F>,
    n_grid: &[MultiIndex],
    spec: &NormalizationSpec<F>,
    opts: &RunOptions<F>,
) -> Result<CltReport<F>, CltError> {
    if n_grid.is_empty() {
        return Err(CltError::EmptyGrid { what: "n-grid" });
    }
    if opts.t_grid.is_empty() {
        return Err(CltError::EmptyGrid { what: "t-grid" });
    }
    if opts.replicates < 2 {
        return Err(CltError::TooFewSamples {
            got: opts.replicates,
            need: 2,
        });
    }
    let model = sampler.model();
    let mut notes = Vec::new();

    // The certificate needs the blocking schedule certified for this
    // model's susceptibility; some models (non-slowly-varying growth)
    // have none, which is reported rather than fatal.
    let schedule = match opts.certificate_t {
        None => None,
        Some(_) => {
            let l = SlowVaryFn::from_kx(model);
            match build_schedule_dyadic(&l, &ScheduleOptions::default()) {
                Ok(s) => Some(s),
                Err(err) => {
                    notes.push(format!(
                        "certificates skipped: no certified blocking schedule ({err})"
                    ));
                    None
                }
            }
        }
    };
    let k_spec = NormalizationSpec::<F>::k_normalization();

    let mut per_n = Vec::with_capacity(n_grid.len());
    for n in n_grid {
        let samples = normalized_sums(sampler, n, spec, opts.replicates, opts.seed)?;
        let v = spec.v_n(model, n)?;
        let target_variance = model.variance_exact(n)? / (v * v);
        let ks = stats::ks_normal(&samples, target_variance)?;
        let cf = stats::cf_distance(&samples, &opts.t_grid)?;
        let certificate = match (&schedule, opts.certificate_t) {
            (Some(schedule), Some(t)) => {
                let plan = schedule.plan_for(n)?;
                Some(q_certificate(
                    sampler,
                    &plan,
                    &k_spec,
                    t,
                    &CertificateOptions {
                        epsilon: opts.lindeberg_epsilon,
                        replicates: opts.lindeberg_replicates,
                        seed: opts.seed,
                    },
                )?)
            }
            _ => None,
        };
        per_n.push(CltEntry {
            n: n.clone(),
            v_n: v,
            target_variance,
            ks_distance: ks,
            cf_distance: cf,
            normalized_samples: samples,
            certificate,
        });
    }

    let ui = if opts.c_grid.is_empty() {
        notes.push("tail table skipped: empty c-grid".to_string());
        None
    } else {
        let grid: &[MultiIndex] = if opts.ui_n_grid.is_empty() {
            n_grid
        } else {
            &opts.ui_n_grid
        };
        let reps = opts.ui_replicates.unwrap_or(opts.replicates);
        Some(ui_diagnostic(
            sampler, grid, &k_spec, &opts.c_grid, reps, opts.seed,
        )?)
    };

    let mut report = CltReport {
        sampler_id: sampler.id().to_string(),
        normalization: spec.mode(),
        replicates: opts.replicates,
        seed: opts.seed,
        t_grid: opts.t_grid.clone(),
        thresholds: opts.thresholds.clone(),
        per_n,
        ui,
        verdict: Verdict::Inconclusive,
        notes: Vec::new(),
    };
    let (verdict, mut verdict_notes) = clt_verdict(&report, &opts.thresholds);
    report.verdict = verdict;
    notes.append(&mut verdict_notes);
    report.notes = notes;
    Ok(report)
}
