//! Distribution distances for the normality checks: an exact
//! Kolmogorov-Smirnov statistic against a centered normal, and a sup
//! distance between the empirical characteristic function and the standard
//! normal one on a grid.

use crate::scalar::{cast, cast_i64, CompensatedSum, Scalar};

use super::CltError;

/// CDF of the centered normal with the given variance, via `erfc`.
pub(crate) fn normal_cdf<F: Scalar>(x: F, variance: F) -> F {
    let scale = (variance + variance).sqrt();
    cast::<F>(0.5) * (-x / scale).erfc()
}

fn reject_non_finite<F: Scalar>(samples: &[F]) -> Result<(), CltError> {
    for (index, x) in samples.iter().enumerate() {
        if !x.is_finite() {
            return Err(CltError::NonFiniteSample { index });
        }
    }
    Ok(())
}

/// Sup distance between the empirical CDF of the samples and the centered
/// normal CDF with the given variance, by the order-statistics formula
/// `max_i max(F(x_(i)) - i/N, (i+1)/N - F(x_(i)))`. Always in `[0, 1]`.
pub fn ks_normal<F: Scalar>(samples: &[F], target_variance: F) -> Result<F, CltError> {
    if samples.len() < 2 {
        return Err(CltError::TooFewSamples {
            got: samples.len(),
            need: 2,
        });
    }
    if !(target_variance > F::zero()) || !target_variance.is_finite() {
        return Err(CltError::NonPositiveTargetVariance {
            got: target_variance.to_f64().unwrap_or(f64::NAN),
        });
    }
    reject_non_finite(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite samples compare"));
    let n = cast_i64::<F>(sorted.len() as i64);
    let mut ks = F::zero();
    for (i, &x) in sorted.iter().enumerate() {
        let phi = normal_cdf(x, target_variance);
        let below = cast_i64::<F>(i as i64) / n;
        let above = cast_i64::<F>(i as i64 + 1) / n;
        ks = ks.max(phi - below).max(above - phi);
    }
    Ok(ks)
}

/// Max over the grid of the modulus of `(empirical cf at t) - e^(-t^2/2)`.
/// The target is the standard normal characteristic function, so feed
/// samples normalized to unit variance when an exact match is expected.
pub fn cf_distance<F: Scalar>(samples: &[F], t_grid: &[F]) -> Result<F, CltError> {
    if t_grid.is_empty() {
        return Err(CltError::EmptyGrid { what: "t-grid" });
    }
    if samples.is_empty() {
        return Err(CltError::TooFewSamples { got: 0, need: 1 });
    }
    reject_non_finite(samples)?;
    let n = cast_i64::<F>(samples.len() as i64);
    let half = cast::<F>(0.5);
    let mut worst = F::zero();
    for &t in t_grid {
        let mut re = CompensatedSum::new();
        let mut im = CompensatedSum::new();
        for &x in samples {
            let arg = t * x;
            re.add(arg.cos());
            im.add(arg.sin());
        }
        let d_re = re.value() / n - (-t * t * half).exp();
        let d_im = im.value() / n;
        worst = worst.max((d_re * d_re + d_im * d_im).sqrt());
    }
    Ok(worst)
}
