//! Axis-by-axis FFT over row-major complex arrays and the circulant
//! embedding spectrum for exact stationary Gaussian synthesis on a torus.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::covariance::CovarianceModel;
use crate::lattice::MultiIndex;
use crate::scalar::{cast, Scalar};

use super::FieldError;

fn czero<F: Scalar>() -> Complex<F> {
    Complex::new(F::zero(), F::zero())
}

/// Separable d-dimensional FFT: one 1-d plan per axis, applied line by
/// line. Plans are immutable and thread-safe, so transforms on distinct
/// buffers may run concurrently.
pub(crate) struct NdFft<F: Scalar> {
    sides: Vec<usize>,
    strides: Vec<usize>,
    forward: Vec<Arc<dyn Fft<F>>>,
    inverse: Vec<Arc<dyn Fft<F>>>,
}

impl<F: Scalar> NdFft<F> {
    pub(crate) fn new(sides: &[usize]) -> Self {
        assert!(!sides.is_empty() && sides.iter().all(|&s| s > 0));
        let mut planner = FftPlanner::new();
        let mut strides = vec![1usize; sides.len()];
        for k in (0..sides.len() - 1).rev() {
            strides[k] = strides[k + 1] * sides[k + 1];
        }
        NdFft {
            sides: sides.to_vec(),
            strides,
            forward: sides.iter().map(|&s| planner.plan_fft_forward(s)).collect(),
            inverse: sides.iter().map(|&s| planner.plan_fft_inverse(s)).collect(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.sides.iter().product()
    }

    /// Linear index of a lattice point wrapped onto the torus (row-major,
    /// last axis fastest — the same layout boxes enumerate in).
    pub(crate) fn index_of(&self, coords: &[i64], torus: &[i64]) -> usize {
        let mut idx = 0usize;
        for k in 0..coords.len() {
            idx += coords[k].rem_euclid(torus[k]) as usize * self.strides[k];
        }
        idx
    }

    fn transform(&self, data: &mut [Complex<F>], plans: &[Arc<dyn Fft<F>>]) {
        debug_assert_eq!(data.len(), self.len());
        for axis in 0..self.sides.len() {
            let len = self.sides[axis];
            if len == 1 {
                continue;
            }
            let plan = &plans[axis];
            let mut scratch = vec![czero::<F>(); plan.get_inplace_scratch_len()];
            let stride = self.strides[axis];
            if stride == 1 {
                for line in data.chunks_exact_mut(len) {
                    plan.process_with_scratch(line, &mut scratch);
                }
            } else {
                let mut line = vec![czero::<F>(); len];
                for block in data.chunks_exact_mut(stride * len) {
                    for off in 0..stride {
                        for (i, slot) in line.iter_mut().enumerate() {
                            *slot = block[off + i * stride];
                        }
                        plan.process_with_scratch(&mut line, &mut scratch);
                        for (i, v) in line.iter().enumerate() {
                            block[off + i * stride] = *v;
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn forward(&self, data: &mut [Complex<F>]) {
        self.transform(data, &self.forward);
    }

    pub(crate) fn inverse(&self, data: &mut [Complex<F>]) {
        self.transform(data, &self.inverse);
    }
}

fn for_each_torus_point(sides: &[i64], mut f: impl FnMut(usize, &[i64])) {
    let mut coords = vec![0i64; sides.len()];
    let mut i = 0usize;
    loop {
        f(i, &coords);
        i += 1;
        let mut k = sides.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            coords[k] += 1;
            if coords[k] < sides[k] {
                break;
            }
            coords[k] = 0;
        }
    }
}

/// Synthesis weights `sqrt(lambda_k)/sqrt(<T>)` from the eigenvalues
/// `lambda` of the torus covariance (minimal-representative folding of the
/// model, symmetrized at the half-torus fold). A spectrum dipping below
/// `-1e-9` of its top eigenvalue is rejected; negatives inside that
/// tolerance are clipped to zero with a logged warning.
pub(crate) fn synthesis_weights<F: Scalar>(
    model: &CovarianceModel<F>,
    torus: &MultiIndex,
    fft: &NdFft<F>,
) -> Result<Vec<F>, FieldError> {
    let t = torus.coords();
    let mut data = vec![czero::<F>(); fft.len()];
    let mut lag = vec![0i64; t.len()];
    for_each_torus_point(t, |i, coords| {
        for k in 0..lag.len() {
            lag[k] = if 2 * coords[k] <= t[k] {
                coords[k]
            } else {
                coords[k] - t[k]
            };
        }
        data[i].re = model.eval(&lag);
    });
    // R(m) = R(-m) makes c(t) = c(-t) automatically except where some
    // coordinate sits exactly on the half-torus fold; averaging the mirror
    // pairs keeps the spectrum real for every model.
    let mut mirror = vec![0i64; t.len()];
    for_each_torus_point(t, |i, coords| {
        for k in 0..mirror.len() {
            mirror[k] = (t[k] - coords[k]) % t[k];
        }
        let j = fft.index_of(&mirror, t);
        if j > i {
            let avg = (data[i].re + data[j].re) * cast::<F>(0.5);
            data[i].re = avg;
            data[j].re = avg;
        }
    });
    fft.forward(&mut data);

    let mut min_eig = F::infinity();
    let mut max_eig = F::neg_infinity();
    for z in &data {
        min_eig = min_eig.min(z.re);
        max_eig = max_eig.max(z.re);
    }
    let floor = -cast::<F>(1e-9) * max_eig;
    if !(max_eig > F::zero()) || min_eig < floor {
        return Err(FieldError::NotEmbeddable {
            min_eig: min_eig.to_f64().unwrap_or(f64::NAN),
            max_eig: max_eig.to_f64().unwrap_or(f64::NAN),
        });
    }
    let scale = cast::<F>((fft.len() as f64).sqrt()).recip();
    let mut clipped = 0usize;
    let weights = data
        .iter()
        .map(|z| {
            let e = if z.re < F::zero() {
                clipped += 1;
                F::zero()
            } else {
                z.re
            };
            e.sqrt() * scale
        })
        .collect();
    if clipped > 0 {
        log::warn!(
            "circulant embedding: clipped {clipped} slightly negative eigenvalues \
             (min {min_eig}, max {max_eig}) to zero"
        );
    }
    Ok(weights)
}
