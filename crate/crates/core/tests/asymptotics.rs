//! Trend tests along dyadic box sequences: the variance-to-normalization
//! ratio climbs toward one, certified blocking plans settle into fixed
//! corridor fractions, and the certificate terms track their closed forms.

use assoc_clt::blocking::{build_schedule_dyadic, corridor_variance_bound, ScheduleOptions};
use assoc_clt::cltlab::{q_certificate, ui_diagnostic, CertificateOptions, NormalizationSpec};
use assoc_clt::covariance::CovarianceModel;
use assoc_clt::fields::{make_gaussian, make_moving_average};
use assoc_clt::lattice::MultiIndex;
use assoc_clt::slowvar::SlowVaryFn;
use approx::assert_relative_eq;

fn mi(coords: Vec<i64>) -> MultiIndex {
    MultiIndex::new(coords).unwrap()
}

/// `R(m) = 1/(1 + |m|)` on the line; box susceptibility has the closed
/// form `2 H_{n+1} - 1`, which the oracles below rebuild from scratch.
fn harmonic_model() -> CovarianceModel<f64> {
    CovarianceModel::radial_power(1, 1.0, 1.0).unwrap()
}

fn harmonic_number(n: i64) -> f64 {
    (1..=n).map(|j| 1.0 / j as f64).sum()
}

/// True once any early rises are over: the tail after the last strict
/// increase must be nonincreasing and long enough to witness a decrease.
fn settles_into_decrease(xs: &[f64]) -> bool {
    let last_rise = xs.windows(2).rposition(|w| w[1] > w[0]);
    let suffix = &xs[last_rise.map_or(0, |i| i + 1)..];
    suffix.len() >= 2 && suffix.windows(2).all(|w| w[1] <= w[0])
}

#[test]
fn variance_ratio_climbs_toward_one_for_harmonic_covariance() {
    let model = harmonic_model();
    let mut ratios = Vec::new();
    for j in 8..=14u32 {
        let n = 1i64 << j;
        let bx = mi(vec![n]);
        let ratio = model.variance_exact(&bx).unwrap() / (n as f64 * model.k_rect(&bx).unwrap());

        // var S(U_n) = 2(n+1) H_n - 3n and K_X(n) = 2 H_{n+1} - 1.
        let oracle = (2.0 * (n as f64 + 1.0) * harmonic_number(n) - 3.0 * n as f64)
            / (n as f64 * (2.0 * harmonic_number(n + 1) - 1.0));
        assert_relative_eq!(ratio, oracle, max_relative = 1e-10);
        ratios.push(ratio);
    }

    assert_relative_eq!(ratios[0], 0.8258836648, epsilon = 1e-9);
    assert_relative_eq!(ratios[6], 0.8978227241, epsilon = 1e-9);
    for pair in ratios.windows(2) {
        assert!(pair[0] < pair[1], "ratio fell: {} -> {}", pair[0], pair[1]);
    }
    let last = *ratios.last().unwrap();
    assert!((0.85..1.0).contains(&last), "final ratio {last}");
}

#[test]
fn certified_plans_for_harmonic_covariance_freeze_their_integers() {
    let model = harmonic_model();
    let l = SlowVaryFn::from_kx(&model);
    let sched = build_schedule_dyadic(&l, &ScheduleOptions::default()).unwrap();

    let ranks: Vec<i64> = sched.r_seq().iter().map(|r| r.coords()[0]).collect();
    assert_eq!(ranks, vec![2, 4]);

    let q_expect = [128i64, 256, 512, 512, 1024, 2048, 4096];
    let p_expect = [181i64, 362, 724, 1024, 2048, 4096, 8192];
    let corridor_expect = [75i64, 150, 300, 1024, 2048, 4096, 8192];

    let mut ratios = Vec::new();
    for (i, j) in (8..=14u32).enumerate() {
        let n = mi(vec![1i64 << j]);
        let plan = sched.plan_for(&n).unwrap();
        assert_eq!(plan.q.coords()[0], q_expect[i], "q at n = 2^{j}");
        assert_eq!(plan.p.coords()[0], p_expect[i], "p at n = 2^{j}");
        assert_eq!(plan.jmax[0], 1, "jmax at n = 2^{j}");
        assert_eq!(
            plan.corridor_cardinality, corridor_expect[i],
            "corridor at n = 2^{j}"
        );

        let cb = corridor_variance_bound(&plan, &model).unwrap();
        let expect = corridor_expect[i] as f64 / (1i64 << j) as f64;
        assert_relative_eq!(cb.ratio_to_total, expect, max_relative = 1e-14);
        ratios.push(cb.ratio_to_total);
    }

    // Once the rank-4 scaling kicks in, the corridor holds half the box.
    assert_relative_eq!(ratios[0], 75.0 / 256.0, max_relative = 1e-14);
    assert_relative_eq!(ratios[6], 0.5, max_relative = 1e-14);
    assert!(settles_into_decrease(&ratios));
}

#[test]
fn certificate_terms_track_their_closed_forms_along_the_schedule() {
    let model = harmonic_model();
    let l = SlowVaryFn::from_kx(&model);
    let sched = build_schedule_dyadic(&l, &ScheduleOptions::default()).unwrap();
    let sampler = make_gaussian(&model, &mi(vec![1 << 16])).unwrap();
    let spec = NormalizationSpec::<f64>::k_normalization();
    let opts = CertificateOptions {
        epsilon: 0.1,
        replicates: 32,
        seed: 0,
    };

    let mut q1_series = Vec::new();
    let mut q2_series = Vec::new();
    for j in 8..=14u32 {
        let n = mi(vec![1i64 << j]);
        let plan = sched.plan_for(&n).unwrap();
        let corridor = plan.corridor_cardinality;
        let q = plan.q.coords()[0];
        let cert = q_certificate(&sampler, &plan, &spec, 1.0f64, &opts).unwrap();

        let q1_oracle = (corridor as f64 / (1i64 << j) as f64).sqrt();
        assert_relative_eq!(cert.q1_bound, q1_oracle, max_relative = 1e-12);

        let kx = |m: i64| 2.0 * harmonic_number(m + 1) - 1.0;
        let q2_oracle = 4.0 * (kx(1 << j) - kx(q)) / kx(1 << j);
        assert_relative_eq!(cert.q2_bound, q2_oracle, max_relative = 1e-10);

        assert!(cert.lindeberg_sum.is_finite() && cert.lindeberg_sum >= 0.0);
        q1_series.push(cert.q1_bound);
        q2_series.push(cert.q2_bound);
    }

    for &v in &q1_series[..3] {
        assert_relative_eq!(v, (75.0f64 / 256.0).sqrt(), max_relative = 1e-12);
    }
    for &v in &q1_series[3..] {
        assert_relative_eq!(v, std::f64::consts::FRAC_1_SQRT_2, max_relative = 1e-12);
    }
    assert_relative_eq!(q2_series[6], 0.5667999814, epsilon = 1e-9);

    // Both bounds rise once when the scaling rank steps up, then decay.
    assert!(settles_into_decrease(&q1_series));
    assert!(settles_into_decrease(&q2_series));
}

#[test]
fn covariance_tail_term_is_exactly_zero_for_finite_range_models() {
    let sampler = make_moving_average(1, [(vec![0], 1.0), (vec![1], 1.0)], 1.0).unwrap();
    let l = SlowVaryFn::from_kx(sampler.model());
    let sched = build_schedule_dyadic(&l, &ScheduleOptions::default()).unwrap();
    let spec = NormalizationSpec::<f64>::k_normalization();
    let opts = CertificateOptions {
        epsilon: 0.1,
        replicates: 32,
        seed: 0,
    };

    for j in 8..=12u32 {
        let n = mi(vec![1i64 << j]);
        let plan = sched.plan_for(&n).unwrap();
        // Separation beyond the kernel range kills the tail identically.
        assert!(plan.q.coords()[0] >= 2);
        let cert = q_certificate(&sampler, &plan, &spec, 1.0f64, &opts).unwrap();
        assert_eq!(cert.q2_bound, 0.0, "n = 2^{j}");
        assert!(cert.q1_bound > 0.0);
    }
}

#[test]
fn synthesized_harmonic_field_keeps_truncated_second_moments_small() {
    let model = harmonic_model();
    let sampler = make_gaussian(&model, &mi(vec![1 << 12])).unwrap();
    let spec = NormalizationSpec::<f64>::k_normalization();
    let grid = [mi(vec![256]), mi(vec![512]), mi(vec![1024])];
    let c_grid = [2.0, 4.0, 8.0];
    let table = ui_diagnostic(&sampler, &grid, &spec, &c_grid, 6000, 7).unwrap();

    for row in &table.rows {
        for pair in row.tail.windows(2) {
            assert!(pair[0] >= pair[1]);
        }
    }

    // At the deepest truncation the tail is uniformly small over n and
    // nearly flat: the hallmark of a uniformly integrable family.
    let last = c_grid.len() - 1;
    let tails: Vec<f64> = table.rows.iter().map(|r| r.tail[last]).collect();
    let sup = table.sup_tail[last];
    let spread = tails.iter().cloned().fold(f64::MIN, f64::max)
        - tails.iter().cloned().fold(f64::MAX, f64::min);
    assert!(sup < 0.05, "sup tail {sup}");
    assert!(spread < 0.05, "tail spread {spread}");
}
