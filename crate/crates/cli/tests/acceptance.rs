//! Acceptance gate: one test per release criterion, each printing a single
//! PASS/FAIL line with measured detail and its runtime budget. Gates 04 and
//! 09 are expected to stay red at feasible scales: a logarithmic
//! susceptibility resolves no scaling rank past 4 under the dyadic grid cap,
//! so the corridor fraction plateaus at 1/4 instead of vanishing. The gates
//! state the asymptotic targets as written and record the finite-scale gap
//! honestly rather than loosening them.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use assoc_clt::blocking::{
    build_schedule_dyadic, corridor_variance_bound, corridor_variance_bruteforce, partition,
    ScheduleOptions,
};
use assoc_clt::cltlab::{q_certificate, CertificateOptions, NormalizationSpec};
use assoc_clt::covariance::CovarianceModel;
use assoc_clt::fields::{make_gaussian, make_moving_average};
use assoc_clt::lattice::{IndexBox, MultiIndex};
use assoc_clt::slowvar::SlowVaryFn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Serializes the gates so per-criterion runtime budgets are measured on an
/// otherwise idle process. Recovered on poisoning: the expected-red gates
/// panic while holding the lock.
static GATE: Mutex<()> = Mutex::new(());

fn gate(id: &str, budget_secs: Option<f64>, body: impl FnOnce() -> String) {
    let _serial = GATE.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(body));
    let secs = start.elapsed().as_secs_f64();
    let budget = budget_secs.map_or(String::new(), |b| format!(" of {b:.0}s budget"));
    match outcome {
        Ok(detail) => {
            let in_budget = budget_secs.is_none_or(|b| secs <= b);
            let status = if in_budget { "PASS" } else { "FAIL" };
            println!("{id}: {status} - {detail} [{secs:.2}s{budget}]");
            assert!(in_budget, "{id} blew its runtime budget: {secs:.2}s{budget}");
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(ToString::to_string))
                .unwrap_or_else(|| "opaque panic".into());
            println!("{id}: FAIL - {msg} [{secs:.2}s{budget}]");
            resume_unwind(payload);
        }
    }
}

fn mi(coords: Vec<i64>) -> MultiIndex {
    MultiIndex::new(coords).unwrap()
}

/// `R(m) = 1/(1 + |m|)` on the line: the logarithmic-susceptibility model
/// the trend gates are stated for.
fn harmonic_model() -> CovarianceModel<f64> {
    CovarianceModel::radial_power(1, 1.0, 1.0).unwrap()
}

/// Covariance of the two-tap moving average with unit taps and unit noise.
fn ma1_model() -> CovarianceModel<f64> {
    CovarianceModel::finite(1, [(vec![0], 2.0), (vec![1], 1.0)]).unwrap()
}

/// Random symmetric nonnegative finite-range covariance. Lags are stored
/// under a canonical sign so symmetrization never sees a conflict.
fn random_finite_model(
    rng: &mut ChaCha8Rng,
    max_dim: usize,
    radius: i64,
) -> CovarianceModel<f64> {
    let d = rng.gen_range(1..=max_dim);
    let mut entries: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    entries.insert(vec![0; d], rng.gen_range(0.01..4.0));
    for _ in 0..rng.gen_range(0..6usize) {
        let mut lag: Vec<i64> = (0..d).map(|_| rng.gen_range(-radius..=radius)).collect();
        if let Some(&first) = lag.iter().find(|&&v| v != 0) {
            if first < 0 {
                for v in &mut lag {
                    *v = -*v;
                }
            }
            entries.insert(lag, rng.gen_range(0.0..2.0));
        }
    }
    CovarianceModel::finite(d, entries).unwrap()
}

/// Admissible `(n, p, q)` per axis: `1 <= q <= p <= n`.
fn random_plan_axes(
    rng: &mut ChaCha8Rng,
    max_dim: usize,
    n_max: i64,
) -> (MultiIndex, MultiIndex, MultiIndex) {
    let d = rng.gen_range(1..=max_dim);
    let mut n = Vec::new();
    let mut p = Vec::new();
    let mut q = Vec::new();
    for _ in 0..d {
        let nk = rng.gen_range(1..=n_max);
        let pk = rng.gen_range(1..=nk);
        let qk = rng.gen_range(1..=pk);
        n.push(nk);
        p.push(pk);
        q.push(qk);
    }
    (mi(n), mi(p), mi(q))
}

/// True once any early rises are over: the tail after the last strict
/// increase must be nonincreasing and long enough to witness a decrease.
fn settles_into_decrease(xs: &[f64]) -> bool {
    let last_rise = xs.windows(2).rposition(|w| w[1] > w[0]);
    let suffix = &xs[last_rise.map_or(0, |i| i + 1)..];
    suffix.len() >= 2 && suffix.windows(2).all(|w| w[1] <= w[0])
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_assoc-clt"));
    c.env_remove("ASSOC_CLT_SEED");
    c
}

fn example_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(name)
}

fn run_clt_example(name: &str) -> (Option<i32>, Value) {
    let out = bin()
        .arg("clt")
        .arg("--config")
        .arg(example_path(name))
        .output()
        .expect("binary runs");
    let envelope: Value = serde_json::from_slice(&out.stdout).unwrap_or(Value::Null);
    (out.status.code(), envelope)
}

/// Report text with the only non-deterministic envelope field removed.
fn stable_stdout(raw: &[u8]) -> String {
    String::from_utf8_lossy(raw)
        .lines()
        .filter(|line| !line.contains("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn c01_variance_oracles_agree() {
    gate("criterion 01 (variance oracle equivalence)", Some(10.0), || {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            let model = random_finite_model(&mut rng, 3, 3);
            let d = model.dimension();
            let n = mi((0..d).map(|_| rng.gen_range(1..=8)).collect());
            let exact = model.variance_exact(&n).unwrap();
            let brute = model.variance_bruteforce(&n).unwrap();
            let rel = (exact - brute).abs() / brute.abs().max(f64::MIN_POSITIVE);
            assert!(
                rel <= 1e-9,
                "exact {exact} vs brute {brute} at n = {n:?} (rel {rel:.3e})"
            );
            worst = worst.max(rel);
        }
        format!("200 random finite-range models (d <= 3, radius <= 3, n <= 8): worst relative gap {worst:.2e} <= 1e-9")
    });
}

#[test]
fn c02_variance_tracks_normalization() {
    gate("criterion 02 (var S_n ~ <n> K_X(n) along dyadic boxes)", Some(5.0), || {
        let model = harmonic_model();
        let mut gaps = Vec::new();
        let mut final_ratio = 0.0;
        for j in 8..=14u32 {
            let n = 1i64 << j;
            let bx = mi(vec![n]);
            let ratio =
                model.variance_exact(&bx).unwrap() / (n as f64 * model.k_rect(&bx).unwrap());
            gaps.push(1.0 - ratio);
            final_ratio = ratio;
        }
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0], "distance to 1 rose: {} -> {}", w[0], w[1]);
        }
        assert!(
            (0.85..=1.0).contains(&final_ratio),
            "ratio at 2^14 is {final_ratio}, want within [0.85, 1.0]"
        );
        format!(
            "ratio at 2^14 is {final_ratio:.10} in [0.85, 1.0]; distance to 1 nonincreasing over 2^8..2^14"
        )
    });
}

#[test]
fn c03_variance_sandwich_and_converse() {
    gate("criterion 03 (variance sandwich at c = 1/2, q = 2)", Some(5.0), || {
        for (label, model) in [("harmonic", harmonic_model()), ("MA(1)", ma1_model())] {
            for j in [8u32, 10, 12] {
                let s = model.variance_sandwich(&mi(vec![1i64 << j]), 0.5, 2).unwrap();
                assert!(
                    s.lower <= s.exact && s.exact <= s.upper,
                    "{label} at 2^{j}: sandwich broke: {s:?}"
                );
                assert!(
                    s.kx_n <= s.converse_upper,
                    "{label} at 2^{j}: converse bound broke: {s:?}"
                );
            }
        }
        "harmonic and MA(1) models at n in {2^8, 2^10, 2^12}: lower <= exact <= upper and K_X(n) <= converse bound"
            .into()
    });
}

// Expected red: see the module doc. The trend clause holds, the two
// finite-scale targets do not.
#[test]
fn c04_schedule_reaches_corridor_targets() {
    gate("criterion 04 (schedule: q/n <= 0.01 and L(n)/L(q) <= 1.1 at 2^20)", Some(10.0), || {
        let model = harmonic_model();
        let schedule =
            build_schedule_dyadic(&SlowVaryFn::from_kx(&model), &ScheduleOptions::default())
                .unwrap();

        let mut qs = Vec::new();
        for j in 8..=24u32 {
            let q = schedule.q_of(&mi(vec![1i64 << j])).unwrap()[0];
            if let Some(&prev) = qs.last() {
                assert!(q >= prev, "q fell along the dyadic grid: {prev} -> {q} at 2^{j}");
            }
            qs.push(q);
        }
        assert!(
            qs.last().unwrap() / qs.first().unwrap() >= 1 << 10,
            "q barely grew over 2^8..2^24: {qs:?}"
        );

        let n = mi(vec![1i64 << 20]);
        let q = schedule.q_of(&n).unwrap();
        let frac = q[0] as f64 / (1i64 << 20) as f64;
        let l_ratio = model.k_rect(&n).unwrap() / model.k_rect(&q).unwrap();
        assert!(
            frac <= 0.01 && l_ratio <= 1.1,
            "the harmonic susceptibility resolves no scaling rank past 4 under the dyadic grid \
             cap, so the corridor stays a fixed fraction: q/n = {frac} (target <= 0.01), \
             L(n)/L(q) = {l_ratio:.10} (target <= 1.1); the nondecreasing-unbounded clause held"
        );
        format!("q nondecreasing and unbounded; q/n = {frac} and L(n)/L(q) = {l_ratio:.6} at 2^20")
    });
}

#[test]
fn c05_blocking_geometry() {
    gate("criterion 05 (blocking geometry on 500 random plans)", Some(10.0), || {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        for _ in 0..500 {
            let (n, p, q) = random_plan_axes(&mut rng, 3, 16);
            let plan = partition(&n, &p, &q).unwrap();
            let bx = IndexBox::prefix(&n).unwrap();

            for k in 0..n.dim() {
                let m = plan.m_counts[k];
                assert!(
                    plan.jmax[k] == m || plan.jmax[k] == m + 1,
                    "axis {k}: jmax {} outside [m, m+1] with m = {m}",
                    plan.jmax[k]
                );
            }

            let mut covered = 0i64;
            for b in &plan.blocks {
                assert!(bx.contains_box(b).unwrap(), "block escapes the box");
                assert_eq!(b.sides(), p.coords(), "block sides differ from p");
                covered += b.cardinality().unwrap();
            }
            assert_eq!(covered, plan.block_count * plan.block_cardinality);
            assert_eq!(
                covered + plan.corridor_cardinality,
                n.product().unwrap(),
                "cardinality accounting failed for n = {n:?}"
            );

            // Full pairwise disjointness when cheap, an even subsample when not.
            let step = (plan.blocks.len() / 64).max(1);
            let sample: Vec<_> = plan.blocks.iter().step_by(step).collect();
            for (i, a) in sample.iter().enumerate() {
                for b in &sample[i + 1..] {
                    assert!(!a.intersects(b).unwrap(), "blocks overlap");
                }
            }

            assert!(
                i128::from(plan.corridor_cardinality) <= plan.corridor_bound,
                "corridor cardinality exceeds its analytic bound"
            );
        }
        "500 random plans (d <= 3): disjointness, containment, accounting, per-axis block-count sandwich, corridor bound"
            .into()
    });
}

#[test]
fn c06_corridor_variance_bound() {
    gate("criterion 06 (corridor variance <= card(G) K_X(n))", Some(30.0), || {
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        let mut checked = 0usize;
        while checked < 100 {
            let model = random_finite_model(&mut rng, 3, 2);
            let d = model.dimension();
            let mut n = Vec::new();
            let mut p = Vec::new();
            let mut q = Vec::new();
            for _ in 0..d {
                let nk = rng.gen_range(2..=10);
                let pk = rng.gen_range(1..=nk);
                let qk = rng.gen_range(1..=pk);
                n.push(nk);
                p.push(pk);
                q.push(qk);
            }
            let plan = partition(&mi(n), &mi(p), &mi(q)).unwrap();
            if plan.corridor_cardinality == 0 {
                continue;
            }

            let brute = corridor_variance_bruteforce(&plan, &model).unwrap();
            let card_k =
                plan.corridor_cardinality as f64 * model.k_rect(&plan.n).unwrap();
            let slack = card_k.abs() * 1e-9 + 1e-12;
            assert!(
                brute <= card_k + slack,
                "corridor variance {brute} exceeds card(G) K_X(n) = {card_k}"
            );
            let structured = corridor_variance_bound(&plan, &model).unwrap();
            assert!(
                brute <= structured.bound + structured.bound.abs() * 1e-9 + 1e-12,
                "corridor variance {brute} exceeds the structured bound {}",
                structured.bound
            );
            checked += 1;
        }
        "100 random small plans with finite-range models: brute-force corridor variance under card(G) K_X(n)"
            .into()
    });
}

#[test]
fn c07_summable_covariance_normality() {
    gate("criterion 07 (iid and MA(1) sums pass normality)", Some(60.0), || {
        let mut details = Vec::new();
        for name in ["iid_normal.json", "ma1.json"] {
            let (code, envelope) = run_clt_example(name);
            assert_eq!(code, Some(0), "{name}: exit {code:?}, want 0");
            let ks = envelope["report"]["per_n"][0]["ks_distance"]
                .as_f64()
                .expect("ks_distance in report");
            assert!(ks < 0.025, "{name}: KS {ks} >= 0.025");
            details.push(format!("{name} KS {ks:.5}"));
        }
        format!("exit 0; {} (both < 0.025 at n = 4096, N = 10^4)", details.join(", "))
    });
}

#[test]
fn c08_k_normalized_gaussian_normality_and_tails() {
    gate("criterion 08 (k-normalized harmonic Gaussian field)", Some(300.0), || {
        let (code, envelope) = run_clt_example("gaussian_harmonic.json");
        assert_eq!(
            code,
            Some(0),
            "exit {code:?}, want 0; notes: {}",
            envelope["report"]["notes"]
        );
        let ks = envelope["report"]["per_n"][0]["ks_distance"]
            .as_f64()
            .expect("ks_distance in report");
        assert!(ks < 0.03, "KS {ks} >= 0.03 at n = 4096");

        let ui = &envelope["report"]["ui"];
        let c_grid = ui["c_grid"].as_array().expect("ui c-grid");
        let last = c_grid.len() - 1;
        assert_eq!(c_grid[last].as_f64(), Some(8.0), "largest c is 8");
        let mut tails = Vec::new();
        for row in ui["rows"].as_array().expect("ui rows") {
            let tail = row["tail"][last].as_f64().expect("tail entry");
            assert!(
                tail < 0.05,
                "truncated second moment at c = 8 for n = {} is {tail}, want < 0.05",
                row["n"]
            );
            tails.push(format!("{tail:.4}"));
        }
        let sup = ui["sup_tail"][last].as_f64().expect("sup_tail entry");
        assert!(sup < 0.05, "sup tail at c = 8 is {sup}");
        format!(
            "exit 0, KS {ks:.5} < 0.03 at n = 4096; tails at c = 8 over n in {{2^10, 2^11, 2^12}}: [{}], sup {sup:.4} < 0.05",
            tails.join(", ")
        )
    });
}

// Expected red: see the module doc. Trend clauses and the MA(1) zero-tail
// clause hold, the final-value targets do not.
#[test]
fn c09_certificate_terms_vanish_along_schedule() {
    gate("criterion 09 (certificate terms below 0.1 at the final box)", Some(60.0), || {
        let model = harmonic_model();
        let schedule =
            build_schedule_dyadic(&SlowVaryFn::from_kx(&model), &ScheduleOptions::default())
                .unwrap();
        let sampler = make_gaussian(&model, &mi(vec![1 << 16])).unwrap();
        let spec = NormalizationSpec::k_normalization();
        let opts = CertificateOptions {
            epsilon: 0.1,
            replicates: 32,
            seed: 0,
        };

        let mut q1 = Vec::new();
        let mut q2 = Vec::new();
        for j in 8..=14u32 {
            let plan = schedule.plan_for(&mi(vec![1i64 << j])).unwrap();
            let cert = q_certificate(&sampler, &plan, &spec, 1.0, &opts).unwrap();
            q1.push(cert.q1_bound);
            q2.push(cert.q2_bound);
        }
        assert!(
            settles_into_decrease(&q1),
            "corridor term never settles into decrease: {q1:?}"
        );
        assert!(
            settles_into_decrease(&q2),
            "tail term never settles into decrease: {q2:?}"
        );

        // No covariance beyond lag 1, so any corridor width >= 2 kills the
        // between-block tail exactly.
        let ma = make_moving_average(1, [(vec![0], 1.0), (vec![1], 1.0)], 1.0).unwrap();
        let ma_schedule =
            build_schedule_dyadic(&SlowVaryFn::from_kx(ma.model()), &ScheduleOptions::default())
                .unwrap();
        for j in 8..=12u32 {
            let plan = ma_schedule.plan_for(&mi(vec![1i64 << j])).unwrap();
            let cert = q_certificate(&ma, &plan, &spec, 1.0, &opts).unwrap();
            assert_eq!(cert.q2_bound, 0.0, "MA(1) tail term nonzero at 2^{j}");
        }

        let (f1, f2) = (*q1.last().unwrap(), *q2.last().unwrap());
        assert!(
            f1 <= 0.1 && f2 <= 0.1,
            "with q/n pinned at 1/4 by the unresolved scaling ranks, the certificate terms \
             plateau: q1(2^14) = {f1:.10} and q2(2^14) = {f2:.10}, both above the 0.1 target \
             (trend clauses and the MA(1) zero-tail clause held)"
        );
        format!("q1, q2 settle into decrease, end at {f1:.4}, {f2:.4} <= 0.1; MA(1) tail term exactly 0")
    });
}

#[test]
fn c10_degenerate_law_is_rejected() {
    gate("criterion 10 (constant-field double is rejected)", Some(10.0), || {
        let (code, envelope) = run_clt_example("constant_double.json");
        assert_eq!(code, Some(1), "exit {code:?}, want 1");
        assert_eq!(
            envelope["report"]["verdict"].as_str(),
            Some("inconsistent"),
            "verdict: {}",
            envelope["report"]["verdict"]
        );
        "constant-field double: verdict inconsistent, exit code 1".into()
    });
}

#[test]
fn c11_runs_reproduce_byte_identically() {
    gate("criterion 11 (same config and seed reproduce byte-identically)", None, || {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("repro.json");
        std::fs::write(
            &cfg,
            r#"{
                "sampler": {"kind": "iid-normal", "dimension": 1, "variance": 1.0},
                "n-grid": [[256]],
                "replicates": 500,
                "seed": 17,
                "c-grid": [4.0, 8.0, 16.0]
            }"#,
        )
        .unwrap();
        let run = |out_dir: &Path| {
            let out = bin()
                .arg("clt")
                .arg("--config")
                .arg(&cfg)
                .arg("--out")
                .arg(out_dir)
                .output()
                .unwrap();
            (out.status.code(), stable_stdout(&out.stdout))
        };
        let a = run(&dir.path().join("a"));
        let b = run(&dir.path().join("b"));
        assert_eq!(a.0, b.0, "exit codes differ between identical runs");
        assert_eq!(a.1, b.1, "reports differ outside the timestamp field");
        let csv_a = std::fs::read_to_string(dir.path().join("a/samples-256.csv")).unwrap();
        let csv_b = std::fs::read_to_string(dir.path().join("b/samples-256.csv")).unwrap();
        assert_eq!(csv_a, csv_b, "sample CSVs differ between identical runs");
        "stdout (minus timestamp), exit code, and sample CSV byte-identical across two runs".into()
    });
}
