//! One function per subcommand. Each validates its slice of the config,
//! delegates the mathematics to the library, and returns a JSON payload
//! plus CSV exports and an exit code.

use assoc_clt::blocking::{
    build_schedule_dyadic, corridor_variance_bound, partition, ScheduleOptions,
};
use assoc_clt::cltlab::{
    q_certificate, run_clt, CertificateOptions, NormalizationMode, NormalizationSpec, RunOptions,
    Verdict,
};
use assoc_clt::covariance::CovarianceSummary;
use assoc_clt::fields::CHANNEL_REALIZATION;
use assoc_clt::lattice::{IndexBox, MultiIndex};
use assoc_clt::slowvar::{dyadic_schedule, sv_ratio_probe};
use assoc_clt::CompensatedSum;
use rayon::prelude::*;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{CommandOutcome, Profiler};
use crate::CliError;

fn grid_label(n: &MultiIndex) -> String {
    n.coords()
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

/// Table of exact variance against the susceptibility normalization
/// `<n> K_X(n)`; their ratio is the quantity whose limit is 1.
pub fn variance(cfg: &ExperimentConfig, prof: &mut Profiler) -> Result<CommandOutcome, CliError> {
    let model = cfg.require_model()?;
    let grid = cfg.require_n_grid()?;
    let rows = prof.time("compute", || -> Result<Vec<serde_json::Value>, CliError> {
        grid.iter()
            .map(|n| {
                let var = model.variance_exact(n)?;
                let total = n.product()? as f64;
                let n_kx = total * model.k_rect(n)?;
                Ok(json!({
                    "n": n,
                    "var-exact": var,
                    "n-kx": n_kx,
                    "ratio": var / n_kx,
                }))
            })
            .collect()
    })?;

    let mut csv = String::from("n,var_exact,n_kx,ratio\n");
    for (n, row) in grid.iter().zip(&rows) {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            grid_label(n),
            row["var-exact"],
            row["n-kx"],
            row["ratio"],
        ));
    }

    Ok(CommandOutcome {
        report: json!({ "rows": rows }),
        csv: vec![("variance.csv".into(), csv)],
        exit: 0,
    })
}

/// Susceptibility tables: rectangular over `n-grid`, ball-shaped over
/// `r-grid`, plus the total sum with its truncation bound.
pub fn kfun(cfg: &ExperimentConfig, prof: &mut Profiler) -> Result<CommandOutcome, CliError> {
    let model = cfg.require_model()?;
    if cfg.n_grid.is_none() && cfg.r_grid.is_none() {
        return Err(CliError::Config(
            "config field `n-grid` or `r-grid` is required".into(),
        ));
    }
    let rect_grid = match &cfg.n_grid {
        Some(_) => cfg.require_n_grid()?,
        None => Vec::new(),
    };
    let r_grid = cfg.r_grid.clone().unwrap_or_default();
    if let Some(&r) = r_grid.iter().find(|&&r| r < 0) {
        return Err(CliError::Config(format!(
            "config field `r-grid` must hold nonnegative radii, got {r}"
        )));
    }

    let summary = prof.time("compute", || {
        CovarianceSummary::compute(&model, &rect_grid, &r_grid)
    })?;

    let mut csv = String::from("n,k_rect\n");
    for (n, k) in &summary.k_rect {
        csv.push_str(&format!("{},{k}\n", grid_label(n)));
    }

    Ok(CommandOutcome {
        report: serde_json::to_value(&summary).expect("serializable summary"),
        csv: vec![("kfun.csv".into(), csv)],
        exit: 0,
    })
}

/// Ratio probe `L(a x)/L(x)` along a dyadic grid; flags non-convergence
/// instead of failing, since the negative probe is a supported use.
pub fn svcheck(cfg: &ExperimentConfig, prof: &mut Profiler) -> Result<CommandOutcome, CliError> {
    let l = cfg.require_slowvar()?;
    let scale = cfg.scale_factor.unwrap_or(2);
    if scale < 1 {
        return Err(CliError::Config(format!(
            "config field `scale-factor` must be >= 1, got {scale}"
        )));
    }
    let lo = cfg.grid_min_exp.unwrap_or(4);
    let hi = cfg.grid_max_exp.unwrap_or(20);
    if lo > hi || hi >= 62 {
        return Err(CliError::Config(format!(
            "config fields `grid-min-exp`..`grid-max-exp` must satisfy min <= max < 62, \
             got {lo}..{hi}"
        )));
    }
    let tol = cfg.ratio_tolerance.unwrap_or(0.06);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Config(format!(
            "config field `ratio-tolerance` must be positive, got {tol}"
        )));
    }

    let schedule = dyadic_schedule(l.dimension(), lo, hi);
    let a = MultiIndex::splat(l.dimension(), scale);
    let points = prof.time("compute", || sv_ratio_probe(&l, &a, &schedule))?;
    let final_ratio = points.last().expect("schedule nonempty").ratio;
    let converged = (final_ratio - 1.0).abs() <= tol;

    let mut csv = String::from("x,ratio\n");
    for pt in &points {
        csv.push_str(&format!("{},{}\n", grid_label(&pt.x), pt.ratio));
    }

    Ok(CommandOutcome {
        report: json!({
            "name": l.name(),
            "scale": a,
            "rows": points,
            "final-ratio": final_ratio,
            "ratio-tolerance": tol,
            "converged": converged,
        }),
        csv: vec![("svcheck.csv".into(), csv)],
        exit: 0,
    })
}

/// One explicit partition, with the corridor variance bound when a model
/// is configured alongside it.
pub fn blocking(cfg: &ExperimentConfig, prof: &mut Profiler) -> Result<CommandOutcome, CliError> {
    let n = cfg.require_box("n")?;
    let p = cfg.require_box("p")?;
    let q = cfg.require_box("q")?;
    let plan = prof.time("compute", || partition(&n, &p, &q))?;

    let corridor = match &cfg.model {
        Some(mc) => {
            let model = crate::config::build_model(mc)?;
            Some(serde_json::to_value(corridor_variance_bound(&plan, &model)?)
                .expect("serializable bound"))
        }
        None => None,
    };

    Ok(CommandOutcome::ok(json!({
        "summary": {
            "block-count": plan.block_count,
            "block-cardinality": plan.block_cardinality,
            "corridor-cardinality": plan.corridor_cardinality,
            "corridor-bound": plan.corridor_bound.to_string(),
        },
        "corridor-variance": corridor,
        "plan": plan,
    })))
}

/// Replicated raw box sums: a quick look at whether the empirical variance
/// tracks the exact one before running the full pipeline.
pub fn simulate(
    cfg: &ExperimentConfig,
    seed: u64,
    prof: &mut Profiler,
) -> Result<CommandOutcome, CliError> {
    let sampler = cfg.require_sampler()?;
    let n = cfg.require_box("n")?;
    let replicates = cfg.replicates_or(200);
    if replicates < 2 {
        return Err(CliError::Config(format!(
            "config field `replicates` must be >= 2, got {replicates}"
        )));
    }
    if replicates > u32::MAX as usize {
        return Err(CliError::Config(format!(
            "config field `replicates` must fit in u32, got {replicates}"
        )));
    }
    let bx = IndexBox::prefix(&n)?;

    let totals: Vec<f64> = prof.time("monte-carlo", || {
        (0..replicates as u32)
            .into_par_iter()
            .map(|r| {
                sampler
                    .sample_stream(&bx, seed, r, CHANNEL_REALIZATION)
                    .map(|real| real.total_sum())
            })
            .collect::<Result<_, _>>()
    })?;

    let count = totals.len() as f64;
    let mut acc = CompensatedSum::new();
    for &t in &totals {
        acc.add(t);
    }
    let mean = acc.value() / count;
    let mut sq = CompensatedSum::new();
    for &t in &totals {
        sq.add((t - mean) * (t - mean));
    }
    let sample_var = sq.value() / (count - 1.0);
    let predicted = sampler.model().variance_exact(&n)?;

    let mut csv = String::from("replicate,total\n");
    for (r, t) in totals.iter().enumerate() {
        csv.push_str(&format!("{r},{t}\n"));
    }

    Ok(CommandOutcome {
        report: json!({
            "sampler-id": sampler.id(),
            "n": n,
            "replicates": replicates,
            "seed": seed,
            "sample-mean": mean,
            "sample-variance": sample_var,
            "predicted-variance": predicted,
            "variance-ratio": sample_var / predicted,
        }),
        csv: vec![("simulate-samples.csv".into(), csv)],
        exit: 0,
    })
}

/// The full pipeline; the process exit code is the verdict.
pub fn clt(
    cfg: &ExperimentConfig,
    seed: u64,
    prof: &mut Profiler,
) -> Result<CommandOutcome, CliError> {
    let sampler = cfg.require_sampler()?;
    let grid = cfg.require_n_grid()?;
    let mode = cfg.normalization_or_exact();
    let spec = match mode {
        NormalizationMode::ExactVariance => NormalizationSpec::exact_variance(),
        NormalizationMode::KNormalization => NormalizationSpec::k_normalization(),
    };

    let defaults = RunOptions::<f64>::default();
    let ui_n_grid = match &cfg.ui_n_grid {
        None => Vec::new(),
        Some(rows) => rows
            .iter()
            .map(|coords| {
                MultiIndex::new(coords.clone())
                    .map_err(|e| CliError::Config(format!("config field `ui-n-grid`: {e}")))
            })
            .collect::<Result<_, _>>()?,
    };
    let opts = RunOptions {
        replicates: cfg.replicates_or(defaults.replicates),
        seed,
        t_grid: cfg.t_grid.clone().unwrap_or(defaults.t_grid),
        c_grid: cfg.c_grid.clone().unwrap_or(defaults.c_grid),
        ui_n_grid,
        ui_replicates: cfg.ui_replicates,
        certificate_t: cfg.certificate_t.or(defaults.certificate_t),
        lindeberg_epsilon: cfg.lindeberg_epsilon.unwrap_or(defaults.lindeberg_epsilon),
        lindeberg_replicates: cfg
            .lindeberg_replicates
            .unwrap_or(defaults.lindeberg_replicates),
        thresholds: cfg.thresholds.clone().unwrap_or_default(),
    };

    let report = prof.time("pipeline", || run_clt(&sampler, &grid, &spec, &opts))?;
    let exit = match report.verdict {
        Verdict::ConsistentWithClt => 0,
        Verdict::Inconsistent => 1,
        Verdict::Inconclusive => 3,
    };

    let mut csv = Vec::new();
    for entry in &report.per_n {
        let mut body = String::from("normalized\n");
        for v in &entry.normalized_samples {
            body.push_str(&format!("{v}\n"));
        }
        csv.push((format!("samples-{}.csv", grid_label(&entry.n)), body));
    }
    if let Some(ui) = &report.ui {
        let mut body = String::from("n,c,tail\n");
        for row in &ui.rows {
            for (c, tail) in ui.c_grid.iter().zip(&row.tail) {
                body.push_str(&format!("{},{c},{tail}\n", grid_label(&row.n)));
            }
        }
        csv.push(("ui.csv".into(), body));
    }

    Ok(CommandOutcome {
        report: serde_json::to_value(&report).expect("serializable report"),
        csv,
        exit,
    })
}

/// Certified blocking schedule plus the per-box certificate terms. Unlike
/// `clt`, a missing schedule is fatal here: the schedule is the product.
pub fn certify(
    cfg: &ExperimentConfig,
    seed: u64,
    prof: &mut Profiler,
) -> Result<CommandOutcome, CliError> {
    let sampler = cfg.require_sampler()?;
    let grid = cfg.require_n_grid()?;
    let spec = NormalizationSpec::k_normalization();
    let t = cfg.certificate_t.unwrap_or(1.0);
    let cert_opts = CertificateOptions {
        epsilon: cfg.lindeberg_epsilon.unwrap_or(0.1),
        replicates: cfg.lindeberg_replicates.unwrap_or(2000),
        seed,
    };

    let l = assoc_clt::SlowVaryFn::from_kx(sampler.model());
    let schedule = prof.time("schedule", || {
        build_schedule_dyadic(&l, &ScheduleOptions::default())
    })?;

    let rows = prof.time("certificates", || -> Result<Vec<_>, CliError> {
        grid.iter()
            .map(|n| {
                let plan = schedule.plan_for(n)?;
                let cert = q_certificate(&sampler, &plan, &spec, t, &cert_opts)?;
                Ok(json!({
                    "n": n,
                    "q": &plan.q,
                    "p": &plan.p,
                    "block-count": plan.block_count,
                    "corridor-cardinality": plan.corridor_cardinality,
                    "certificate": cert,
                }))
            })
            .collect()
    })?;

    let mut csv = String::from("n,q,p,q1,q2,lindeberg\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row["n"][0],
            row["q"][0],
            row["p"][0],
            row["certificate"]["q1_bound"],
            row["certificate"]["q2_bound"],
            row["certificate"]["lindeberg_sum"],
        ));
    }

    Ok(CommandOutcome {
        report: json!({
            "sampler-id": sampler.id(),
            "t": t,
            "schedule": schedule,
            "rows": rows,
        }),
        csv: vec![("certify.csv".into(), csv)],
        exit: 0,
    })
}
