use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use fedmtl_core::dp::DpConfig;
use fedmtl_core::objective::{estimate_constants, global_loss, ProbeRegion};
use fedmtl_core::params::GlobalParam;
use fedmtl_core::rng::RngStream;
use fedmtl_core::sim::{run, Method, RunOutput, Sampling, SimConfig};
use fedmtl_core::synthetic::SuiteKind;
use fedmtl_core::verifier::{
    appendix_diagnostics, check_convergence_trace, check_sufficient_decay, BoundInputs, BoundKind,
};

use crate::artifact::write_atomic;
use crate::config::{FileConfig, TaskSourceKind, FORMAT_VERSION};
use crate::error::{AppError, AppResult};

#[derive(Debug, Serialize)]
struct CheckRow {
    name: String,
    bound: f64,
    observed: f64,
    margin: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
struct VerifyReport {
    format_version: u32,
    kind: String,
    seeds: usize,
    constants: ConstantRow,
    checks: Vec<CheckRow>,
    all_pass: bool,
    note: String,
}

#[derive(Debug, Serialize)]
struct ConstantRow {
    l: f64,
    c: f64,
    lambda: f64,
    b: f64,
    s: f64,
    sigma: f64,
    m: usize,
    h: usize,
    eta: f64,
    r0: f64,
    f0: f64,
    fstar: f64,
}

pub fn cmd_verify(config_path: &Path, out: Option<&Path>) -> AppResult<PathBuf> {
    let cfg = FileConfig::load(config_path)?;
    let v = cfg
        .verify
        .as_ref()
        .ok_or_else(|| AppError::config("verify requires a [verify] section"))?
        .clone();
    if !v.theory_mode {
        return Err(AppError::config(
            "verify only supports theory mode (single sampled client, derived step size); \
             set verify.theory_mode = true",
        ));
    }
    if cfg.tasks.source != TaskSourceKind::Synthetic {
        return Err(AppError::config(
            "verify needs a synthetic task source with known optimum and constants",
        ));
    }

    let problem = cfg.build_problem()?;
    let base_constants = problem.constants.clone().expect("synthetic source");
    let m = problem.tasks.len();
    let layout = &problem.layout;
    let init = cfg.initial_point(&problem);

    // Measured constants over the probe region around the initial point.
    let probe = ProbeRegion { center: init.clone(), radius: v.probe_radius };
    let est = estimate_constants(
        &problem.tasks,
        layout,
        &probe,
        v.probe_samples,
        cfg.seed,
        base_constants.clone(),
    )?;
    let lambda = est.effective_lambda();
    if !lambda.is_finite() {
        return Err(AppError::config(
            "diversity estimate is unbounded near the initial point; widen the probe region",
        ));
    }
    let eta = 1.0 / (lambda * est.l);
    let s = v.sensitivity.unwrap_or(0.0);

    let w0 = GlobalParam::from_vec(init.clone(), Arc::clone(layout))?;
    let f0 = global_loss(&problem.tasks, &w0)?;
    let fstar = v.fstar_override.unwrap_or(est.fstar);

    // Seed-averaged theory runs; the first one also records snapshots for
    // the per-step checks.
    let snapshot_every = (v.t / v.decay_checkpoints).max(1);
    let stream = RngStream::new(cfg.seed);
    let outputs: Vec<RunOutput> = (0..v.seeds)
        .into_par_iter()
        .map(|i| {
            let sim_cfg = SimConfig {
                method: Method::DpFedMtl,
                m,
                k: 1,
                t: v.t,
                h: v.h,
                eta,
                dp: DpConfig {
                    clip_norm: f64::INFINITY,
                    sigma: v.sigma,
                    k: 1,
                    m,
                    sensitivity_override: Some(s),
                },
                seed: stream.derive(i as u64, 0).master_seed,
                record_every: v.record_every,
                sampling: Sampling::Bernoulli,
                divisor: fedmtl_core::sim::AggregationDivisor::Realized,
                literal_broadcast: false,
                init: Some(init.clone()),
                snapshot_every: if i == 0 { Some(snapshot_every) } else { None },
            };
            run(&sim_cfg, &problem.tasks, layout)
        })
        .collect::<fedmtl_core::error::Result<_>>()?;
    for o in &outputs {
        if let Some(step) = o.metrics.diverged {
            return Err(AppError::divergence(format!(
                "theory run (seed {}) diverged at step {step}",
                o.metrics.seed
            )));
        }
    }

    let metric_refs: Vec<&fedmtl_core::sim::RunMetrics> =
        outputs.iter().map(|o| &o.metrics).collect();
    let b = fedmtl_core::verifier::measure_b(&metric_refs);
    let inputs = BoundInputs {
        l: est.l,
        c: est.c.unwrap_or(0.0),
        lambda,
        b,
        d_shared: layout.shared_range().len(),
        s,
        sigma: v.sigma,
        m,
        h: v.h,
        r0: est.r0,
        f0,
        fstar,
    };

    let kind = match cfg.tasks.synthetic.as_ref().expect("validated").kind {
        SuiteKind::StronglyConvexQuadratic => BoundKind::StronglyConvexGap,
        SuiteKind::ConvexLogistic => BoundKind::ConvexGap,
        SuiteKind::NonconvexSine => BoundKind::NonconvexAvgGrad,
    };

    let mut checks = Vec::new();
    let trace = check_convergence_trace(&metric_refs, &inputs, kind)?;
    for cp in &trace.checkpoints {
        checks.push(CheckRow {
            name: format!("{:?}@{}", kind, cp.step),
            bound: cp.bound,
            observed: cp.observed,
            margin: cp.bound + 3.0 * cp.se - cp.observed,
            pass: cp.holds,
        });
    }

    for snap in &outputs[0].snapshots {
        let check = check_sufficient_decay(
            &snap.clients,
            &problem.tasks,
            layout,
            &inputs,
            v.n_decay_samples,
            stream.derive(u64::MAX, snap.step as u64).master_seed,
        )?;
        checks.push(CheckRow {
            name: format!("SufficientDecay@{}", snap.step),
            bound: check.rhs,
            observed: check.lhs_mc,
            margin: check.rhs + 3.0 * check.se - check.lhs_mc,
            pass: check.holds,
        });
    }

    // The per-update diagnostics are evaluated at the final client tuple,
    // which can sit near a quasi-stationary point where the gradient
    // diversity exceeds the value measured around the initial point. The
    // bounds are stated for a diversity constant valid at the evaluated
    // tuple, so re-measure it there and take the larger value.
    let diag_tuple: Vec<fedmtl_core::params::ClientParams> = outputs[0]
        .final_clients
        .iter()
        .map(|c| fedmtl_core::params::ClientParams {
            task: c.task.clone(),
            shared: c.shared_copy.clone(),
        })
        .collect();
    let local_ratio =
        fedmtl_core::objective::diversity_ratio(&problem.tasks, layout, &diag_tuple)?;
    let mut diag_inputs = inputs.clone();
    if local_ratio.is_finite() {
        diag_inputs.lambda = diag_inputs.lambda.max(1.1 * local_ratio);
    }
    let diag = appendix_diagnostics(
        &outputs[0].final_clients,
        &problem.tasks,
        layout,
        &diag_inputs,
        eta,
        v.n_decay_samples,
        stream.derive(u64::MAX, u64::MAX).master_seed,
    )?;
    for (name, mc, flip) in [
        ("InnerProductLowerBound", &diag.inner, true),
        ("UpdateSecondMoment", &diag.norm, false),
        ("SynchronizationDrift", &diag.drift, false),
    ] {
        // the inner-product check is a lower bound: observed >= bound
        let margin = if flip {
            mc.observed + 3.0 * mc.se - mc.bound
        } else {
            mc.bound + 3.0 * mc.se - mc.observed
        };
        checks.push(CheckRow {
            name: name.into(),
            bound: mc.bound,
            observed: mc.observed,
            margin,
            pass: mc.holds,
        });
    }

    let all_pass = checks.iter().all(|c| c.pass);
    let report = VerifyReport {
        format_version: FORMAT_VERSION,
        kind: format!("{kind:?}"),
        seeds: v.seeds,
        constants: ConstantRow {
            l: inputs.l,
            c: inputs.c,
            lambda,
            b,
            s,
            sigma: v.sigma,
            m,
            h: v.h,
            eta,
            r0: inputs.r0,
            f0,
            fstar,
        },
        checks,
        all_pass,
        note: "the convex gap radius uses the squared synchronization interval, consistent \
               with the per-step decay inequality it is derived from"
            .into(),
    };

    let out_dir = out
        .map(PathBuf::from)
        .unwrap_or_else(|| crate::artifact::output_root(&cfg).join(format!("{}-verify", cfg.experiment)));
    std::fs::create_dir_all(&out_dir)?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| AppError::config(format!("serialize report: {e}")))?;
    write_atomic(&out_dir.join("report.json"), json.as_bytes())?;

    println!("verify report ({:?}, {} seeds): {}", kind, v.seeds, out_dir.display());
    println!("{:<34} {:>14} {:>14} {:>12}  pass", "check", "observed", "bound", "margin");
    for c in &report.checks {
        println!(
            "{:<34} {:>14.6e} {:>14.6e} {:>12.3e}  {}",
            c.name,
            c.observed,
            c.bound,
            c.margin,
            if c.pass { "yes" } else { "NO" }
        );
    }
    if !all_pass {
        return Err(AppError::verification(format!(
            "{} of {} checks failed; see {}",
            report.checks.iter().filter(|c| !c.pass).count(),
            report.checks.len(),
            out_dir.join("report.json").display()
        )));
    }
    println!("all checks pass");
    Ok(out_dir)
}
