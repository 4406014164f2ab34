use std::path::{Path, PathBuf};

use fedmtl_core::accountant::{compose_clt, to_eps_delta, MuFormula};
use fedmtl_core::dp::sigma_from_epsilon;
use fedmtl_core::tradeoff::TradeoffCurve;

use crate::artifact::write_atomic;
use crate::error::{AppError, AppResult};
use crate::plot::{Curve, Plot};

pub struct AccountantArgs {
    pub eps: Option<f64>,
    pub delta: Option<f64>,
    pub sigma: Option<f64>,
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub literal: bool,
    pub out: Option<PathBuf>,
    pub report_eps: Vec<f64>,
}

pub fn cmd_accountant(args: &AccountantArgs) -> AppResult<()> {
    let sigma = match (args.eps, args.delta, args.sigma) {
        (Some(_), Some(_), Some(_)) | (Some(_), None, Some(_)) | (None, Some(_), Some(_)) => {
            return Err(AppError::config("--sigma conflicts with --eps/--delta"));
        }
        (Some(eps), Some(delta), None) => {
            let s = sigma_from_epsilon(eps, delta)?;
            println!("sigma = {s:.6} (from eps = {eps}, delta = {delta})");
            s
        }
        (None, None, Some(s)) => s,
        _ => {
            return Err(AppError::config(
                "provide either --sigma or both --eps and --delta",
            ));
        }
    };
    if sigma <= 0.0 {
        return Err(AppError::config("sigma = 0: no finite budget"));
    }
    if args.k == 0 || args.k > args.m {
        return Err(AppError::config(format!(
            "need 1 <= k <= m, got k = {}, m = {}",
            args.k, args.m
        )));
    }

    let p = args.k as f64 / args.m as f64;
    let formula = if args.literal { MuFormula::Literal } else { MuFormula::Clt };
    let budget = compose_clt(p, args.t, sigma, formula)?;
    println!("p = {p:.6}  T = {}  sigma = {sigma:.6}", args.t);
    println!("mu = {:.6}", budget.mu);

    println!("eps      delta(eps)");
    for &eps in &args.report_eps {
        println!("{eps:<8} {:.6e}", to_eps_delta(budget.mu, eps)?);
    }

    if let Some(out) = &args.out {
        write_curve_files(out, budget.mu)?;
        println!("curve files: {}", out.display());
    }
    Ok(())
}

fn write_curve_files(out: &Path, mu: f64) -> AppResult<()> {
    std::fs::create_dir_all(out)?;
    let curve = TradeoffCurve::gaussian(mu)?;
    write_atomic(&out.join("tradeoff.csv"), curve.to_csv().as_bytes())?;
    let identity = TradeoffCurve::identity();
    let plot = Plot {
        title: format!("trade-off curve, mu = {mu:.4}"),
        x_label: "type-I error".into(),
        y_label: "type-II error".into(),
        log_y: false,
        curves: vec![
            Curve {
                label: format!("G_{mu:.4}"),
                xs: curve.alphas().to_vec(),
                ys: curve.betas().to_vec(),
            },
            Curve {
                label: "identity (perfect privacy)".into(),
                xs: identity.alphas().to_vec(),
                ys: identity.betas().to_vec(),
            },
        ],
    };
    write_atomic(&out.join("tradeoff.svg"), plot.to_svg().as_bytes())?;
    Ok(())
}
