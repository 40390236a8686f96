//! Pieces shared by the studies: operator setup, solves, CSV formatting.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use dgsipg_core::krylov::{cg, gmres, SolveReport};
use dgsipg_core::mesh::{assign_orders, insert_transition_layer, Mesh, OrderMap};
use dgsipg_core::sipg::{BoundaryConditions, CaseKind, HelmholtzParams, ManufacturedCase, Operator, OperatorOptions};

use crate::config::{CaseName, RunConfig, Solver};

pub fn operator_options(cfg: &RunConfig) -> OperatorOptions {
    OperatorOptions {
        basis: cfg.basis,
        rule: cfg.rule,
        augmented: cfg.augmented,
        strategy: cfg.strategy,
        face_path: cfg.face_path,
        params: HelmholtzParams { lambda: cfg.lambda, tau_constant: cfg.tau },
        width: cfg.width,
    }
}

pub fn manufactured(cfg: &RunConfig, dim: usize) -> ManufacturedCase {
    let kind = match cfg.case {
        CaseName::Sinusoidal => CaseKind::Sinusoidal { k: cfg.k },
        CaseName::Gaussian => CaseKind::GaussianPulse { a: cfg.a },
    };
    ManufacturedCase { kind, dim, lambda: cfg.lambda }
}

/// Order map with `refined` inside the configured region, plus the
/// transition layer when requested.
pub fn orders(cfg: &RunConfig, mesh: &Mesh, base: (usize, usize), refined: (usize, usize)) -> Result<OrderMap> {
    let region = cfg.region(mesh.dim);
    let o = assign_orders(mesh, base, region, refined);
    if cfg.transition_layer {
        Ok(insert_transition_layer(&o, mesh)?)
    } else {
        Ok(o)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub report: SolveReport,
    pub x: Vec<f64>,
}

pub fn solve_with(cfg: &RunConfig, solver: Solver, op: &mut Operator, b: &[f64]) -> Result<Solution> {
    let (report, x) = match solver {
        Solver::Cg => cg(|x, y| op.apply(x, y), b, cfg.tol, cfg.maxiter)?,
        Solver::Gmres => gmres(|x, y| op.apply(x, y), b, cfg.tol, cfg.restart, cfg.maxiter)?,
    };
    Ok(Solution { report, x })
}

/// Right-hand side with the exact solution as Dirichlet data.
pub fn rhs(op: &Operator, case: &ManufacturedCase) -> Result<Vec<f64>> {
    let bcs = BoundaryConditions::everywhere(&op.mesh, case.exact_fn());
    Ok(op.rhs_assemble(case, &bcs)?)
}

pub fn l2_error(op: &Operator, case: &ManufacturedCase, x: &[f64]) -> Result<f64> {
    let exact = case.exact_fn();
    let f = Arc::clone(&exact);
    Ok(op.l2_error(x, &move |p| f(p))?)
}

/// Scientific notation with 17 significant digits.
pub fn sci(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn timestamp() -> String {
    let s = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    s.to_string()
}

pub fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))?;
    Ok(p)
}

/// Least-squares slope of log(error) against log(1/nx).
pub fn fitted_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| -e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
