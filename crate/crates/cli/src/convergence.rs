//! L2 error against nx for uniform and locally refined order maps.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use dgsipg_core::sipg::Operator;
use dgsipg_core::stdregions::Shape;

use crate::common::*;
use crate::config::{Refine, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// (N_P, N_P + nq_offset) everywhere.
    Uniform,
    /// Background N_P, N_P + order_increment in the refined region.
    Refined,
    /// N_P + order_increment everywhere.
    UniformHigh,
}

impl Mode {
    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "uniform" => Some(Mode::Uniform),
            "refined" => Some(Mode::Refined),
            "uniform_high" => Some(Mode::UniformHigh),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Uniform => "uniform",
            Mode::Refined => "refined",
            Mode::UniformHigh => "uniform_high",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub ndof: usize,
    pub l2_error: f64,
    pub iterations: usize,
    pub converged: bool,
    pub rel_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub shape: Shape,
    pub order: usize,
    pub mode: Mode,
    pub rows: Vec<ConvergenceRow>,
    /// Fitted over converged rows only.
    pub slope: Option<f64>,
}

#[derive(Debug)]
pub struct ConvergenceOutput {
    pub series: Vec<Series>,
    pub files: Vec<PathBuf>,
}

impl ConvergenceOutput {
    pub fn find(&self, shape: Shape, order: usize, mode: Mode) -> Option<&Series> {
        self.series.iter().find(|s| s.shape == shape && s.order == order && s.mode == mode)
    }
}

pub const CSV_HEADER: &str = "nx,ndof,l2_error,iterations,converged,rel_residual";
pub const SUMMARY_HEADER: &str = "shape,order,mode,slope,points_used,finest_ndof,finest_l2_error";

fn run_case(cfg: &RunConfig, shape: Shape, nx: usize, mode: Mode, np: usize) -> Result<ConvergenceRow> {
    let mesh = cfg.mesh(shape, nx)?;
    let lo = (np, np + cfg.nq_offset);
    let hi = (np + cfg.order_increment, np + cfg.order_increment + cfg.nq_offset);
    let o = match mode {
        Mode::Uniform => orders(&RunConfig { refine: Refine::None, transition_layer: false, ..cfg.clone() }, &mesh, lo, lo)?,
        Mode::Refined => orders(cfg, &mesh, lo, hi)?,
        Mode::UniformHigh => orders(&RunConfig { refine: Refine::None, transition_layer: false, ..cfg.clone() }, &mesh, hi, hi)?,
    };
    let mut op = Operator::new(&mesh, &o, operator_options(cfg))?;
    let case = manufactured(cfg, shape.dim());
    let b = rhs(&op, &case)?;
    let s = solve_with(cfg, cfg.solver, &mut op, &b)?;
    Ok(ConvergenceRow {
        nx,
        ndof: op.ndof,
        l2_error: l2_error(&op, &case, &s.x)?,
        iterations: s.report.iterations,
        converged: s.report.converged,
        rel_residual: s.report.rel_residual,
    })
}

pub fn series_csv(rows: &[ConvergenceRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{},{},{},{},{},{}", r.nx, r.ndof, sci(r.l2_error), r.iterations, r.converged, sci(r.rel_residual)).unwrap();
    }
    s
}

pub fn summary_csv(series: &[Series]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for r in series {
        let used: Vec<&ConvergenceRow> = r.rows.iter().filter(|r| r.converged).collect();
        let last = used.last();
        writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.shape.name(),
            r.order,
            r.mode.name(),
            r.slope.map_or("-".into(), sci),
            used.len(),
            last.map_or("-".into(), |l| l.ndof.to_string()),
            last.map_or("-".into(), |l| sci(l.l2_error))
        )
        .unwrap();
    }
    s
}

/// Every (shape, order, mode) series; the refined and uniform-high modes
/// are skipped when no refinement region is configured.
pub fn run_convergence_study(cfg: &RunConfig) -> Result<ConvergenceOutput> {
    cfg.validate()?;
    let modes: Vec<Mode> = cfg.modes.iter().copied().filter(|m| *m == Mode::Uniform || cfg.refine != Refine::None).collect();
    let mut series = Vec::new();
    for &shape in &cfg.shape {
        for &order in &cfg.orders {
            for &mode in &modes {
                let rows = cfg.nx.iter().map(|&nx| run_case(cfg, shape, nx, mode, order)).collect::<Result<Vec<_>>>()?;
                let pts: Vec<(usize, f64)> = rows.iter().filter(|r| r.converged).map(|r| (r.nx, r.l2_error)).collect();
                series.push(Series { shape, order, mode, slope: fitted_slope(&pts), rows });
            }
        }
    }
    let dir = PathBuf::from(&cfg.output_dir);
    let ts = timestamp();
    let mut files = vec![write_file(&dir, &format!("convergence_{ts}.csv"), &summary_csv(&series))?];
    for s in &series {
        let name = format!("convergence_{ts}_{}_p{}_{}.csv", s.shape.name(), s.order, s.mode.name());
        files.push(write_file(&dir, &name, &series_csv(&s.rows))?);
    }
    Ok(ConvergenceOutput { series, files })
}
