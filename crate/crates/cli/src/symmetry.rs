//! Mixed-order symmetry table: certificate, probe asymmetry, CG and GMRES.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Result};
use dgsipg_core::krylov::{asymmetry_norm, probe_dense};
use dgsipg_core::sipg::{Coupling, Operator};

use crate::common::*;
use crate::config::{Pairing, RunConfig, Solver};

#[derive(Debug, Clone)]
pub struct SolverOutcome {
    pub converged: bool,
    pub iterations: usize,
    pub l2_error: f64,
}

#[derive(Debug, Clone)]
pub struct SymmetryRow {
    pub label: String,
    pub ndof: usize,
    pub nonconforming: usize,
    pub point_to_point: usize,
    /// None when every interface is conforming.
    pub condition1: Option<bool>,
    pub condition2: Option<bool>,
    pub required_degree: Option<usize>,
    pub actual_degree: Option<usize>,
    pub certified: Option<bool>,
    pub asymmetry: f64,
    pub cg: SolverOutcome,
    pub gmres: SolverOutcome,
    /// Per-interface certificate lines.
    pub certificates: String,
}

#[derive(Debug)]
pub struct SymmetryOutput {
    pub rows: Vec<SymmetryRow>,
    pub files: Vec<PathBuf>,
}

fn yes_no(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "Yes",
        Some(false) => "No",
        None => "-",
    }
}

fn opt_num(v: Option<usize>) -> String {
    v.map_or("-".into(), |x| x.to_string())
}

fn run_pairing(cfg: &RunConfig, pairing: Pairing, label: String, probe_out: Option<&mut String>) -> Result<SymmetryRow> {
    let shape = cfg.shape[0];
    let mesh = cfg.mesh(shape, cfg.nx[0])?;
    let orders = orders(cfg, &mesh, pairing.base, pairing.refined)?;
    let mut op = Operator::new(&mesh, &orders, operator_options(cfg))?;
    let n = op.ndof;
    if n > cfg.probe_limit {
        bail!("{label}: {n} DOFs exceed probe_limit = {}; use a smaller nx or lower orders", cfg.probe_limit);
    }
    let probe = probe_dense(|x, y| op.apply(x, y), n, cfg.probe_limit)?;
    let asymmetry = asymmetry_norm(&probe.matrix);
    if let Some(out) = probe_out {
        *out = probe.to_text();
    }

    let c = op.couplings.clone();
    let certificates = op.certificate_report();
    let any = !c.is_empty();
    let some = |v: bool| any.then_some(v);
    let row_cert = (
        some(c.iter().all(|i| i.certificate.condition1)),
        some(c.iter().all(|i| i.certificate.condition2)),
        c.iter().map(|i| i.certificate.required_degree).max(),
        c.iter().map(|i| i.certificate.actual_degree).min(),
        some(c.iter().all(|i| i.certificate.symmetric)),
    );
    let point_to_point = c.iter().filter(|i| i.coupling == Coupling::PointToPoint).count();

    let case = manufactured(cfg, shape.dim());
    let b = rhs(&op, &case)?;
    let mut outcome = |solver| -> Result<SolverOutcome> {
        let s = solve_with(cfg, solver, &mut op, &b)?;
        let l2 = l2_error(&op, &case, &s.x)?;
        Ok(SolverOutcome { converged: s.report.converged, iterations: s.report.iterations, l2_error: l2 })
    };
    let cg = outcome(Solver::Cg)?;
    let gmres = outcome(Solver::Gmres)?;
    Ok(SymmetryRow {
        label,
        ndof: n,
        nonconforming: c.len(),
        point_to_point,
        condition1: row_cert.0,
        condition2: row_cert.1,
        required_degree: row_cert.2,
        actual_degree: row_cert.3,
        certified: row_cert.4,
        asymmetry,
        cg,
        gmres,
        certificates,
    })
}

pub const CSV_HEADER: &str = "pairing,ndof,nonconforming,point_to_point,condition1,condition2,required_degree,actual_degree,certified,asymmetry,cg_converged,cg_iterations,cg_l2_error,gmres_converged,gmres_iterations,gmres_l2_error";

pub fn csv(rows: &[SymmetryRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.label,
            r.ndof,
            r.nonconforming,
            r.point_to_point,
            yes_no(r.condition1),
            yes_no(r.condition2),
            opt_num(r.required_degree),
            opt_num(r.actual_degree),
            yes_no(r.certified),
            sci(r.asymmetry),
            r.cg.converged,
            r.cg.iterations,
            sci(r.cg.l2_error),
            r.gmres.converged,
            r.gmres.iterations,
            sci(r.gmres.l2_error)
        )
        .unwrap();
    }
    s
}

/// Table laid out with one column per pairing.
pub fn report(cfg: &RunConfig, rows: &[SymmetryRow]) -> String {
    let solved = |o: &SolverOutcome| if o.converged { o.iterations.to_string() } else { "-".into() };
    let err = |o: &SolverOutcome| if o.converged { format!("{:.3e}", o.l2_error) } else { "-".into() };
    let lines: Vec<(&str, Vec<String>)> = vec![
        ("", rows.iter().map(|r| r.label.clone()).collect()),
        ("DOFs", rows.iter().map(|r| r.ndof.to_string()).collect()),
        ("Condition 1", rows.iter().map(|r| yes_no(r.condition1).into()).collect()),
        ("Condition 2", rows.iter().map(|r| yes_no(r.condition2).into()).collect()),
        ("Required degree", rows.iter().map(|r| opt_num(r.required_degree)).collect()),
        ("Actual degree", rows.iter().map(|r| opt_num(r.actual_degree)).collect()),
        ("Symmetric", rows.iter().map(|r| yes_no(r.certified).into()).collect()),
        ("||A-A^T||/||A||", rows.iter().map(|r| format!("{:.3e}", r.asymmetry)).collect()),
        ("CG iterations", rows.iter().map(|r| solved(&r.cg)).collect()),
        ("CG L2 error", rows.iter().map(|r| err(&r.cg)).collect()),
        ("GMRES iterations", rows.iter().map(|r| solved(&r.gmres)).collect()),
        ("GMRES L2 error", rows.iter().map(|r| err(&r.gmres)).collect()),
    ];
    let w0 = lines.iter().map(|l| l.0.len()).max().unwrap_or(0);
    let w = lines.iter().flat_map(|l| l.1.iter().map(|c| c.len())).max().unwrap_or(0).max(8);
    let mut s = String::new();
    writeln!(
        s,
        "symmetry study: {} nx={} {} {} strategy={} tau={} transition_layer={}",
        cfg.shape[0].name(),
        cfg.nx[0],
        cfg.basis.name(),
        cfg.rule.name(),
        cfg.strategy.name(),
        cfg.tau,
        cfg.transition_layer
    )
    .unwrap();
    for (name, cells) in &lines {
        write!(s, "{name:<w0$}").unwrap();
        for c in cells {
            write!(s, "  {c:>w$}").unwrap();
        }
        s.push('\n');
    }
    for r in rows.iter().filter(|r| !r.certificates.is_empty()) {
        writeln!(s, "\n{}:\n{}", r.label, r.certificates.trim_end()).unwrap();
    }
    s
}

/// One row per configured pairing, preceded by a uniform baseline at the
/// first pairing's background order.
pub fn run_symmetry_study(cfg: &RunConfig) -> Result<SymmetryOutput> {
    cfg.validate()?;
    let mut rows = Vec::new();
    let mut probe_text = String::new();
    if let Some(first) = cfg.pairs.first() {
        let b = first.base;
        let baseline = Pairing { base: b, refined: b };
        rows.push(run_pairing(cfg, baseline, format!("P{}Q{}", b.0, b.1), None)?);
    }
    for (i, p) in cfg.pairs.iter().enumerate() {
        let want_probe = cfg.write_probe && i == 0;
        rows.push(run_pairing(cfg, *p, p.label(), want_probe.then_some(&mut probe_text))?);
    }
    let dir = PathBuf::from(&cfg.output_dir);
    let mut files = vec![
        write_file(&dir, &format!("symmetry_{}.csv", timestamp()), &csv(&rows))?,
        write_file(&dir, "symmetry_report.txt", &report(cfg, &rows))?,
    ];
    if cfg.write_probe {
        files.push(write_file(&dir, "probe_matrix.txt", &probe_text)?);
    }
    Ok(SymmetryOutput { rows, files })
}
