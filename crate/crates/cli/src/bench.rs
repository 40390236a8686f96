//! Operator throughput: full application and the two fused phases.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;
use dgsipg_core::sipg::{FacePath, Operator, OperatorOptions};
use dgsipg_core::stdregions::Shape;

use crate::common::*;
use crate::config::{face_path_name, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpName {
    LhsEval,
    AverJump,
    TraceFlux,
}

impl OpName {
    pub fn name(self) -> &'static str {
        match self {
            OpName::LhsEval => "LhsEval",
            OpName::AverJump => "AverJump",
            OpName::TraceFlux => "TraceFlux",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchRecord {
    pub operator: OpName,
    pub shape: Shape,
    pub np: usize,
    pub nq: usize,
    pub face_path: FacePath,
    pub nx: usize,
    pub dofs: usize,
    /// Median seconds per application.
    pub elapsed: f64,
    /// dofs * applications / elapsed.
    pub throughput: f64,
    /// Two per multiply-add recorded by the kernel cost counters.
    pub flops: u64,
    /// flops over the compulsory traffic of reading x and writing y once.
    pub intensity: f64,
}

#[derive(Debug)]
pub struct BenchOutput {
    pub records: Vec<BenchRecord>,
    pub files: Vec<PathBuf>,
}

/// Times one operator; the input vector is fixed so runs are repeatable.
pub fn bench_operator(op: &mut Operator, warmup: usize, runs: usize) -> Result<[(f64, u64); 3]> {
    let n = op.ndof;
    let x: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.37).sin()).collect();
    let mut y = vec![0.0; n];
    for _ in 0..warmup {
        op.apply(&x, &mut y)?;
    }
    // full applications and phase-split applications alternate so drift
    // in machine speed affects both alike
    let mut lhs = Vec::with_capacity(runs);
    let mut aj = Vec::with_capacity(runs);
    let mut tf = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        op.apply(&x, &mut y)?;
        lhs.push(t.elapsed().as_secs_f64());
        let t0 = Instant::now();
        op.aver_jump(&x)?;
        op.publish();
        let t1 = Instant::now();
        op.trace_flux(&mut y)?;
        aj.push((t1 - t0).as_secs_f64());
        tf.push(t1.elapsed().as_secs_f64());
    }
    let (lhs, aj, tf) = (median(&mut lhs), median(&mut aj), median(&mut tf));
    let c = op.cost;
    Ok([(lhs, 2 * (c.aver_jump + c.trace_flux)), (aj, 2 * c.aver_jump), (tf, 2 * c.trace_flux)])
}

pub const CSV_HEADER: &str = "operator,shape,np,nq,face_path,nx,dofs,elapsed_s,throughput_dof_per_s,flops,intensity_flop_per_byte";

pub fn csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in records {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.operator.name(),
            r.shape.name(),
            r.np,
            r.nq,
            face_path_name(r.face_path),
            r.nx,
            r.dofs,
            sci(r.elapsed),
            sci(r.throughput),
            r.flops,
            sci(r.intensity)
        )
        .unwrap();
    }
    s
}

/// Plateau ratio (peak over largest-size throughput) and phase balance per
/// (shape, order, path).
pub fn report(records: &[BenchRecord]) -> String {
    let mut s = String::from("shape np path peak_over_largest phases_over_total\n");
    let mut keys: Vec<(Shape, usize, FacePath)> = Vec::new();
    for r in records {
        if !keys.contains(&(r.shape, r.np, r.face_path)) {
            keys.push((r.shape, r.np, r.face_path));
        }
    }
    for (shape, np, path) in keys {
        let sel = |op: OpName| records.iter().filter(move |r| r.shape == shape && r.np == np && r.face_path == path && r.operator == op);
        let lhs: Vec<&BenchRecord> = sel(OpName::LhsEval).collect();
        let peak = lhs.iter().map(|r| r.throughput).fold(0.0, f64::max);
        let largest = lhs.iter().max_by_key(|r| r.dofs).map_or(f64::NAN, |r| r.throughput);
        let total: f64 = lhs.iter().map(|r| r.elapsed).sum();
        let phases: f64 = sel(OpName::AverJump).chain(sel(OpName::TraceFlux)).map(|r| r.elapsed).sum();
        writeln!(s, "{} {} {} {:.3} {:.3}", shape.name(), np, face_path_name(path), peak / largest, phases / total).unwrap();
    }
    s
}

/// Sweeps shape x order x nx x face path.
pub fn run_bench(cfg: &RunConfig) -> Result<BenchOutput> {
    cfg.validate()?;
    let mut records = Vec::new();
    for &shape in &cfg.shape {
        for &np in &cfg.orders {
            let nq = np + cfg.nq_offset;
            for &nx in &cfg.nx {
                let mesh = cfg.mesh(shape, nx)?;
                let o = orders(cfg, &mesh, (np, nq), (np + cfg.order_increment, nq + cfg.order_increment))?;
                for &path in &cfg.bench_paths {
                    let opts = OperatorOptions { face_path: path, ..operator_options(cfg) };
                    let mut op = Operator::new(&mesh, &o, opts)?;
                    let dofs = op.ndof;
                    let timed = bench_operator(&mut op, cfg.warmup, cfg.runs)?;
                    for (operator, (elapsed, flops)) in [OpName::LhsEval, OpName::AverJump, OpName::TraceFlux].into_iter().zip(timed) {
                        records.push(BenchRecord {
                            operator,
                            shape,
                            np,
                            nq,
                            face_path: path,
                            nx,
                            dofs,
                            elapsed,
                            throughput: dofs as f64 / elapsed,
                            flops,
                            intensity: flops as f64 / (16.0 * dofs as f64),
                        });
                    }
                }
            }
        }
    }
    let dir = PathBuf::from(&cfg.output_dir);
    let files = vec![
        write_file(&dir, &format!("bench_{}.csv", timestamp()), &csv(&records))?,
        write_file(&dir, "bench_report.txt", &report(&records))?,
    ];
    Ok(BenchOutput { records, files })
}
