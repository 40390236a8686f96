//! Plain-text `key = value` run configuration.

use std::f64::consts::PI;
use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};
use dgsipg_core::mesh::{centered_box, Mesh};
use dgsipg_core::polylib::RuleKind;
use dgsipg_core::sipg::{FacePath, Strategy};
use dgsipg_core::stdregions::{BasisKind, Shape};

use crate::convergence::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Symmetry,
    Convergence,
    Bench,
}

impl Study {
    pub fn parse(s: &str) -> Option<Study> {
        match s {
            "symmetry" => Some(Study::Symmetry),
            "convergence" => Some(Study::Convergence),
            "bench" => Some(Study::Bench),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Study::Symmetry => "symmetry",
            Study::Convergence => "convergence",
            Study::Bench => "bench",
        }
    }
}

/// Where the refined order is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refine {
    None,
    /// x_0 above the domain midpoint.
    HalfDomain,
    /// |x_d - mid_d| <= refine_extent in every direction.
    CenteredBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseName {
    Sinusoidal,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Cg,
    Gmres,
}

/// An (N_P, N_Q) pairing written as `P3Q4-P5Q6` (base, refined).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pairing {
    pub base: (usize, usize),
    pub refined: (usize, usize),
}

impl Pairing {
    pub fn parse(s: &str) -> Option<Pairing> {
        let (a, b) = s.trim().split_once('-')?;
        Some(Pairing { base: parse_pq(a)?, refined: parse_pq(b)? })
    }

    pub fn label(&self) -> String {
        format!("P{}Q{}-P{}Q{}", self.base.0, self.base.1, self.refined.0, self.refined.1)
    }
}

fn parse_pq(s: &str) -> Option<(usize, usize)> {
    let s = s.trim().strip_prefix(['P', 'p'])?;
    let (p, q) = s.split_once(['Q', 'q'])?;
    Some((p.parse().ok()?, q.parse().ok()?))
}

/// Every run is fully determined by this struct.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub study: Study,
    pub dim: usize,
    pub shape: Vec<Shape>,
    pub basis: BasisKind,
    pub rule: RuleKind,
    pub augmented: bool,
    pub base: (usize, usize),
    pub refined: (usize, usize),
    pub orders: Vec<usize>,
    pub nq_offset: usize,
    pub order_increment: usize,
    pub refine: Refine,
    pub modes: Vec<Mode>,
    pub refine_extent: f64,
    pub strategy: Strategy,
    pub transition_layer: bool,
    pub face_path: FacePath,
    pub case: CaseName,
    pub k: f64,
    pub a: f64,
    pub lambda: f64,
    pub tau: f64,
    pub solver: Solver,
    pub tol: f64,
    pub maxiter: usize,
    pub restart: usize,
    pub nx: Vec<usize>,
    pub domain_lo: f64,
    pub domain_hi: f64,
    pub taper: f64,
    pub width: usize,
    pub threads: usize,
    pub pairs: Vec<Pairing>,
    pub probe_limit: usize,
    pub write_probe: bool,
    pub bench_paths: Vec<FacePath>,
    pub warmup: usize,
    pub runs: usize,
    pub output_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            study: Study::Convergence,
            dim: 0,
            shape: vec![Shape::Quad],
            basis: BasisKind::ModifiedModal,
            rule: RuleKind::GaussLobatto,
            augmented: false,
            base: (3, 4),
            refined: (5, 6),
            orders: vec![2, 3, 4],
            nq_offset: 1,
            order_increment: 1,
            refine: Refine::None,
            modes: vec![Mode::Uniform, Mode::Refined, Mode::UniformHigh],
            refine_extent: 0.5,
            strategy: Strategy::P2P,
            transition_layer: false,
            face_path: FacePath::Default,
            case: CaseName::Sinusoidal,
            k: 2.0 * PI,
            a: 0.2,
            lambda: 0.0,
            tau: 10.0,
            solver: Solver::Cg,
            tol: 1e-10,
            maxiter: 20000,
            restart: 50,
            nx: vec![4, 8, 16],
            domain_lo: 0.0,
            domain_hi: 1.0,
            taper: 0.0,
            width: 4,
            threads: 1,
            pairs: vec![Pairing { base: (3, 4), refined: (5, 6) }],
            probe_limit: dgsipg_core::krylov::DEFAULT_PROBE_LIMIT,
            write_probe: false,
            bench_paths: vec![FacePath::Default],
            warmup: 3,
            runs: 10,
            output_dir: ".".into(),
        }
    }
}

/// Key, default and meaning of every configuration key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("study", "convergence", "symmetry | convergence | bench (the command-line study wins)"),
    ("dim", "0", "spatial dimension; 0 infers it from shape, otherwise it must match"),
    ("shape", "quad", "seg | quad | tri | hex, or a comma list for convergence and bench"),
    ("basis", "modified", "modified | orthogonal | lagrange"),
    ("rule", "gll", "gl | gr | gll"),
    ("augmented", "false", "add the interval endpoints to GL element grids so faces can be gathered"),
    ("base", "P3Q4", "background (N_P, N_Q)"),
    ("refined", "P5Q6", "(N_P, N_Q) inside the refined region"),
    ("orders", "2,3,4", "N_P values swept by convergence and bench"),
    ("nq_offset", "1", "N_Q = N_P + nq_offset for swept orders"),
    ("order_increment", "1", "refined N_P = N_P + order_increment for swept orders"),
    ("refine", "none", "none | half_domain | centered_box"),
    ("modes", "uniform,refined,uniform_high", "convergence series to run; refined and uniform_high need a refine region"),
    ("refine_extent", "0.5", "half-width of the centered box as a fraction of the domain half-width"),
    ("strategy", "p2p", "shared_trace | p2p | p2p_forced"),
    ("transition_layer", "false", "insert a transition layer around the refined region"),
    ("face_path", "default", "default | force_interp | force_direct"),
    ("case", "sinusoidal", "sinusoidal (prod sin(k x_d)) | gaussian (exp(-|x|^2/a^2))"),
    ("k", "2pi", "sinusoidal wave number; accepts a trailing `pi`"),
    ("a", "0.2", "Gaussian width"),
    ("lambda", "0", "Helmholtz constant"),
    ("tau", "10", "penalty constant C in tau = C max(N_P - 1, 1)^2 / h"),
    ("solver", "cg", "cg | gmres (the symmetry study always runs both)"),
    ("tol", "1e-10", "relative residual tolerance"),
    ("maxiter", "20000", "iteration limit"),
    ("restart", "50", "GMRES restart length"),
    ("nx", "4,8,16", "elements per direction; a list for sweeps, the first entry elsewhere"),
    ("domain_lo", "0", "lower corner coordinate in every direction"),
    ("domain_hi", "1", "upper corner coordinate in every direction"),
    ("taper", "0", "taper factor applied to the box (0 keeps it affine)"),
    ("width", "4", "elements per interleaved batch: 1, 2, 4 or 8"),
    ("threads", "1", "worker threads; 0 uses every core"),
    ("pairs", "P3Q4-P5Q6", "order pairings for the symmetry study"),
    ("probe_limit", "20000", "largest system probed column by column"),
    ("write_probe", "false", "write probe_matrix.txt for the first pairing"),
    ("bench_paths", "default", "face paths timed by bench: default, force_interp, force_direct"),
    ("warmup", "3", "untimed applications per bench case (at least 3)"),
    ("runs", "10", "timed applications per bench case (at least 10)"),
    ("output_dir", ".", "directory receiving CSV and report files"),
];

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => bail!("expected a boolean, got {v:?}"),
    }
}

/// A float, optionally followed by `pi` (`2pi`, `0.5pi`, `pi`).
fn parse_real(v: &str) -> Result<f64> {
    if let Some(m) = v.strip_suffix("pi") {
        let m = m.trim().trim_end_matches('*');
        let c = if m.is_empty() { 1.0 } else { m.parse::<f64>()? };
        return Ok(c * PI);
    }
    Ok(v.parse::<f64>()?)
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    let out = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect::<Result<Vec<T>>>()?;
    if out.is_empty() {
        bail!("empty list");
    }
    Ok(out)
}

pub fn parse_face_path(v: &str) -> Result<FacePath> {
    match v {
        "default" | "gather" => Ok(FacePath::Default),
        "force_interp" => Ok(FacePath::ForceInterp),
        "force_direct" => Ok(FacePath::ForceDirect),
        _ => bail!("unknown face path {v:?}"),
    }
}

pub fn face_path_name(p: FacePath) -> &'static str {
    match p {
        FacePath::Default => "default",
        FacePath::ForceInterp => "force_interp",
        FacePath::ForceDirect => "force_direct",
    }
}

impl RunConfig {
    /// Parse a config file body; `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            cfg.set(k.trim(), v.trim()).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(cfg)
    }

    /// Apply a `key=value` override.
    pub fn set_pair(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("override {kv:?} is not key=value"))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let usize_ = |v: &str| -> Result<usize> { Ok(v.parse::<usize>()?) };
        let pq = |v: &str| parse_pq(v).ok_or_else(|| anyhow!("expected PnQm, got {v:?}"));
        match key {
            "study" => self.study = Study::parse(v).ok_or_else(|| anyhow!("unknown study {v:?}"))?,
            "dim" => self.dim = usize_(v)?,
            "shape" => self.shape = parse_list(v, |s| Shape::parse(s).ok_or_else(|| anyhow!("unknown shape {s:?}")))?,
            "basis" => self.basis = BasisKind::parse(v).ok_or_else(|| anyhow!("unknown basis {v:?}"))?,
            "rule" => self.rule = RuleKind::parse(v).ok_or_else(|| anyhow!("unknown rule {v:?}"))?,
            "augmented" => self.augmented = parse_bool(v)?,
            "base" => self.base = pq(v)?,
            "refined" => self.refined = pq(v)?,
            "orders" => self.orders = parse_list(v, usize_)?,
            "nq_offset" => self.nq_offset = usize_(v)?,
            "order_increment" => self.order_increment = usize_(v)?,
            "refine" => {
                self.refine = match v {
                    "none" => Refine::None,
                    "half_domain" => Refine::HalfDomain,
                    "centered_box" => Refine::CenteredBox,
                    _ => bail!("unknown refinement {v:?}"),
                }
            }
            "modes" => self.modes = parse_list(v, |s| Mode::parse(s).ok_or_else(|| anyhow!("unknown mode {s:?}")))?,
            "refine_extent" => self.refine_extent = parse_real(v)?,
            "strategy" => self.strategy = Strategy::parse(v).ok_or_else(|| anyhow!("unknown strategy {v:?}"))?,
            "transition_layer" => self.transition_layer = parse_bool(v)?,
            "face_path" => self.face_path = parse_face_path(v)?,
            "case" => {
                self.case = match v {
                    "sinusoidal" => CaseName::Sinusoidal,
                    "gaussian" => CaseName::Gaussian,
                    _ => bail!("unknown case {v:?}"),
                }
            }
            "k" => self.k = parse_real(v)?,
            "a" => self.a = parse_real(v)?,
            "lambda" => self.lambda = parse_real(v)?,
            "tau" => self.tau = parse_real(v)?,
            "solver" => {
                self.solver = match v {
                    "cg" => Solver::Cg,
                    "gmres" => Solver::Gmres,
                    _ => bail!("unknown solver {v:?}"),
                }
            }
            "tol" => self.tol = parse_real(v)?,
            "maxiter" => self.maxiter = usize_(v)?,
            "restart" => self.restart = usize_(v)?,
            "nx" => self.nx = parse_list(v, usize_)?,
            "domain_lo" => self.domain_lo = parse_real(v)?,
            "domain_hi" => self.domain_hi = parse_real(v)?,
            "taper" => self.taper = parse_real(v)?,
            "width" => self.width = usize_(v)?,
            "threads" => self.threads = usize_(v)?,
            "pairs" => self.pairs = parse_list(v, |s| Pairing::parse(s).ok_or_else(|| anyhow!("bad pairing {s:?}")))?,
            "probe_limit" => self.probe_limit = usize_(v)?,
            "write_probe" => self.write_probe = parse_bool(v)?,
            "bench_paths" => self.bench_paths = parse_list(v, parse_face_path)?,
            "warmup" => self.warmup = usize_(v)?,
            "runs" => self.runs = usize_(v)?,
            "output_dir" => self.output_dir = v.to_string(),
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let dims: Vec<usize> = self.shape.iter().map(|s| s.dim()).collect();
        if self.dim != 0 && dims.iter().any(|&d| d != self.dim) {
            bail!("dim = {} does not match shape list {:?}", self.dim, self.shape);
        }
        if ![1, 2, 4, 8].contains(&self.width) {
            bail!("width must be 1, 2, 4 or 8");
        }
        if self.warmup < 3 || self.runs < 10 {
            bail!("bench needs warmup >= 3 and runs >= 10");
        }
        if self.domain_hi <= self.domain_lo {
            bail!("domain_hi must exceed domain_lo");
        }
        if self.nx.contains(&0) || self.orders.contains(&0) {
            bail!("nx and orders entries must be positive");
        }
        if self.tol <= 0.0 || self.restart == 0 || self.maxiter == 0 {
            bail!("tol, restart and maxiter must be positive");
        }
        Ok(())
    }

    pub fn extent(&self, dim: usize) -> Vec<(f64, f64)> {
        vec![(self.domain_lo, self.domain_hi); dim]
    }

    /// Membership test of the refined region.
    pub fn region(&self, dim: usize) -> Box<dyn Fn([f64; 3]) -> bool> {
        let mid = 0.5 * (self.domain_lo + self.domain_hi);
        let half = 0.5 * (self.domain_hi - self.domain_lo);
        match self.refine {
            Refine::None => Box::new(|_| false),
            Refine::HalfDomain => Box::new(move |x| x[0] > mid),
            Refine::CenteredBox => {
                let inner = centered_box(dim, self.refine_extent);
                Box::new(move |x| {
                    let mut y = [0.0; 3];
                    for d in 0..dim {
                        y[d] = (x[d] - mid) / half;
                    }
                    inner(y)
                })
            }
        }
    }

    pub fn mesh(&self, shape: Shape, nx: usize) -> Result<Mesh> {
        let dim = shape.dim();
        let mut m = dgsipg_core::mesh::generate_box(dim, &vec![nx; dim], shape, &self.extent(dim))?;
        if self.taper != 0.0 {
            dgsipg_core::mesh::taper(&mut m, self.taper);
        }
        Ok(m)
    }

    /// Canonical dump of every key, in `KEYS` order.
    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pq = |p: (usize, usize)| format!("P{}Q{}", p.0, p.1);
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        put("study", self.study.name().into());
        put("dim", self.dim.to_string());
        put("shape", self.shape.iter().map(|s| s.name()).collect::<Vec<_>>().join(","));
        put("basis", self.basis.name().into());
        put("rule", self.rule.name().to_ascii_lowercase());
        put("augmented", self.augmented.to_string());
        put("base", pq(self.base));
        put("refined", pq(self.refined));
        put("orders", list(&self.orders));
        put("nq_offset", self.nq_offset.to_string());
        put("order_increment", self.order_increment.to_string());
        let refine = match self.refine {
            Refine::None => "none",
            Refine::HalfDomain => "half_domain",
            Refine::CenteredBox => "centered_box",
        };
        put("refine", refine.into());
        put("modes", self.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
        put("refine_extent", format!("{:?}", self.refine_extent));
        put("strategy", self.strategy.name().into());
        put("transition_layer", self.transition_layer.to_string());
        put("face_path", face_path_name(self.face_path).into());
        put("case", if self.case == CaseName::Sinusoidal { "sinusoidal" } else { "gaussian" }.into());
        put("k", format!("{:?}", self.k));
        put("a", format!("{:?}", self.a));
        put("lambda", format!("{:?}", self.lambda));
        put("tau", format!("{:?}", self.tau));
        put("solver", if self.solver == Solver::Cg { "cg" } else { "gmres" }.into());
        put("tol", format!("{:?}", self.tol));
        put("maxiter", self.maxiter.to_string());
        put("restart", self.restart.to_string());
        put("nx", list(&self.nx));
        put("domain_lo", format!("{:?}", self.domain_lo));
        put("domain_hi", format!("{:?}", self.domain_hi));
        put("taper", format!("{:?}", self.taper));
        put("width", self.width.to_string());
        put("threads", self.threads.to_string());
        put("pairs", self.pairs.iter().map(|p| p.label()).collect::<Vec<_>>().join(","));
        put("probe_limit", self.probe_limit.to_string());
        put("write_probe", self.write_probe.to_string());
        put("bench_paths", self.bench_paths.iter().map(|p| face_path_name(*p)).collect::<Vec<_>>().join(","));
        put("warmup", self.warmup.to_string());
        put("runs", self.runs.to_string());
        put("output_dir", self.output_dir.clone());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_roundtrip() {
        let mut c = RunConfig::default();
        c.set("pairs", "P3Q4-P5Q6, P3Q5-P5Q6").unwrap();
        c.set("k", "0.5pi").unwrap();
        c.set("shape", "quad,tri").unwrap();
        c.set("bench_paths", "default,force_direct").unwrap();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert!((c.k - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn every_key_is_documented_and_settable() {
        let text = RunConfig::default().to_text();
        let dumped: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let documented: Vec<&str> = KEYS.iter().map(|k| k.0).collect();
        assert_eq!(dumped, documented);
        let mut c = RunConfig::default();
        for (k, default, _) in KEYS {
            c.set(k, default).unwrap();
        }
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("nx").is_err());
        assert!(RunConfig::parse("pairs = P3-P5").is_err());
        let mut c = RunConfig { runs: 5, ..RunConfig::default() };
        assert!(c.validate().is_err());
        c = RunConfig::default();
        c.dim = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nnx = 2 # trailing\nshape=hex\n").unwrap();
        assert_eq!(c.nx, vec![2]);
        assert_eq!(c.shape, vec![Shape::Hex]);
    }
}
