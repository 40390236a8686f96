//! Symmetric interior penalty Helmholtz operator, evaluated matrix-free in
//! two fused phases separated by a trace publication step.
//!
//! Phase 1 (average/jump) evaluates each element batch, accumulates the
//! volume terms and publishes `u` and the outward normal derivative on
//! every face. Phase 2 (trace flux) combines both sides of every face and
//! adds the consistency, symmetry and penalty fluxes. The operator solves
//! `-lap u + lambda u = -f`, with right-hand side `-(v, f)`.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::mesh::{
    element_geometry, face_geometry, grid_perm, inverse_orientation, quad_points, ElemGeom, Mesh, OrderMap,
};
use crate::polylib::{quad_rule, RuleKind};
use crate::stdregions::{as_lanes, interleave, BasisKind, Expansion, ExpansionKey, Scratch, Shape, Tables};
use crate::trace::{certify_p2p, face_interp, tensor_interp, Certificate, SideOrder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HelmholtzParams {
    pub lambda: f64,
    /// Penalty scaling C in tau = C max(N_P - 1, 1)^2 / h.
    pub tau_constant: f64,
}

impl Default for HelmholtzParams {
    fn default() -> Self {
        HelmholtzParams { lambda: 0.0, tau_constant: 10.0 }
    }
}

/// How non-conforming interfaces are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    SharedTrace,
    /// Point-to-point where certified, shared trace elsewhere.
    P2P,
    /// Point-to-point on every non-conforming interface.
    P2PForced,
}

impl Strategy {
    pub fn parse(s: &str) -> Option<Strategy> {
        match s {
            "shared_trace" => Some(Strategy::SharedTrace),
            "p2p" => Some(Strategy::P2P),
            "p2p_forced" => Some(Strategy::P2PForced),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SharedTrace => "shared_trace",
            Strategy::P2P => "p2p",
            Strategy::P2PForced => "p2p_forced",
        }
    }
}

/// Face evaluation path selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FacePath {
    /// Gather from the element grid where it contains the face.
    Default,
    /// Gather, but always run the interpolation step (identity on
    /// conforming faces).
    ForceInterp,
    /// Evaluate and integrate every face directly from coefficients.
    ForceDirect,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    Conforming,
    SharedTrace,
    PointToPoint,
}

#[derive(Debug, Clone)]
pub struct OperatorOptions {
    pub basis: BasisKind,
    pub rule: RuleKind,
    pub augmented: bool,
    pub strategy: Strategy,
    pub face_path: FacePath,
    pub params: HelmholtzParams,
    /// Elements per batch (1, 2, 4 or 8).
    pub width: usize,
}

impl Default for OperatorOptions {
    fn default() -> Self {
        OperatorOptions {
            basis: BasisKind::ModifiedModal,
            rule: RuleKind::GaussLobatto,
            augmented: false,
            strategy: Strategy::P2P,
            face_path: FacePath::Default,
            params: HelmholtzParams::default(),
            width: 4,
        }
    }
}

/// Per non-conforming interface record.
#[derive(Debug, Clone)]
pub struct CouplingInfo {
    pub iface: usize,
    pub coupling: Coupling,
    pub certificate: Certificate,
}

#[derive(Debug, Clone)]
enum Mode {
    Gather(Vec<usize>),
    Direct(Tables),
}

#[derive(Debug, Clone)]
enum Link {
    Boundary(String),
    Interior { elem: usize, face: usize, interp: Option<Mat>, perm: Vec<usize> },
}

#[derive(Debug, Clone)]
struct Side {
    nt: usize,
    mode: Mode,
    wjs: Vec<f64>,
    /// Sum_j d(eta_k)/dx_j n_j per point.
    cn: Vec<[f64; 3]>,
    coords: Vec<[f64; 3]>,
    tau: f64,
    link: Link,
}

#[derive(Debug, Clone)]
enum VolMetric {
    /// Affine tensor element: jac and (d eta/dx)(d eta/dx)^T per lane.
    Regular { jac: Vec<f64>, k: Vec<[[f64; 3]; 3]> },
    /// Per point, interleaved: jw[q*W + l], k[((q*3 + a)*3 + b)*W + l].
    Deformed { jw: Vec<f64>, k: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Batch {
    exp: usize,
    elems: Vec<usize>,
    metric: VolMetric,
}

/// Side-local trace data published by phase 1.
#[derive(Debug, Clone, Default)]
struct FaceData {
    u: Vec<f64>,
    d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostReport {
    pub aver_jump: u64,
    pub trace_flux: u64,
}

pub type ScalarFn = Arc<dyn Fn([f64; 3]) -> f64 + Send + Sync>;

/// Dirichlet data per boundary tag.
#[derive(Clone, Default)]
pub struct BoundaryConditions {
    pub by_tag: HashMap<String, ScalarFn>,
}

impl BoundaryConditions {
    /// The same function on every boundary tag present in `mesh`.
    pub fn everywhere(mesh: &Mesh, g: ScalarFn) -> Self {
        let mut by_tag = HashMap::new();
        for it in mesh.interfaces.iter().filter(|i| i.is_boundary()) {
            by_tag.insert(it.tag.clone().unwrap_or_default(), g.clone());
        }
        BoundaryConditions { by_tag }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CaseKind {
    /// u = prod_d sin(k x_d)
    Sinusoidal { k: f64 },
    /// u = exp(-|x|^2 / a^2)
    GaussianPulse { a: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub kind: CaseKind,
    pub dim: usize,
    pub lambda: f64,
}

impl ManufacturedCase {
    pub fn exact(&self, x: [f64; 3]) -> f64 {
        match self.kind {
            CaseKind::Sinusoidal { k } => (0..self.dim).map(|d| (k * x[d]).sin()).product(),
            CaseKind::GaussianPulse { a } => {
                let r2: f64 = (0..self.dim).map(|d| x[d] * x[d]).sum();
                (-r2 / (a * a)).exp()
            }
        }
    }

    pub fn forcing(&self, x: [f64; 3]) -> f64 {
        forcing_eval(self, x)
    }

    pub fn exact_fn(&self) -> ScalarFn {
        let c = *self;
        Arc::new(move |x| c.exact(x))
    }
}

/// f such that -lap u + lambda u = -f.
pub fn forcing_eval(case: &ManufacturedCase, x: [f64; 3]) -> f64 {
    let dim = case.dim as f64;
    let u = case.exact(x);
    match case.kind {
        CaseKind::Sinusoidal { k } => -(case.lambda + dim * k * k) * u,
        CaseKind::GaussianPulse { a } => {
            let r2: f64 = (0..case.dim).map(|d| x[d] * x[d]).sum();
            let lap = u * (4.0 * r2 / a.powi(4) - 2.0 * dim / (a * a));
            lap - case.lambda * u
        }
    }
}

pub struct Operator {
    pub mesh: Mesh,
    pub keys: Vec<ExpansionKey>,
    pub exps: Vec<Expansion>,
    pub elem_exp: Vec<usize>,
    pub geom: Vec<ElemGeom>,
    pub offsets: Vec<usize>,
    pub ndof: usize,
    pub options: OperatorOptions,
    pub couplings: Vec<CouplingInfo>,
    pub cost: CostReport,
    batches: Vec<Batch>,
    sides: Vec<Vec<Side>>,
    /// Quadrature weight times Jacobian per element point.
    jw: Vec<Vec<f64>>,
    vol_out: Vec<f64>,
    staging: Vec<Vec<FaceData>>,
    published: Vec<Vec<FaceData>>,
    epoch: u64,
    published_epoch: u64,
}

fn face_weights(nt: usize, w: &[f64]) -> Vec<f64> {
    match nt {
        0 => vec![1.0],
        1 => w.to_vec(),
        _ => {
            let mut o = Vec::with_capacity(w.len() * w.len());
            for &b in w {
                for &a in w {
                    o.push(a * b);
                }
            }
            o
        }
    }
}

/// The element's own face grid: 1D points and weights.
fn own_face_grid(exp: &Expansion) -> Result<(Vec<f64>, Vec<f64>)> {
    match exp.shape() {
        Shape::Seg => Ok((vec![], vec![])),
        Shape::Tri => {
            let q = quad_rule(RuleKind::GaussLegendre, exp.key.nq)?;
            Ok((q.points, q.weights))
        }
        _ => Ok((exp.points[0].clone(), exp.weights[0].clone())),
    }
}

impl Operator {
    pub fn new(mesh: &Mesh, orders: &OrderMap, options: OperatorOptions) -> Result<Self> {
        if ![1, 2, 4, 8].contains(&options.width) {
            return Err(Error::Invalid(format!("batch width {} not in {{1, 2, 4, 8}}", options.width)));
        }
        if orders.orders.len() != mesh.elements.len() {
            return Err(Error::SizeMismatch { expected: mesh.elements.len(), got: orders.orders.len() });
        }
        let ne = mesh.elements.len();
        let mut keys: Vec<ExpansionKey> = Vec::new();
        let mut exps = Vec::new();
        let mut elem_exp = Vec::with_capacity(ne);
        for e in 0..ne {
            let (np, nq) = orders.orders[e];
            let shape = mesh.elements[e].shape;
            let key = ExpansionKey { shape, basis: options.basis, np, nq, rule: options.rule, augmented: options.augmented };
            if shape != Shape::Tri && shape != Shape::Seg && options.rule == RuleKind::GaussRadauM {
                return Err(Error::Unsupported("Gauss-Radau face grids are not symmetric".into()));
            }
            let id = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    keys.push(key);
                    exps.push(Expansion::new(key)?);
                    keys.len() - 1
                }
            };
            elem_exp.push(id);
        }
        let mut geom = Vec::with_capacity(ne);
        for e in 0..ne {
            geom.push(element_geometry(mesh, e, &exps[elem_exp[e]])?);
        }
        let mut offsets = Vec::with_capacity(ne + 1);
        let mut n = 0;
        for e in 0..ne {
            offsets.push(n);
            n += exps[elem_exp[e]].ncoeffs;
        }
        offsets.push(n);
        let jw: Vec<Vec<f64>> =
            (0..ne).map(|e| { let x = &exps[elem_exp[e]]; (0..x.nphys).map(|q| x.ref_weight[q] * geom[e].jac_at(q)).collect() }).collect();
        let mut op = Operator {
            mesh: mesh.clone(),
            keys,
            exps,
            elem_exp,
            geom,
            offsets,
            ndof: n,
            options,
            couplings: vec![],
            cost: CostReport::default(),
            batches: vec![],
            sides: vec![],
            jw,
            vol_out: vec![0.0; n],
            staging: vec![],
            published: vec![],
            epoch: 0,
            published_epoch: 0,
        };
        op.setup_sides()?;
        op.setup_batches();
        op.staging = op.sides.iter().map(|s| vec![FaceData::default(); s.len()]).collect();
        op.published = op.staging.clone();
        Ok(op)
    }

    fn exp_of(&self, e: usize) -> &Expansion {
        &self.exps[self.elem_exp[e]]
    }

    fn side_order(&self, e: usize) -> SideOrder {
        let k = self.exp_of(e).key;
        SideOrder { np: k.np, nq: k.nq, rule: k.face_rule() }
    }

    fn build_side(&self, e: usize, f: usize, pts: &[f64], w: &[f64], allow_gather: bool) -> Result<(Side, Vec<[f64; 3]>)> {
        let exp = self.exp_of(e);
        let nt = exp.shape().faces()[f].tangential.len();
        let g = face_geometry(&self.mesh, e, f, pts)?;
        let wf = face_weights(nt, w);
        let wjs: Vec<f64> = wf.iter().zip(&g.sjac).map(|(a, b)| a * b).collect();
        let (own, _) = own_face_grid(exp)?;
        let gather = allow_gather && self.options.face_path != FacePath::ForceDirect && own == pts;
        let mode = match (gather, exp.face_gather_indices(f)) {
            (true, Some(idx)) => Mode::Gather(idx),
            _ => Mode::Direct(exp.face_tables(f, pts)?),
        };
        let cn = cn_of(&g.deta_dx, &g.normal);
        let side = Side { nt, mode, wjs, cn, coords: g.coords, tau: 0.0, link: Link::Boundary(String::new()) };
        Ok((side, g.normal))
    }

    fn setup_sides(&mut self) -> Result<()> {
        let ne = self.mesh.elements.len();
        let mut sides: Vec<Vec<Option<Side>>> = (0..ne).map(|e| vec![None; self.mesh.elements[e].shape.nfaces()]).collect();
        let force_interp = self.options.face_path == FacePath::ForceInterp;
        let c = self.options.params.tau_constant;
        for (i, it) in self.mesh.interfaces.clone().iter().enumerate() {
            let (le, lf) = it.left;
            let (lp, lw) = own_face_grid(self.exp_of(le))?;
            let Some((re, rf)) = it.right else {
                let (mut s, _) = self.build_side(le, lf, &lp, &lw, true)?;
                let area: f64 = s.wjs.iter().sum();
                let h = self.geom[le].volume / area;
                let p = (self.exp_of(le).key.np.saturating_sub(1)).max(1) as f64;
                s.tau = c * p * p / h;
                s.link = Link::Boundary(it.tag.clone().unwrap_or_default());
                sides[le][lf] = Some(s);
                continue;
            };
            let (rp, rw) = own_face_grid(self.exp_of(re))?;
            let nt = self.mesh.elements[le].shape.faces()[lf].tangential.len();
            let code_l = it.orient;
            let code_r = inverse_orientation(code_l, nt);
            let kl = self.exp_of(le).key;
            let kr = self.exp_of(re).key;
            let conforming = kl == kr;
            let coupling = if conforming {
                Coupling::Conforming
            } else {
                let p_geom = usize::from(!(self.geom[le].regular && self.geom[re].regular));
                let cert = certify_p2p(self.side_order(le), self.side_order(re), p_geom);
                let coupling = match self.options.strategy {
                    Strategy::SharedTrace => Coupling::SharedTrace,
                    Strategy::P2P if cert.symmetric => Coupling::PointToPoint,
                    Strategy::P2P => Coupling::SharedTrace,
                    Strategy::P2PForced => Coupling::PointToPoint,
                };
                self.couplings.push(CouplingInfo { iface: i, coupling, certificate: cert });
                coupling
            };
            let (mut sl, mut sr);
            match coupling {
                Coupling::Conforming | Coupling::PointToPoint => {
                    sl = self.build_side(le, lf, &lp, &lw, true)?.0;
                    sr = self.build_side(re, rf, &rp, &rw, true)?.0;
                    let il = if force_interp { Some(crate::polylib::lagrange_interp_matrix(&rp, &lp)?) } else { face_interp(&rp, &lp)? };
                    let ir = if force_interp { Some(crate::polylib::lagrange_interp_matrix(&lp, &rp)?) } else { face_interp(&lp, &rp)? };
                    let ml = lp.len().max(1);
                    let mr = rp.len().max(1);
                    sl.link = Link::Interior { elem: re, face: rf, interp: il, perm: grid_perm(code_l, nt, ml) };
                    sr.link = Link::Interior { elem: le, face: lf, interp: ir, perm: grid_perm(code_r, nt, mr) };
                }
                Coupling::SharedTrace => {
                    let hi = if (kl.nq, kl.np) >= (kr.nq, kr.np) { kl } else { kr };
                    let q = quad_rule(hi.face_rule(), kl.nq.max(kr.nq))?;
                    let (gp, gw) = (q.points, q.weights);
                    let (l, nl) = self.build_side(le, lf, &gp, &gw, true)?;
                    sl = l;
                    let (r, _) = self.build_side(re, rf, &gp, &gw, true)?;
                    sr = r;
                    let m = gp.len().max(1);
                    let pr = grid_perm(code_r, nt, m);
                    // single metric: the right side reuses the left weights and normal
                    let gr = face_geometry(&self.mesh, re, rf, &gp)?;
                    let nr: Vec<[f64; 3]> = pr.iter().map(|&k| [-nl[k][0], -nl[k][1], -nl[k][2]]).collect();
                    sr.wjs = pr.iter().map(|&k| sl.wjs[k]).collect();
                    sr.cn = cn_of(&gr.deta_dx, &nr);
                    sl.link = Link::Interior { elem: re, face: rf, interp: None, perm: grid_perm(code_l, nt, m) };
                    sr.link = Link::Interior { elem: le, face: lf, interp: None, perm: pr };
                }
            }
            let area: f64 = sl.wjs.iter().sum();
            let h = self.geom[le].volume.min(self.geom[re].volume) / area;
            let p = (kl.np.max(kr.np).saturating_sub(1)).max(1) as f64;
            let tau = c * p * p / h;
            sl.tau = tau;
            sr.tau = tau;
            sides[le][lf] = Some(sl);
            sides[re][rf] = Some(sr);
        }
        self.sides = sides
            .into_iter()
            .map(|v| v.into_iter().map(|s| s.expect("every face has an interface")).collect())
            .collect();
        Ok(())
    }

    fn setup_batches(&mut self) {
        let w = self.options.width;
        let mut groups: Vec<((usize, bool), Vec<usize>)> = Vec::new();
        for e in 0..self.mesh.elements.len() {
            let exp = self.exp_of(e);
            let reg = self.geom[e].regular && exp.shape() != Shape::Tri;
            let key = (self.elem_exp[e], reg);
            match groups.iter_mut().find(|g| g.0 == key) {
                Some(g) => g.1.push(e),
                None => groups.push((key, vec![e])),
            }
        }
        let dim = self.mesh.dim;
        let mut batches = Vec::new();
        for ((xi, reg), elems) in groups {
            for chunk in elems.chunks(w) {
                let exp = &self.exps[xi];
                let lane = |l: usize| chunk[l.min(chunk.len() - 1)];
                let metric = if reg {
                    let mut jac = Vec::new();
                    let mut k = Vec::new();
                    for l in 0..w {
                        let g = &self.geom[lane(l)];
                        jac.push(g.jac[0]);
                        k.push(kmat(&g.dxi_dx[0], dim));
                    }
                    VolMetric::Regular { jac, k }
                } else {
                    let n = exp.nphys;
                    let mut jw = vec![0.0; n * w];
                    let mut km = vec![0.0; n * 9 * w];
                    let pts = quad_points(exp);
                    for l in 0..w {
                        let e = lane(l);
                        for q in 0..n {
                            jw[q * w + l] = self.jw[e][q];
                            let de = crate::mesh::deta_dx(exp.shape(), &pts[q], self.geom[e].dxi_dx_at(q), dim);
                            let kk = kmat(&de, dim);
                            for a in 0..3 {
                                for b in 0..3 {
                                    km[((q * 3 + a) * 3 + b) * w + l] = kk[a][b];
                                }
                            }
                        }
                    }
                    VolMetric::Deformed { jw, k: km }
                };
                batches.push(Batch { exp: xi, elems: chunk.to_vec(), metric });
            }
        }
        self.batches = batches;
    }

    pub fn nbatches(&self) -> usize {
        self.batches.len()
    }

    /// Coefficient slice of element `e` in a global vector.
    pub fn elem_range(&self, e: usize) -> std::ops::Range<usize> {
        self.offsets[e]..self.offsets[e + 1]
    }

    /// Full operator application y = A x.
    pub fn apply(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.aver_jump(x)?;
        self.publish();
        self.trace_flux(y)
    }

    /// Phase 1: volume terms and side-local trace values.
    pub fn aver_jump(&mut self, x: &[f64]) -> Result<()> {
        if x.len() != self.ndof {
            return Err(Error::SizeMismatch { expected: self.ndof, got: x.len() });
        }
        self.epoch += 1;
        let results: Vec<(Vec<(usize, Vec<f64>, Vec<FaceData>)>, u64)> = match self.options.width {
            1 => self.batches.par_iter().map(|b| self.phase1_batch::<1>(b, x)).collect(),
            2 => self.batches.par_iter().map(|b| self.phase1_batch::<2>(b, x)).collect(),
            4 => self.batches.par_iter().map(|b| self.phase1_batch::<4>(b, x)).collect(),
            _ => self.batches.par_iter().map(|b| self.phase1_batch::<8>(b, x)).collect(),
        };
        let mut cost = 0;
        for (elems, c) in results {
            cost += c;
            for (e, out, faces) in elems {
                let r = self.offsets[e]..self.offsets[e + 1];
                self.vol_out[r].copy_from_slice(&out);
                self.staging[e] = faces;
            }
        }
        self.cost.aver_jump = cost;
        Ok(())
    }

    /// Exchange step: makes the staged trace values of the current
    /// evaluation visible to phase 2.
    pub fn publish(&mut self) {
        std::mem::swap(&mut self.staging, &mut self.published);
        self.published_epoch = self.epoch;
    }

    /// Phase 2: interface fluxes; writes y = A x for the x of phase 1.
    pub fn trace_flux(&mut self, y: &mut [f64]) -> Result<()> {
        if self.published_epoch != self.epoch || self.epoch == 0 {
            return Err(Error::UnpublishedTrace);
        }
        if y.len() != self.ndof {
            return Err(Error::SizeMismatch { expected: self.ndof, got: y.len() });
        }
        let results: Vec<(Vec<(usize, Vec<f64>)>, u64)> = match self.options.width {
            1 => self.batches.par_iter().map(|b| self.phase2_batch::<1>(b)).collect(),
            2 => self.batches.par_iter().map(|b| self.phase2_batch::<2>(b)).collect(),
            4 => self.batches.par_iter().map(|b| self.phase2_batch::<4>(b)).collect(),
            _ => self.batches.par_iter().map(|b| self.phase2_batch::<8>(b)).collect(),
        };
        let mut cost = 0;
        for (elems, c) in results {
            cost += c;
            for (e, out) in elems {
                let r = self.offsets[e]..self.offsets[e + 1];
                for ((yv, v), o) in y[r.clone()].iter_mut().zip(&self.vol_out[r]).zip(&out) {
                    *yv = v + o;
                }
            }
        }
        // a second phase 2 on the same data needs a new publication
        self.published_epoch = 0;
        self.cost.trace_flux = cost;
        Ok(())
    }

    fn phase1_batch<const W: usize>(&self, b: &Batch, x: &[f64]) -> (Vec<(usize, Vec<f64>, Vec<FaceData>)>, u64) {
        let exp = &self.exps[b.exp];
        let dim = exp.dim;
        let n = exp.nphys;
        let lam = self.options.params.lambda;
        let slices: Vec<&[f64]> = b.elems.iter().map(|&e| &x[self.offsets[e]..self.offsets[e + 1]]).collect();
        let c = interleave::<W>(&slices);
        let mut s = Scratch::<W>::default();
        let mut cost = 0u64;
        let mut u = vec![[0.0; W]; n];
        cost += exp.eval_lanes(&exp.quad, None, &c, &mut u, &mut s);
        let mut du = vec![vec![[0.0; W]; n]; dim];
        for (k, d) in du.iter_mut().enumerate() {
            cost += exp.phys_deriv_lanes(k, &u, d);
        }
        let mut h = vec![[0.0; W]; n];
        let mut g = vec![vec![[0.0; W]; n]; dim];
        match &b.metric {
            VolMetric::Regular { jac, k } => {
                for q in 0..n {
                    let rw = exp.ref_weight[q];
                    for l in 0..W {
                        let jw = rw * jac[l];
                        h[q][l] = lam * jw * u[q][l];
                        for a in 0..dim {
                            let mut acc = 0.0;
                            for m in 0..dim {
                                acc += k[l][a][m] * du[m][q][l];
                            }
                            g[a][q][l] = jw * acc;
                        }
                    }
                }
            }
            VolMetric::Deformed { jw, k } => {
                let jw = jw.as_chunks::<W>().0;
                let k = k.as_chunks::<W>().0;
                for q in 0..n {
                    for l in 0..W {
                        let j = jw[q][l];
                        h[q][l] = lam * j * u[q][l];
                        for a in 0..dim {
                            let mut acc = 0.0;
                            for m in 0..dim {
                                acc += k[(q * 3 + a) * 3 + m][l] * du[m][q][l];
                            }
                            g[a][q][l] = j * acc;
                        }
                    }
                }
            }
        }
        cost += (n * (2 + dim * dim)) as u64;
        let mut tmp = Vec::new();
        for (a, ga) in g.iter().enumerate() {
            cost += exp.phys_deriv_t_add_lanes(a, ga, &mut h, &mut tmp);
        }
        let mut out = vec![[0.0; W]; exp.ncoeffs];
        cost += exp.eval_t_lanes(&exp.quad, None, &h, &mut out, &mut s);
        let lanes = b.elems.len();
        let mut cost = cost * lanes as u64;
        let mut res = Vec::with_capacity(lanes);
        let mut s1 = Scratch::<1>::default();
        for (l, &e) in b.elems.iter().enumerate() {
            let coeffs: Vec<f64> = out.iter().map(|v| v[l]).collect();
            let mut faces = Vec::with_capacity(self.sides[e].len());
            for side in &self.sides[e] {
                let (fu, fd) = match &side.mode {
                    Mode::Gather(idx) => {
                        let fu: Vec<f64> = idx.iter().map(|&i| u[i][l]).collect();
                        let fd: Vec<f64> = idx
                            .iter()
                            .zip(&side.cn)
                            .map(|(&i, cn)| (0..dim).map(|k| cn[k] * du[k][i][l]).sum())
                            .collect();
                        (fu, fd)
                    }
                    Mode::Direct(t) => {
                        let np = t.total();
                        let xe = as_lanes(slices[l]);
                        let mut fu = vec![[0.0; 1]; np];
                        cost += exp.eval_lanes(t, None, xe, &mut fu, &mut s1);
                        let mut fd = vec![0.0; np];
                        let mut tmp = vec![[0.0; 1]; np];
                        for k in 0..dim {
                            cost += exp.eval_lanes(t, Some(k), xe, &mut tmp, &mut s1);
                            for q in 0..np {
                                fd[q] += side.cn[q][k] * tmp[q][0];
                            }
                        }
                        (fu.into_iter().map(|v| v[0]).collect(), fd)
                    }
                };
                faces.push(FaceData { u: fu, d: fd });
            }
            res.push((e, coeffs, faces));
        }
        (res, cost)
    }

    /// Neighbour values at this side's points.
    fn neighbour_values(&self, side: &Side) -> (Vec<f64>, Vec<f64>, u64) {
        let Link::Interior { elem, face, interp, perm } = &side.link else { unreachable!() };
        let fd = &self.published[*elem][*face];
        let mut cost = 0;
        let (u, d) = match interp {
            Some(m) => {
                cost += 2 * (m.rows * m.cols * m.rows.max(m.cols).pow(side.nt.saturating_sub(1) as u32)) as u64;
                (tensor_interp(m, side.nt, &fd.u).unwrap(), tensor_interp(m, side.nt, &fd.d).unwrap())
            }
            None => (fd.u.clone(), fd.d.clone()),
        };
        (perm.iter().map(|&k| u[k]).collect(), perm.iter().map(|&k| d[k]).collect(), cost)
    }

    fn phase2_batch<const W: usize>(&self, b: &Batch) -> (Vec<(usize, Vec<f64>)>, u64) {
        let exp = &self.exps[b.exp];
        let mut cost = 0;
        let fluxes: Vec<Vec<(Vec<f64>, Vec<f64>)>> = b
            .elems
            .iter()
            .map(|&e| {
                self.sides[e]
                    .iter()
                    .enumerate()
                    .map(|(f, side)| {
                        let me = &self.published[e][f];
                        let np = me.u.len();
                        let mut fv = vec![0.0; np];
                        let mut fg = vec![0.0; np];
                        match &side.link {
                            Link::Boundary(_) => {
                                for q in 0..np {
                                    fv[q] = (-me.d[q] + 2.0 * side.tau * me.u[q]) * side.wjs[q];
                                    fg[q] = -me.u[q] * side.wjs[q];
                                }
                            }
                            Link::Interior { .. } => {
                                let (up, dp, c) = self.neighbour_values(side);
                                cost += c;
                                for q in 0..np {
                                    let jump = me.u[q] - up[q];
                                    fv[q] = (-0.5 * (me.d[q] - dp[q]) + side.tau * jump) * side.wjs[q];
                                    fg[q] = -0.5 * jump * side.wjs[q];
                                }
                            }
                        }
                        cost += 6 * np as u64;
                        (fv, fg)
                    })
                    .collect()
            })
            .collect();
        let (out, c) = self.fluxes_to_coeffs::<W>(exp, &b.elems, &fluxes);
        (out, cost + c)
    }

    /// Integrates side fluxes against the test functions of each element in
    /// a batch: `sum_q phi_i fv_q + sum_q (grad phi_i . n) fg_q`.
    fn fluxes_to_coeffs<const W: usize>(&self, exp: &Expansion, elems: &[usize], fluxes: &[Vec<(Vec<f64>, Vec<f64>)>]) -> (Vec<(usize, Vec<f64>)>, u64) {
        let dim = exp.dim;
        let n = exp.nphys;
        let mut cost = 0;
        let mut vp = vec![[0.0; W]; n];
        let mut gp = vec![vec![[0.0; W]; n]; dim];
        let mut any_gather = false;
        let mut direct: Vec<Vec<f64>> = vec![vec![0.0; exp.ncoeffs]; elems.len()];
        let mut s1 = Scratch::<1>::default();
        for (l, &e) in elems.iter().enumerate() {
            for (side, (fv, fg)) in self.sides[e].iter().zip(&fluxes[l]) {
                match &side.mode {
                    Mode::Gather(idx) => {
                        any_gather = true;
                        for (q, &i) in idx.iter().enumerate() {
                            vp[i][l] += fv[q];
                            for k in 0..dim {
                                gp[k][i][l] += side.cn[q][k] * fg[q];
                            }
                        }
                    }
                    Mode::Direct(t) => {
                        let mut tmp = vec![[0.0; 1]; exp.ncoeffs];
                        cost += exp.eval_t_lanes(t, None, as_lanes(fv), &mut tmp, &mut s1);
                        for (d, v) in direct[l].iter_mut().zip(&tmp) {
                            *d += v[0];
                        }
                        for k in 0..dim {
                            let gk: Vec<f64> = fg.iter().zip(&side.cn).map(|(g, c)| g * c[k]).collect();
                            cost += exp.eval_t_lanes(t, Some(k), as_lanes(&gk), &mut tmp, &mut s1);
                            for (d, v) in direct[l].iter_mut().zip(&tmp) {
                                *d += v[0];
                            }
                        }
                    }
                }
            }
        }
        if any_gather {
            let mut s = Scratch::<W>::default();
            let mut tmp = Vec::new();
            let mut c = 0;
            for (k, g) in gp.iter().enumerate() {
                c += exp.phys_deriv_t_add_lanes(k, g, &mut vp, &mut tmp);
            }
            let mut out = vec![[0.0; W]; exp.ncoeffs];
            c += exp.eval_t_lanes(&exp.quad, None, &vp, &mut out, &mut s);
            cost += c * elems.len() as u64;
            for (l, d) in direct.iter_mut().enumerate() {
                for (dv, o) in d.iter_mut().zip(&out) {
                    *dv += o[l];
                }
            }
        }
        (elems.iter().copied().zip(direct).collect(), cost)
    }

    /// b = -(v, f) + 2 tau (v, g) - (grad v . n, g) on Dirichlet faces.
    pub fn rhs_assemble(&self, case: &ManufacturedCase, bcs: &BoundaryConditions) -> Result<Vec<f64>> {
        let f = |x: [f64; 3]| forcing_eval(case, x);
        self.rhs_with(&f, bcs)
    }

    pub fn rhs_with(&self, f: &(dyn Fn([f64; 3]) -> f64 + Sync), bcs: &BoundaryConditions) -> Result<Vec<f64>> {
        for s in self.sides.iter().flatten() {
            if let Link::Boundary(tag) = &s.link {
                if !bcs.by_tag.contains_key(tag) {
                    return Err(Error::MissingBoundaryCondition(tag.clone()));
                }
            }
        }
        let mut b = vec![0.0; self.ndof];
        for e in 0..self.mesh.elements.len() {
            let exp = self.exp_of(e);
            let fe: Vec<f64> = self.geom[e].coords.iter().zip(&self.jw[e]).map(|(x, w)| -f(*x) * w).collect();
            let vol = exp.iproduct(&fe, &vec![1.0; exp.nphys])?;
            let fluxes: Vec<(Vec<f64>, Vec<f64>)> = self.sides[e]
                .iter()
                .map(|side| match &side.link {
                    Link::Boundary(tag) => {
                        let g = &bcs.by_tag[tag];
                        let gv: Vec<f64> = side.coords.iter().map(|x| g(*x)).collect();
                        let fv = gv.iter().zip(&side.wjs).map(|(g, w)| 2.0 * side.tau * g * w).collect();
                        let fg = gv.iter().zip(&side.wjs).map(|(g, w)| -g * w).collect();
                        (fv, fg)
                    }
                    Link::Interior { .. } => (vec![0.0; side.wjs.len()], vec![0.0; side.wjs.len()]),
                })
                .collect();
            let (r, _) = self.fluxes_to_coeffs::<1>(exp, &[e], &[fluxes]);
            for ((bv, v), s) in b[self.elem_range(e)].iter_mut().zip(&vol).zip(&r[0].1) {
                *bv = v + s;
            }
        }
        Ok(b)
    }

    /// Element-wise L2 projection of `f`.
    pub fn project(&self, f: &(dyn Fn([f64; 3]) -> f64 + Sync)) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.ndof];
        for e in 0..self.mesh.elements.len() {
            let exp = self.exp_of(e);
            let nc = exp.ncoeffs;
            let mut phi = Vec::with_capacity(nc);
            for i in 0..nc {
                let mut c = vec![0.0; nc];
                c[i] = 1.0;
                phi.push(exp.bwd_trans(&c)?);
            }
            let jw = &self.jw[e];
            let m = nalgebra::DMatrix::from_fn(nc, nc, |i, j| (0..exp.nphys).map(|q| phi[i][q] * phi[j][q] * jw[q]).sum());
            let fx: Vec<f64> = self.geom[e].coords.iter().map(|x| f(*x)).collect();
            let rhs = nalgebra::DVector::from_fn(nc, |i, _| (0..exp.nphys).map(|q| phi[i][q] * fx[q] * jw[q]).sum());
            let sol = m.cholesky().ok_or_else(|| Error::Invalid(format!("mass matrix of element {e} not SPD")))?.solve(&rhs);
            out[self.elem_range(e)].copy_from_slice(sol.as_slice());
        }
        Ok(out)
    }

    /// sqrt(sum_e int (u_h - u)^2) with two extra points per direction.
    pub fn l2_error(&self, x: &[f64], exact: &(dyn Fn([f64; 3]) -> f64 + Sync)) -> Result<f64> {
        let mut cache: HashMap<ExpansionKey, Expansion> = HashMap::new();
        let mut sum = 0.0;
        for e in 0..self.mesh.elements.len() {
            let key = ExpansionKey { nq: self.keys[self.elem_exp[e]].nq + 2, augmented: false, ..self.keys[self.elem_exp[e]] };
            if let std::collections::hash_map::Entry::Vacant(v) = cache.entry(key) {
                v.insert(Expansion::new(key)?);
            }
            let exp = &cache[&key];
            let g = element_geometry(&self.mesh, e, exp)?;
            let uh = exp.bwd_trans(&x[self.elem_range(e)])?;
            for q in 0..exp.nphys {
                let d = uh[q] - exact(g.coords[q]);
                sum += d * d * exp.ref_weight[q] * g.jac_at(q);
            }
        }
        Ok(sum.sqrt())
    }

    /// Total number of faces evaluated by gathering vs directly.
    pub fn face_path_counts(&self) -> (usize, usize) {
        let g = self.sides.iter().flatten().filter(|s| matches!(s.mode, Mode::Gather(_))).count();
        (g, self.sides.iter().flatten().count() - g)
    }

    /// Certificate report: one line per non-conforming interface.
    pub fn certificate_report(&self) -> String {
        let mut s = String::new();
        for c in &self.couplings {
            let it = &self.mesh.interfaces[c.iface];
            s.push_str(&format!(
                "interface {} elements {}-{} coupling {:?} {}\n",
                c.iface,
                it.left.0,
                it.right.map_or(0, |r| r.0),
                c.coupling,
                c.certificate
            ));
        }
        s
    }

    /// Penalty of every side, per element and face.
    pub fn penalties(&self) -> Vec<Vec<f64>> {
        self.sides.iter().map(|v| v.iter().map(|s| s.tau).collect()).collect()
    }
}

fn cn_of(deta_dx: &[[[f64; 3]; 3]], normal: &[[f64; 3]]) -> Vec<[f64; 3]> {
    deta_dx
        .iter()
        .zip(normal)
        .map(|(m, n)| {
            let mut c = [0.0; 3];
            for (k, ck) in c.iter_mut().enumerate() {
                *ck = m[k][0] * n[0] + m[k][1] * n[1] + m[k][2] * n[2];
            }
            c
        })
        .collect()
}

/// (d eta / dx)(d eta / dx)^T restricted to `dim`.
fn kmat(m: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    let mut k = [[0.0; 3]; 3];
    for a in 0..dim {
        for b in 0..dim {
            k[a][b] = (0..dim).map(|j| m[a][j] * m[b][j]).sum();
        }
    }
    k
}
