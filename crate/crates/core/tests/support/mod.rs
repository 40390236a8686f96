//! Test-side oracles written from the textbook basis definitions, kept
//! independent of the production kernels.

#![allow(dead_code)]

use dgsipg_core::dense::Mat;
use dgsipg_core::polylib::quad_rule;
use dgsipg_core::stdregions::{BasisKind, Expansion, Shape};

fn binom(n: i64, k: i64) -> f64 {
    if k < 0 || k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Jacobi polynomial from the explicit finite sum (integer parameters).
pub fn jacobi(a: i64, b: i64, n: usize, x: f64) -> f64 {
    let n = n as i64;
    (0..=n)
        .map(|s| binom(n + a, n - s) * binom(n + b, s) * ((x - 1.0) / 2.0).powi(s as i32) * ((x + 1.0) / 2.0).powi((n - s) as i32))
        .sum()
}

pub fn jacobi_d(a: i64, b: i64, n: usize, x: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    0.5 * (n as i64 + a + b + 1) as f64 * jacobi(a + 1, b + 1, n - 1, x)
}

pub fn lagrange(nodes: &[f64], j: usize, x: f64) -> f64 {
    nodes.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, &xk)| (x - xk) / (nodes[j] - xk)).product()
}

pub fn lagrange_d(nodes: &[f64], j: usize, x: f64) -> f64 {
    let mut s = 0.0;
    for (m, &xm) in nodes.iter().enumerate() {
        if m == j {
            continue;
        }
        let mut p = 1.0 / (nodes[j] - xm);
        for (k, &xk) in nodes.iter().enumerate() {
            if k != j && k != m {
                p *= (x - xk) / (nodes[j] - xk);
            }
        }
        s += p;
    }
    s
}

fn mod1d(np: usize, i: usize, x: f64) -> (f64, f64) {
    if i == 0 {
        ((1.0 - x) / 2.0, -0.5)
    } else if i == np - 1 {
        ((1.0 + x) / 2.0, 0.5)
    } else {
        let b = (1.0 - x * x) / 4.0;
        let p = jacobi(1, 1, i - 1, x);
        (b * p, -x / 2.0 * p + b * jacobi_d(1, 1, i - 1, x))
    }
}

fn legendre_n(i: usize, x: f64) -> (f64, f64) {
    let s = ((2 * i + 1) as f64 / 2.0).sqrt();
    (s * jacobi(0, 0, i, x), s * jacobi_d(0, 0, i, x))
}

/// 1D basis function `i` of `np` modes and its derivative.
pub fn basis1d(kind: BasisKind, np: usize, nodes: &[f64], i: usize, x: f64) -> (f64, f64) {
    match kind {
        BasisKind::ModifiedModal => mod1d(np, i, x),
        BasisKind::Orthogonal => legendre_n(i, x),
        BasisKind::Lagrange => {
            if np == 1 {
                (1.0, 0.0)
            } else {
                (lagrange(nodes, i, x), lagrange_d(nodes, i, x))
            }
        }
    }
}

/// Orthonormal triangle mode (i, j) in collapsed coordinates.
pub fn dubiner(i: usize, j: usize, e1: f64, e2: f64) -> (f64, [f64; 2]) {
    let (a, da) = legendre_n(i, e1);
    let h = (1.0 - e2) / 2.0;
    let hi = h.powi(i as i32);
    let dhi = if i == 0 { 0.0 } else { -0.5 * i as f64 * h.powi(i as i32 - 1) };
    let s = ((i + j + 1) as f64).sqrt();
    let p = jacobi(2 * i as i64 + 1, 0, j, e2);
    let dp = jacobi_d(2 * i as i64 + 1, 0, j, e2);
    let b = s * hi * p;
    let db = s * (dhi * p + hi * dp);
    (a * b, [da * b, a * db])
}

fn mod_tri_factors(i: usize, j: usize, e1: f64, e2: f64) -> (f64, f64, f64, f64) {
    let (a, da) = match i {
        0 => ((1.0 - e1) / 2.0, -0.5),
        1 => ((1.0 + e1) / 2.0, 0.5),
        _ => mod1d(i + 1, i - 1, e1),
    };
    let h = (1.0 - e2) / 2.0;
    let (b, db) = if i == 0 {
        match j {
            0 => ((1.0 - e2) / 2.0, -0.5),
            1 => ((1.0 + e2) / 2.0, 0.5),
            _ => mod1d(j + 1, j - 1, e2),
        }
    } else {
        let hi = h.powi(i as i32);
        let dhi = -0.5 * i as f64 * h.powi(i as i32 - 1);
        if j == 0 {
            (hi, dhi)
        } else {
            let g = (1.0 + e2) / 2.0;
            let p = jacobi(2 * i as i64 - 1, 1, j - 1, e2);
            let dp = jacobi_d(2 * i as i64 - 1, 1, j - 1, e2);
            (hi * g * p, dhi * g * p + hi * 0.5 * p + hi * g * dp)
        }
    };
    (a, da, b, db)
}

/// Modified triangle mode (i, j); the (0, 1) mode is the top vertex mode.
pub fn mod_tri(i: usize, j: usize, e1: f64, e2: f64) -> (f64, [f64; 2]) {
    if i == 0 && j == 1 {
        // vertex mode (1 + eta2) / 2, constant along eta1
        return ((1.0 + e2) / 2.0, [0.0, 0.5]);
    }
    let (a, da, b, db) = mod_tri_factors(i, j, e1, e2);
    (a * b, [da * b, a * db])
}

pub fn tri_modes(np: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::new();
    for i in 0..np {
        for j in 0..np - i {
            v.push((i, j));
        }
    }
    v
}

fn collapse(xi: [f64; 2]) -> [f64; 2] {
    let e1 = if xi[1] == 1.0 { -1.0 } else { 2.0 * (1.0 + xi[0]) / (1.0 - xi[1]) - 1.0 };
    [e1, xi[1]]
}

/// Dense oracle for one expansion.
pub struct Oracle {
    pub shape: Shape,
    pub kind: BasisKind,
    pub np: usize,
    nodes1d: Vec<f64>,
    /// Cardinal map for the triangle Lagrange basis: column m holds the
    /// Dubiner coefficients of nodal mode m.
    tri_nodal: Option<nalgebra::DMatrix<f64>>,
}

impl Oracle {
    pub fn new(exp: &Expansion) -> Self {
        let k = exp.key;
        let nodes1d = if k.basis == BasisKind::Lagrange && k.shape != Shape::Tri && k.np > 1 {
            quad_rule(k.rule, k.np).unwrap().points
        } else {
            vec![]
        };
        let tri_nodal = (k.shape == Shape::Tri && k.basis == BasisKind::Lagrange).then(|| {
            let nodes = exp.nodes.clone().expect("triangle nodes");
            let modes = tri_modes(k.np);
            let n = modes.len();
            let v = nalgebra::DMatrix::from_fn(n, n, |r, c| {
                let eta = collapse(nodes[r]);
                dubiner(modes[c].0, modes[c].1, eta[0], eta[1]).0
            });
            v.try_inverse().expect("invertible Vandermonde")
        });
        Oracle { shape: k.shape, kind: k.basis, np: k.np, nodes1d, tri_nodal }
    }

    pub fn ncoeffs(&self) -> usize {
        match self.shape {
            Shape::Tri => self.np * (self.np + 1) / 2,
            s => self.np.pow(s.dim() as u32),
        }
    }

    /// Value and collapsed-coordinate gradient of mode `m` at `eta`.
    pub fn mode(&self, m: usize, eta: &[f64]) -> (f64, [f64; 3]) {
        let np = self.np;
        match self.shape {
            Shape::Tri => {
                let modes = tri_modes(np);
                match (self.kind, &self.tri_nodal) {
                    (BasisKind::Lagrange, Some(c)) => {
                        let mut v = 0.0;
                        let mut g = [0.0; 3];
                        for (k, &(i, j)) in modes.iter().enumerate() {
                            let (a, d) = dubiner(i, j, eta[0], eta[1]);
                            v += c[(k, m)] * a;
                            g[0] += c[(k, m)] * d[0];
                            g[1] += c[(k, m)] * d[1];
                        }
                        (v, g)
                    }
                    (BasisKind::Orthogonal, _) => {
                        let (v, d) = dubiner(modes[m].0, modes[m].1, eta[0], eta[1]);
                        (v, [d[0], d[1], 0.0])
                    }
                    _ => {
                        let (v, d) = mod_tri(modes[m].0, modes[m].1, eta[0], eta[1]);
                        (v, [d[0], d[1], 0.0])
                    }
                }
            }
            s => {
                let dim = s.dim();
                let idx = [m % np, (m / np) % np, m / (np * np)];
                let f: Vec<(f64, f64)> = (0..dim).map(|d| basis1d(self.kind, np, &self.nodes1d, idx[d], eta[d])).collect();
                let v = f.iter().map(|x| x.0).product();
                let mut g = [0.0; 3];
                for (k, gk) in g.iter_mut().enumerate().take(dim) {
                    *gk = (0..dim).map(|d| if d == k { f[d].1 } else { f[d].0 }).product();
                }
                (v, g)
            }
        }
    }

    /// Value and derivative matrices on the tensor grid of `pts`, first
    /// direction fastest.
    pub fn dense(&self, pts: &[Vec<f64>]) -> (Mat, Vec<Mat>) {
        let dim = self.shape.dim();
        let mut n = [1usize; 3];
        for d in 0..dim {
            n[d] = pts[d].len();
        }
        let total = n[0] * n[1] * n[2];
        let nc = self.ncoeffs();
        let mut b = Mat::zeros(total, nc);
        let mut ds = vec![Mat::zeros(total, nc); dim];
        for q in 0..total {
            let idx = [q % n[0], (q / n[0]) % n[1], q / (n[0] * n[1])];
            let eta: Vec<f64> = (0..dim).map(|d| pts[d][idx[d]]).collect();
            for m in 0..nc {
                let (v, g) = self.mode(m, &eta);
                b[(q, m)] = v;
                for k in 0..dim {
                    ds[k][(q, m)] = g[k];
                }
            }
        }
        (b, ds)
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

/// Deterministic pseudo-random vector in [-1, 1].
pub fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

use dgsipg_core::polylib::RuleKind;
use dgsipg_core::stdregions::{as_lanes, deinterleave, flatten, interleave, ExpansionKey, Scratch};
use dgsipg_core::trace::trace_phys_eval;

pub const SHAPES: [Shape; 3] = [Shape::Quad, Shape::Tri, Shape::Hex];
pub const BASES: [BasisKind; 3] = [BasisKind::ModifiedModal, BasisKind::Orthogonal, BasisKind::Lagrange];
pub const RULES: [RuleKind; 2] = [RuleKind::GaussLegendre, RuleKind::GaussLobatto];

pub fn all_keys(nps: std::ops::RangeInclusive<usize>) -> Vec<ExpansionKey> {
    let mut v = Vec::new();
    for shape in SHAPES {
        for basis in BASES {
            for rule in RULES {
                for np in nps.clone() {
                    v.push(ExpansionKey::new(shape, basis, np, np + 1, rule));
                }
            }
        }
    }
    v
}

fn matvec_t(m: &Mat, x: &[f64]) -> Vec<f64> {
    m.transpose().matvec(x)
}

/// Largest relative deviation of BwdTrans, IProduct, PhysDeriv and face
/// evaluation from the dense oracle for one expansion.
pub fn kernel_deviation(key: ExpansionKey, seed: u64) -> f64 {
    let exp = Expansion::new(key).unwrap();
    let o = Oracle::new(&exp);
    let (b, ds) = o.dense(&exp.points);
    let c = pseudo_random(exp.ncoeffs, seed);
    let mut worst = 0.0f64;

    let u = exp.bwd_trans(&c).unwrap();
    let u_ref = b.matvec(&c);
    worst = worst.max(rel_err(&u, &u_ref));

    let f = pseudo_random(exp.nphys, seed + 1);
    let ip = exp.iproduct(&f, &exp.ref_weight).unwrap();
    let fw: Vec<f64> = f.iter().zip(&exp.ref_weight).map(|(a, w)| a * w).collect();
    worst = worst.max(rel_err(&ip, &matvec_t(&b, &fw)));

    let d = exp.phys_deriv(&u_ref).unwrap();
    for (k, dk) in d.iter().enumerate() {
        worst = worst.max(rel_err(dk, &ds[k].matvec(&c)));
    }

    let t = quad_rule(RuleKind::GaussLegendre, key.nq + 1).unwrap().points;
    for (fi, fd) in key.shape.faces().iter().enumerate() {
        let ev = trace_phys_eval(&exp, &c, fi, &t).unwrap();
        let mut pts = vec![Vec::new(); key.shape.dim()];
        pts[fd.dir] = vec![fd.side];
        for &td in fd.tangential {
            pts[td] = t.clone();
        }
        let (fb, fds) = o.dense(&pts);
        worst = worst.max(rel_err(&ev.u, &fb.matvec(&c)));
        for (k, dk) in ev.du.iter().enumerate() {
            worst = worst.max(rel_err(dk, &fds[k].matvec(&c)));
        }
    }
    worst
}

/// Largest absolute difference between the interleaved W-lane kernels and
/// the scalar kernels, over three elements packed into one batch.
pub fn lane_deviation<const W: usize>(key: ExpansionKey, seed: u64) -> f64 {
    let exp = Expansion::new(key).unwrap();
    let count = 3.min(W);
    let cs: Vec<Vec<f64>> = (0..count).map(|l| pseudo_random(exp.ncoeffs, seed + l as u64)).collect();
    let ps: Vec<Vec<f64>> = (0..count).map(|l| pseudo_random(exp.nphys, seed + 10 + l as u64)).collect();
    let cref: Vec<&[f64]> = cs.iter().map(|v| v.as_slice()).collect();
    let pref: Vec<&[f64]> = ps.iter().map(|v| v.as_slice()).collect();
    let cl = interleave::<W>(&cref);
    let pl = interleave::<W>(&pref);
    let mut s = Scratch::<W>::default();
    let mut s1 = Scratch::<1>::default();
    let mut worst = 0.0f64;
    let cmp = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    for deriv in std::iter::once(None).chain((0..exp.dim).map(Some)) {
        let mut out = vec![[0.0; W]; exp.nphys];
        exp.eval_lanes(&exp.quad, deriv, &cl, &mut out, &mut s);
        let mut back = vec![[0.0; W]; exp.ncoeffs];
        exp.eval_t_lanes(&exp.quad, deriv, &pl, &mut back, &mut s);
        let outs = deinterleave(&out, count);
        let backs = deinterleave(&back, count);
        for l in 0..count {
            let mut o1 = vec![[0.0; 1]; exp.nphys];
            exp.eval_lanes(&exp.quad, deriv, as_lanes(&cs[l]), &mut o1, &mut s1);
            worst = worst.max(cmp(&outs[l], &flatten(o1)));
            let mut b1 = vec![[0.0; 1]; exp.ncoeffs];
            exp.eval_t_lanes(&exp.quad, deriv, as_lanes(&ps[l]), &mut b1, &mut s1);
            worst = worst.max(cmp(&backs[l], &flatten(b1)));
        }
    }
    for dir in 0..exp.dim {
        let mut out = vec![[0.0; W]; exp.nphys];
        exp.phys_deriv_lanes(dir, &pl, &mut out);
        let outs = deinterleave(&out, count);
        for l in 0..count {
            let mut o1 = vec![[0.0; 1]; exp.nphys];
            exp.phys_deriv_lanes(dir, as_lanes(&ps[l]), &mut o1);
            worst = worst.max(cmp(&outs[l], &flatten(o1)));
        }
    }
    worst
}

/// Largest deviation between the imprint route and the explicit mortar
/// L2-projection route on face `face`, for `nvec` random coefficient
/// vectors. The mortar space is the tensor Legendre space of `nm` modes per
/// face direction, sampled at the `nm`-point Gauss-Legendre mortar grid.
pub fn mortar_deviation(key: ExpansionKey, face: usize, nm: usize, nvec: usize, seed: u64) -> f64 {
    use dgsipg_core::trace::{mortar_imprint, Mortar};
    let exp = Expansion::new(key).unwrap();
    let o = Oracle::new(&exp);
    let fd = key.shape.faces()[face];
    let nt = fd.tangential.len();
    let mortar = Mortar::new(RuleKind::GaussLegendre, nm).unwrap();
    // exact integration grid on the face
    let g = quad_rule(RuleKind::GaussLegendre, key.np + nm + 2).unwrap();
    let tensor = |pts: &[f64]| -> Vec<Vec<f64>> {
        let mut v = vec![Vec::new(); key.shape.dim()];
        v[fd.dir] = vec![fd.side];
        for &d in fd.tangential {
            v[d] = pts.to_vec();
        }
        v
    };
    let (phi_g, _) = o.dense(&tensor(&g.points));
    let (phi_m, _) = o.dense(&tensor(&mortar.points));
    let nmodes = nm.pow(nt as u32);
    let ng = g.points.len();
    // mortar basis values on a tensor grid of 1D points
    let psi = |pts: &[f64]| -> Mat {
        let n = pts.len();
        Mat::from_fn(n.pow(nt as u32), nmodes, |q, k| {
            let (q0, q1) = (q % n, q / n);
            let (k0, k1) = (k % nm, k / nm);
            let a = legendre_n(k0, pts[q0]).0;
            if nt == 2 {
                a * legendre_n(k1, pts[q1]).0
            } else {
                a
            }
        })
    };
    let psi_g = psi(&g.points);
    let psi_m = psi(&mortar.points);
    let w: Vec<f64> = (0..ng.pow(nt as u32))
        .map(|q| if nt == 2 { g.weights[q % ng] * g.weights[q / ng] } else { g.weights[q] })
        .collect();
    let mass = nalgebra::DMatrix::from_fn(nmodes, nmodes, |k, l| (0..w.len()).map(|q| psi_g[(q, k)] * psi_g[(q, l)] * w[q]).sum());
    let s = nalgebra::DMatrix::from_fn(nmodes, exp.ncoeffs, |k, j| (0..w.len()).map(|q| psi_g[(q, k)] * phi_g[(q, j)] * w[q]).sum());
    let proj: nalgebra::DMatrix<f64> = mass.lu().solve(&s).expect("mortar mass matrix");
    let mut worst = 0.0f64;
    for v in 0..nvec {
        let c = pseudo_random(exp.ncoeffs, seed + v as u64);
        let imprint = mortar_imprint(&exp, &c, face, &mortar).unwrap();
        let cm: nalgebra::DVector<f64> = &proj * nalgebra::DVector::from_column_slice(&c);
        let projected = psi_m.matvec(cm.as_slice());
        worst = worst.max(rel_err(&imprint, &projected));
        // sanity: the imprint values are the trace values at the mortar points
        worst = worst.max(rel_err(&imprint, &phi_m.matvec(&c)));
    }
    worst
}

/// Dense SIPG matrix assembled directly from the primal bilinear form on a
/// mesh of axis-aligned boxes (segments or rectangles) with one tensor
/// expansion per element:
///
/// sum_K (grad u, grad v) + lambda (u, v)
/// + sum_interior ( -{grad u}.[v] - {grad v}.[u] + tau [u][v] )
/// + sum_boundary ( -(grad u.n) v - (grad v.n) u + 2 tau u v ).
pub fn primal_sipg_matrix(mesh: &dgsipg_core::mesh::Mesh, exps: &[&Expansion], offsets: &[usize], lambda: f64, c_tau: f64) -> Mat {
    let dim = mesh.dim;
    let n = *offsets.last().unwrap();
    let mut a = Mat::zeros(n, n);
    let g = quad_rule(RuleKind::GaussLegendre, 10).unwrap();
    let boxes: Vec<([f64; 3], [f64; 3])> = (0..mesh.elements.len())
        .map(|e| {
            let c = mesh.element_coords(e);
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for d in 0..dim {
                lo[d] = c.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
                hi[d] = c.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            }
            (lo, hi)
        })
        .collect();
    let oracles: Vec<Oracle> = exps.iter().map(|e| Oracle::new(e)).collect();
    let volume = |e: usize| (0..dim).map(|d| boxes[e].1[d] - boxes[e].0[d]).product::<f64>();
    // physical values and gradients of every mode of element e at x
    let eval = |e: usize, x: [f64; 3]| -> Vec<(f64, [f64; 3])> {
        let (lo, hi) = boxes[e];
        let xi: Vec<f64> = (0..dim).map(|d| (2.0 * (x[d] - lo[d]) / (hi[d] - lo[d]) - 1.0).clamp(-1.0, 1.0)).collect();
        (0..oracles[e].ncoeffs())
            .map(|m| {
                let (v, gr) = oracles[e].mode(m, &xi);
                let mut p = [0.0; 3];
                for d in 0..dim {
                    p[d] = gr[d] * 2.0 / (hi[d] - lo[d]);
                }
                (v, p)
            })
            .collect()
    };
    let dot = |a: &[f64; 3], b: &[f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    // volume terms
    for e in 0..mesh.elements.len() {
        let (lo, hi) = boxes[e];
        let npts = g.points.len().pow(dim as u32);
        for q in 0..npts {
            let mut x = [0.0; 3];
            let mut w = 1.0;
            let mut r = q;
            for d in 0..dim {
                let k = r % g.points.len();
                r /= g.points.len();
                x[d] = lo[d] + (hi[d] - lo[d]) * (g.points[k] + 1.0) / 2.0;
                w *= g.weights[k] * (hi[d] - lo[d]) / 2.0;
            }
            let phi = eval(e, x);
            for (i, pi) in phi.iter().enumerate() {
                for (j, pj) in phi.iter().enumerate() {
                    a[(offsets[e] + i, offsets[e] + j)] += w * (dot(&pi.1, &pj.1) + lambda * pi.0 * pj.0);
                }
            }
        }
    }
    // face terms
    for it in &mesh.interfaces {
        let (le, lf) = it.left;
        let verts = mesh.face_verts(le, lf);
        let p: Vec<[f64; 3]> = verts.iter().map(|&v| mesh.vertices[v]).collect();
        let fd = exps[le].key.shape.faces()[lf];
        let mut nl = [0.0; 3];
        nl[fd.dir] = fd.side;
        let (pts, wts): (Vec<[f64; 3]>, Vec<f64>) = if dim == 1 {
            (vec![p[0]], vec![1.0])
        } else {
            let len = ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt();
            g.points
                .iter()
                .zip(&g.weights)
                .map(|(s, w)| {
                    let t = (s + 1.0) / 2.0;
                    ([p[0][0] + t * (p[1][0] - p[0][0]), p[0][1] + t * (p[1][1] - p[0][1]), 0.0], w * len / 2.0)
                })
                .unzip()
        };
        let area: f64 = wts.iter().sum();
        let np_max = |e: usize| exps[e].key.np;
        match it.right {
            None => {
                let tau = c_tau * ((np_max(le) - 1).max(1) as f64).powi(2) / (volume(le) / area);
                for (x, w) in pts.iter().zip(&wts) {
                    let phi = eval(le, *x);
                    for (i, pi) in phi.iter().enumerate() {
                        for (j, pj) in phi.iter().enumerate() {
                            let v = -dot(&pj.1, &nl) * pi.0 - dot(&pi.1, &nl) * pj.0 + 2.0 * tau * pi.0 * pj.0;
                            a[(offsets[le] + i, offsets[le] + j)] += w * v;
                        }
                    }
                }
            }
            Some((re, _)) => {
                let p_max = np_max(le).max(np_max(re));
                let tau = c_tau * ((p_max - 1).max(1) as f64).powi(2) / (volume(le).min(volume(re)) / area);
                for (x, w) in pts.iter().zip(&wts) {
                    // jump [u] = u_l - u_r along n_l; average of gradients along n_l
                    let sides = [(le, 1.0, eval(le, *x)), (re, -1.0, eval(re, *x))];
                    for (ei, si, phi_i) in &sides {
                        for (ej, sj, phi_j) in &sides {
                            for (i, pi) in phi_i.iter().enumerate() {
                                for (j, pj) in phi_j.iter().enumerate() {
                                    let v = -0.5 * dot(&pj.1, &nl) * si * pi.0 - 0.5 * dot(&pi.1, &nl) * sj * pj.0 + tau * si * sj * pi.0 * pj.0;
                                    a[(offsets[*ei] + i, offsets[*ej] + j)] += w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    a
}

pub fn mat_rel_diff(a: &Mat, b: &Mat) -> f64 {
    let mut d = 0.0f64;
    let mut s = 0.0f64;
    for i in 0..a.rows {
        for j in 0..a.cols {
            d = d.max((a[(i, j)] - b[(i, j)]).abs());
            s = s.max(b[(i, j)].abs());
        }
    }
    d / s
}
