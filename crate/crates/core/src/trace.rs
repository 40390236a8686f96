//! Element/trace coupling: gather and scatter with interpolation and
//! orientation permutation, direct evaluation and inner products on a face
//! grid, the mortar imprint route, and point-to-point symmetry certificates.

use std::fmt;

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::polylib::{lagrange_interp_matrix, quad_rule, RuleKind};
use crate::stdregions::{apply_dir, as_lanes, flatten, Expansion, Scratch, Tables};

pub use crate::mesh::{grid_perm, inverse_orientation, map_param, n_orientations};

/// Applies a 1D matrix along every one of the `nt` face parameters of data
/// laid out first parameter fastest.
pub fn tensor_interp(m: &Mat, nt: usize, data: &[f64]) -> Result<Vec<f64>> {
    let n_in = m.cols.pow(nt as u32);
    if data.len() != n_in {
        return Err(Error::SizeMismatch { expected: n_in, got: data.len() });
    }
    let mut cur: Vec<[f64; 1]> = as_lanes(data).to_vec();
    let mut shape = [1usize; 3];
    for s in shape.iter_mut().take(nt) {
        *s = m.cols;
    }
    for d in 0..nt {
        let mut os = shape;
        os[d] = m.rows;
        let mut next = vec![[0.0; 1]; os.iter().product()];
        apply_dir(m, false, shape, d, &cur, &mut next);
        cur = next;
        shape = os;
    }
    Ok(flatten(cur))
}

/// Gathers the face values of an element physical array, interpolates them
/// from the element's face grid to a target grid (in the element's face
/// parameters) and permutes them into the target ordering:
/// `out[p] = interp(gathered)[perm[p]]`.
pub fn gathr_interp(elem_phys: &[f64], idx: &[usize], interp: Option<&Mat>, nt: usize, perm: Option<&[usize]>) -> Result<Vec<f64>> {
    let mut g = Vec::with_capacity(idx.len());
    for &i in idx {
        g.push(*elem_phys.get(i).ok_or(Error::SizeMismatch { expected: i + 1, got: elem_phys.len() })?);
    }
    let v = match interp {
        Some(m) => tensor_interp(m, nt, &g)?,
        None => g,
    };
    Ok(match perm {
        Some(p) => p.iter().map(|&k| v[k]).collect(),
        None => v,
    })
}

/// Scatters trace data into an element physical array of length `nphys`.
/// `trace` lives on a grid expressed in the adjacent side's face parameters;
/// it is interpolated to the local face grid when `interp` is set, then
/// permuted (`local[q] = trace'[perm[q]]`) and written at `idx[q]`.
pub fn scatr_interp(trace: &[f64], interp: Option<&Mat>, nt: usize, perm: Option<&[usize]>, idx: &[usize], nphys: usize) -> Result<Vec<f64>> {
    let v = match interp {
        Some(m) => tensor_interp(m, nt, trace)?,
        None => trace.to_vec(),
    };
    let local: Vec<f64> = match perm {
        Some(p) => p.iter().map(|&k| v[k]).collect(),
        None => v,
    };
    if local.len() != idx.len() {
        return Err(Error::MissingInterp(idx.len()));
    }
    let mut out = vec![0.0; nphys];
    for (q, &i) in idx.iter().enumerate() {
        out[i] += local[q];
    }
    Ok(out)
}

/// Face values and collapsed-coordinate derivatives evaluated straight from
/// the coefficients on a face grid.
#[derive(Debug, Clone)]
pub struct FaceEval {
    pub u: Vec<f64>,
    pub du: Vec<Vec<f64>>,
    /// Multiply-adds of the value evaluation.
    pub madds: u64,
    /// Multiply-adds including the derivative evaluations.
    pub madds_total: u64,
}

/// Evaluates the expansion and its derivatives on face `face` at the tensor
/// grid built on the 1D face points `t`.
pub fn trace_phys_eval(exp: &Expansion, coeffs: &[f64], face: usize, t: &[f64]) -> Result<FaceEval> {
    let tables = exp.face_tables(face, t)?;
    trace_phys_eval_tables(exp, coeffs, &tables)
}

pub fn trace_phys_eval_tables(exp: &Expansion, coeffs: &[f64], tables: &Tables) -> Result<FaceEval> {
    if coeffs.len() != exp.ncoeffs {
        return Err(Error::SizeMismatch { expected: exp.ncoeffs, got: coeffs.len() });
    }
    let n = tables.total();
    let mut s = Scratch::<1>::default();
    let mut u = vec![[0.0; 1]; n];
    let madds = exp.eval_lanes(tables, None, as_lanes(coeffs), &mut u, &mut s);
    let mut total = madds;
    let mut du = Vec::new();
    for k in 0..exp.dim {
        let mut d = vec![[0.0; 1]; n];
        total += exp.eval_lanes(tables, Some(k), as_lanes(coeffs), &mut d, &mut s);
        du.push(flatten(d));
    }
    Ok(FaceEval { u: flatten(u), du, madds, madds_total: total })
}

/// Inner product on a face grid: `c_i = sum_q phi_i(q) fv_q + sum_k sum_q
/// d_k phi_i(q) fg_k,q`, the weights and surface metric already folded into
/// the flux arrays.
pub fn trace_iproduct(exp: &Expansion, tables: &Tables, fv: &[f64], fg: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = tables.total();
    if fv.len() != n {
        return Err(Error::SizeMismatch { expected: n, got: fv.len() });
    }
    let mut s = Scratch::<1>::default();
    let mut out = vec![[0.0; 1]; exp.ncoeffs];
    exp.eval_t_lanes(tables, None, as_lanes(fv), &mut out, &mut s);
    let mut tmp = vec![[0.0; 1]; exp.ncoeffs];
    for (k, g) in fg.iter().enumerate() {
        if g.len() != n {
            return Err(Error::SizeMismatch { expected: n, got: g.len() });
        }
        exp.eval_t_lanes(tables, Some(k), as_lanes(g), &mut tmp, &mut s);
        for (o, t) in out.iter_mut().zip(&tmp) {
            o[0] += t[0];
        }
    }
    Ok(flatten(out))
}

/// A mortar grid on one face: 1D points over the parameter interval
/// `[lo, hi]` of the face.
#[derive(Debug, Clone)]
pub struct Mortar {
    pub points: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

impl Mortar {
    pub fn new(kind: RuleKind, n: usize) -> Result<Self> {
        Ok(Mortar { points: quad_rule(kind, n)?.points, lo: -1.0, hi: 1.0 })
    }
}

/// Imprints the mortar points onto the element and evaluates the local
/// solution there.
pub fn mortar_imprint(exp: &Expansion, coeffs: &[f64], face: usize, mortar: &Mortar) -> Result<Vec<f64>> {
    if mortar.lo != -1.0 || mortar.hi != 1.0 {
        return Err(Error::MisalignedMortar);
    }
    Ok(trace_phys_eval(exp, coeffs, face, &mortar.points)?.u)
}

/// Order and quadrature of one side of an interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SideOrder {
    pub np: usize,
    pub nq: usize,
    pub rule: RuleKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Certificate {
    pub left: SideOrder,
    pub right: SideOrder,
    pub p_geom: usize,
    /// Both sides evaluate the flux on the same points.
    pub same_grid: bool,
    /// The coarser-grid side can represent the other side's trace exactly.
    pub condition1: bool,
    /// The coarser-grid rule integrates the coupling terms exactly.
    pub condition2: bool,
    pub required_degree: usize,
    pub actual_degree: usize,
    pub symmetric: bool,
}

/// Checks whether point-to-point interpolation yields symmetric coupling
/// blocks. With `l` the side with fewer points, `r` the other:
/// condition 1 is `N_P(r) <= N_Q(l)`; condition 2 is
/// `(N_P(r) - 1) + (N_P(l) - 1) + p_geom <= exactness of l's rule`.
pub fn certify_p2p(left: SideOrder, right: SideOrder, p_geom: usize) -> Certificate {
    let (l, r) = if (left.nq, left.np) <= (right.nq, right.np) { (left, right) } else { (right, left) };
    let same_grid = left.nq == right.nq && left.rule == right.rule;
    let condition1 = r.np <= l.nq && l.np <= r.nq;
    let required_degree = (r.np - 1) + (l.np - 1) + p_geom;
    let actual_degree = l.rule.exactness(l.nq).min(r.rule.exactness(r.nq));
    let condition2 = required_degree <= actual_degree;
    Certificate {
        left,
        right,
        p_geom,
        same_grid,
        condition1,
        condition2,
        required_degree,
        actual_degree,
        symmetric: same_grid || (condition1 && condition2),
    }
}

impl fmt::Display for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let yn = |b: bool| if b { "yes" } else { "no" };
        write!(
            f,
            "P{}Q{}-P{}Q{} p_geom={} same_grid={} condition1={} required={} actual={} condition2={} symmetric={}",
            self.left.np,
            self.left.nq,
            self.right.np,
            self.right.nq,
            self.p_geom,
            yn(self.same_grid),
            yn(self.condition1),
            self.required_degree,
            self.actual_degree,
            yn(self.condition2),
            yn(self.symmetric)
        )
    }
}

/// 1D interpolation matrix between two face point sets, or `None` when they
/// coincide.
pub fn face_interp(from: &[f64], to: &[f64]) -> Result<Option<Mat>> {
    if from == to {
        return Ok(None);
    }
    Ok(Some(lagrange_interp_matrix(from, to)?))
}
