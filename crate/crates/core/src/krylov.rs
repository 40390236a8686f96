//! Matrix-free Krylov solvers and dense operator probing.

use crate::dense::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Breakdown {
    MaxIter,
    /// A search direction with p^T A p <= 0.
    IndefiniteDirection,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub converged: bool,
    pub iterations: usize,
    pub rel_residual: f64,
    pub breakdown: Option<Breakdown>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Unpreconditioned conjugate gradients from x = 0, stopping on
/// ||b - A x|| / ||b|| <= tol.
pub fn cg<F>(mut apply: F, b: &[f64], tol: f64, maxiter: usize) -> Result<(SolveReport, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let bn = norm(b);
    if bn == 0.0 {
        return Ok((SolveReport { converged: true, iterations: 0, rel_residual: 0.0, breakdown: None }, x));
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    for it in 1..=maxiter {
        apply(&p, &mut ap)?;
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Ok((SolveReport { converged: false, iterations: it, rel_residual: rr.sqrt() / bn, breakdown: Some(Breakdown::NonFinite) }, x));
        }
        if pap <= 0.0 {
            return Ok((
                SolveReport { converged: false, iterations: it, rel_residual: rr.sqrt() / bn, breakdown: Some(Breakdown::IndefiniteDirection) },
                x,
            ));
        }
        let alpha = rr / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        if rr_new.sqrt() / bn <= tol {
            // confirm with the true residual
            apply(&x, &mut ap)?;
            let res: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
            let rel = norm(&res) / bn;
            if rel <= tol {
                return Ok((SolveReport { converged: true, iterations: it, rel_residual: rel, breakdown: None }, x));
            }
            r = res;
            p = r.clone();
            rr = dot(&r, &r);
            continue;
        }
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Ok((SolveReport { converged: false, iterations: maxiter, rel_residual: rr.sqrt() / bn, breakdown: Some(Breakdown::MaxIter) }, x))
}

/// Restarted GMRES with modified Gram-Schmidt from x = 0. `maxiter` counts
/// inner iterations (operator applications).
pub fn gmres<F>(mut apply: F, b: &[f64], tol: f64, restart: usize, maxiter: usize) -> Result<(SolveReport, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let bn = norm(b);
    if bn == 0.0 {
        return Ok((SolveReport { converged: true, iterations: 0, rel_residual: 0.0, breakdown: None }, x));
    }
    let m = restart.max(1);
    let mut total = 0;
    let mut ax = vec![0.0; n];
    let mut rel = 1.0;
    while total < maxiter {
        apply(&x, &mut ax)?;
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = norm(&r);
        rel = beta / bn;
        if rel <= tol {
            return Ok((SolveReport { converged: true, iterations: total, rel_residual: rel, breakdown: None }, x));
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![0.0; m]; m + 1];
        let (mut cs, mut sn) = (vec![0.0; m], vec![0.0; m]);
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k = 0;
        while k < m && total < maxiter {
            let mut w = vec![0.0; n];
            apply(&v[k], &mut w)?;
            total += 1;
            for (j, vj) in v.iter().enumerate() {
                h[j][k] = dot(&w, vj);
                for i in 0..n {
                    w[i] -= h[j][k] * vj[i];
                }
            }
            h[k + 1][k] = norm(&w);
            for j in 0..k {
                let t = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let d = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if d == 0.0 || !d.is_finite() {
                break;
            }
            cs[k] = h[k][k] / d;
            sn[k] = h[k + 1][k] / d;
            h[k][k] = d;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            let hk = h[k + 1][k];
            h[k + 1][k] = 0.0;
            k += 1;
            rel = g[k].abs() / bn;
            if rel <= tol || hk == 0.0 {
                break;
            }
            v.push(w.iter().map(|x| x / hk).collect());
        }
        // back substitution
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = (i + 1..k).map(|j| h[i][j] * y[j]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * v[j][i];
            }
        }
        if k == 0 {
            break;
        }
    }
    apply(&x, &mut ax)?;
    let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let rel_true = norm(&r) / bn;
    let converged = rel_true <= tol;
    let _ = rel;
    Ok((
        SolveReport { converged, iterations: total, rel_residual: rel_true, breakdown: (!converged).then_some(Breakdown::MaxIter) },
        x,
    ))
}

/// Dense matrix probed column by column.
#[derive(Debug, Clone)]
pub struct DenseProbe {
    pub matrix: Mat,
}

pub const DEFAULT_PROBE_LIMIT: usize = 20_000;

pub fn probe_dense<F>(mut apply: F, n: usize, limit: usize) -> Result<DenseProbe>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<()>,
{
    if n > limit {
        return Err(Error::ProbeLimit { n, limit });
    }
    let mut m = Mat::zeros(n, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        apply(&e, &mut col)?;
        e[j] = 0.0;
        for i in 0..n {
            m[(i, j)] = col[i];
        }
    }
    Ok(DenseProbe { matrix: m })
}

impl DenseProbe {
    /// Nonzero count of every block for the given block offsets
    /// (`offsets.len() - 1` blocks).
    pub fn block_nonzeros(&self, offsets: &[usize]) -> Vec<Vec<usize>> {
        let nb = offsets.len() - 1;
        let mut out = vec![vec![0; nb]; nb];
        for (bi, row) in out.iter_mut().enumerate() {
            for (bj, v) in row.iter_mut().enumerate() {
                for i in offsets[bi]..offsets[bi + 1] {
                    for j in offsets[bj]..offsets[bj + 1] {
                        if self.matrix[(i, j)] != 0.0 {
                            *v += 1;
                        }
                    }
                }
            }
        }
        out
    }

    /// Dense text dump, one row per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.matrix.rows {
            let row: Vec<String> = self.matrix.row(i).iter().map(|v| format!("{v:.17e}")).collect();
            s.push_str(&row.join(" "));
            s.push('\n');
        }
        s
    }
}

fn norm1(m: &Mat, sub_transpose: bool) -> f64 {
    (0..m.cols)
        .map(|j| (0..m.rows).map(|i| if sub_transpose { (m[(i, j)] - m[(j, i)]).abs() } else { m[(i, j)].abs() }).sum::<f64>())
        .fold(0.0, f64::max)
}

/// ||M - M^T||_1 / ||M||_1 with the 1-norm the maximum absolute column sum.
pub fn asymmetry_norm(m: &Mat) -> f64 {
    let d = norm1(m, false);
    if d == 0.0 {
        return 0.0;
    }
    norm1(m, true) / d
}
