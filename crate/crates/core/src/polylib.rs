//! One-dimensional Jacobi polynomials, Gauss-type quadrature and Lagrange
//! interpolation/differentiation on [-1, 1].

use crate::dense::Mat;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, SymmetricEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleKind {
    GaussLegendre,
    /// Gauss-Radau with the endpoint -1 included.
    GaussRadauM,
    GaussLobatto,
}

impl RuleKind {
    pub fn name(self) -> &'static str {
        match self {
            RuleKind::GaussLegendre => "GL",
            RuleKind::GaussRadauM => "GR",
            RuleKind::GaussLobatto => "GLL",
        }
    }

    /// Highest monomial degree integrated exactly by an `n`-point rule.
    pub fn exactness(self, n: usize) -> usize {
        match self {
            RuleKind::GaussLegendre => 2 * n - 1,
            RuleKind::GaussRadauM => 2 * n - 2,
            RuleKind::GaussLobatto => 2 * n - 3,
        }
    }

    pub fn has_left_endpoint(self) -> bool {
        !matches!(self, RuleKind::GaussLegendre)
    }

    pub fn has_right_endpoint(self) -> bool {
        matches!(self, RuleKind::GaussLobatto)
    }

    /// True when the point set is invariant under x -> -x.
    pub fn is_symmetric(self) -> bool {
        !matches!(self, RuleKind::GaussRadauM)
    }

    pub fn parse(s: &str) -> Option<RuleKind> {
        match s.to_ascii_lowercase().as_str() {
            "gl" | "gauss" | "gausslegendre" => Some(RuleKind::GaussLegendre),
            "gr" | "radau" | "gaussradaum" => Some(RuleKind::GaussRadauM),
            "gll" | "lobatto" | "gausslobatto" => Some(RuleKind::GaussLobatto),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadRule {
    pub kind: RuleKind,
    pub n: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    pub fn exactness(&self) -> usize {
        self.kind.exactness(self.n)
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Jacobi polynomial P_n^{(alpha,beta)}(x) and its derivative.
pub fn jacobi_eval(alpha: f64, beta: f64, n: usize, x: f64) -> (f64, f64) {
    let (p, _) = jacobi_pair(alpha, beta, n, x);
    if n == 0 {
        return (p, 0.0);
    }
    let (dp, _) = jacobi_pair(alpha + 1.0, beta + 1.0, n - 1, x);
    (p, 0.5 * (n as f64 + alpha + beta + 1.0) * dp)
}

/// Returns (P_n, P_{n-1}) from the three-term recurrence.
fn jacobi_pair(a: f64, b: f64, n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    if n == 0 {
        return (p0, 0.0);
    }
    let mut p1 = 0.5 * (a - b + (a + b + 2.0) * x);
    for k in 2..=n {
        let k = k as f64;
        let c = 2.0 * k + a + b;
        let a1 = 2.0 * k * (k + a + b) * (c - 2.0);
        let a2 = (c - 1.0) * (a * a - b * b);
        let a3 = (c - 2.0) * (c - 1.0) * c;
        let a4 = 2.0 * (k + a - 1.0) * (k + b - 1.0) * c;
        let p2 = ((a2 + a3 * x) * p1 - a4 * p0) / a1;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Zeros of P_m^{(alpha,beta)} via the eigenvalues of the symmetric Jacobi
/// matrix, each refined by one Newton step.
fn jacobi_zeros(alpha: f64, beta: f64, m: usize) -> Vec<f64> {
    if m == 0 {
        return Vec::new();
    }
    let ab = alpha + beta;
    let mut t = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        let kf = k as f64;
        let c = 2.0 * kf + ab;
        t[(k, k)] = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / (c * (c + 2.0))
        };
        if k + 1 < m {
            let j = kf + 1.0;
            let c = 2.0 * j + ab;
            let num = 4.0 * j * (j + alpha) * (j + beta) * (j + ab);
            let den = c * c * (c + 1.0) * (c - 1.0);
            let off = (num / den).sqrt();
            t[(k, k + 1)] = off;
            t[(k + 1, k)] = off;
        }
    }
    let mut z: Vec<f64> = SymmetricEigen::new(t).eigenvalues.iter().copied().collect();
    for x in z.iter_mut() {
        let (p, dp) = jacobi_eval(alpha, beta, m, *x);
        *x -= p / dp;
    }
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    z
}

pub fn quad_rule(kind: RuleKind, n: usize) -> Result<QuadRule> {
    let min = if kind == RuleKind::GaussLobatto { 2 } else { 1 };
    if n < min || n > 64 {
        return Err(Error::InvalidRule { kind: kind.name(), n });
    }
    let nf = n as f64;
    let (points, weights) = match kind {
        RuleKind::GaussLegendre => {
            let z = jacobi_zeros(0.0, 0.0, n);
            let w = z
                .iter()
                .map(|&x| {
                    let (_, dp) = jacobi_eval(0.0, 0.0, n, x);
                    2.0 / ((1.0 - x * x) * dp * dp)
                })
                .collect();
            (z, w)
        }
        RuleKind::GaussRadauM => {
            let mut z = vec![-1.0];
            z.extend(jacobi_zeros(0.0, 1.0, n - 1));
            let w = z
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    if i == 0 {
                        2.0 / (nf * nf)
                    } else {
                        let (_, dp) = jacobi_eval(0.0, 1.0, n - 1, x);
                        4.0 / ((1.0 - x) * (1.0 + x) * (1.0 + x) * dp * dp)
                    }
                })
                .collect();
            (z, w)
        }
        RuleKind::GaussLobatto => {
            let mut z = vec![-1.0];
            z.extend(jacobi_zeros(1.0, 1.0, n - 2));
            z.push(1.0);
            let end = 2.0 / (nf * (nf - 1.0));
            let m = nf - 2.0;
            let c = 8.0 * (m + 1.0) / (m + 2.0);
            let w = z
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    if i == 0 || i == n - 1 {
                        end
                    } else {
                        let (_, dp) = jacobi_eval(1.0, 1.0, n - 2, x);
                        let s = 1.0 - x * x;
                        c / (s * s * dp * dp)
                    }
                })
                .collect();
            (z, w)
        }
    };
    Ok(QuadRule { kind, n, points, weights })
}

fn check_distinct(points: &[f64]) -> Result<()> {
    for (i, &a) in points.iter().enumerate() {
        for &b in &points[i + 1..] {
            if (a - b).abs() <= 1e-14 * (1.0 + a.abs()) {
                return Err(Error::DuplicatePoints(a));
            }
        }
    }
    Ok(())
}

fn barycentric_weights(points: &[f64]) -> Vec<f64> {
    (0..points.len())
        .map(|j| {
            let p: f64 = points
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != j)
                .map(|(_, &x)| points[j] - x)
                .product();
            1.0 / p
        })
        .collect()
}

/// Matrix whose row r holds the Lagrange cardinal functions of `from`
/// evaluated at `to[r]`.
pub fn lagrange_interp_matrix(from: &[f64], to: &[f64]) -> Result<Mat> {
    check_distinct(from)?;
    let bw = barycentric_weights(from);
    let mut m = Mat::zeros(to.len(), from.len());
    for (r, &t) in to.iter().enumerate() {
        if let Some(j) = from.iter().position(|&x| x == t) {
            m[(r, j)] = 1.0;
            continue;
        }
        let terms: Vec<f64> = from.iter().zip(&bw).map(|(&x, &w)| w / (t - x)).collect();
        let s: f64 = terms.iter().sum();
        for (j, v) in terms.iter().enumerate() {
            m[(r, j)] = v / s;
        }
    }
    Ok(m)
}

/// Collocation differentiation matrix on `points`.
pub fn diff_matrix(points: &[f64]) -> Result<Mat> {
    check_distinct(points)?;
    let n = points.len();
    let bw = barycentric_weights(points);
    let mut d = Mat::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in 0..n {
            if i != j {
                let v = (bw[j] / bw[i]) / (points[i] - points[j]);
                d[(i, j)] = v;
                diag -= v;
            }
        }
        d[(i, i)] = diag;
    }
    Ok(d)
}

/// Derivatives of the Lagrange cardinal functions of `from` at `to`.
pub fn lagrange_deriv_matrix(from: &[f64], to: &[f64]) -> Result<Mat> {
    let d = diff_matrix(from)?;
    Ok(lagrange_interp_matrix(from, to)?.matmul(&d))
}
