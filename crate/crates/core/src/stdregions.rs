//! Reference-element expansions on segments, quadrilaterals, triangles and
//! hexahedra, with sum-factorised BwdTrans / IProduct / PhysDeriv kernels.
//!
//! Kernels are generic over a lane count `W`: data are stored as
//! `[f64; W]` per point or mode, so one call processes `W` elements that
//! share an expansion. `W = 1` is the scalar path.
//!
//! Layouts: physical index `q0 + n0 * (q1 + n1 * q2)`; tensor coefficient
//! index `i0 + P * (i1 + P * i2)`; triangle coefficients are ordered
//! lexicographically in `(i, j)` with `j < P - i`.

use crate::dense::Mat;
use crate::error::{Error, Result};
use crate::polylib::{diff_matrix, jacobi_eval, lagrange_deriv_matrix, lagrange_interp_matrix, quad_rule, RuleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    Seg,
    Quad,
    Tri,
    Hex,
}

impl Shape {
    pub fn dim(self) -> usize {
        match self {
            Shape::Seg => 1,
            Shape::Quad | Shape::Tri => 2,
            Shape::Hex => 3,
        }
    }

    pub fn nverts(self) -> usize {
        match self {
            Shape::Seg => 2,
            Shape::Quad => 4,
            Shape::Tri => 3,
            Shape::Hex => 8,
        }
    }

    pub fn faces(self) -> &'static [FaceDef] {
        match self {
            Shape::Seg => &SEG_FACES,
            Shape::Quad => &QUAD_FACES,
            Shape::Tri => &TRI_FACES,
            Shape::Hex => &HEX_FACES,
        }
    }

    pub fn nfaces(self) -> usize {
        self.faces().len()
    }

    /// Reference-element measure (length, area or volume).
    pub fn ref_measure(self) -> f64 {
        match self {
            Shape::Seg => 2.0,
            Shape::Quad => 4.0,
            Shape::Tri => 2.0,
            Shape::Hex => 8.0,
        }
    }

    pub fn parse(s: &str) -> Option<Shape> {
        match s.to_ascii_lowercase().as_str() {
            "seg" | "segment" => Some(Shape::Seg),
            "quad" | "quadrilateral" => Some(Shape::Quad),
            "tri" | "triangle" => Some(Shape::Tri),
            "hex" | "hexahedron" => Some(Shape::Hex),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::Seg => "seg",
            Shape::Quad => "quad",
            Shape::Tri => "tri",
            Shape::Hex => "hex",
        }
    }
}

/// A face of a reference element, described in tensor (collapsed for the
/// triangle) coordinates: the coordinate `dir` is fixed at `side`, and the
/// face is parametrised by the `tangential` coordinates in the listed order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceDef {
    pub dir: usize,
    pub side: f64,
    pub tangential: &'static [usize],
    /// Local vertex ids at the face corners, in parameter order
    /// (t0 fastest: (-1,-1), (1,-1), (-1,1), (1,1) for quad faces).
    pub corners: &'static [usize],
}

const SEG_FACES: [FaceDef; 2] = [
    FaceDef { dir: 0, side: -1.0, tangential: &[], corners: &[0] },
    FaceDef { dir: 0, side: 1.0, tangential: &[], corners: &[1] },
];

const QUAD_FACES: [FaceDef; 4] = [
    FaceDef { dir: 1, side: -1.0, tangential: &[0], corners: &[0, 1] },
    FaceDef { dir: 0, side: 1.0, tangential: &[1], corners: &[1, 2] },
    FaceDef { dir: 1, side: 1.0, tangential: &[0], corners: &[3, 2] },
    FaceDef { dir: 0, side: -1.0, tangential: &[1], corners: &[0, 3] },
];

// Edge 1 is the hypotenuse xi1 + xi2 = 0, i.e. eta1 = 1, parametrised by eta2.
const TRI_FACES: [FaceDef; 3] = [
    FaceDef { dir: 1, side: -1.0, tangential: &[0], corners: &[0, 1] },
    FaceDef { dir: 0, side: 1.0, tangential: &[1], corners: &[1, 2] },
    FaceDef { dir: 0, side: -1.0, tangential: &[1], corners: &[0, 2] },
];

const HEX_FACES: [FaceDef; 6] = [
    FaceDef { dir: 2, side: -1.0, tangential: &[0, 1], corners: &[0, 1, 3, 2] },
    FaceDef { dir: 1, side: -1.0, tangential: &[0, 2], corners: &[0, 1, 4, 5] },
    FaceDef { dir: 0, side: 1.0, tangential: &[1, 2], corners: &[1, 2, 5, 6] },
    FaceDef { dir: 1, side: 1.0, tangential: &[0, 2], corners: &[3, 2, 7, 6] },
    FaceDef { dir: 0, side: -1.0, tangential: &[1, 2], corners: &[0, 3, 4, 7] },
    FaceDef { dir: 2, side: 1.0, tangential: &[0, 1], corners: &[4, 5, 7, 6] },
];

/// Reference coordinates of the vertices.
pub fn ref_vertices(shape: Shape) -> &'static [[f64; 3]] {
    const SEG: [[f64; 3]; 2] = [[-1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    const QUAD: [[f64; 3]; 4] = [[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]];
    const TRI: [[f64; 3]; 3] = [[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [-1.0, 1.0, 0.0]];
    const HEX: [[f64; 3]; 8] = [
        [-1.0, -1.0, -1.0],
        [1.0, -1.0, -1.0],
        [1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
        [1.0, -1.0, 1.0],
        [1.0, 1.0, 1.0],
        [-1.0, 1.0, 1.0],
    ];
    match shape {
        Shape::Seg => &SEG,
        Shape::Quad => &QUAD,
        Shape::Tri => &TRI,
        Shape::Hex => &HEX,
    }
}

/// Reference coordinates xi of the face point with parameters `t`.
pub fn face_point(shape: Shape, face: usize, t: &[f64]) -> [f64; 3] {
    let f = shape.faces()[face];
    if shape == Shape::Tri {
        let s = t[0];
        return match face {
            0 => [s, -1.0, 0.0],
            1 => [-s, s, 0.0],
            _ => [-1.0, s, 0.0],
        };
    }
    let mut xi = [0.0; 3];
    xi[f.dir] = f.side;
    for (k, &d) in f.tangential.iter().enumerate() {
        xi[d] = t[k];
    }
    xi
}

/// Outward reference normal scaled by the reference surface measure per unit
/// parameter, so that `n dS = J F^{-T} a dt` (Nanson's formula).
pub fn face_ref_area_normal(shape: Shape, face: usize) -> [f64; 3] {
    let f = shape.faces()[face];
    if shape == Shape::Tri && face == 1 {
        return [1.0, 1.0, 0.0];
    }
    let mut a = [0.0; 3];
    a[f.dir] = f.side;
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisKind {
    ModifiedModal,
    Orthogonal,
    Lagrange,
}

impl BasisKind {
    pub fn parse(s: &str) -> Option<BasisKind> {
        match s.to_ascii_lowercase().as_str() {
            "modified" | "modifiedmodal" | "modal" => Some(BasisKind::ModifiedModal),
            "orthogonal" | "ortho" => Some(BasisKind::Orthogonal),
            "lagrange" | "nodal" => Some(BasisKind::Lagrange),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::ModifiedModal => "modified",
            BasisKind::Orthogonal => "orthogonal",
            BasisKind::Lagrange => "lagrange",
        }
    }
}

/// One-dimensional basis on [-1, 1].
///
/// ModifiedModal ordering: mode 0 is (1-x)/2, mode P-1 is (1+x)/2 and
/// modes 1..P-2 are (1-x)(1+x)/4 P^{1,1}_{i-1}(x). Lagrange modes are the
/// cardinal functions of the P-point rule of the expansion's kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis1D {
    pub kind: BasisKind,
    pub nmodes: usize,
    pub nodes: Vec<f64>,
}

impl Basis1D {
    pub fn new(kind: BasisKind, nmodes: usize, rule: RuleKind) -> Result<Self> {
        if nmodes == 0 || (kind == BasisKind::ModifiedModal && nmodes < 2) {
            return Err(Error::Unsupported(format!("{kind:?} basis with {nmodes} modes")));
        }
        let nodes = if kind == BasisKind::Lagrange {
            let r = if rule == RuleKind::GaussLobatto && nmodes < 2 { RuleKind::GaussLegendre } else { rule };
            quad_rule(r, nmodes)?.points
        } else {
            Vec::new()
        };
        Ok(Basis1D { kind, nmodes, nodes })
    }

    /// True if only the first and last modes are nonzero at the endpoints.
    pub fn has_boundary_interior(&self) -> bool {
        match self.kind {
            BasisKind::ModifiedModal => true,
            BasisKind::Orthogonal => false,
            BasisKind::Lagrange => self.nodes.first() == Some(&-1.0) && self.nodes.last() == Some(&1.0),
        }
    }

    fn modal(&self, i: usize, x: f64) -> (f64, f64) {
        let p = self.nmodes;
        match self.kind {
            BasisKind::Orthogonal => {
                let s = ((2 * i + 1) as f64 / 2.0).sqrt();
                let (v, d) = jacobi_eval(0.0, 0.0, i, x);
                (s * v, s * d)
            }
            _ => {
                if i == 0 {
                    ((1.0 - x) / 2.0, -0.5)
                } else if i == p - 1 {
                    ((1.0 + x) / 2.0, 0.5)
                } else {
                    bubble(i - 1, x)
                }
            }
        }
    }

    /// Value and derivative tables, `pts.len() x nmodes`.
    pub fn tables(&self, pts: &[f64]) -> Result<(Mat, Mat)> {
        if self.kind == BasisKind::Lagrange {
            if self.nmodes == 1 {
                return Ok((Mat::from_fn(pts.len(), 1, |_, _| 1.0), Mat::zeros(pts.len(), 1)));
            }
            return Ok((lagrange_interp_matrix(&self.nodes, pts)?, lagrange_deriv_matrix(&self.nodes, pts)?));
        }
        let mut v = Mat::zeros(pts.len(), self.nmodes);
        let mut d = Mat::zeros(pts.len(), self.nmodes);
        for (q, &x) in pts.iter().enumerate() {
            for i in 0..self.nmodes {
                let (a, b) = self.modal(i, x);
                v[(q, i)] = a;
                d[(q, i)] = b;
            }
        }
        Ok((v, d))
    }
}

/// (1-x)(1+x)/4 * P^{1,1}_k(x) and its derivative.
fn bubble(k: usize, x: f64) -> (f64, f64) {
    let (p, dp) = jacobi_eval(1.0, 1.0, k, x);
    let b = (1.0 - x) * (1.0 + x) / 4.0;
    (b * p, -x / 2.0 * p + b * dp)
}

/// Triangle direction-1 function for index `i` (ordered by degree).
fn tri_a(kind: BasisKind, i: usize, x: f64) -> (f64, f64) {
    match kind {
        BasisKind::ModifiedModal => match i {
            0 => ((1.0 - x) / 2.0, -0.5),
            1 => ((1.0 + x) / 2.0, 0.5),
            _ => bubble(i - 2, x),
        },
        _ => {
            let s = ((2 * i + 1) as f64 / 2.0).sqrt();
            let (v, d) = jacobi_eval(0.0, 0.0, i, x);
            (s * v, s * d)
        }
    }
}

/// Triangle direction-2 function for mode `(i, j)`.
fn tri_b(kind: BasisKind, i: usize, j: usize, x: f64) -> (f64, f64) {
    let h = (1.0 - x) / 2.0;
    // h^m and its derivative
    let hp = |m: usize| -> (f64, f64) {
        if m == 0 {
            (1.0, 0.0)
        } else {
            (h.powi(m as i32), -0.5 * m as f64 * h.powi(m as i32 - 1))
        }
    };
    match kind {
        BasisKind::ModifiedModal => {
            if i == 0 {
                match j {
                    0 => ((1.0 - x) / 2.0, -0.5),
                    1 => ((1.0 + x) / 2.0, 0.5),
                    _ => bubble(j - 2, x),
                }
            } else if j == 0 {
                hp(i)
            } else {
                let (a, da) = hp(i);
                let g = (1.0 + x) / 2.0;
                let (p, dp) = jacobi_eval((2 * i - 1) as f64, 1.0, j - 1, x);
                (a * g * p, da * g * p + a * 0.5 * p + a * g * dp)
            }
        }
        _ => {
            let s = ((i + j + 1) as f64).sqrt();
            let (a, da) = hp(i);
            let (p, dp) = jacobi_eval((2 * i + 1) as f64, 0.0, j, x);
            (s * a * p, s * (da * p + a * dp))
        }
    }
}

/// Offset of the first mode with direction-1 index `i` in a triangle of
/// order `np`.
pub fn tri_offset(np: usize, i: usize) -> usize {
    i * np - i * (i.saturating_sub(1)) / 2
}

/// Collapsed coordinates of a reference point. For the triangle the
/// vertex xi2 = 1 is singular: it is an error unless `limit` is set, in
/// which case eta1 := -1 there.
pub fn duffy_collapse(shape: Shape, xi: &[f64], limit: bool) -> Result<[f64; 3]> {
    let mut eta = [0.0; 3];
    eta[..xi.len()].copy_from_slice(xi);
    if shape == Shape::Tri {
        if xi[1] == 1.0 {
            if !limit {
                return Err(Error::SingularVertex(xi[0], xi[1]));
            }
            eta[0] = -1.0;
        } else {
            eta[0] = 2.0 * (1.0 + xi[0]) / (1.0 - xi[1]) - 1.0;
        }
    }
    Ok(eta)
}

pub fn duffy_expand(shape: Shape, eta: &[f64]) -> [f64; 3] {
    let mut xi = [0.0; 3];
    xi[..eta.len()].copy_from_slice(eta);
    if shape == Shape::Tri {
        xi[0] = (1.0 + eta[0]) * (1.0 - eta[1]) / 2.0 - 1.0;
    }
    xi
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ExpansionKey {
    pub shape: Shape,
    pub basis: BasisKind,
    /// Modes per direction.
    pub np: usize,
    /// Quadrature points per direction.
    pub nq: usize,
    pub rule: RuleKind,
    /// Add zero-weight endpoints to Gauss-Legendre directions so faces can be gathered.
    pub augmented: bool,
}

impl ExpansionKey {
    pub fn new(shape: Shape, basis: BasisKind, np: usize, nq: usize, rule: RuleKind) -> Self {
        ExpansionKey { shape, basis, np, nq, rule, augmented: false }
    }

    /// Quadrature kind used in each tensor direction. Triangles use
    /// Gauss-Legendre in direction 1 unless Lobatto is requested, and
    /// Gauss-Legendre or Gauss-Radau (never touching eta2 = 1) in direction 2.
    pub fn dir_rules(&self) -> Vec<RuleKind> {
        match self.shape {
            Shape::Tri => match self.rule {
                RuleKind::GaussLegendre => vec![RuleKind::GaussLegendre; 2],
                RuleKind::GaussLobatto => vec![RuleKind::GaussLobatto, RuleKind::GaussRadauM],
                RuleKind::GaussRadauM => vec![RuleKind::GaussLegendre, RuleKind::GaussRadauM],
            },
            s => vec![self.rule; s.dim()],
        }
    }

    /// 1D rule kind used on faces (the trace grid of this element).
    pub fn face_rule(&self) -> RuleKind {
        match self.shape {
            Shape::Tri => RuleKind::GaussLegendre,
            _ => self.rule,
        }
    }
}

/// Per-direction evaluation tables at a tensor grid of points.
#[derive(Debug, Clone)]
pub enum Tables {
    Tensor {
        npts: [usize; 3],
        val: Vec<Mat>,
        der: Vec<Mat>,
        /// Directions in application order for coefficient -> point evaluation.
        order: Vec<usize>,
    },
    Tri {
        npts: [usize; 3],
        a: Mat,
        da: Mat,
        /// `npts[1] x ncoeffs`: value of the direction-2 factor of each mode.
        b: Mat,
        db: Mat,
    },
}

impl Tables {
    pub fn npts(&self) -> [usize; 3] {
        match self {
            Tables::Tensor { npts, .. } | Tables::Tri { npts, .. } => *npts,
        }
    }

    pub fn total(&self) -> usize {
        self.npts().iter().product()
    }
}

#[derive(Debug, Clone)]
pub struct Expansion {
    pub key: ExpansionKey,
    pub dim: usize,
    /// Quadrature points per direction (including augmented endpoints).
    pub points: Vec<Vec<f64>>,
    /// Quadrature weights per direction (zero at augmented endpoints).
    pub weights: Vec<Vec<f64>>,
    pub ncoeffs: usize,
    pub nphys: usize,
    /// Shape of the physical grid, unused directions set to 1.
    pub grid: [usize; 3],
    pub quad: Tables,
    /// Collocation differentiation matrix per direction.
    pub diff: Vec<Mat>,
    /// Reference quadrature weight per point; includes (1 - eta2)/2 on triangles.
    pub ref_weight: Vec<f64>,
    /// Per point d(eta)/d(xi) for collapsed shapes, row-major 2x2.
    pub collapse: Option<Vec<[f64; 4]>>,
    basis1d: Option<Basis1D>,
    /// Nodal-to-modal coefficient map of the triangle Lagrange basis.
    nodal: Option<Mat>,
    pub nodes: Option<Vec<[f64; 2]>>,
}

impl Expansion {
    pub fn new(key: ExpansionKey) -> Result<Self> {
        let dim = key.shape.dim();
        if key.np == 0 || key.nq == 0 {
            return Err(Error::Unsupported(format!("{key:?}")));
        }
        if key.augmented && (key.rule != RuleKind::GaussLegendre || key.shape == Shape::Tri) {
            return Err(Error::Unsupported("augmented endpoints need a Gauss-Legendre tensor element".into()));
        }
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for r in key.dir_rules() {
            let q = quad_rule(r, key.nq)?;
            let (mut p, mut w) = (q.points, q.weights);
            if key.augmented {
                p.insert(0, -1.0);
                p.push(1.0);
                w.insert(0, 0.0);
                w.push(0.0);
            }
            points.push(p);
            weights.push(w);
        }
        let mut grid = [1usize; 3];
        for d in 0..dim {
            grid[d] = points[d].len();
        }
        let nphys = grid.iter().product();
        let diff = points.iter().map(|p| diff_matrix(p)).collect::<Result<Vec<_>>>()?;
        let mut exp = Expansion {
            key,
            dim,
            ncoeffs: 0,
            nphys,
            grid,
            quad: Tables::Tensor { npts: grid, val: vec![], der: vec![], order: vec![] },
            diff,
            ref_weight: vec![],
            collapse: None,
            basis1d: None,
            nodal: None,
            nodes: None,
            points,
            weights,
        };
        if key.shape == Shape::Tri {
            exp.ncoeffs = key.np * (key.np + 1) / 2;
            if key.basis == BasisKind::Lagrange {
                exp.setup_tri_nodal()?;
            }
        } else {
            let b = Basis1D::new(key.basis, key.np, key.rule)?;
            exp.ncoeffs = key.np.pow(dim as u32);
            exp.basis1d = Some(b);
        }
        if key.shape == Shape::Tri && key.basis == BasisKind::ModifiedModal && key.np < 2 {
            return Err(Error::Unsupported("modified triangle needs np >= 2".into()));
        }
        let pts: Vec<Vec<f64>> = exp.points.clone();
        exp.quad = exp.tables_at(&pts)?;
        let mut rw = vec![0.0; nphys];
        let mut col = Vec::new();
        for (q, w) in rw.iter_mut().enumerate() {
            let idx = [q % grid[0], (q / grid[0]) % grid[1], q / (grid[0] * grid[1])];
            let mut v = 1.0;
            for d in 0..dim {
                v *= exp.weights[d][idx[d]];
            }
            if key.shape == Shape::Tri {
                let (e1, e2) = (exp.points[0][idx[0]], exp.points[1][idx[1]]);
                v *= (1.0 - e2) / 2.0;
                col.push([2.0 / (1.0 - e2), (1.0 + e1) / (1.0 - e2), 0.0, 1.0]);
            }
            *w = v;
        }
        exp.ref_weight = rw;
        if key.shape == Shape::Tri {
            exp.collapse = Some(col);
        }
        Ok(exp)
    }

    fn setup_tri_nodal(&mut self) -> Result<()> {
        let np = self.key.np;
        let ortho = ExpansionKey { basis: BasisKind::Orthogonal, ..self.key };
        let mut nodes = Vec::new();
        let v = if np == 1 { vec![0.5] } else { quad_rule(RuleKind::GaussLobatto, np)?.points.iter().map(|x| (x + 1.0) / 2.0).collect::<Vec<_>>() };
        let p = np - 1;
        for i in 0..=p {
            for j in 0..=(p - i) {
                let k = p - i - j;
                // barycentric lattice built from the 1D Lobatto nodes
                let x = (1.0 + 2.0 * v[i] - v[j] - v[k]) / 3.0;
                let y = (1.0 + 2.0 * v[j] - v[i] - v[k]) / 3.0;
                nodes.push([2.0 * x - 1.0, 2.0 * y - 1.0]);
            }
        }
        let n = nodes.len();
        let mut vm = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (r, xi) in nodes.iter().enumerate() {
            let eta = duffy_collapse(Shape::Tri, xi, true)?;
            for m in 0..n {
                vm[(r, m)] = tri_mode(ortho.basis, np, m, eta[0], eta[1]).0;
            }
        }
        let inv = vm.try_inverse().ok_or_else(|| Error::Invalid("singular nodal Vandermonde".into()))?;
        self.nodal = Some(Mat::from_nalgebra(&inv));
        self.nodes = Some(nodes);
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        self.key.shape
    }

    pub fn np(&self) -> usize {
        self.key.np
    }

    pub fn basis1d(&self) -> Option<&Basis1D> {
        self.basis1d.as_ref()
    }

    /// Basis kind actually used by the sum-factorised kernels (the triangle
    /// Lagrange basis runs on orthogonal modes after a nodal-to-modal map).
    fn kernel_basis(&self) -> BasisKind {
        if self.nodal.is_some() {
            BasisKind::Orthogonal
        } else {
            self.key.basis
        }
    }

    /// Evaluation tables at the tensor grid with per-direction points `pts`
    /// (collapsed coordinates for triangles).
    pub fn tables_at(&self, pts: &[Vec<f64>]) -> Result<Tables> {
        let mut npts = [1usize; 3];
        for d in 0..self.dim {
            npts[d] = pts[d].len();
        }
        if self.key.shape == Shape::Tri {
            let kb = self.kernel_basis();
            let np = self.key.np;
            let mut a = Mat::zeros(npts[0], np);
            let mut da = Mat::zeros(npts[0], np);
            for (q, &x) in pts[0].iter().enumerate() {
                for i in 0..np {
                    let (v, d) = tri_a(kb, i, x);
                    a[(q, i)] = v;
                    da[(q, i)] = d;
                }
            }
            let mut b = Mat::zeros(npts[1], self.ncoeffs);
            let mut db = Mat::zeros(npts[1], self.ncoeffs);
            for (q, &x) in pts[1].iter().enumerate() {
                for i in 0..np {
                    for j in 0..np - i {
                        let (v, d) = tri_b(kb, i, j, x);
                        b[(q, tri_offset(np, i) + j)] = v;
                        db[(q, tri_offset(np, i) + j)] = d;
                    }
                }
            }
            return Ok(Tables::Tri { npts, a, da, b, db });
        }
        let b1 = self.basis1d.as_ref().expect("tensor basis");
        let mut val = Vec::new();
        let mut der = Vec::new();
        for p in pts.iter().take(self.dim) {
            let (v, d) = b1.tables(p)?;
            val.push(v);
            der.push(d);
        }
        let mut order: Vec<usize> = (0..self.dim).collect();
        order.sort_by_key(|&d| (npts[d], d));
        Ok(Tables::Tensor { npts, val, der, order })
    }

    /// Value and collapsed-coordinate derivatives of mode `m` at `eta`,
    /// straight from the basis definitions (no sum factorisation).
    pub fn mode_at(&self, m: usize, eta: &[f64]) -> (f64, [f64; 3]) {
        match self.key.shape {
            Shape::Tri => {
                if let Some(c) = &self.nodal {
                    let mut v = 0.0;
                    let mut g = [0.0; 3];
                    for k in 0..self.ncoeffs {
                        let (a, b) = tri_mode(BasisKind::Orthogonal, self.key.np, k, eta[0], eta[1]);
                        v += c[(k, m)] * a;
                        g[0] += c[(k, m)] * b[0];
                        g[1] += c[(k, m)] * b[1];
                    }
                    (v, g)
                } else {
                    let (v, g) = tri_mode(self.key.basis, self.key.np, m, eta[0], eta[1]);
                    (v, [g[0], g[1], 0.0])
                }
            }
            _ => {
                let b = self.basis1d.as_ref().unwrap();
                let np = self.key.np;
                let idx = [m % np, (m / np) % np, m / (np * np)];
                let mut f = [(1.0, 0.0); 3];
                for d in 0..self.dim {
                    let (v, dv) = b.tables(&[eta[d]]).unwrap();
                    f[d] = (v[(0, idx[d])], dv[(0, idx[d])]);
                }
                let v = f.iter().take(self.dim).map(|x| x.0).product();
                let mut g = [0.0; 3];
                for k in 0..self.dim {
                    g[k] = (0..self.dim).map(|d| if d == k { f[d].1 } else { f[d].0 }).product();
                }
                (v, g)
            }
        }
    }

    /// Coefficient-to-point evaluation on `tables`; `deriv` selects the
    /// direction whose derivative table is used. Overwrites `out`.
    /// Returns the multiply-add count per lane.
    pub fn eval_lanes<const W: usize>(
        &self,
        tables: &Tables,
        deriv: Option<usize>,
        coeffs: &[[f64; W]],
        out: &mut [[f64; W]],
        scratch: &mut Scratch<W>,
    ) -> u64 {
        let mut cost = 0;
        let src: &[[f64; W]] = if let Some(c) = &self.nodal {
            scratch.modal.clear();
            scratch.modal.resize(self.ncoeffs, [0.0; W]);
            cost += dense_apply(c, false, coeffs, &mut scratch.modal);
            &scratch.modal
        } else {
            coeffs
        };
        match tables {
            Tables::Tensor { val, der, order, npts } => {
                let np = self.key.np;
                let mut shape = [1usize; 3];
                for s in shape.iter_mut().take(self.dim) {
                    *s = np;
                }
                let (a, b) = (&mut scratch.a, &mut scratch.b);
                a.clear();
                a.extend_from_slice(src);
                for (k, &d) in order.iter().enumerate() {
                    let m = if deriv == Some(d) { &der[d] } else { &val[d] };
                    let mut oshape = shape;
                    oshape[d] = npts[d];
                    let n: usize = oshape.iter().product();
                    if k + 1 == order.len() {
                        cost += apply_dir(m, false, shape, d, a, &mut out[..n]);
                    } else {
                        b.clear();
                        b.resize(n, [0.0; W]);
                        cost += apply_dir(m, false, shape, d, a, b);
                        std::mem::swap(a, b);
                    }
                    shape = oshape;
                }
            }
            Tables::Tri { npts, a, da, b, db } => {
                let am = if deriv == Some(0) { da } else { a };
                let bm = if deriv == Some(1) { db } else { b };
                cost += self.tri_eval(*npts, am, bm, src, out, &mut scratch.a);
            }
        }
        cost
    }

    /// Transpose of [`Expansion::eval_lanes`]: point data to coefficients.
    pub fn eval_t_lanes<const W: usize>(
        &self,
        tables: &Tables,
        deriv: Option<usize>,
        phys: &[[f64; W]],
        out: &mut [[f64; W]],
        scratch: &mut Scratch<W>,
    ) -> u64 {
        let mut cost = 0;
        let nodal = self.nodal.is_some();
        {
            let dst: &mut [[f64; W]] = if nodal {
                scratch.modal.clear();
                scratch.modal.resize(self.ncoeffs, [0.0; W]);
                &mut scratch.modal
            } else {
                &mut out[..self.ncoeffs]
            };
            match tables {
                Tables::Tensor { val, der, order, npts } => {
                    let np = self.key.np;
                    let mut shape = *npts;
                    let (a, b) = (&mut scratch.a, &mut scratch.b);
                    a.clear();
                    a.extend_from_slice(&phys[..shape.iter().product()]);
                    for (k, &d) in order.iter().rev().enumerate() {
                        let m = if deriv == Some(d) { &der[d] } else { &val[d] };
                        let mut oshape = shape;
                        oshape[d] = np;
                        let n: usize = oshape.iter().product();
                        if k + 1 == order.len() {
                            cost += apply_dir(m, true, shape, d, a, dst);
                        } else {
                            b.clear();
                            b.resize(n, [0.0; W]);
                            cost += apply_dir(m, true, shape, d, a, b);
                            std::mem::swap(a, b);
                        }
                        shape = oshape;
                    }
                }
                Tables::Tri { npts, a, da, b, db } => {
                    let am = if deriv == Some(0) { da } else { a };
                    let bm = if deriv == Some(1) { db } else { b };
                    cost += self.tri_eval_t(*npts, am, bm, phys, dst, &mut scratch.a);
                }
            }
        }
        if let Some(c) = &self.nodal {
            cost += dense_apply(c, true, &scratch.modal, &mut out[..self.ncoeffs]);
        }
        cost
    }

    fn tri_modified_fix(&self) -> bool {
        self.kernel_basis() == BasisKind::ModifiedModal
    }

    fn tri_eval<const W: usize>(
        &self,
        npts: [usize; 3],
        a: &Mat,
        b: &Mat,
        c: &[[f64; W]],
        out: &mut [[f64; W]],
        t: &mut Vec<[f64; W]>,
    ) -> u64 {
        let np = self.key.np;
        let (n0, n1) = (npts[0], npts[1]);
        t.clear();
        t.resize(np * n1, [0.0; W]);
        let mut cost = 0u64;
        for i in 0..np {
            let off = tri_offset(np, i);
            for q in 0..n1 {
                let mut acc = [0.0; W];
                for j in 0..np - i {
                    let w = b[(q, off + j)];
                    let cj = &c[off + j];
                    for l in 0..W {
                        acc[l] += w * cj[l];
                    }
                }
                t[i * n1 + q] = acc;
            }
            cost += ((np - i) * n1) as u64;
        }
        if self.tri_modified_fix() && np > 1 {
            for q in 0..n1 {
                let w = b[(q, 1)];
                for l in 0..W {
                    t[n1 + q][l] += w * c[1][l];
                }
            }
            cost += n1 as u64;
        }
        for q1 in 0..n1 {
            for q0 in 0..n0 {
                let mut acc = [0.0; W];
                for i in 0..np {
                    let w = a[(q0, i)];
                    let ti = &t[i * n1 + q1];
                    for l in 0..W {
                        acc[l] += w * ti[l];
                    }
                }
                out[q0 + n0 * q1] = acc;
            }
        }
        cost + (n0 * n1 * np) as u64
    }

    fn tri_eval_t<const W: usize>(
        &self,
        npts: [usize; 3],
        a: &Mat,
        b: &Mat,
        g: &[[f64; W]],
        out: &mut [[f64; W]],
        t: &mut Vec<[f64; W]>,
    ) -> u64 {
        let np = self.key.np;
        let (n0, n1) = (npts[0], npts[1]);
        t.clear();
        t.resize(np * n1, [0.0; W]);
        for q1 in 0..n1 {
            for q0 in 0..n0 {
                let gv = &g[q0 + n0 * q1];
                for i in 0..np {
                    let w = a[(q0, i)];
                    let ti = &mut t[i * n1 + q1];
                    for l in 0..W {
                        ti[l] += w * gv[l];
                    }
                }
            }
        }
        let mut cost = (n0 * n1 * np) as u64;
        for i in 0..np {
            let off = tri_offset(np, i);
            for j in 0..np - i {
                let mut acc = [0.0; W];
                for q in 0..n1 {
                    let w = b[(q, off + j)];
                    let tv = &t[i * n1 + q];
                    for l in 0..W {
                        acc[l] += w * tv[l];
                    }
                }
                out[off + j] = acc;
            }
            cost += ((np - i) * n1) as u64;
        }
        if self.tri_modified_fix() && np > 1 {
            for q in 0..n1 {
                let w = b[(q, 1)];
                for l in 0..W {
                    out[1][l] += w * t[n1 + q][l];
                }
            }
            cost += n1 as u64;
        }
        cost
    }

    /// Collocation derivative along tensor direction `dir` of physical data.
    pub fn phys_deriv_lanes<const W: usize>(&self, dir: usize, phys: &[[f64; W]], out: &mut [[f64; W]]) -> u64 {
        apply_dir(&self.diff[dir], false, self.grid, dir, phys, out)
    }

    /// Transpose of [`Expansion::phys_deriv_lanes`], accumulated into `out`.
    pub fn phys_deriv_t_add_lanes<const W: usize>(&self, dir: usize, phys: &[[f64; W]], out: &mut [[f64; W]], tmp: &mut Vec<[f64; W]>) -> u64 {
        tmp.clear();
        tmp.resize(self.nphys, [0.0; W]);
        let c = apply_dir(&self.diff[dir], true, self.grid, dir, phys, tmp);
        for (o, t) in out.iter_mut().zip(tmp.iter()) {
            for l in 0..W {
                o[l] += t[l];
            }
        }
        c
    }

    pub fn bwd_trans(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.ncoeffs, coeffs.len())?;
        let mut out = vec![[0.0; 1]; self.nphys];
        self.eval_lanes(&self.quad, None, as_lanes(coeffs), &mut out, &mut Scratch::default());
        Ok(flatten(out))
    }

    /// Inner product with every basis function, `metric` being the quadrature
    /// weight times Jacobian at each point.
    pub fn iproduct(&self, phys: &[f64], metric: &[f64]) -> Result<Vec<f64>> {
        check_len(self.nphys, phys.len())?;
        check_len(self.nphys, metric.len())?;
        let g: Vec<[f64; 1]> = phys.iter().zip(metric).map(|(u, m)| [u * m]).collect();
        let mut out = vec![[0.0; 1]; self.ncoeffs];
        self.eval_t_lanes(&self.quad, None, &g, &mut out, &mut Scratch::default());
        Ok(flatten(out))
    }

    /// Derivatives with respect to each tensor (collapsed) direction.
    pub fn phys_deriv(&self, phys: &[f64]) -> Result<Vec<Vec<f64>>> {
        check_len(self.nphys, phys.len())?;
        Ok((0..self.dim)
            .map(|d| {
                let mut out = vec![[0.0; 1]; self.nphys];
                self.phys_deriv_lanes(d, as_lanes(phys), &mut out);
                flatten(out)
            })
            .collect())
    }

    /// Chain rule from collapsed to reference derivatives (identity for
    /// tensor shapes).
    pub fn collapsed_to_ref(&self, d: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match &self.collapse {
            None => d.to_vec(),
            Some(c) => {
                let mut x = vec![vec![0.0; self.nphys]; 2];
                for q in 0..self.nphys {
                    let m = c[q];
                    // d/dxi_k = sum_j (d eta_j / d xi_k) d/d eta_j
                    x[0][q] = m[0] * d[0][q] + m[2] * d[1][q];
                    x[1][q] = m[1] * d[0][q] + m[3] * d[1][q];
                }
                x
            }
        }
    }

    /// Physical index of each face-grid point, if the face is part of the
    /// element grid.
    pub fn face_gather_indices(&self, face: usize) -> Option<Vec<usize>> {
        let f = self.key.shape.faces()[face];
        if self.key.shape == Shape::Tri {
            return None;
        }
        let p = &self.points[f.dir];
        let fixed = if f.side < 0.0 {
            (p[0] == -1.0).then_some(0)
        } else {
            (p[p.len() - 1] == 1.0).then_some(p.len() - 1)
        }?;
        let strides = [1, self.grid[0], self.grid[0] * self.grid[1]];
        let tn: Vec<usize> = f.tangential.iter().map(|&d| self.grid[d]).collect();
        let total: usize = tn.iter().product();
        let mut idx = Vec::with_capacity(total);
        for k in 0..total {
            let mut off = fixed * strides[f.dir];
            let mut r = k;
            for (t, &d) in f.tangential.iter().enumerate() {
                off += (r % tn[t]) * strides[d];
                r /= tn[t];
            }
            idx.push(off);
        }
        Some(idx)
    }

    /// Face-grid points per tangential direction (the element's own face
    /// rule with `nq` points).
    pub fn face_points(&self, nq: usize) -> Result<Vec<f64>> {
        let mut p = quad_rule(self.key.face_rule(), nq)?.points;
        if self.key.augmented {
            p.insert(0, -1.0);
            p.push(1.0);
        }
        Ok(p)
    }

    /// Tables for evaluation on face `face` at tangential points `t`.
    pub fn face_tables(&self, face: usize, t: &[f64]) -> Result<Tables> {
        let f = self.key.shape.faces()[face];
        let mut pts = vec![Vec::new(); self.dim];
        pts[f.dir] = vec![f.side];
        for &d in f.tangential {
            pts[d] = t.to_vec();
        }
        self.tables_at(&pts)
    }

    pub fn has_boundary_interior(&self) -> bool {
        match self.key.shape {
            Shape::Tri => self.key.basis == BasisKind::ModifiedModal,
            _ => self.basis1d.as_ref().is_some_and(|b| b.has_boundary_interior()),
        }
    }

    /// Face values computed from the boundary modes of that face only, on the
    /// element's face grid. Returns the values and the multiply-add count.
    pub fn boundary_bwd_trans(&self, coeffs: &[f64], face: usize) -> Result<(Vec<f64>, u64)> {
        check_len(self.ncoeffs, coeffs.len())?;
        if !self.has_boundary_interior() {
            return Err(Error::NoBoundaryInterior(format!("{:?} {:?}", self.key.shape, self.key.basis)));
        }
        let f = self.key.shape.faces()[face];
        let np = self.key.np;
        let t = if self.key.shape == Shape::Tri {
            self.face_points(self.key.nq)?
        } else {
            self.points[f.tangential.first().copied().unwrap_or(0)].clone()
        };
        if self.key.shape == Shape::Tri {
            let kb = BasisKind::ModifiedModal;
            let mut out = vec![0.0; t.len()];
            let mut cost = 0;
            for (q, &s) in t.iter().enumerate() {
                out[q] = match face {
                    0 => (0..np).map(|i| tri_a(kb, i, s).0 * coeffs[tri_offset(np, i)]).sum(),
                    1 => {
                        let o = tri_offset(np, 1);
                        (0..np - 1).map(|j| tri_b(kb, 1, j, s).0 * coeffs[o + j]).sum::<f64>() + tri_b(kb, 0, 1, s).0 * coeffs[1]
                    }
                    _ => (0..np).map(|j| tri_b(kb, 0, j, s).0 * coeffs[j]).sum(),
                };
                cost += np as u64;
            }
            return Ok((out, cost));
        }
        let b1 = self.basis1d.as_ref().unwrap();
        let fixed = if f.side < 0.0 { 0 } else { np - 1 };
        // gather the boundary-mode slice
        let strides = [1, np, np * np];
        let nt = f.tangential.len();
        let slice: Vec<[f64; 1]> = (0..np.pow(nt as u32))
            .map(|k| {
                let mut off = fixed * strides[f.dir];
                let mut r = k;
                for &d in f.tangential {
                    off += (r % np) * strides[d];
                    r /= np;
                }
                [coeffs[off]]
            })
            .collect();
        let (v, _) = b1.tables(&t)?;
        let mut shape = [1usize; 3];
        for s in shape.iter_mut().take(nt) {
            *s = np;
        }
        let mut cur = slice;
        let mut cost = 0;
        for d in 0..nt {
            let mut oshape = shape;
            oshape[d] = t.len();
            let mut next = vec![[0.0; 1]; oshape.iter().product()];
            cost += apply_dir(&v, false, shape, d, &cur, &mut next);
            cur = next;
            shape = oshape;
        }
        if nt == 0 {
            return Ok((vec![cur[0][0]], 0));
        }
        Ok((flatten(cur), cost))
    }
}

fn tri_mode(kind: BasisKind, np: usize, m: usize, e1: f64, e2: f64) -> (f64, [f64; 2]) {
    let mut i = 0;
    while i + 1 < np && tri_offset(np, i + 1) <= m {
        i += 1;
    }
    let j = m - tri_offset(np, i);
    let (a, da) = tri_a(kind, i, e1);
    let (b, db) = tri_b(kind, i, j, e2);
    let mut v = a * b;
    let mut g = [da * b, a * db];
    if kind == BasisKind::ModifiedModal && i == 0 && j == 1 {
        let (a1, da1) = tri_a(kind, 1, e1);
        v += a1 * b;
        g[0] += da1 * b;
        g[1] += a1 * db;
    }
    (v, g)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::SizeMismatch { expected, got });
    }
    Ok(())
}

pub fn as_lanes(x: &[f64]) -> &[[f64; 1]] {
    x.as_chunks::<1>().0
}

pub fn flatten<const W: usize>(x: Vec<[f64; W]>) -> Vec<f64> {
    x.into_iter().flatten().collect()
}

/// Reusable work arrays for the lane kernels.
#[derive(Debug, Clone)]
pub struct Scratch<const W: usize> {
    a: Vec<[f64; W]>,
    b: Vec<[f64; W]>,
    modal: Vec<[f64; W]>,
}

impl<const W: usize> Default for Scratch<W> {
    fn default() -> Self {
        Scratch { a: Vec::new(), b: Vec::new(), modal: Vec::new() }
    }
}

/// out = M x (or M^T x), per lane.
fn dense_apply<const W: usize>(m: &Mat, transpose: bool, x: &[[f64; W]], out: &mut [[f64; W]]) -> u64 {
    let (rows, cols) = if transpose { (m.cols, m.rows) } else { (m.rows, m.cols) };
    for r in 0..rows {
        let mut acc = [0.0; W];
        for c in 0..cols {
            let w = if transpose { m[(c, r)] } else { m[(r, c)] };
            for l in 0..W {
                acc[l] += w * x[c][l];
            }
        }
        out[r] = acc;
    }
    (rows * cols) as u64
}

/// Applies `m` (or its transpose) along direction `dir` of a tensor of
/// shape `shape` (direction 0 fastest). Overwrites `out`. Returns the
/// multiply-add count per lane.
pub fn apply_dir<const W: usize>(
    m: &Mat,
    transpose: bool,
    shape: [usize; 3],
    dir: usize,
    input: &[[f64; W]],
    out: &mut [[f64; W]],
) -> u64 {
    let (rows, cols) = if transpose { (m.cols, m.rows) } else { (m.rows, m.cols) };
    debug_assert_eq!(cols, shape[dir]);
    let inner: usize = shape[..dir].iter().product();
    let outer: usize = shape[dir + 1..].iter().product();
    let in_block = cols * inner;
    let out_block = rows * inner;
    for o in 0..outer {
        let ib = &input[o * in_block..(o + 1) * in_block];
        let ob = &mut out[o * out_block..(o + 1) * out_block];
        for r in 0..rows {
            let orow = &mut ob[r * inner..(r + 1) * inner];
            orow.fill([0.0; W]);
            for c in 0..cols {
                let w = if transpose { m[(c, r)] } else { m[(r, c)] };
                if w == 0.0 {
                    continue;
                }
                let irow = &ib[c * inner..(c + 1) * inner];
                for (ov, iv) in orow.iter_mut().zip(irow) {
                    for l in 0..W {
                        ov[l] += w * iv[l];
                    }
                }
            }
        }
    }
    (rows * cols * inner * outer) as u64
}

/// Interleaves per-element arrays into lane layout. A ragged final batch is
/// padded by repeating the last element.
pub fn interleave<const W: usize>(elems: &[&[f64]]) -> Vec<[f64; W]> {
    assert!(!elems.is_empty() && elems.len() <= W);
    let n = elems[0].len();
    let mut out = vec![[0.0; W]; n];
    for (i, o) in out.iter_mut().enumerate() {
        for l in 0..W {
            o[l] = elems[l.min(elems.len() - 1)][i];
        }
    }
    out
}

/// Inverse of [`interleave`] for the first `count` lanes.
pub fn deinterleave<const W: usize>(data: &[[f64; W]], count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|l| data.iter().map(|v| v[l]).collect()).collect()
}
