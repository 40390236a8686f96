//! Structured box meshes, element maps and geometric factors, interface
//! topology with orientation codes, and per-element order maps.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stdregions::{duffy_expand, face_point, face_ref_area_normal, ExpansionKey, Shape};

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub shape: Shape,
    pub verts: Vec<usize>,
}

/// An interface between two element faces, or a boundary face when `right`
/// is `None`. `orient` maps left face parameters to right face parameters
/// (see [`map_param`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub left: (usize, usize),
    pub right: Option<(usize, usize)>,
    pub orient: u8,
    pub tag: Option<String>,
}

impl Interface {
    pub fn is_boundary(&self) -> bool {
        self.right.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub dim: usize,
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<Element>,
    pub interfaces: Vec<Interface>,
    /// Interface id of every element face.
    pub face_iface: Vec<Vec<usize>>,
}

/// Applies orientation `code` to face parameters `t`. For edges code 1
/// reverses; for quad faces bit 2 swaps the two parameters, then bits 0 and 1
/// flip the first and second.
pub fn map_param(code: u8, t: &[f64]) -> Vec<f64> {
    match t.len() {
        0 => vec![],
        1 => vec![if code & 1 == 1 { -t[0] } else { t[0] }],
        _ => {
            let u = if code & 4 != 0 { [t[1], t[0]] } else { [t[0], t[1]] };
            vec![if code & 1 != 0 { -u[0] } else { u[0] }, if code & 2 != 0 { -u[1] } else { u[1] }]
        }
    }
}

/// Number of orientation codes for a face with `nt` parameters.
pub fn n_orientations(nt: usize) -> u8 {
    match nt {
        0 => 1,
        1 => 2,
        _ => 8,
    }
}

pub fn inverse_orientation(code: u8, nt: usize) -> u8 {
    let probe: Vec<f64> = [0.3, -0.7][..nt].to_vec();
    let fwd = map_param(code, &probe);
    (0..n_orientations(nt)).find(|&c| map_param(c, &fwd) == probe).expect("orientation group is closed")
}

/// Index permutation of an `m`-point-per-direction face grid built on a
/// symmetric 1D point set: the point `q` of the left grid coincides with
/// point `perm[q]` of the right grid.
pub fn grid_perm(code: u8, nt: usize, m: usize) -> Vec<usize> {
    let f = |flip: bool, a: usize| if flip { m - 1 - a } else { a };
    match nt {
        0 => vec![0],
        1 => (0..m).map(|a| f(code & 1 == 1, a)).collect(),
        _ => {
            let mut p = Vec::with_capacity(m * m);
            for a1 in 0..m {
                for a0 in 0..m {
                    let (u0, u1) = if code & 4 != 0 { (a1, a0) } else { (a0, a1) };
                    p.push(f(code & 1 != 0, u0) + m * f(code & 2 != 0, u1));
                }
            }
            p
        }
    }
}

fn corner_params(nt: usize, c: usize) -> Vec<f64> {
    let s = |b: bool| if b { 1.0 } else { -1.0 };
    match nt {
        0 => vec![],
        1 => vec![s(c == 1)],
        _ => vec![s(c & 1 == 1), s(c & 2 == 2)],
    }
}

fn corner_index(t: &[f64]) -> usize {
    t.iter().enumerate().map(|(k, &v)| if v > 0.0 { 1 << k } else { 0 }).sum()
}

impl Mesh {
    pub fn face_verts(&self, elem: usize, face: usize) -> Vec<usize> {
        let e = &self.elements[elem];
        e.shape.faces()[face].corners.iter().map(|&c| e.verts[c]).collect()
    }

    pub fn element_coords(&self, elem: usize) -> Vec<[f64; 3]> {
        self.elements[elem].verts.iter().map(|&v| self.vertices[v]).collect()
    }

    pub fn element_map(&self, elem: usize) -> ElementMap {
        ElementMap { shape: self.elements[elem].shape, dim: self.dim, verts: self.element_coords(elem) }
    }

    pub fn centroid(&self, elem: usize) -> [f64; 3] {
        let c = self.element_coords(elem);
        let mut x = [0.0; 3];
        for v in &c {
            for d in 0..3 {
                x[d] += v[d] / c.len() as f64;
            }
        }
        x
    }

    pub fn neighbours(&self, elem: usize) -> Vec<usize> {
        self.face_iface[elem]
            .iter()
            .filter_map(|&i| {
                let it = &self.interfaces[i];
                let r = it.right?;
                Some(if it.left.0 == elem { r.0 } else { it.left.0 })
            })
            .collect()
    }

    pub fn n_interior(&self) -> usize {
        self.interfaces.iter().filter(|i| !i.is_boundary()).count()
    }

    pub fn n_boundary(&self) -> usize {
        self.interfaces.iter().filter(|i| i.is_boundary()).count()
    }

    /// Rebuilds interfaces and orientation codes from element connectivity.
    /// Boundary tags are looked up by face vertex set in `tags`.
    fn build_interfaces(&mut self, tags: &HashMap<Vec<usize>, String>) -> Result<()> {
        let mut open: HashMap<Vec<usize>, (usize, usize)> = HashMap::new();
        let mut ifaces = Vec::new();
        self.face_iface = self.elements.iter().map(|e| vec![usize::MAX; e.shape.nfaces()]).collect();
        for e in 0..self.elements.len() {
            for f in 0..self.elements[e].shape.nfaces() {
                let mut key = self.face_verts(e, f);
                key.sort_unstable();
                if let Some((le, lf)) = open.remove(&key) {
                    let orient = self.orientation((le, lf), (e, f))?;
                    self.face_iface[le][lf] = ifaces.len();
                    self.face_iface[e][f] = ifaces.len();
                    ifaces.push(Interface { left: (le, lf), right: Some((e, f)), orient, tag: None });
                } else {
                    open.insert(key, (e, f));
                }
            }
        }
        let mut rest: Vec<_> = open.into_iter().collect();
        rest.sort_by_key(|(_, ef)| *ef);
        for (key, (e, f)) in rest {
            self.face_iface[e][f] = ifaces.len();
            let tag = tags.get(&key).cloned().unwrap_or_else(|| "boundary".into());
            ifaces.push(Interface { left: (e, f), right: None, orient: 0, tag: Some(tag) });
        }
        self.interfaces = ifaces;
        Ok(())
    }

    /// Orientation code relating the parameters of two coincident faces.
    pub fn orientation(&self, left: (usize, usize), right: (usize, usize)) -> Result<u8> {
        let lv = self.face_verts(left.0, left.1);
        let rv = self.face_verts(right.0, right.1);
        let nt = self.elements[left.0].shape.faces()[left.1].tangential.len();
        'codes: for code in 0..n_orientations(nt) {
            for (c, &v) in lv.iter().enumerate() {
                let s = map_param(code, &corner_params(nt, c));
                if rv[corner_index(&s)] != v {
                    continue 'codes;
                }
            }
            return Ok(code);
        }
        Err(Error::Invalid(format!("faces {left:?} and {right:?} do not match")))
    }

    /// Rebuilds interfaces after the element vertex lists were edited,
    /// keeping the boundary tags.
    pub fn rebuild_interfaces(&mut self) -> Result<()> {
        let tags = self.boundary_tags();
        self.build_interfaces(&tags)
    }

    fn boundary_tags(&self) -> HashMap<Vec<usize>, String> {
        self.interfaces
            .iter()
            .filter(|i| i.is_boundary())
            .map(|i| {
                let mut k = self.face_verts(i.left.0, i.left.1);
                k.sort_unstable();
                (k, i.tag.clone().unwrap_or_default())
            })
            .collect()
    }

    /// Non-identity orientations between element `e` and its neighbours.
    fn misaligned_faces(&self, e: usize, nbrs: &[usize]) -> Result<usize> {
        let mut bad = 0;
        for f in 0..self.elements[e].shape.nfaces() {
            for &n in nbrs {
                if let Some(of) = self.matching_face(n, e, f) {
                    let code = if n < e { self.orientation((n, of), (e, f))? } else { self.orientation((e, f), (n, of))? };
                    if code != 0 {
                        bad += 1;
                    }
                }
            }
        }
        Ok(bad)
    }

    /// Reorders element vertices by orientation-preserving rotations to
    /// reduce the number of interfaces with a non-identity orientation
    /// (local search, sweeping until no element improves). Returns the
    /// number of such interfaces after the pass.
    pub fn canonicalise_orientations(&mut self) -> Result<usize> {
        let tags = self.boundary_tags();
        self.build_interfaces(&tags)?;
        let nbrs: Vec<Vec<usize>> = (0..self.elements.len()).map(|e| self.neighbours(e)).collect();
        for _sweep in 0..16 {
            let mut changed = false;
            for e in 0..self.elements.len() {
                let orig = self.elements[e].verts.clone();
                let mut best = (self.misaligned_faces(e, &nbrs[e])?, orig.clone());
                for r in rotations(self.elements[e].shape) {
                    self.elements[e].verts = r.iter().map(|&k| orig[k]).collect();
                    let bad = self.misaligned_faces(e, &nbrs[e])?;
                    if bad < best.0 {
                        best = (bad, self.elements[e].verts.clone());
                    }
                }
                changed |= best.1 != orig;
                self.elements[e].verts = best.1;
            }
            if !changed {
                break;
            }
        }
        self.build_interfaces(&tags)?;
        Ok(self.interfaces.iter().filter(|i| i.orient != 0).count())
    }

    fn matching_face(&self, other: usize, e: usize, f: usize) -> Option<usize> {
        let mut key = self.face_verts(e, f);
        key.sort_unstable();
        (0..self.elements[other].shape.nfaces()).find(|&g| {
            let mut k = self.face_verts(other, g);
            k.sort_unstable();
            k == key
        })
    }

    /// Applies a smooth map to every vertex.
    pub fn transform(&mut self, f: impl Fn([f64; 3]) -> [f64; 3]) {
        for v in &mut self.vertices {
            *v = f(*v);
        }
    }

    /// Plain-text dump: one `V` line per vertex, one `E` line per element
    /// (id, shape, vertex ids), one `I` line per interface (id, left elem,
    /// left face, right elem or -1, right face or -1, orientation, tag).
    pub fn topology_dump(&self) -> String {
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(s, "V {i} {:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
        }
        for (i, e) in self.elements.iter().enumerate() {
            let vs: Vec<String> = e.verts.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "E {i} {} {}", e.shape.name(), vs.join(" "));
        }
        for (i, it) in self.interfaces.iter().enumerate() {
            let (re, rf) = it.right.map_or((-1, -1), |(e, f)| (e as i64, f as i64));
            let _ = writeln!(s, "I {i} {} {} {re} {rf} {} {}", it.left.0, it.left.1, it.orient, it.tag.as_deref().unwrap_or("-"));
        }
        s
    }
}

/// Orientation-preserving vertex rotations of a shape, as index lists into
/// the original vertex list.
fn rotations(shape: Shape) -> Vec<Vec<usize>> {
    match shape {
        Shape::Seg => vec![vec![0, 1]],
        Shape::Tri => vec![vec![0, 1, 2], vec![1, 2, 0], vec![2, 0, 1]],
        Shape::Quad => (0..4).map(|r| (0..4).map(|k| (k + r) % 4).collect()).collect(),
        Shape::Hex => {
            // generators: quarter turns about the xi3 and xi1 axes
            let a = [1, 2, 3, 0, 5, 6, 7, 4];
            let b = [3, 2, 6, 7, 0, 1, 5, 4];
            let mut all: Vec<Vec<usize>> = vec![(0..8).collect()];
            let mut i = 0;
            while i < all.len() {
                for g in [&a, &b] {
                    let n: Vec<usize> = g.iter().map(|&k| all[i][k]).collect();
                    if !all.contains(&n) {
                        all.push(n);
                    }
                }
                i += 1;
            }
            all
        }
    }
}

/// Generates a conforming box mesh with `nx[d]` cells per axis on
/// `extent[d] = (lo, hi)`. Triangles split every quad along the
/// (low, low) - (high, high) diagonal.
pub fn generate_box(dim: usize, nx: &[usize], shape: Shape, extent: &[(f64, f64)]) -> Result<Mesh> {
    let ok = matches!((dim, shape), (1, Shape::Seg) | (2, Shape::Quad) | (2, Shape::Tri) | (3, Shape::Hex));
    if !ok || nx.len() < dim || extent.len() < dim {
        return Err(Error::Unsupported(format!("{shape:?} mesh in {dim}D")));
    }
    if nx[..dim].contains(&0) {
        return Err(Error::Invalid("nx must be at least 1".into()));
    }
    let mut n = [0usize; 3];
    let mut cnt = [1usize; 3];
    for d in 0..dim {
        n[d] = nx[d];
        cnt[d] = nx[d] + 1;
    }
    let vid = |i: usize, j: usize, k: usize| i + cnt[0] * (j + cnt[1] * k);
    let mut vertices = Vec::new();
    for k in 0..cnt[2] {
        for j in 0..cnt[1] {
            for i in 0..cnt[0] {
                let idx = [i, j, k];
                let mut x = [0.0; 3];
                for d in 0..dim {
                    let (lo, hi) = extent[d];
                    x[d] = if idx[d] == n[d] { hi } else { lo + (hi - lo) * idx[d] as f64 / n[d] as f64 };
                }
                vertices.push(x);
            }
        }
    }
    let mut elements = Vec::new();
    match shape {
        Shape::Seg => {
            for i in 0..n[0] {
                elements.push(Element { shape, verts: vec![i, i + 1] });
            }
        }
        Shape::Quad | Shape::Tri => {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let (a, b, c, d) = (vid(i, j, 0), vid(i + 1, j, 0), vid(i + 1, j + 1, 0), vid(i, j + 1, 0));
                    if shape == Shape::Quad {
                        elements.push(Element { shape, verts: vec![a, b, c, d] });
                    } else {
                        elements.push(Element { shape, verts: vec![a, b, c] });
                        elements.push(Element { shape, verts: vec![a, c, d] });
                    }
                }
            }
        }
        Shape::Hex => {
            for k in 0..n[2] {
                for j in 0..n[1] {
                    for i in 0..n[0] {
                        let v = |di, dj, dk| vid(i + di, j + dj, k + dk);
                        elements.push(Element {
                            shape,
                            verts: vec![v(0, 0, 0), v(1, 0, 0), v(1, 1, 0), v(0, 1, 0), v(0, 0, 1), v(1, 0, 1), v(1, 1, 1), v(0, 1, 1)],
                        });
                    }
                }
            }
        }
    }
    let mut mesh = Mesh { dim, vertices, elements, interfaces: vec![], face_iface: vec![] };
    let mut tags = HashMap::new();
    for e in 0..mesh.elements.len() {
        for f in 0..mesh.elements[e].shape.nfaces() {
            let fv = mesh.face_verts(e, f);
            for d in 0..dim {
                for (side, val) in [("-", extent[d].0), ("+", extent[d].1)] {
                    if fv.iter().all(|&v| mesh.vertices[v][d] == val) {
                        let mut k = fv.clone();
                        k.sort_unstable();
                        tags.insert(k, format!("{}{side}", ["x", "y", "z"][d]));
                    }
                }
            }
        }
    }
    mesh.build_interfaces(&tags)?;
    Ok(mesh)
}

/// Tapers the box towards low `y`: z <- z (1 + c y) in 3D, y <- y (1 + c x)
/// in 2D. Faces stay planar and the x = const faces become trapezoids.
pub fn taper(mesh: &mut Mesh, c: f64) {
    let dim = mesh.dim;
    mesh.transform(|mut x| {
        match dim {
            3 => x[2] *= 1.0 + c * x[1],
            2 => x[1] *= 1.0 + c * x[0],
            _ => {}
        }
        x
    });
}

/// Moves interior vertices by a smooth displacement of relative size `eps`
/// of the local cell size `h`; boundary vertices stay fixed.
pub fn perturb_interior(mesh: &mut Mesh, eps: f64, h: f64, extent: &[(f64, f64)]) {
    let dim = mesh.dim;
    let on_boundary = |x: &[f64; 3]| (0..dim).any(|d| x[d] == extent[d].0 || x[d] == extent[d].1);
    for v in &mut mesh.vertices {
        if on_boundary(v) {
            continue;
        }
        let s: Vec<f64> = (0..dim)
            .map(|d| {
                let (lo, hi) = extent[d];
                (std::f64::consts::PI * (v[d] - lo) / (hi - lo)).sin()
            })
            .collect();
        let bump: f64 = s.iter().product();
        for d in 0..dim {
            let phase = (2.0 * std::f64::consts::PI * v[(d + 1) % dim.max(1)]).cos();
            v[d] += eps * h * bump * phase;
        }
    }
}

/// Isoparametric vertex map of one element (linear, bilinear or trilinear).
#[derive(Debug, Clone)]
pub struct ElementMap {
    pub shape: Shape,
    pub dim: usize,
    pub verts: Vec<[f64; 3]>,
}

impl ElementMap {
    /// Shape-function values and reference gradients at `xi`.
    fn shape_fns(&self, xi: &[f64; 3]) -> Vec<(f64, [f64; 3])> {
        let (a, b, c) = (xi[0], xi[1], xi[2]);
        match self.shape {
            Shape::Seg => vec![((1.0 - a) / 2.0, [-0.5, 0.0, 0.0]), ((1.0 + a) / 2.0, [0.5, 0.0, 0.0])],
            Shape::Tri => vec![
                (-(a + b) / 2.0, [-0.5, -0.5, 0.0]),
                ((1.0 + a) / 2.0, [0.5, 0.0, 0.0]),
                ((1.0 + b) / 2.0, [0.0, 0.5, 0.0]),
            ],
            Shape::Quad => {
                let s = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];
                s.iter()
                    .map(|&(sa, sb)| {
                        let (fa, fb) = ((1.0 + sa * a) / 2.0, (1.0 + sb * b) / 2.0);
                        (fa * fb, [sa / 2.0 * fb, fa * sb / 2.0, 0.0])
                    })
                    .collect()
            }
            Shape::Hex => crate::stdregions::ref_vertices(Shape::Hex)
                .iter()
                .map(|s| {
                    let f = [(1.0 + s[0] * a) / 2.0, (1.0 + s[1] * b) / 2.0, (1.0 + s[2] * c) / 2.0];
                    (f[0] * f[1] * f[2], [s[0] / 2.0 * f[1] * f[2], f[0] * s[1] / 2.0 * f[2], f[0] * f[1] * s[2] / 2.0])
                })
                .collect(),
        }
    }

    pub fn x(&self, xi: &[f64; 3]) -> [f64; 3] {
        let mut x = [0.0; 3];
        for (n, v) in self.shape_fns(xi).iter().zip(&self.verts) {
            for d in 0..3 {
                x[d] += n.0 * v[d];
            }
        }
        x
    }

    /// F[i][j] = dx_i / dxi_j.
    pub fn jacobian(&self, xi: &[f64; 3]) -> [[f64; 3]; 3] {
        let mut f = [[0.0; 3]; 3];
        for (n, v) in self.shape_fns(xi).iter().zip(&self.verts) {
            for i in 0..self.dim {
                for j in 0..self.dim {
                    f[i][j] += v[i] * n.1[j];
                }
            }
        }
        f
    }

    /// True when the map is affine (constant Jacobian).
    pub fn is_affine(&self) -> bool {
        let f0 = self.jacobian(&[0.0; 3]);
        let scale = f0.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        crate::stdregions::ref_vertices(self.shape).iter().all(|v| {
            let f = self.jacobian(v);
            f.iter().flatten().zip(f0.iter().flatten()).all(|(a, b)| (a - b).abs() <= 1e-13 * scale)
        })
    }
}

pub fn det(f: &[[f64; 3]; 3], dim: usize) -> f64 {
    match dim {
        1 => f[0][0],
        2 => f[0][0] * f[1][1] - f[0][1] * f[1][0],
        _ => {
            f[0][0] * (f[1][1] * f[2][2] - f[1][2] * f[2][1]) - f[0][1] * (f[1][0] * f[2][2] - f[1][2] * f[2][0])
                + f[0][2] * (f[1][0] * f[2][1] - f[1][1] * f[2][0])
        }
    }
}

/// Inverse of the leading `dim x dim` block.
pub fn inverse(f: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    let j = det(f, dim);
    let mut g = [[0.0; 3]; 3];
    match dim {
        1 => g[0][0] = 1.0 / j,
        2 => {
            g[0][0] = f[1][1] / j;
            g[0][1] = -f[0][1] / j;
            g[1][0] = -f[1][0] / j;
            g[1][1] = f[0][0] / j;
        }
        _ => {
            for i in 0..3 {
                for k in 0..3 {
                    let (i1, i2) = ((k + 1) % 3, (k + 2) % 3);
                    let (k1, k2) = ((i + 1) % 3, (i + 2) % 3);
                    g[i][k] = (f[i1][k1] * f[i2][k2] - f[i1][k2] * f[i2][k1]) / j;
                }
            }
        }
    }
    g
}

/// d(eta)/dx at a point: collapse metric times d(xi)/dx. Row k holds
/// d eta_k / d x_j.
pub fn deta_dx(shape: Shape, eta: &[f64; 3], dxi_dx: &[[f64; 3]; 3], dim: usize) -> [[f64; 3]; 3] {
    if shape != Shape::Tri {
        return *dxi_dx;
    }
    let c = [[2.0 / (1.0 - eta[1]), (1.0 + eta[0]) / (1.0 - eta[1])], [0.0, 1.0]];
    let mut m = [[0.0; 3]; 3];
    for k in 0..2 {
        for j in 0..dim {
            m[k][j] = c[k][0] * dxi_dx[0][j] + c[k][1] * dxi_dx[1][j];
        }
    }
    m
}

/// Volume factors of one element at its quadrature points.
#[derive(Debug, Clone)]
pub struct ElemGeom {
    /// Affine map: `jac` and `dxi_dx` hold a single value.
    pub regular: bool,
    pub jac: Vec<f64>,
    pub dxi_dx: Vec<[[f64; 3]; 3]>,
    pub coords: Vec<[f64; 3]>,
    pub volume: f64,
}

impl ElemGeom {
    pub fn jac_at(&self, q: usize) -> f64 {
        if self.regular {
            self.jac[0]
        } else {
            self.jac[q]
        }
    }

    pub fn dxi_dx_at(&self, q: usize) -> &[[f64; 3]; 3] {
        if self.regular {
            &self.dxi_dx[0]
        } else {
            &self.dxi_dx[q]
        }
    }
}

/// Reference (collapsed) coordinates of every quadrature point.
pub fn quad_points(exp: &crate::stdregions::Expansion) -> Vec<[f64; 3]> {
    let g = exp.grid;
    (0..exp.nphys)
        .map(|q| {
            let idx = [q % g[0], (q / g[0]) % g[1], q / (g[0] * g[1])];
            let mut eta = [0.0; 3];
            for d in 0..exp.dim {
                eta[d] = exp.points[d][idx[d]];
            }
            eta
        })
        .collect()
}

pub fn element_geometry(mesh: &Mesh, elem: usize, exp: &crate::stdregions::Expansion) -> Result<ElemGeom> {
    let map = mesh.element_map(elem);
    let regular = map.is_affine();
    let pts = quad_points(exp);
    let mut jac = Vec::new();
    let mut dxi = Vec::new();
    let mut coords = Vec::new();
    let mut volume = 0.0;
    for (q, eta) in pts.iter().enumerate() {
        let xi = duffy_expand(exp.shape(), &eta[..exp.dim]);
        let f = map.jacobian(&xi);
        let j = det(&f, mesh.dim);
        if j <= 0.0 {
            return Err(Error::NonPositiveJacobian { element: elem, jac: j });
        }
        coords.push(map.x(&xi));
        volume += j * exp.ref_weight[q];
        if !regular || q == 0 {
            jac.push(j);
            dxi.push(inverse(&f, mesh.dim));
        }
    }
    Ok(ElemGeom { regular, jac, dxi_dx: dxi, coords, volume })
}

pub fn geometric_factors(mesh: &Mesh, keys: &[ExpansionKey]) -> Result<Vec<ElemGeom>> {
    let mut exps: HashMap<ExpansionKey, crate::stdregions::Expansion> = HashMap::new();
    let mut out = Vec::with_capacity(keys.len());
    for (e, k) in keys.iter().enumerate() {
        if !exps.contains_key(k) {
            exps.insert(*k, crate::stdregions::Expansion::new(*k)?);
        }
        out.push(element_geometry(mesh, e, &exps[k])?);
    }
    Ok(out)
}

/// Face factors on a tensor grid of face parameters.
#[derive(Debug, Clone)]
pub struct FaceGeom {
    pub coords: Vec<[f64; 3]>,
    pub normal: Vec<[f64; 3]>,
    /// Surface Jacobian: dS = sjac dt.
    pub sjac: Vec<f64>,
    /// d(eta)/dx of the element at the face points.
    pub deta_dx: Vec<[[f64; 3]; 3]>,
}

/// Face parameters of the tensor grid built on 1D points `t`, first
/// parameter fastest.
pub fn face_grid(nt: usize, t: &[f64]) -> Vec<Vec<f64>> {
    match nt {
        0 => vec![vec![]],
        1 => t.iter().map(|&a| vec![a]).collect(),
        _ => {
            let mut g = Vec::new();
            for &b in t {
                for &a in t {
                    g.push(vec![a, b]);
                }
            }
            g
        }
    }
}

pub fn face_geometry(mesh: &Mesh, elem: usize, face: usize, t: &[f64]) -> Result<FaceGeom> {
    let map = mesh.element_map(elem);
    let shape = map.shape;
    let nt = shape.faces()[face].tangential.len();
    let a = face_ref_area_normal(shape, face);
    let mut g = FaceGeom { coords: vec![], normal: vec![], sjac: vec![], deta_dx: vec![] };
    for p in face_grid(nt, t) {
        let xi = face_point(shape, face, &p);
        let f = map.jacobian(&xi);
        let j = det(&f, mesh.dim);
        if j <= 0.0 {
            return Err(Error::NonPositiveJacobian { element: elem, jac: j });
        }
        let inv = inverse(&f, mesh.dim);
        let mut nv = [0.0; 3];
        for i in 0..mesh.dim {
            for k in 0..mesh.dim {
                nv[i] += j * inv[k][i] * a[k];
            }
        }
        let s = nv.iter().map(|v| v * v).sum::<f64>().sqrt();
        let eta = crate::stdregions::duffy_collapse(shape, &xi[..mesh.dim], true)?;
        g.coords.push(map.x(&xi));
        g.normal.push([nv[0] / s, nv[1] / s, nv[2] / s]);
        g.sjac.push(s);
        g.deta_dx.push(deta_dx(shape, &eta, &inv, mesh.dim));
    }
    Ok(g)
}

/// Per-element (N_P, N_Q).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderMap {
    pub orders: Vec<(usize, usize)>,
}

impl OrderMap {
    pub fn levels(&self) -> Vec<(usize, usize)> {
        let mut l = self.orders.clone();
        l.sort_unstable();
        l.dedup();
        l
    }
}

pub fn assign_orders(mesh: &Mesh, base: (usize, usize), refined_region: impl Fn([f64; 3]) -> bool, refined: (usize, usize)) -> OrderMap {
    OrderMap {
        orders: (0..mesh.elements.len()).map(|e| if refined_region(mesh.centroid(e)) { refined } else { base }).collect(),
    }
}

/// Interior interfaces whose sides carry different order pairs.
pub fn nonconforming_interfaces(mesh: &Mesh, orders: &OrderMap) -> Vec<usize> {
    mesh.interfaces
        .iter()
        .enumerate()
        .filter_map(|(i, it)| {
            let r = it.right?;
            (orders.orders[it.left.0] != orders.orders[r.0]).then_some(i)
        })
        .collect()
}

/// Gives background elements that share a face with the refined region the
/// background N_P and the refined N_Q.
pub fn insert_transition_layer(orders: &OrderMap, mesh: &Mesh) -> Result<OrderMap> {
    let levels = orders.levels();
    if levels.len() > 2 {
        return Err(Error::TooManyLevels(levels.len()));
    }
    if levels.len() < 2 {
        return Ok(orders.clone());
    }
    // the refined level is the one with more modes, then more points
    let (bg, rf) = (levels[0], levels[1]);
    let mut out = orders.clone();
    for e in 0..mesh.elements.len() {
        if orders.orders[e] == bg && mesh.neighbours(e).iter().any(|&n| orders.orders[n] == rf) {
            out.orders[e] = (bg.0, rf.1);
        }
    }
    Ok(out)
}

/// Cuboid predicate |x_d| <= half for every active axis.
pub fn centered_box(dim: usize, half: f64) -> impl Fn([f64; 3]) -> bool {
    move |x| (0..dim).all(|d| x[d].abs() <= half)
}
