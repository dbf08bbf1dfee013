//! Local shape function sets with value, gradient, and Hessian evaluation.
//!
//! All elements are constructed directly on the physical triangle by solving
//! the local interpolation system in centered and diameter-scaled monomial
//! coordinates; the C1 Hsieh-Clough-Tocher macro element does not map
//! affinely, so a per-triangle construction is used for every kind.
//!
//! Local conventions on a triangle with corners (v0, v1, v2):
//! - local edge k is opposite vertex k and runs from v_{k+1} to v_{k+2};
//! - P2 Lagrange dofs: values at the 3 vertices, then at the 3 edge midpoints
//!   (midpoint k on edge k);
//! - Morley dofs: values at the 3 vertices, then the mean of the normal
//!   derivative over each edge (the normal direction is supplied per edge);
//! - HCT dofs: value, x-derivative, y-derivative at each vertex (9), then the
//!   normal derivative at each edge midpoint (3).

use crate::dense::{lu_solve, qr_least_squares, DMat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    P2Lagrange,
    Morley,
    Hct,
    CrP1,
}

/// Polynomial in centered, scaled monomials: p(x) = sum c_j m_j(xi, eta),
/// xi = (x - center) / scale.
#[derive(Debug, Clone)]
pub struct LocalPoly {
    pub center: [f64; 2],
    pub scale: f64,
    /// Coefficients over the monomial basis
    /// [1, xi, eta, xi^2, xi*eta, eta^2, xi^3, xi^2*eta, xi*eta^2, eta^3],
    /// truncated to the polynomial degree.
    pub coeffs: Vec<f64>,
}

pub const MONO_COUNT_BY_DEGREE: [usize; 4] = [1, 3, 6, 10];

/// Monomial values and derivatives with respect to (xi, eta) at a point.
fn monomials(n: usize, xi: f64, eta: f64, val: &mut [f64], grad: &mut [[f64; 2]], hess: &mut [[f64; 3]]) {
    let table: [([f64; 1], [f64; 2], [f64; 3]); 10] = [
        ([1.0], [0.0, 0.0], [0.0, 0.0, 0.0]),
        ([xi], [1.0, 0.0], [0.0, 0.0, 0.0]),
        ([eta], [0.0, 1.0], [0.0, 0.0, 0.0]),
        ([xi * xi], [2.0 * xi, 0.0], [2.0, 0.0, 0.0]),
        ([xi * eta], [eta, xi], [0.0, 1.0, 0.0]),
        ([eta * eta], [0.0, 2.0 * eta], [0.0, 0.0, 2.0]),
        ([xi * xi * xi], [3.0 * xi * xi, 0.0], [6.0 * xi, 0.0, 0.0]),
        ([xi * xi * eta], [2.0 * xi * eta, xi * xi], [2.0 * eta, 2.0 * xi, 0.0]),
        ([xi * eta * eta], [eta * eta, 2.0 * xi * eta], [0.0, 2.0 * eta, 2.0 * xi]),
        ([eta * eta * eta], [0.0, 3.0 * eta * eta], [0.0, 0.0, 6.0 * eta]),
    ];
    for j in 0..n {
        val[j] = table[j].0[0];
        grad[j] = table[j].1;
        hess[j] = table[j].2;
    }
}

impl LocalPoly {
    /// Value, gradient, and Hessian (dxx, dxy, dyy) at a physical point.
    pub fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        let xi = (x[0] - self.center[0]) / self.scale;
        let eta = (x[1] - self.center[1]) / self.scale;
        let n = self.coeffs.len();
        let mut mv = [0.0; 10];
        let mut mg = [[0.0; 2]; 10];
        let mut mh = [[0.0; 3]; 10];
        monomials(n, xi, eta, &mut mv, &mut mg, &mut mh);
        let mut v = 0.0;
        let mut g = [0.0; 2];
        let mut h = [0.0; 3];
        for j in 0..n {
            let c = self.coeffs[j];
            v += c * mv[j];
            g[0] += c * mg[j][0];
            g[1] += c * mg[j][1];
            h[0] += c * mh[j][0];
            h[1] += c * mh[j][1];
            h[2] += c * mh[j][2];
        }
        let s = self.scale;
        (v, [g[0] / s, g[1] / s], [h[0] / (s * s), h[1] / (s * s), h[2] / (s * s)])
    }
}

#[derive(Debug, Clone)]
enum ShapeFn {
    Single(LocalPoly),
    /// One cubic per subtriangle of the interior split.
    Macro([LocalPoly; 3]),
}

/// Descriptor of what a degree of freedom measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DofKind {
    /// Value at vertex `k`.
    VertexValue(usize),
    /// Gradient component (0 = x, 1 = y) at vertex `k`.
    VertexGradient(usize, usize),
    /// Value at the midpoint of local edge `k`.
    EdgeMidValue(usize),
    /// Mean of the normal derivative over local edge `k`.
    EdgeNormalMean(usize),
    /// Normal derivative at the midpoint of local edge `k`.
    EdgeMidNormal(usize),
}

/// Shape functions of one element on one physical triangle.
#[derive(Debug, Clone)]
pub struct ShapeSet {
    pub kind: ElementKind,
    pub corners: [[f64; 2]; 3],
    pub dofs: Vec<DofKind>,
    shapes: Vec<ShapeFn>,
    /// Subtriangle corner coordinates for the macro element.
    subs: Option<[[[f64; 2]; 3]; 3]>,
}

#[derive(Debug, Clone)]
pub struct ShapeError(pub String);

impl std::fmt::Display for ShapeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "shape construction failed: {}", self.0)
    }
}

impl std::error::Error for ShapeError {}

fn centroid(c: &[[f64; 2]; 3]) -> [f64; 2] {
    [(c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0]
}

fn diameter(c: &[[f64; 2]; 3]) -> f64 {
    let mut h: f64 = 0.0;
    for k in 0..3 {
        let d = [c[(k + 1) % 3][0] - c[k][0], c[(k + 1) % 3][1] - c[k][1]];
        h = h.max((d[0] * d[0] + d[1] * d[1]).sqrt());
    }
    h
}

fn edge_midpoint(c: &[[f64; 2]; 3], k: usize) -> [f64; 2] {
    let p = c[(k + 1) % 3];
    let q = c[(k + 2) % 3];
    [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]
}

/// Outward unit normals of the three local edges of a counterclockwise
/// triangle.
pub fn outward_normals(c: &[[f64; 2]; 3]) -> [[f64; 2]; 3] {
    let mut normals = [[0.0; 2]; 3];
    for k in 0..3 {
        let p = c[(k + 1) % 3];
        let q = c[(k + 2) % 3];
        let d = [q[0] - p[0], q[1] - p[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        normals[k] = [d[1] / len, -d[0] / len];
    }
    normals
}

/// Rows of the interpolation system: dof functionals applied to the scaled
/// monomials. `scale_len` multiplies derivative rows so the system stays
/// O(1)-conditioned; the right-hand side is scaled identically, which leaves
/// the solution unchanged.
struct DofRow {
    coeffs: Vec<f64>,
    rhs_scale: f64,
}

fn mono_row_value(n: usize, center: [f64; 2], scale: f64, x: [f64; 2]) -> Vec<f64> {
    let mut mv = [0.0; 10];
    let mut mg = [[0.0; 2]; 10];
    let mut mh = [[0.0; 3]; 10];
    monomials(n, (x[0] - center[0]) / scale, (x[1] - center[1]) / scale, &mut mv, &mut mg, &mut mh);
    mv[..n].to_vec()
}

fn mono_row_dir_derivative(
    n: usize,
    center: [f64; 2],
    scale: f64,
    x: [f64; 2],
    dir: [f64; 2],
) -> Vec<f64> {
    let mut mv = [0.0; 10];
    let mut mg = [[0.0; 2]; 10];
    let mut mh = [[0.0; 3]; 10];
    monomials(n, (x[0] - center[0]) / scale, (x[1] - center[1]) / scale, &mut mv, &mut mg, &mut mh);
    // Scaled-coordinate gradient; the physical derivative carries 1/scale,
    // which the caller absorbs in rhs_scale.
    (0..n).map(|j| dir[0] * mg[j][0] + dir[1] * mg[j][1]).collect()
}

/// Quadratic Lagrange shapes.
pub fn p2_shapes(corners: [[f64; 2]; 3]) -> Result<ShapeSet, ShapeError> {
    let center = centroid(&corners);
    let scale = diameter(&corners);
    let n = 6;
    let mut m = DMat::zeros(n, n);
    let mut dofs = Vec::new();
    for (i, x) in corners.iter().enumerate() {
        let row = mono_row_value(n, center, scale, *x);
        for j in 0..n {
            m.set(i, j, row[j]);
        }
        dofs.push(DofKind::VertexValue(i));
    }
    for k in 0..3 {
        let row = mono_row_value(n, center, scale, edge_midpoint(&corners, k));
        for j in 0..n {
            m.set(3 + k, j, row[j]);
        }
        dofs.push(DofKind::EdgeMidValue(k));
    }
    let mut rhs = DMat::zeros(n, n);
    for i in 0..n {
        rhs.set(i, i, 1.0);
    }
    lu_solve(&m, &mut rhs).map_err(|e| ShapeError(format!("degenerate P2 geometry: {e}")))?;
    let shapes = (0..n)
        .map(|s| {
            ShapeFn::Single(LocalPoly {
                center,
                scale,
                coeffs: (0..n).map(|j| rhs.get(j, s)).collect(),
            })
        })
        .collect();
    Ok(ShapeSet { kind: ElementKind::P2Lagrange, corners, dofs, shapes, subs: None })
}

/// Morley shapes with prescribed edge normal directions (one per local edge;
/// any consistent orientation is admissible).
pub fn morley_shapes(corners: [[f64; 2]; 3], normals: &[[f64; 2]; 3]) -> Result<ShapeSet, ShapeError> {
    let center = centroid(&corners);
    let scale = diameter(&corners);
    let n = 6;
    let mut m = DMat::zeros(n, n);
    let mut dofs = Vec::new();
    for (i, x) in corners.iter().enumerate() {
        let row = mono_row_value(n, center, scale, *x);
        for j in 0..n {
            m.set(i, j, row[j]);
        }
        dofs.push(DofKind::VertexValue(i));
    }
    for k in 0..3 {
        // The gradient of a quadratic is affine, so the edge mean of the
        // normal derivative is its value at the edge midpoint.
        let row = mono_row_dir_derivative(n, center, scale, edge_midpoint(&corners, k), normals[k]);
        for j in 0..n {
            m.set(3 + k, j, row[j]);
        }
        dofs.push(DofKind::EdgeNormalMean(k));
    }
    // Derivative rows are 1/scale too small in scaled coordinates; scaling
    // the identity right-hand side correspondingly keeps the true dofs.
    let mut rhs = DMat::zeros(n, n);
    for i in 0..3 {
        rhs.set(i, i, 1.0);
    }
    for i in 3..6 {
        rhs.set(i, i, scale);
    }
    lu_solve(&m, &mut rhs).map_err(|e| ShapeError(format!("degenerate Morley geometry: {e}")))?;
    let shapes = (0..n)
        .map(|s| {
            ShapeFn::Single(LocalPoly {
                center,
                scale,
                coeffs: (0..n).map(|j| rhs.get(j, s)).collect(),
            })
        })
        .collect();
    Ok(ShapeSet { kind: ElementKind::Morley, corners, dofs, shapes, subs: None })
}

/// Crouzeix-Raviart P1 shapes (values at edge midpoints).
pub fn cr_shapes(corners: [[f64; 2]; 3]) -> Result<ShapeSet, ShapeError> {
    let center = centroid(&corners);
    let scale = diameter(&corners);
    let n = 3;
    let mut m = DMat::zeros(n, n);
    let mut dofs = Vec::new();
    for k in 0..3 {
        let row = mono_row_value(n, center, scale, edge_midpoint(&corners, k));
        for j in 0..n {
            m.set(k, j, row[j]);
        }
        dofs.push(DofKind::EdgeMidValue(k));
    }
    let mut rhs = DMat::zeros(n, n);
    for i in 0..n {
        rhs.set(i, i, 1.0);
    }
    lu_solve(&m, &mut rhs).map_err(|e| ShapeError(format!("degenerate CR geometry: {e}")))?;
    let shapes = (0..n)
        .map(|s| {
            ShapeFn::Single(LocalPoly {
                center,
                scale,
                coeffs: (0..n).map(|j| rhs.get(j, s)).collect(),
            })
        })
        .collect();
    Ok(ShapeSet { kind: ElementKind::CrP1, corners, dofs, shapes, subs: None })
}

/// Hsieh-Clough-Tocher macro shapes on the three-subtriangle split of the
/// triangle, C1 across the interior interfaces.
///
/// The 30 cubic coefficients (10 per subtriangle) are determined by the 12
/// dof rows plus value and normal-derivative matching along the three
/// interior segments; the consistent overdetermined system is solved by
/// least squares.
pub fn hct_shapes(corners: [[f64; 2]; 3], normals: &[[f64; 2]; 3]) -> Result<ShapeSet, ShapeError> {
    let c = centroid(&corners);
    let scale = diameter(&corners);
    let n = 10;
    // Subtriangle k sits on exterior edge k: (v_{k+1}, v_{k+2}, centroid).
    let subs: [[[f64; 2]; 3]; 3] = [
        [corners[1], corners[2], c],
        [corners[2], corners[0], c],
        [corners[0], corners[1], c],
    ];
    let n_unknowns = 30;
    let mut rows: Vec<DofRow> = Vec::new();
    let mut dofs = Vec::new();

    let push_row = |sub: usize, local: Vec<f64>, sign: f64, rhs_scale: f64, rows: &mut Vec<DofRow>| {
        let mut coeffs = vec![0.0; n_unknowns];
        for j in 0..n {
            coeffs[sub * n + j] = sign * local[j];
        }
        rows.push(DofRow { coeffs, rhs_scale });
    };

    // Vertex dofs, taken on one subtriangle containing the vertex; the
    // matching rows below propagate them to the other.
    for i in 0..3 {
        // Vertex v_i lies in subtriangles (i+1)%3 and (i+2)%3.
        let sub = (i + 1) % 3;
        push_row(sub, mono_row_value(n, c, scale, corners[i]), 1.0, 1.0, &mut rows);
        dofs.push(DofKind::VertexValue(i));
        push_row(
            sub,
            mono_row_dir_derivative(n, c, scale, corners[i], [1.0, 0.0]),
            1.0,
            scale,
            &mut rows,
        );
        dofs.push(DofKind::VertexGradient(i, 0));
        push_row(
            sub,
            mono_row_dir_derivative(n, c, scale, corners[i], [0.0, 1.0]),
            1.0,
            scale,
            &mut rows,
        );
        dofs.push(DofKind::VertexGradient(i, 1));
    }
    for k in 0..3 {
        push_row(
            k,
            mono_row_dir_derivative(n, c, scale, edge_midpoint(&corners, k), normals[k]),
            1.0,
            scale,
            &mut rows,
        );
        dofs.push(DofKind::EdgeMidNormal(k));
    }
    let n_dof_rows = rows.len();

    // Interior matching along the segments from the centroid to each vertex:
    // cubic traces agree at 4 points, normal derivatives (quadratic) at 3.
    for i in 0..3 {
        let s_from = c;
        let s_to = corners[i];
        let d = [s_to[0] - s_from[0], s_to[1] - s_from[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        let nrm = [d[1] / len, -d[0] / len];
        let sub_a = (i + 1) % 3;
        let sub_b = (i + 2) % 3;
        for t in [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0] {
            let x = [s_from[0] + t * d[0], s_from[1] + t * d[1]];
            let row_a = mono_row_value(n, c, scale, x);
            let row_b = mono_row_value(n, c, scale, x);
            let mut coeffs = vec![0.0; n_unknowns];
            for j in 0..n {
                coeffs[sub_a * n + j] = row_a[j];
                coeffs[sub_b * n + j] -= row_b[j];
            }
            rows.push(DofRow { coeffs, rhs_scale: 0.0 });
        }
        for t in [0.0, 0.5, 1.0] {
            let x = [s_from[0] + t * d[0], s_from[1] + t * d[1]];
            let row_a = mono_row_dir_derivative(n, c, scale, x, nrm);
            let row_b = mono_row_dir_derivative(n, c, scale, x, nrm);
            let mut coeffs = vec![0.0; n_unknowns];
            for j in 0..n {
                coeffs[sub_a * n + j] = row_a[j];
                coeffs[sub_b * n + j] -= row_b[j];
            }
            rows.push(DofRow { coeffs, rhs_scale: 0.0 });
        }
    }

    let n_rows = rows.len();
    let mut a = DMat::zeros(n_rows, n_unknowns);
    let mut b = DMat::zeros(n_rows, 12);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..n_unknowns {
            a.set(i, j, row.coeffs[j]);
        }
        if i < n_dof_rows {
            b.set(i, i, row.rhs_scale);
        }
    }
    let x = qr_least_squares(&a, &b).map_err(|e| ShapeError(format!("HCT system: {e}")))?;

    let mut shapes = Vec::with_capacity(12);
    for s in 0..12 {
        let polys: [LocalPoly; 3] = std::array::from_fn(|sub| LocalPoly {
            center: c,
            scale,
            coeffs: (0..n).map(|j| x.get(sub * n + j, s)).collect(),
        });
        shapes.push(ShapeFn::Macro(polys));
    }
    Ok(ShapeSet { kind: ElementKind::Hct, corners, dofs, shapes, subs: Some(subs) })
}

impl ShapeSet {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Index of the subtriangle containing `x` (macro kinds only).
    pub fn subtriangle_of(&self, x: [f64; 2]) -> usize {
        let subs = self.subs.as_ref().expect("macro element");
        let mut best = 0;
        let mut best_min = -f64::INFINITY;
        for (k, sub) in subs.iter().enumerate() {
            let l = barycentric_of(sub, x);
            let m = l[0].min(l[1]).min(l[2]);
            if m > best_min {
                best_min = m;
                best = k;
            }
        }
        best
    }

    /// Value, gradient, Hessian of shape `i` at the physical point `x`.
    pub fn eval(&self, i: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        match &self.shapes[i] {
            ShapeFn::Single(p) => p.eval(x),
            ShapeFn::Macro(polys) => polys[self.subtriangle_of(x)].eval(x),
        }
    }

    /// Evaluate every shape at `x`, all on the same subtriangle for macro
    /// kinds.
    pub fn eval_all(&self, x: [f64; 2], out: &mut Vec<(f64, [f64; 2], [f64; 3])>) {
        out.clear();
        match self.kind {
            ElementKind::Hct => {
                let sub = self.subtriangle_of(x);
                for s in &self.shapes {
                    if let ShapeFn::Macro(polys) = s {
                        out.push(polys[sub].eval(x));
                    }
                }
            }
            _ => {
                for s in &self.shapes {
                    if let ShapeFn::Single(p) = s {
                        out.push(p.eval(x));
                    }
                }
            }
        }
    }

    /// Evaluate every shape at a point forced onto subtriangle `sub`
    /// (macro kinds only). Needed for subtriangle-wise quadrature where the
    /// point may lie on an interior interface. All shapes of a set share the
    /// same local frame, so the monomial tables are built once per call.
    pub fn eval_all_on_sub(&self, sub: usize, x: [f64; 2], out: &mut Vec<(f64, [f64; 2], [f64; 3])>) {
        out.clear();
        let Some(first) = self.shapes.first() else { return };
        let frame = match first {
            ShapeFn::Single(p) => p,
            ShapeFn::Macro(polys) => &polys[0],
        };
        let (center, scale) = (frame.center, frame.scale);
        let xi = (x[0] - center[0]) / scale;
        let eta = (x[1] - center[1]) / scale;
        let mut mv = [0.0; 10];
        let mut mg = [[0.0; 2]; 10];
        let mut mh = [[0.0; 3]; 10];
        let n_max = self
            .shapes
            .iter()
            .map(|s| match s {
                ShapeFn::Single(p) => p.coeffs.len(),
                ShapeFn::Macro(polys) => polys[sub].coeffs.len(),
            })
            .max()
            .unwrap();
        monomials(n_max, xi, eta, &mut mv, &mut mg, &mut mh);
        let s1 = 1.0 / scale;
        let s2 = s1 * s1;
        for s in &self.shapes {
            let coeffs = match s {
                ShapeFn::Single(p) => &p.coeffs,
                ShapeFn::Macro(polys) => &polys[sub].coeffs,
            };
            let mut v = 0.0;
            let mut g = [0.0; 2];
            let mut h = [0.0; 3];
            for (j, &c) in coeffs.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                v += c * mv[j];
                g[0] += c * mg[j][0];
                g[1] += c * mg[j][1];
                h[0] += c * mh[j][0];
                h[1] += c * mh[j][1];
                h[2] += c * mh[j][2];
            }
            out.push((v, [g[0] * s1, g[1] * s1], [h[0] * s2, h[1] * s2, h[2] * s2]));
        }
    }

    /// Linear combination of the shapes with the given local coefficients,
    /// collapsed into one polynomial per (sub)triangle. Evaluating the
    /// combination is then a single polynomial evaluation per point.
    pub fn combine(&self, local_coeffs: &[f64]) -> CombinedShape {
        assert_eq!(local_coeffs.len(), self.shapes.len());
        match self.kind {
            ElementKind::Hct => {
                let polys: [LocalPoly; 3] = std::array::from_fn(|sub| {
                    let mut acc: Option<LocalPoly> = None;
                    for (s, &c) in self.shapes.iter().zip(local_coeffs) {
                        let ShapeFn::Macro(p) = s else { unreachable!() };
                        let src = &p[sub];
                        match &mut acc {
                            None => {
                                let mut clone = src.clone();
                                for v in &mut clone.coeffs {
                                    *v *= c;
                                }
                                acc = Some(clone);
                            }
                            Some(dst) => {
                                for (d, &v) in dst.coeffs.iter_mut().zip(&src.coeffs) {
                                    *d += c * v;
                                }
                            }
                        }
                    }
                    acc.unwrap()
                });
                CombinedShape::Macro { polys, set_subs: self.subs.unwrap() }
            }
            _ => {
                let mut acc: Option<LocalPoly> = None;
                for (s, &c) in self.shapes.iter().zip(local_coeffs) {
                    let ShapeFn::Single(p) = s else { unreachable!() };
                    match &mut acc {
                        None => {
                            let mut clone = p.clone();
                            for v in &mut clone.coeffs {
                                *v *= c;
                            }
                            acc = Some(clone);
                        }
                        Some(dst) => {
                            for (d, &v) in dst.coeffs.iter_mut().zip(&p.coeffs) {
                                *d += c * v;
                            }
                        }
                    }
                }
                CombinedShape::Single(acc.expect("nonempty shape set"))
            }
        }
    }

    /// Corner coordinates of subtriangle `sub` of the macro split.
    pub fn subtriangle(&self, sub: usize) -> [[f64; 2]; 3] {
        self.subs.as_ref().expect("macro element")[sub]
    }
}

/// Collapsed linear combination of the shapes of one element.
#[derive(Debug, Clone)]
pub enum CombinedShape {
    Single(LocalPoly),
    Macro { polys: [LocalPoly; 3], set_subs: [[[f64; 2]; 3]; 3] },
}

impl CombinedShape {
    pub fn eval(&self, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        match self {
            CombinedShape::Single(p) => p.eval(x),
            CombinedShape::Macro { polys, set_subs } => {
                let mut best = 0;
                let mut best_min = -f64::INFINITY;
                for (k, sub) in set_subs.iter().enumerate() {
                    let l = barycentric_of(sub, x);
                    let m = l[0].min(l[1]).min(l[2]);
                    if m > best_min {
                        best_min = m;
                        best = k;
                    }
                }
                polys[best].eval(x)
            }
        }
    }

    /// Evaluate on a fixed subtriangle (macro) or directly (single).
    pub fn eval_on_sub(&self, sub: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        match self {
            CombinedShape::Single(p) => p.eval(x),
            CombinedShape::Macro { polys, .. } => polys[sub].eval(x),
        }
    }
}

fn barycentric_of(c: &[[f64; 2]; 3], x: [f64; 2]) -> [f64; 3] {
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let l1 = ((x[0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (x[1] - c[0][1])) / det;
    let l2 = ((c[1][0] - c[0][0]) * (x[1] - c[0][1]) - (x[0] - c[0][0]) * (c[1][1] - c[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Apply the dof functional `kind` to a smooth function given by closures for
/// value and gradient. Used for interpolation tests and dof-driven
/// construction.
pub fn apply_dof(
    corners: &[[f64; 2]; 3],
    normals: &[[f64; 2]; 3],
    kind: DofKind,
    value: &dyn Fn([f64; 2]) -> f64,
    gradient: &dyn Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    match kind {
        DofKind::VertexValue(i) => value(corners[i]),
        DofKind::VertexGradient(i, c) => gradient(corners[i])[c],
        DofKind::EdgeMidValue(k) => value(edge_midpoint(corners, k)),
        DofKind::EdgeNormalMean(k) | DofKind::EdgeMidNormal(k) => {
            let g = gradient(edge_midpoint(corners, k));
            g[0] * normals[k][0] + g[1] * normals[k][1]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::quad_triangle;

    const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    const SKEW: [[f64; 2]; 3] = [[0.1, -0.2], [1.3, 0.25], [0.4, 1.1]];

    fn kronecker_check(set: &ShapeSet, normals: &[[f64; 2]; 3], tol: f64) {
        for (i, &kind) in set.dofs.iter().enumerate() {
            for j in 0..set.len() {
                let got = apply_dof(
                    &set.corners,
                    normals,
                    kind,
                    &|x| set.eval(j, x).0,
                    &|x| set.eval(j, x).1,
                );
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (got - want).abs() < tol,
                    "{:?} dof {i} on shape {j}: {got} vs {want}",
                    set.kind
                );
            }
        }
    }

    #[test]
    fn p2_kronecker_and_partition_of_unity() {
        for corners in [REF, SKEW] {
            let set = p2_shapes(corners).unwrap();
            let normals = outward_normals(&corners);
            kronecker_check(&set, &normals, 1e-12);
            let rule = quad_triangle(4).unwrap();
            for p in &rule.points {
                let x = [
                    p[0] * corners[0][0] + p[1] * corners[1][0] + p[2] * corners[2][0],
                    p[0] * corners[0][1] + p[1] * corners[1][1] + p[2] * corners[2][1],
                ];
                let sum: f64 = (0..6).map(|j| set.eval(j, x).0).sum();
                assert!((sum - 1.0).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn morley_kronecker_and_vertex_shape() {
        let normals = outward_normals(&REF);
        let set = morley_shapes(REF, &normals).unwrap();
        kronecker_check(&set, &normals, 1e-12);
        // The shape attached to the vertex value at (0,0): value 1 there,
        // 0 at the other vertices, zero normal-derivative mean on all edges.
        let v0 = set.eval(0, [0.0, 0.0]).0;
        assert!((v0 - 1.0).abs() < 1e-13);
        assert!(set.eval(0, [1.0, 0.0]).0.abs() < 1e-13);
        assert!(set.eval(0, [0.0, 1.0]).0.abs() < 1e-13);
        for k in 0..3 {
            let mid = edge_midpoint(&REF, k);
            let g = set.eval(0, mid).1;
            let nd = g[0] * normals[k][0] + g[1] * normals[k][1];
            assert!(nd.abs() < 1e-13);
        }
    }

    #[test]
    fn p2_and_morley_reproduce_quadratics() {
        let funcs: [(&dyn Fn([f64; 2]) -> f64, &dyn Fn([f64; 2]) -> [f64; 2]); 3] = [
            (&|x| x[0] * x[0], &|x| [2.0 * x[0], 0.0]),
            (&|x| x[0] * x[1], &|x| [x[1], x[0]]),
            (&|x| 1.0 - x[0] + 2.0 * x[1] + x[1] * x[1], &|x| [-1.0, 2.0 + 2.0 * x[1]]),
        ];
        for corners in [REF, SKEW] {
            let normals = outward_normals(&corners);
            for set in [p2_shapes(corners).unwrap(), morley_shapes(corners, &normals).unwrap()] {
                for (f, g) in funcs {
                    let coeffs: Vec<f64> = set
                        .dofs
                        .iter()
                        .map(|&k| apply_dof(&corners, &normals, k, f, g))
                        .collect();
                    for probe in [[0.3, 0.3], [0.5, 0.1], [0.25, 0.6]] {
                        let x = [
                            corners[0][0]
                                + probe[0] * (corners[1][0] - corners[0][0])
                                + probe[1] * (corners[2][0] - corners[0][0]),
                            corners[0][1]
                                + probe[0] * (corners[1][1] - corners[0][1])
                                + probe[1] * (corners[2][1] - corners[0][1]),
                        ];
                        let mut val = 0.0;
                        for j in 0..set.len() {
                            val += coeffs[j] * set.eval(j, x).0;
                        }
                        assert!((val - f(x)).abs() < 1e-12, "{:?}", set.kind);
                    }
                }
            }
        }
    }

    #[test]
    fn quadratic_shapes_have_constant_hessians() {
        let normals = outward_normals(&SKEW);
        for set in [p2_shapes(SKEW).unwrap(), morley_shapes(SKEW, &normals).unwrap()] {
            for j in 0..set.len() {
                let h0 = set.eval(j, [0.5, 0.2]).2;
                for x in [[0.2, 0.1], [0.9, 0.6], [0.4, 0.8]] {
                    let h = set.eval(j, x).2;
                    for c in 0..3 {
                        assert!((h[c] - h0[c]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn hct_kronecker() {
        for corners in [REF, SKEW] {
            let normals = outward_normals(&corners);
            let set = hct_shapes(corners, &normals).unwrap();
            kronecker_check(&set, &normals, 1e-11);
        }
    }

    #[test]
    fn hct_is_c1_across_interior_interfaces() {
        let corners = SKEW;
        let normals = outward_normals(&corners);
        let set = hct_shapes(corners, &normals).unwrap();
        let c = centroid(&corners);
        for j in 0..12 {
            for i in 0..3 {
                let d = [corners[i][0] - c[0], corners[i][1] - c[1]];
                let sub_a = (i + 1) % 3;
                let sub_b = (i + 2) % 3;
                for t in [0.1, 0.37, 0.62, 0.95] {
                    let x = [c[0] + t * d[0], c[1] + t * d[1]];
                    let mut va = Vec::new();
                    let mut vb = Vec::new();
                    set.eval_all_on_sub(sub_a, x, &mut va);
                    set.eval_all_on_sub(sub_b, x, &mut vb);
                    assert!((va[j].0 - vb[j].0).abs() < 1e-10, "value jump shape {j}");
                    assert!((va[j].1[0] - vb[j].1[0]).abs() < 1e-10, "grad-x jump shape {j}");
                    assert!((va[j].1[1] - vb[j].1[1]).abs() < 1e-10, "grad-y jump shape {j}");
                }
            }
        }
    }

    #[test]
    fn hct_reproduces_cubics_per_subtriangle() {
        let corners = SKEW;
        let normals = outward_normals(&corners);
        let set = hct_shapes(corners, &normals).unwrap();
        let f = |x: [f64; 2]| x[0].powi(3) - 2.0 * x[0] * x[1] * x[1] + x[1] + 0.5;
        let g = |x: [f64; 2]| [3.0 * x[0] * x[0] - 2.0 * x[1] * x[1], -4.0 * x[0] * x[1] + 1.0];
        let coeffs: Vec<f64> =
            set.dofs.iter().map(|&k| apply_dof(&corners, &normals, k, &f, &g)).collect();
        for x in [[0.5, 0.2], [0.3, 0.5], [0.8, 0.5], [0.6, 0.38]] {
            let mut val = 0.0;
            let mut grad = [0.0, 0.0];
            for j in 0..12 {
                let (v, gr, _) = set.eval(j, x);
                val += coeffs[j] * v;
                grad[0] += coeffs[j] * gr[0];
                grad[1] += coeffs[j] * gr[1];
            }
            assert!((val - f(x)).abs() < 1e-10, "{val} vs {}", f(x));
            assert!((grad[0] - g(x)[0]).abs() < 1e-9);
            assert!((grad[1] - g(x)[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn hct_unit_normal_dof_trace() {
        // All dofs zero except the normal derivative at one edge midpoint:
        // zero value along that edge, quadratic normal derivative with
        // midpoint value 1.
        let corners = REF;
        let normals = outward_normals(&corners);
        let set = hct_shapes(corners, &normals).unwrap();
        let shape = 9; // edge 0 midpoint normal dof
        let p = corners[1];
        let q = corners[2];
        let mut samples = Vec::new();
        for t in [0.0, 0.2, 0.45, 0.5, 0.7, 0.9, 1.0] {
            let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
            let (v, g, _) = set.eval(shape, x);
            assert!(v.abs() < 1e-11, "value on edge must vanish, got {v}");
            samples.push((t, g[0] * normals[0][0] + g[1] * normals[0][1]));
        }
        // Quadratic fit through the first three samples must reproduce the
        // rest and give 1 at the midpoint.
        let fit = |t: f64| {
            // Lagrange through t = 0.0, 0.2, 0.45.
            let (t0, y0) = samples[0];
            let (t1, y1) = samples[1];
            let (t2, y2) = samples[2];
            y0 * (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2))
                + y1 * (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2))
                + y2 * (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1))
        };
        for &(t, y) in &samples[3..] {
            assert!((fit(t) - y).abs() < 1e-10, "normal derivative must be quadratic");
        }
        assert!((fit(0.5) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hct_normal_derivative_quadratic_on_exterior_edges() {
        let corners = SKEW;
        let normals = outward_normals(&corners);
        let set = hct_shapes(corners, &normals).unwrap();
        for j in 0..12 {
            for k in 0..3 {
                let p = corners[(k + 1) % 3];
                let q = corners[(k + 2) % 3];
                let nd = |t: f64| {
                    let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                    let g = set.eval(j, x).1;
                    g[0] * normals[k][0] + g[1] * normals[k][1]
                };
                let (y0, y1, y2) = (nd(0.0), nd(0.5), nd(1.0));
                let fit = |t: f64| {
                    y0 * (t - 0.5) * (t - 1.0) / 0.5 + y1 * t * (t - 1.0) / (-0.25)
                        + y2 * t * (t - 0.5) / 0.5
                };
                for t in [0.22, 0.61, 0.87] {
                    assert!((fit(t) - nd(t)).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn p2_affine_mapping_consistency() {
        // Mapping the reference shapes through the affine map agrees with the
        // direct physical construction.
        let corners = SKEW;
        let ref_set = p2_shapes(REF).unwrap();
        let phys_set = p2_shapes(corners).unwrap();
        // Affine map F(l) = v0 + B l, with reference coordinates l.
        let b = [
            [corners[1][0] - corners[0][0], corners[2][0] - corners[0][0]],
            [corners[1][1] - corners[0][1], corners[2][1] - corners[0][1]],
        ];
        let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
        let binv = [
            [b[1][1] / det, -b[0][1] / det],
            [-b[1][0] / det, b[0][0] / det],
        ];
        for j in 0..6 {
            for l in [[0.2, 0.3], [0.5, 0.25], [0.1, 0.8]] {
                let x = [
                    corners[0][0] + b[0][0] * l[0] + b[0][1] * l[1],
                    corners[0][1] + b[1][0] * l[0] + b[1][1] * l[1],
                ];
                let (vr, gr, _) = ref_set.eval(j, l);
                let (vp, gp, _) = phys_set.eval(j, x);
                assert!((vr - vp).abs() < 1e-12);
                // grad_x = B^{-T} grad_ref.
                let gx = [
                    binv[0][0] * gr[0] + binv[1][0] * gr[1],
                    binv[0][1] * gr[0] + binv[1][1] * gr[1],
                ];
                assert!((gx[0] - gp[0]).abs() < 1e-11);
                assert!((gx[1] - gp[1]).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn cr_shapes_are_one_minus_two_lambda() {
        let set = cr_shapes(REF).unwrap();
        // Shape for edge 0 (opposite vertex 0) is 1 - 2 lambda_0.
        let (v, _, _) = set.eval(0, [0.0, 0.0]);
        assert!((v + 1.0).abs() < 1e-13);
        let (v, _, _) = set.eval(0, [0.5, 0.5]);
        assert!((v - 1.0).abs() < 1e-13);
    }
}
