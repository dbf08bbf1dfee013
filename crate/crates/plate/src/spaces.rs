//! Global degree-of-freedom maps and discrete fields for the Morley,
//! discontinuous P2, continuous P2 with zero trace, Hsieh-Clough-Tocher, and
//! Crouzeix-Raviart spaces, together with trace and jump evaluation on edges
//! and the mesh-dependent norms.
//!
//! Boundary conditions are built into the maps: boundary-attached dofs are
//! constrained to zero and carry no global index.

use crate::mesh::Mesh;
use crate::quadrature::{edge_rule_any, tri_rule_any};
use crate::shapes::{cr_shapes, hct_shapes, morley_shapes, p2_shapes, ShapeSet};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    /// Nonconforming quadratics: vertex values and edge normal-derivative
    /// means, zero on the boundary.
    Morley,
    /// Fully discontinuous quadratics, 6 dofs per triangle.
    DgP2,
    /// Continuous quadratics with zero boundary trace.
    S20,
    /// C1 cubic macro element with clamped boundary.
    Hct,
    /// Nonconforming linears with edge-midpoint continuity, zero midpoint
    /// values on the boundary.
    Cr,
}

impl SpaceKind {
    pub fn local_dofs(self) -> usize {
        match self {
            SpaceKind::Morley | SpaceKind::DgP2 | SpaceKind::S20 => 6,
            SpaceKind::Hct => 12,
            SpaceKind::Cr => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub enum SpaceError {
    PointOutsideTriangle { triangle: usize, point: [f64; 2] },
    MeshMismatch,
    CoefficientDimension { expected: usize, got: usize },
}

impl std::fmt::Display for SpaceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpaceError::PointOutsideTriangle { triangle, point } => {
                write!(f, "point ({}, {}) lies outside triangle {}", point[0], point[1], triangle)
            }
            SpaceError::MeshMismatch => write!(f, "fields live on different meshes"),
            SpaceError::CoefficientDimension { expected, got } => {
                write!(f, "coefficient vector has length {got}, expected {expected}")
            }
        }
    }
}

impl std::error::Error for SpaceError {}

/// Global dof map for one space on one mesh, with cached per-triangle shape
/// sets. Immutable after construction.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub mesh: Arc<Mesh>,
    pub kind: SpaceKind,
    pub n_dofs: usize,
    /// Interior-vertex numbering, -1 for boundary vertices.
    pub interior_vertex: Vec<i64>,
    /// Interior-edge numbering, -1 for boundary edges.
    pub interior_edge: Vec<i64>,
    /// Flat per-triangle local-to-global table, stride `kind.local_dofs()`;
    /// -1 marks a dof constrained to zero.
    local_to_global: Vec<i64>,
    shapes: Vec<ShapeSet>,
}

impl DofMap {
    pub fn new(mesh: &Arc<Mesh>, kind: SpaceKind) -> DofMap {
        let nv = mesh.n_vertices();
        let ne = mesh.n_edges();
        let nt = mesh.n_triangles();
        let mut interior_vertex = vec![-1i64; nv];
        let mut n_iv = 0i64;
        for v in 0..nv {
            if !mesh.vertex_is_boundary[v] {
                interior_vertex[v] = n_iv;
                n_iv += 1;
            }
        }
        let mut interior_edge = vec![-1i64; ne];
        let mut n_ie = 0i64;
        for e in 0..ne {
            if !mesh.edges[e].boundary() {
                interior_edge[e] = n_ie;
                n_ie += 1;
            }
        }

        let stride = kind.local_dofs();
        let mut local_to_global = vec![-1i64; stride * nt];
        let n_dofs;
        match kind {
            SpaceKind::Morley | SpaceKind::S20 => {
                n_dofs = (n_iv + n_ie) as usize;
                for t in 0..nt {
                    let tri = mesh.triangles[t];
                    for i in 0..3 {
                        local_to_global[stride * t + i] = interior_vertex[tri[i]];
                    }
                    for k in 0..3 {
                        let e = mesh.tri_edges[t][k];
                        let ie = interior_edge[e];
                        local_to_global[stride * t + 3 + k] = if ie >= 0 { n_iv + ie } else { -1 };
                    }
                }
            }
            SpaceKind::DgP2 => {
                n_dofs = 6 * nt;
                for (i, slot) in local_to_global.iter_mut().enumerate() {
                    *slot = i as i64;
                }
            }
            SpaceKind::Hct => {
                n_dofs = (3 * n_iv + n_ie) as usize;
                for t in 0..nt {
                    let tri = mesh.triangles[t];
                    for i in 0..3 {
                        let iv = interior_vertex[tri[i]];
                        for c in 0..3 {
                            local_to_global[stride * t + 3 * i + c] =
                                if iv >= 0 { 3 * iv + c as i64 } else { -1 };
                        }
                    }
                    for k in 0..3 {
                        let e = mesh.tri_edges[t][k];
                        let ie = interior_edge[e];
                        local_to_global[stride * t + 9 + k] =
                            if ie >= 0 { 3 * n_iv + ie } else { -1 };
                    }
                }
            }
            SpaceKind::Cr => {
                n_dofs = n_ie as usize;
                for t in 0..nt {
                    for k in 0..3 {
                        let e = mesh.tri_edges[t][k];
                        local_to_global[stride * t + k] = interior_edge[e];
                    }
                }
            }
        }

        // Shape cache; Morley and HCT take the globally oriented edge normals
        // so local and global dof values coincide on both sides of every edge.
        let shapes: Vec<ShapeSet> = (0..nt)
            .map(|t| {
                let corners = mesh.corners(t);
                match kind {
                    SpaceKind::DgP2 | SpaceKind::S20 => p2_shapes(corners).unwrap(),
                    SpaceKind::Cr => cr_shapes(corners).unwrap(),
                    SpaceKind::Morley => {
                        let normals = global_edge_normals(mesh, t);
                        morley_shapes(corners, &normals).unwrap()
                    }
                    SpaceKind::Hct => {
                        let normals = global_edge_normals(mesh, t);
                        hct_shapes(corners, &normals).unwrap()
                    }
                }
            })
            .collect();

        DofMap {
            mesh: Arc::clone(mesh),
            kind,
            n_dofs,
            interior_vertex,
            interior_edge,
            local_to_global,
            shapes,
        }
    }

    pub fn stride(&self) -> usize {
        self.kind.local_dofs()
    }

    pub fn globals(&self, t: usize) -> &[i64] {
        let s = self.stride();
        &self.local_to_global[s * t..s * (t + 1)]
    }

    pub fn shapes(&self, t: usize) -> &ShapeSet {
        &self.shapes[t]
    }
}

/// Normals of the three local edges of triangle `t` in the global edge
/// orientation.
pub fn global_edge_normals(mesh: &Mesh, t: usize) -> [[f64; 2]; 3] {
    let mut normals = [[0.0; 2]; 3];
    for k in 0..3 {
        let e = mesh.tri_edges[t][k];
        normals[k] = mesh.edges[e].normal;
    }
    normals
}

/// Scheme-tagged coefficient vector over a dof map.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub map: Arc<DofMap>,
    pub coeffs: Vec<f64>,
}

impl DiscreteField {
    pub fn zeros(map: &Arc<DofMap>) -> DiscreteField {
        DiscreteField { map: Arc::clone(map), coeffs: vec![0.0; map.n_dofs] }
    }

    pub fn from_coeffs(map: &Arc<DofMap>, coeffs: Vec<f64>) -> Result<DiscreteField, SpaceError> {
        if coeffs.len() != map.n_dofs {
            return Err(SpaceError::CoefficientDimension {
                expected: map.n_dofs,
                got: coeffs.len(),
            });
        }
        Ok(DiscreteField { map: Arc::clone(map), coeffs })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.map.mesh
    }

    /// Local coefficients of triangle `t` (constrained dofs contribute 0).
    pub fn local_coeffs(&self, t: usize, out: &mut Vec<f64>) {
        out.clear();
        for &g in self.map.globals(t) {
            out.push(if g >= 0 { self.coeffs[g as usize] } else { 0.0 });
        }
    }

    /// One-sided evaluation from triangle `t`, checked against the triangle.
    pub fn eval(&self, t: usize, x: [f64; 2]) -> Result<(f64, [f64; 2], [f64; 3]), SpaceError> {
        let bary = self.mesh().barycentric(t, x);
        if bary.iter().any(|&l| l < -1e-10) {
            return Err(SpaceError::PointOutsideTriangle { triangle: t, point: x });
        }
        Ok(self.eval_in(t, x))
    }

    /// One-sided evaluation without the containment check.
    pub fn eval_in(&self, t: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        let shapes = self.map.shapes(t);
        let globals = self.map.globals(t);
        let mut val = 0.0;
        let mut grad = [0.0; 2];
        let mut hess = [0.0; 3];
        for (i, &g) in globals.iter().enumerate() {
            if g < 0 {
                continue;
            }
            let c = self.coeffs[g as usize];
            if c == 0.0 {
                continue;
            }
            let (v, gr, h) = shapes.eval(i, x);
            val += c * v;
            grad[0] += c * gr[0];
            grad[1] += c * gr[1];
            hess[0] += c * h[0];
            hess[1] += c * h[1];
            hess[2] += c * h[2];
        }
        (val, grad, hess)
    }

    /// The field restricted to triangle `t` as one collapsed polynomial
    /// (one per subtriangle for the macro space). Combining once and
    /// evaluating many times is the fast path for quadrature loops.
    pub fn local_poly(&self, t: usize) -> crate::shapes::CombinedShape {
        let mut local = Vec::with_capacity(self.map.stride());
        self.local_coeffs(t, &mut local);
        self.map.shapes(t).combine(&local)
    }
}

/// Anything evaluable triangle by triangle with one-sided limits: discrete
/// fields, closed-form functions, and differences thereof.
pub trait PwEval {
    fn eval_pw(&self, mesh: &Mesh, t: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]);

    /// True when the elementwise Hessian is constant, enabling single-point
    /// edge quadrature in the Hessian-jump estimators.
    fn constant_hessians(&self) -> bool {
        false
    }
}

impl PwEval for DiscreteField {
    fn eval_pw(&self, _mesh: &Mesh, t: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        self.eval_in(t, x)
    }

    fn constant_hessians(&self) -> bool {
        !matches!(self.map.kind, SpaceKind::Hct)
    }
}

/// Smooth field given by closures; the same limit on every triangle.
pub struct SmoothField<'a> {
    pub value: &'a dyn Fn([f64; 2]) -> f64,
    pub gradient: &'a dyn Fn([f64; 2]) -> [f64; 2],
    pub hessian: &'a dyn Fn([f64; 2]) -> [f64; 3],
}

impl PwEval for SmoothField<'_> {
    fn eval_pw(&self, _mesh: &Mesh, _t: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        ((self.value)(x), (self.gradient)(x), (self.hessian)(x))
    }
}

/// Pointwise difference a - b.
pub struct Difference<'a, A: PwEval, B: PwEval>(pub &'a A, pub &'a B);

impl<A: PwEval, B: PwEval> PwEval for Difference<'_, A, B> {
    fn eval_pw(&self, mesh: &Mesh, t: usize, x: [f64; 2]) -> (f64, [f64; 2], [f64; 3]) {
        let (va, ga, ha) = self.0.eval_pw(mesh, t, x);
        let (vb, gb, hb) = self.1.eval_pw(mesh, t, x);
        (va - vb, [ga[0] - gb[0], ga[1] - gb[1]], [ha[0] - hb[0], ha[1] - hb[1], ha[2] - hb[2]])
    }
}

/// Nodal interpolation of a smooth function into the space: plain dof
/// evaluation, with edge means computed by Gauss quadrature of the given
/// exactness degree.
pub fn nodal_field(
    map: &Arc<DofMap>,
    value: &dyn Fn([f64; 2]) -> f64,
    gradient: &dyn Fn([f64; 2]) -> [f64; 2],
    edge_degree: usize,
) -> DiscreteField {
    let mesh = Arc::clone(&map.mesh);
    let mut field = DiscreteField::zeros(map);
    let rule = edge_rule_any(edge_degree);
    for t in 0..mesh.n_triangles() {
        let corners = mesh.corners(t);
        let globals = map.globals(t);
        match map.kind {
            SpaceKind::DgP2 | SpaceKind::S20 => {
                for i in 0..3 {
                    if globals[i] >= 0 {
                        field.coeffs[globals[i] as usize] = value(corners[i]);
                    }
                }
                for k in 0..3 {
                    if globals[3 + k] >= 0 {
                        let p = corners[(k + 1) % 3];
                        let q = corners[(k + 2) % 3];
                        field.coeffs[globals[3 + k] as usize] =
                            value([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                    }
                }
            }
            SpaceKind::Cr => {
                for k in 0..3 {
                    if globals[k] >= 0 {
                        let p = corners[(k + 1) % 3];
                        let q = corners[(k + 2) % 3];
                        field.coeffs[globals[k] as usize] =
                            value([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                    }
                }
            }
            SpaceKind::Morley => {
                for i in 0..3 {
                    if globals[i] >= 0 {
                        field.coeffs[globals[i] as usize] = value(corners[i]);
                    }
                }
                for k in 0..3 {
                    if globals[3 + k] >= 0 {
                        let e = &mesh.edges[mesh.tri_edges[t][k]];
                        let a = mesh.vertices[e.a];
                        let b = mesh.vertices[e.b];
                        let mut mean = 0.0;
                        for (tq, w) in rule.points.iter().zip(&rule.weights) {
                            let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
                            let g = gradient(x);
                            mean += w * (g[0] * e.normal[0] + g[1] * e.normal[1]);
                        }
                        field.coeffs[globals[3 + k] as usize] = mean;
                    }
                }
            }
            SpaceKind::Hct => {
                for i in 0..3 {
                    if globals[3 * i] >= 0 {
                        let g = gradient(corners[i]);
                        field.coeffs[globals[3 * i] as usize] = value(corners[i]);
                        field.coeffs[globals[3 * i + 1] as usize] = g[0];
                        field.coeffs[globals[3 * i + 2] as usize] = g[1];
                    }
                }
                for k in 0..3 {
                    if globals[9 + k] >= 0 {
                        let e = &mesh.edges[mesh.tri_edges[t][k]];
                        let g = gradient(e.mid);
                        field.coeffs[globals[9 + k] as usize] =
                            g[0] * e.normal[0] + g[1] * e.normal[1];
                    }
                }
            }
        }
    }
    field
}

/// Jump and average samples of a field along one edge at the points of an
/// edge quadrature rule. On a boundary edge the jump equals the one-sided
/// trace and so does the average.
#[derive(Debug, Clone)]
pub struct EdgeJumpSamples {
    /// Parameter values in [0, 1] along the edge from `a` to `b`.
    pub params: Vec<f64>,
    pub weights: Vec<f64>,
    pub value_jump: Vec<f64>,
    pub gradient_jump: Vec<[f64; 2]>,
    /// Jump of the normal derivative with respect to the global edge normal.
    pub normal_derivative_jump: Vec<f64>,
    pub value_avg: Vec<f64>,
    pub gradient_avg: Vec<[f64; 2]>,
}

pub fn edge_jumps(field: &impl PwEval, mesh: &Mesh, e: usize, degree: usize) -> EdgeJumpSamples {
    let rule = edge_rule_any(degree);
    let edge = &mesh.edges[e];
    let a = mesh.vertices[edge.a];
    let b = mesh.vertices[edge.b];
    let n = rule.points.len();
    let mut out = EdgeJumpSamples {
        params: rule.points.clone(),
        weights: rule.weights.clone(),
        value_jump: Vec::with_capacity(n),
        gradient_jump: Vec::with_capacity(n),
        normal_derivative_jump: Vec::with_capacity(n),
        value_avg: Vec::with_capacity(n),
        gradient_avg: Vec::with_capacity(n),
    };
    for &t in &rule.points {
        let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let (vp, gp, _) = field.eval_pw(mesh, edge.t_plus, x);
        match edge.t_minus {
            Some(tm) => {
                let (vm, gm, _) = field.eval_pw(mesh, tm, x);
                out.value_jump.push(vp - vm);
                out.gradient_jump.push([gp[0] - gm[0], gp[1] - gm[1]]);
                out.normal_derivative_jump
                    .push((gp[0] - gm[0]) * edge.normal[0] + (gp[1] - gm[1]) * edge.normal[1]);
                out.value_avg.push(0.5 * (vp + vm));
                out.gradient_avg.push([0.5 * (gp[0] + gm[0]), 0.5 * (gp[1] + gm[1])]);
            }
            None => {
                out.value_jump.push(vp);
                out.gradient_jump.push(gp);
                out.normal_derivative_jump
                    .push(gp[0] * edge.normal[0] + gp[1] * edge.normal[1]);
                out.value_avg.push(vp);
                out.gradient_avg.push(gp);
            }
        }
    }
    out
}

/// Vertex-jump and normal-mean-jump contributions of one edge, the building
/// blocks of the jump product. Vertex jumps use the one-sided limits of the
/// edge's own two triangles.
pub fn edge_jump_terms(
    v: &impl PwEval,
    w: &impl PwEval,
    mesh: &Mesh,
    e: usize,
    degree: usize,
) -> (f64, f64) {
    let edge = &mesh.edges[e];
    let h = edge.length;
    let mut vertex_part = 0.0;
    for &z in &[edge.a, edge.b] {
        let x = mesh.vertices[z];
        let jv = one_sided_jump(v, mesh, edge.t_plus, edge.t_minus, x);
        let jw = one_sided_jump(w, mesh, edge.t_plus, edge.t_minus, x);
        vertex_part += (jv / h) * (jw / h);
    }
    let rule = edge_rule_any(degree);
    let a = mesh.vertices[edge.a];
    let b = mesh.vertices[edge.b];
    let mut mean_v = 0.0;
    let mut mean_w = 0.0;
    for (t, wq) in rule.points.iter().zip(&rule.weights) {
        let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        mean_v += wq * normal_jump_at(v, mesh, edge, x);
        mean_w += wq * normal_jump_at(w, mesh, edge, x);
    }
    (vertex_part, mean_v * mean_w)
}

fn one_sided_jump(f: &impl PwEval, mesh: &Mesh, tp: usize, tm: Option<usize>, x: [f64; 2]) -> f64 {
    let vp = f.eval_pw(mesh, tp, x).0;
    match tm {
        Some(tm) => vp - f.eval_pw(mesh, tm, x).0,
        None => vp,
    }
}

fn normal_jump_at(f: &impl PwEval, mesh: &Mesh, edge: &crate::mesh::Edge, x: [f64; 2]) -> f64 {
    let gp = f.eval_pw(mesh, edge.t_plus, x).1;
    let g = match edge.t_minus {
        Some(tm) => {
            let gm = f.eval_pw(mesh, tm, x).1;
            [gp[0] - gm[0], gp[1] - gm[1]]
        }
        None => gp,
    };
    g[0] * edge.normal[0] + g[1] * edge.normal[1]
}

/// The jump semi-scalar product: over every edge, products of endpoint value
/// jumps scaled by 1/h_E plus products of the mean normal-derivative jumps.
pub fn jh_product(v: &impl PwEval, w: &impl PwEval, mesh: &Mesh) -> f64 {
    let mut sum = 0.0;
    for e in 0..mesh.n_edges() {
        let (vertex_part, mean_part) = edge_jump_terms(v, w, mesh, e, 4);
        sum += vertex_part + mean_part;
    }
    sum
}

/// Jump product of two discrete fields with the mesh taken from the fields;
/// errors when they live on different meshes.
pub fn jh_product_fields(v: &DiscreteField, w: &DiscreteField) -> Result<f64, SpaceError> {
    if !Arc::ptr_eq(&v.map.mesh, &w.map.mesh) {
        return Err(SpaceError::MeshMismatch);
    }
    Ok(jh_product(v, w, &v.map.mesh))
}

/// Over-penalized jump product: the jump product terms with an extra
/// h_E^{-2} weight per edge.
pub fn cp_product(v: &impl PwEval, w: &impl PwEval, mesh: &Mesh) -> f64 {
    let mut sum = 0.0;
    for e in 0..mesh.n_edges() {
        let (vertex_part, mean_part) = edge_jump_terms(v, w, mesh, e, 4);
        let h = mesh.edges[e].length;
        sum += (vertex_part + mean_part) / (h * h);
    }
    sum
}

/// Piecewise energy product: elementwise integral of the Frobenius product
/// of the Hessians. Integration runs over the three centroid subtriangles of
/// every element so macro fields are integrated exactly as well.
pub fn a_pw(v: &impl PwEval, w: &impl PwEval, mesh: &Mesh, degree: usize) -> f64 {
    let rule = tri_rule_any(degree);
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        sum += a_pw_element(v, w, mesh, t, &rule);
    }
    sum
}

pub fn a_pw_element(
    v: &impl PwEval,
    w: &impl PwEval,
    mesh: &Mesh,
    t: usize,
    rule: &crate::quadrature::TriQuadrature,
) -> f64 {
    let corners = mesh.corners(t);
    let c = [
        (corners[0][0] + corners[1][0] + corners[2][0]) / 3.0,
        (corners[0][1] + corners[1][1] + corners[2][1]) / 3.0,
    ];
    let mut sum = 0.0;
    for k in 0..3 {
        let sub = [corners[(k + 1) % 3], corners[(k + 2) % 3], c];
        let jac = 2.0 * crate::quadrature::triangle_area(&sub);
        for (p, wq) in rule.points.iter().zip(&rule.weights) {
            let x = [
                p[0] * sub[0][0] + p[1] * sub[1][0] + p[2] * sub[2][0],
                p[0] * sub[0][1] + p[1] * sub[1][1] + p[2] * sub[2][1],
            ];
            let hv = v.eval_pw(mesh, t, x).2;
            let hw = w.eval_pw(mesh, t, x).2;
            sum += wq * jac * (hv[0] * hw[0] + 2.0 * hv[1] * hw[1] + hv[2] * hw[2]);
        }
    }
    sum
}

/// Piecewise energy norm.
pub fn energy_pw(v: &impl PwEval, mesh: &Mesh, degree: usize) -> f64 {
    a_pw(v, v, mesh, degree).max(0.0).sqrt()
}

/// The mesh-dependent norm: piecewise energy plus the jump product.
pub fn norm_h(v: &impl PwEval, mesh: &Mesh, degree: usize) -> f64 {
    (a_pw(v, v, mesh, degree) + jh_product(v, v, mesh)).max(0.0).sqrt()
}

/// Elementwise L2 product of two piecewise fields (values only).
pub fn l2_product(v: &impl PwEval, w: &impl PwEval, mesh: &Mesh, degree: usize) -> f64 {
    let rule = tri_rule_any(degree);
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        sum += rule.integrate(&mesh.corners(t), |x| {
            v.eval_pw(mesh, t, x).0 * w.eval_pw(mesh, t, x).0
        });
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, unit_square_four, unit_square_two};
    use crate::rng::Rng;

    fn arc(mesh: crate::mesh::Mesh) -> Arc<crate::mesh::Mesh> {
        Arc::new(mesh)
    }

    #[test]
    fn dof_counts_on_the_four_triangle_square() {
        let mesh = arc(unit_square_four());
        assert_eq!(DofMap::new(&mesh, SpaceKind::Morley).n_dofs, 1 + 4);
        assert_eq!(DofMap::new(&mesh, SpaceKind::DgP2).n_dofs, 24);
        assert_eq!(DofMap::new(&mesh, SpaceKind::S20).n_dofs, 1 + 4);
        assert_eq!(DofMap::new(&mesh, SpaceKind::Hct).n_dofs, 3 + 4);
        assert_eq!(DofMap::new(&mesh, SpaceKind::Cr).n_dofs, 4);
    }

    #[test]
    fn zero_field_evaluates_to_zero() {
        let mesh = arc(unit_square_two());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
        let field = DiscreteField::zeros(&map);
        let (v, g, h) = field.eval(0, [0.5, 0.25]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, [0.0, 0.0]);
        assert_eq!(h, [0.0, 0.0, 0.0]);
        assert!(field.eval(1, [0.9, 0.1]).is_err());
    }

    #[test]
    fn dg_field_with_quadratic_coefficients_has_expected_hessian() {
        let mesh = arc(unit_square_two());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let field = nodal_field(&map, &|x| x[0] * x[0], &|x| [2.0 * x[0], 0.0], 4);
        for x in [[0.6, 0.2], [0.9, 0.5]] {
            let (_, _, h) = field.eval(0, x).unwrap();
            assert!((h[0] - 2.0).abs() < 1e-12);
            assert!(h[1].abs() < 1e-12);
            assert!(h[2].abs() < 1e-12);
        }
    }

    #[test]
    fn morley_interpolant_of_quadratic_has_constant_hessian() {
        let mesh = arc(unit_square_four());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
        let field = nodal_field(&map, &|x| x[0] * x[1], &|x| [x[1], x[0]], 4);
        for t in 0..mesh.n_triangles() {
            let c = mesh.corners(t);
            let probe = [
                0.5 * c[0][0] + 0.3 * c[1][0] + 0.2 * c[2][0],
                0.5 * c[0][1] + 0.3 * c[1][1] + 0.2 * c[2][1],
            ];
            let h1 = field.eval(t, probe).unwrap().2;
            let h2 = field.eval_in(t, mesh.corners(t)[0]).2;
            for c in 0..3 {
                assert!((h1[c] - h2[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn continuous_field_has_no_interior_jumps() {
        let mesh = arc(unit_square_four());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let field =
            nodal_field(&map, &|x| x[0] * x[0] - 0.5 * x[1] + 1.0, &|x| [2.0 * x[0], -0.5], 4);
        for e in 0..mesh.n_edges() {
            if mesh.edges[e].boundary() {
                continue;
            }
            let samples = edge_jumps(&field, &mesh, e, 4);
            for v in samples.value_jump {
                assert!(v.abs() < 1e-13);
            }
        }
    }

    #[test]
    fn two_triangle_jump_example() {
        // v = x on triangle 0, v = 0 on triangle 1.
        let mesh = arc(unit_square_two());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let mut field = DiscreteField::zeros(&map);
        let shapeless = nodal_field(&map, &|x| x[0], &|_| [1.0, 0.0], 4);
        field.coeffs[..6].copy_from_slice(&shapeless.coeffs[..6]);

        let diag = (0..mesh.n_edges()).find(|&e| !mesh.edges[e].boundary()).unwrap();
        let edge = &mesh.edges[diag];
        // Jump at the point (1,1) equals 1, and |normal jump| = 1/sqrt(2).
        let samples = edge_jumps(&field, &mesh, diag, 4);
        for (i, &t) in samples.params.iter().enumerate() {
            let x = edge.point_at(&mesh, t);
            assert!((samples.value_jump[i] - x[0]).abs() < 1e-13);
            assert!((samples.normal_derivative_jump[i].abs() - 1.0 / 2f64.sqrt()).abs() < 1e-13);
        }

        // Jump-product contribution of the diagonal edge: 1/2 + 1/2.
        let (vertex_part, mean_part) = edge_jump_terms(&field, &field, &mesh, diag, 4);
        assert!((vertex_part - 0.5).abs() < 1e-13);
        assert!((mean_part - 0.5).abs() < 1e-13);

        // Over-penalized contribution of the same edge: h^{-2} * 1 = 1/2.
        let h = edge.length;
        assert!(((vertex_part + mean_part) / (h * h) - 0.5).abs() < 1e-13);
    }

    #[test]
    fn boundary_edge_average_equals_trace() {
        let mesh = arc(unit_square_two());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let field = nodal_field(&map, &|x| x[0] + 2.0 * x[1], &|_| [1.0, 2.0], 4);
        let be = (0..mesh.n_edges()).find(|&e| mesh.edges[e].boundary()).unwrap();
        let samples = edge_jumps(&field, &mesh, be, 4);
        for i in 0..samples.params.len() {
            assert!((samples.value_jump[i] - samples.value_avg[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn jump_product_vanishes_for_morley_fields() {
        let mesh = arc(unit_square_four());
        let morley = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
        let dg = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let mut rng = Rng::new(3);
        for _ in 0..5 {
            let mut v = DiscreteField::zeros(&morley);
            rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
            let mut w = DiscreteField::zeros(&dg);
            rng.fill_uniform(&mut w.coeffs, -1.0, 1.0);
            assert!(jh_product(&v, &w, &mesh).abs() < 1e-12);
            assert!(jh_product(&v, &v, &mesh).abs() < 1e-12);
            // Hence the mesh norm collapses to the piecewise energy norm.
            let nh = norm_h(&v, &mesh, 4);
            let npw = energy_pw(&v, &mesh, 4);
            assert!((nh - npw).abs() < 1e-12 * (1.0 + npw));
        }
    }

    #[test]
    fn continuous_s20_field_keeps_only_normal_means_in_jump_product() {
        let mesh = arc(unit_square_four());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::S20));
        let mut rng = Rng::new(5);
        let mut v = DiscreteField::zeros(&map);
        rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
        let mut vertex_total = 0.0;
        let mut mean_total = 0.0;
        for e in 0..mesh.n_edges() {
            let (vp, mp) = edge_jump_terms(&v, &v, &mesh, e, 4);
            vertex_total += vp;
            mean_total += mp;
        }
        assert!(vertex_total.abs() < 1e-13, "continuity kills value jumps");
        assert!(mean_total > 1e-6, "normal means are generically nonzero");
    }

    #[test]
    fn dg_space_contains_morley_fields() {
        let mesh = arc(unit_square_four());
        let morley = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
        let dg = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let mut rng = Rng::new(17);
        let mut v = DiscreteField::zeros(&morley);
        rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
        // Re-express by evaluating at the Lagrange nodes of each triangle.
        let mut w = DiscreteField::zeros(&dg);
        for t in 0..mesh.n_triangles() {
            let corners = mesh.corners(t);
            let globals = dg.globals(t);
            for i in 0..3 {
                w.coeffs[globals[i] as usize] = v.eval_in(t, corners[i]).0;
            }
            for k in 0..3 {
                let p = corners[(k + 1) % 3];
                let q = corners[(k + 2) % 3];
                let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
                w.coeffs[globals[3 + k] as usize] = v.eval_in(t, mid).0;
            }
        }
        let mut rng2 = Rng::new(18);
        for _ in 0..50 {
            let t = (rng2.unit() * mesh.n_triangles() as f64) as usize;
            let c = mesh.corners(t);
            let mut l = [rng2.unit(), rng2.unit(), 0.0];
            if l[0] + l[1] > 1.0 {
                l[0] = 1.0 - l[0];
                l[1] = 1.0 - l[1];
            }
            l[2] = 1.0 - l[0] - l[1];
            let x = [
                l[0] * c[0][0] + l[1] * c[1][0] + l[2] * c[2][0],
                l[0] * c[0][1] + l[1] * c[1][1] + l[2] * c[2][1],
            ];
            let a = v.eval_in(t, x).0;
            let b = w.eval_in(t, x).0;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn hct_fields_are_h2_conforming() {
        let mesh = arc(unit_square_four());
        let (fine, _) = mesh.refine_uniform();
        let fine = arc(fine);
        let map = Arc::new(DofMap::new(&fine, SpaceKind::Hct));
        let mut rng = Rng::new(23);
        let mut v = DiscreteField::zeros(&map);
        rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
        for e in 0..fine.n_edges() {
            if fine.edges[e].boundary() {
                continue;
            }
            let samples = edge_jumps(&v, &fine, e, 6);
            for i in 0..samples.params.len() {
                assert!(samples.value_jump[i].abs() < 1e-10, "value jump");
                assert!(samples.normal_derivative_jump[i].abs() < 1e-10, "normal jump");
            }
        }
    }

    #[test]
    fn swapped_sides_leave_normal_weighted_jumps_invariant() {
        let mesh = unit_square_two().refine_bisect(&[0]).unwrap();
        let mesh = arc(mesh);
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let mut rng = Rng::new(29);
        let mut v = DiscreteField::zeros(&map);
        rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
        for e in 0..mesh.n_edges() {
            let edge = &mesh.edges[e];
            let Some(tm) = edge.t_minus else { continue };
            let x = edge.mid;
            let gp = v.eval_in(edge.t_plus, x).1;
            let gm = v.eval_in(tm, x).1;
            let j1 = (gp[0] - gm[0]) * edge.normal[0] + (gp[1] - gm[1]) * edge.normal[1];
            let j2 = (gm[0] - gp[0]) * (-edge.normal[0]) + (gm[1] - gp[1]) * (-edge.normal[1]);
            assert!((j1 - j2).abs() < 1e-14);
        }
    }

    #[test]
    fn morley_dof_count_matches_constraint_structure() {
        let mesh = arc(unit_square_two());
        let map = DofMap::new(&mesh, SpaceKind::Morley);
        // No interior vertices, one interior edge.
        assert_eq!(map.n_dofs, 1);
        let mesh2 = build_mesh(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let map2 = DofMap::new(&arc(mesh2), SpaceKind::Morley);
        assert_eq!(map2.n_dofs, 0);
    }
}
