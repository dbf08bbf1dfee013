//! General right-hand sides for the plate problem: volume densities paired
//! with derivatives up to second order, line loads on edge subsets, and point
//! loads at interior vertices, plus the piecewise-polynomial approximations
//! used by the residual estimator and the data approximation error.

use crate::mesh::Mesh;
use crate::quadrature::{edge_rule_any, tri_rule_any};
use std::sync::Arc;

/// Polynomial in shifted, scaled coordinates xi = (x - center) / scale.
/// Coefficients run over monomials xi^i eta^j ordered by total degree:
/// (0,0); (1,0), (0,1); (2,0), (1,1), (0,2); ...
#[derive(Debug, Clone)]
pub struct PwPoly {
    pub center: [f64; 2],
    pub scale: f64,
    pub degree: usize,
    pub coeffs: Vec<f64>,
}

pub fn mono_index(i: usize, j: usize) -> usize {
    let d = i + j;
    d * (d + 1) / 2 + j
}

pub fn mono_count(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

impl PwPoly {
    pub fn zero() -> PwPoly {
        PwPoly { center: [0.0, 0.0], scale: 1.0, degree: 0, coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> PwPoly {
        PwPoly { center: [0.0, 0.0], scale: 1.0, degree: 0, coeffs: vec![c] }
    }

    /// Global-coordinate polynomial (center 0, scale 1).
    pub fn global(degree: usize, coeffs: Vec<f64>) -> PwPoly {
        assert_eq!(coeffs.len(), mono_count(degree));
        PwPoly { center: [0.0, 0.0], scale: 1.0, degree, coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Degree after dropping vanishing leading blocks.
    pub fn effective_degree(&self) -> usize {
        for d in (0..=self.degree).rev() {
            let start = if d == 0 { 0 } else { mono_count(d - 1) };
            if self.coeffs[start..mono_count(d)].iter().any(|&c| c != 0.0) {
                return d;
            }
        }
        0
    }

    pub fn eval(&self, x: [f64; 2]) -> f64 {
        let xi = (x[0] - self.center[0]) / self.scale;
        let eta = (x[1] - self.center[1]) / self.scale;
        let mut sum = 0.0;
        for d in 0..=self.degree {
            for j in 0..=d {
                let i = d - j;
                let c = self.coeffs[mono_index(i, j)];
                if c != 0.0 {
                    sum += c * xi.powi(i as i32) * eta.powi(j as i32);
                }
            }
        }
        sum
    }

    /// Partial derivative with respect to the first physical coordinate.
    pub fn dx(&self) -> PwPoly {
        self.derive(0)
    }

    /// Partial derivative with respect to the second physical coordinate.
    pub fn dy(&self) -> PwPoly {
        self.derive(1)
    }

    fn derive(&self, axis: usize) -> PwPoly {
        let new_degree = self.degree.saturating_sub(1);
        let mut coeffs = vec![0.0; mono_count(new_degree)];
        for d in 1..=self.degree {
            for j in 0..=d {
                let i = d - j;
                let c = self.coeffs[mono_index(i, j)];
                if c == 0.0 {
                    continue;
                }
                if axis == 0 && i >= 1 {
                    coeffs[mono_index(i - 1, j)] += c * i as f64 / self.scale;
                } else if axis == 1 && j >= 1 {
                    coeffs[mono_index(i, j - 1)] += c * j as f64 / self.scale;
                }
            }
        }
        PwPoly { center: self.center, scale: self.scale, degree: new_degree, coeffs }
    }

    /// Directional derivative d . grad as a polynomial.
    pub fn directional(&self, d: [f64; 2]) -> PwPoly {
        let mut out = self.dx();
        out.scale_coeffs(d[0]);
        let dy = self.dy();
        for (o, v) in out.coeffs.iter_mut().zip(&dy.coeffs) {
            *o += d[1] * v;
        }
        out
    }

    pub fn scale_coeffs(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    /// Sum with another polynomial sharing center and scale.
    pub fn add_assign_compatible(&mut self, other: &PwPoly, factor: f64) {
        assert_eq!(self.center, other.center);
        assert_eq!(self.scale, other.scale);
        if other.degree > self.degree {
            self.coeffs.resize(mono_count(other.degree), 0.0);
            self.degree = other.degree;
        }
        for (idx, &c) in other.coeffs.iter().enumerate() {
            self.coeffs[idx] += factor * c;
        }
    }

    /// Product with another polynomial sharing center and scale.
    pub fn mul(&self, other: &PwPoly) -> PwPoly {
        assert_eq!(self.center, other.center);
        assert_eq!(self.scale, other.scale);
        let degree = self.degree + other.degree;
        let mut coeffs = vec![0.0; mono_count(degree)];
        for d1 in 0..=self.degree {
            for j1 in 0..=d1 {
                let i1 = d1 - j1;
                let a = self.coeffs[mono_index(i1, j1)];
                if a == 0.0 {
                    continue;
                }
                for d2 in 0..=other.degree {
                    for j2 in 0..=d2 {
                        let i2 = d2 - j2;
                        let b = other.coeffs[mono_index(i2, j2)];
                        if b != 0.0 {
                            coeffs[mono_index(i1 + i2, j1 + j2)] += a * b;
                        }
                    }
                }
            }
        }
        PwPoly { center: self.center, scale: self.scale, degree, coeffs }
    }

    /// Restriction to the segment from `a` to `b` as a polynomial in the
    /// parameter t of [0, 1].
    pub fn restrict(&self, a: [f64; 2], b: [f64; 2]) -> Poly1 {
        let alpha = (a[0] - self.center[0]) / self.scale;
        let beta = (b[0] - a[0]) / self.scale;
        let gamma = (a[1] - self.center[1]) / self.scale;
        let delta = (b[1] - a[1]) / self.scale;
        let mut out = vec![0.0; self.degree + 1];
        for d in 0..=self.degree {
            for j in 0..=d {
                let i = d - j;
                let c = self.coeffs[mono_index(i, j)];
                if c == 0.0 {
                    continue;
                }
                // (alpha + beta t)^i (gamma + delta t)^j.
                let px = binomial_expand(alpha, beta, i);
                let py = binomial_expand(gamma, delta, j);
                for (p, &cx) in px.iter().enumerate() {
                    for (q, &cy) in py.iter().enumerate() {
                        out[p + q] += c * cx * cy;
                    }
                }
            }
        }
        Poly1 { coeffs: out }
    }
}

fn binomial_expand(a: f64, b: f64, n: usize) -> Vec<f64> {
    // Coefficients of (a + b t)^n in t.
    let mut out = vec![0.0; n + 1];
    let mut binom = 1.0;
    for (k, slot) in out.iter_mut().enumerate() {
        *slot = binom * a.powi((n - k) as i32) * b.powi(k as i32);
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
    out
}

/// Univariate polynomial on [0, 1].
#[derive(Debug, Clone)]
pub struct Poly1 {
    pub coeffs: Vec<f64>,
}

impl Poly1 {
    pub fn zero() -> Poly1 {
        Poly1 { coeffs: vec![0.0] }
    }

    pub fn constant(c: f64) -> Poly1 {
        Poly1 { coeffs: vec![c] }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let mut sum = 0.0;
        for &c in self.coeffs.iter().rev() {
            sum = sum * t + c;
        }
        sum
    }

    pub fn add(&self, other: &Poly1) -> Poly1 {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = vec![0.0; n];
        for (i, &c) in self.coeffs.iter().enumerate() {
            coeffs[i] += c;
        }
        for (i, &c) in other.coeffs.iter().enumerate() {
            coeffs[i] += c;
        }
        Poly1 { coeffs }
    }

    pub fn sub(&self, other: &Poly1) -> Poly1 {
        let mut neg = other.clone();
        for c in &mut neg.coeffs {
            *c = -*c;
        }
        self.add(&neg)
    }

    pub fn mul(&self, other: &Poly1) -> Poly1 {
        let mut coeffs = vec![0.0; self.coeffs.len() + other.coeffs.len() - 1];
        for (i, &a) in self.coeffs.iter().enumerate() {
            for (j, &b) in other.coeffs.iter().enumerate() {
                coeffs[i + j] += a * b;
            }
        }
        Poly1 { coeffs }
    }

    /// Exact integral over [0, 1].
    pub fn integral(&self) -> f64 {
        self.coeffs.iter().enumerate().map(|(k, &c)| c / (k + 1) as f64).sum()
    }

    /// Integral mean over [0, 1] (equals the integral on the unit interval).
    pub fn mean(&self) -> f64 {
        self.integral()
    }

    /// Squared L2 norm over a segment of length `h` (exact).
    pub fn l2_sq(&self, h: f64) -> f64 {
        h * self.mul(self).integral()
    }
}

/// Scalar data component: zero, a polynomial, or a general function.
#[derive(Clone)]
pub enum ScalarData {
    Zero,
    Poly(PwPoly),
    Func(Arc<dyn Fn([f64; 2]) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for ScalarData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ScalarData::Zero => write!(f, "Zero"),
            ScalarData::Poly(p) => write!(f, "Poly(degree {})", p.degree),
            ScalarData::Func(_) => write!(f, "Func"),
        }
    }
}

impl ScalarData {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match self {
            ScalarData::Zero => 0.0,
            ScalarData::Poly(p) => p.eval(x),
            ScalarData::Func(f) => f(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            ScalarData::Zero => true,
            ScalarData::Poly(p) => p.is_zero(),
            ScalarData::Func(_) => false,
        }
    }
}

/// Line load along a union of segments that must be resolved by mesh edges.
#[derive(Debug, Clone)]
pub struct LineLoad {
    pub segments: Vec<([f64; 2], [f64; 2])>,
    pub density: ScalarData,
}

#[derive(Debug, Clone, Copy)]
pub struct PointLoad {
    pub at: [f64; 2],
    pub intensity: f64,
}

/// How the estimator's polynomial data approximations are produced.
#[derive(Debug, Clone)]
pub enum ApproxRule {
    /// The exact data are already piecewise polynomials; apx vanishes.
    ExactPoly,
    /// Elementwise (edgewise) L2 projection onto polynomials of degree k.
    Project { k: usize },
    /// Explicitly supplied global polynomials, one per volume component and
    /// line density; `None` means zero.
    Explicit { f: Box<[Option<PwPoly>; 6]>, g0: Option<PwPoly>, g1: Option<PwPoly> },
}

/// Derivative order of each volume component, in the storage order
/// value, d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2.
pub const ALPHA_ORDERS: [usize; 6] = [0, 1, 1, 2, 2, 2];

/// Mesh-independent description of a general source.
#[derive(Debug, Clone)]
pub struct SourceSpec {
    /// f_alpha for the six multi-indices up to order two, in the order
    /// (0,0); (1,0), (0,1); (2,0), (1,1), (0,2).
    pub volume: [ScalarData; 6],
    pub line0: Option<LineLoad>,
    pub line1: Option<LineLoad>,
    pub points: Vec<PointLoad>,
    pub approx: ApproxRule,
    /// Quadrature exactness used for non-polynomial data.
    pub quad_degree: usize,
}

impl SourceSpec {
    pub fn zero() -> SourceSpec {
        SourceSpec {
            volume: [
                ScalarData::Zero,
                ScalarData::Zero,
                ScalarData::Zero,
                ScalarData::Zero,
                ScalarData::Zero,
                ScalarData::Zero,
            ],
            line0: None,
            line1: None,
            points: Vec::new(),
            approx: ApproxRule::ExactPoly,
            quad_degree: 8,
        }
    }

    /// Plain L2 source from a scalar density.
    pub fn from_l2(f: ScalarData, approx: ApproxRule) -> SourceSpec {
        let mut s = SourceSpec::zero();
        s.volume[0] = f;
        s.approx = approx;
        s
    }

    /// A single point load.
    pub fn point_load(at: [f64; 2], intensity: f64) -> SourceSpec {
        let mut s = SourceSpec::zero();
        s.points.push(PointLoad { at, intensity });
        s
    }
}

#[derive(Debug, Clone)]
pub enum SourceError {
    PointLoadNotAtInteriorVertex { at: [f64; 2] },
    SegmentNotResolved { segment: ([f64; 2], [f64; 2]) },
    NonPolynomialData { component: &'static str },
}

impl std::fmt::Display for SourceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SourceError::PointLoadNotAtInteriorVertex { at } => write!(
                f,
                "point load at ({}, {}) is not located at an interior vertex",
                at[0], at[1]
            ),
            SourceError::SegmentNotResolved { segment } => write!(
                f,
                "line-load segment ({}, {}) -- ({}, {}) is not resolved by mesh edges",
                segment.0[0], segment.0[1], segment.1[0], segment.1[1]
            ),
            SourceError::NonPolynomialData { component } => {
                write!(f, "estimator data for {component} must be piecewise polynomial")
            }
        }
    }
}

impl std::error::Error for SourceError {}

/// Per-mesh realization of a source: resolved edge sets and vertex ids plus
/// per-triangle and per-edge polynomial approximations.
#[derive(Debug, Clone)]
pub struct MeshSource {
    pub spec: SourceSpec,
    pub mesh: Arc<Mesh>,
    /// Edge ids carrying the zeroth/first-order line load.
    pub gamma0: Vec<usize>,
    pub gamma1: Vec<usize>,
    /// Resolved (vertex id, intensity) point loads.
    pub point_vertices: Vec<(usize, f64)>,
    /// Per-triangle approximations of the six volume components.
    pub f_apx: Vec<[PwPoly; 6]>,
    /// Per-edge approximations of the line densities in the edge parameter,
    /// zero off the loaded edge sets.
    pub g0_apx: Vec<Poly1>,
    pub g1_apx: Vec<Poly1>,
}

impl MeshSource {
    pub fn realize(spec: &SourceSpec, mesh: &Arc<Mesh>) -> Result<MeshSource, SourceError> {
        let gamma0 = resolve_segments(mesh, spec.line0.as_ref())?;
        let gamma1 = resolve_segments(mesh, spec.line1.as_ref())?;
        let mut point_vertices = Vec::new();
        for p in &spec.points {
            let vid = mesh
                .vertices
                .iter()
                .position(|v| (v[0] - p.at[0]).abs() < 1e-12 && (v[1] - p.at[1]).abs() < 1e-12)
                .filter(|&z| !mesh.vertex_is_boundary[z])
                .ok_or(SourceError::PointLoadNotAtInteriorVertex { at: p.at })?;
            point_vertices.push((vid, p.intensity));
        }

        let nt = mesh.n_triangles();
        let ne = mesh.n_edges();
        let mut f_apx: Vec<[PwPoly; 6]> = Vec::with_capacity(nt);
        let mut g0_apx = vec![Poly1::zero(); ne];
        let mut g1_apx = vec![Poly1::zero(); ne];

        match &spec.approx {
            ApproxRule::ExactPoly => {
                let comp_poly =
                    |c: &ScalarData, name: &'static str| -> Result<PwPoly, SourceError> {
                        match c {
                            ScalarData::Zero => Ok(PwPoly::zero()),
                            ScalarData::Poly(p) => Ok(p.clone()),
                            ScalarData::Func(_) => {
                                Err(SourceError::NonPolynomialData { component: name })
                            }
                        }
                    };
                let polys: [PwPoly; 6] = [
                    comp_poly(&spec.volume[0], "f(0,0)")?,
                    comp_poly(&spec.volume[1], "f(1,0)")?,
                    comp_poly(&spec.volume[2], "f(0,1)")?,
                    comp_poly(&spec.volume[3], "f(2,0)")?,
                    comp_poly(&spec.volume[4], "f(1,1)")?,
                    comp_poly(&spec.volume[5], "f(0,2)")?,
                ];
                for _ in 0..nt {
                    f_apx.push(polys.clone());
                }
                if let Some(l) = &spec.line0 {
                    let p = comp_poly(&l.density, "g0")?;
                    for &e in &gamma0 {
                        let edge = &mesh.edges[e];
                        g0_apx[e] = p.restrict(mesh.vertices[edge.a], mesh.vertices[edge.b]);
                    }
                }
                if let Some(l) = &spec.line1 {
                    let p = comp_poly(&l.density, "g1")?;
                    for &e in &gamma1 {
                        let edge = &mesh.edges[e];
                        g1_apx[e] = p.restrict(mesh.vertices[edge.a], mesh.vertices[edge.b]);
                    }
                }
            }
            ApproxRule::Project { k } => {
                for t in 0..nt {
                    let apx: [PwPoly; 6] = std::array::from_fn(|c| match &spec.volume[c] {
                        ScalarData::Zero => PwPoly::zero(),
                        other => {
                            project_on_triangle(mesh, t, &|x| other.eval(x), *k, spec.quad_degree)
                        }
                    });
                    f_apx.push(apx);
                }
                if let Some(l) = &spec.line0 {
                    for &e in &gamma0 {
                        g0_apx[e] =
                            project_on_edge(mesh, e, &|x| l.density.eval(x), *k, spec.quad_degree);
                    }
                }
                if let Some(l) = &spec.line1 {
                    for &e in &gamma1 {
                        g1_apx[e] =
                            project_on_edge(mesh, e, &|x| l.density.eval(x), *k, spec.quad_degree);
                    }
                }
            }
            ApproxRule::Explicit { f, g0, g1 } => {
                let polys: [PwPoly; 6] =
                    std::array::from_fn(|c| f[c].clone().unwrap_or_else(PwPoly::zero));
                for _ in 0..nt {
                    f_apx.push(polys.clone());
                }
                if let Some(p) = g0 {
                    for &e in &gamma0 {
                        let edge = &mesh.edges[e];
                        g0_apx[e] = p.restrict(mesh.vertices[edge.a], mesh.vertices[edge.b]);
                    }
                }
                if let Some(p) = g1 {
                    for &e in &gamma1 {
                        let edge = &mesh.edges[e];
                        g1_apx[e] = p.restrict(mesh.vertices[edge.a], mesh.vertices[edge.b]);
                    }
                }
            }
        }

        Ok(MeshSource {
            spec: spec.clone(),
            mesh: Arc::clone(mesh),
            gamma0,
            gamma1,
            point_vertices,
            f_apx,
            g0_apx,
            g1_apx,
        })
    }

    /// True when every data component vanishes.
    pub fn is_zero(&self) -> bool {
        self.spec.volume.iter().all(|c| c.is_zero())
            && self.spec.line0.is_none()
            && self.spec.line1.is_none()
            && self.point_vertices.is_empty()
    }
}

fn resolve_segments(mesh: &Mesh, load: Option<&LineLoad>) -> Result<Vec<usize>, SourceError> {
    let Some(load) = load else { return Ok(Vec::new()) };
    let mut ids = Vec::new();
    for seg in &load.segments {
        let (a, b) = *seg;
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let mut covered = 0.0;
        for (e, edge) in mesh.edges.iter().enumerate() {
            if point_on_segment(mesh.vertices[edge.a], a, b)
                && point_on_segment(mesh.vertices[edge.b], a, b)
            {
                ids.push(e);
                covered += edge.length;
            }
        }
        if (covered - len).abs() > 1e-9 * len.max(1.0) {
            return Err(SourceError::SegmentNotResolved { segment: *seg });
        }
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

fn point_on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2;
    if !(-1e-12..=1.0 + 1e-12).contains(&t) {
        return false;
    }
    let proj = [a[0] + t * d[0], a[1] + t * d[1]];
    let dist2 = (p[0] - proj[0]).powi(2) + (p[1] - proj[1]).powi(2);
    dist2 < 1e-20 * len2.max(1.0)
}

/// Elementwise L2 projection of a function onto polynomials of total degree
/// `k`, in diameter-scaled centered coordinates of the triangle.
pub fn project_on_triangle(
    mesh: &Mesh,
    t: usize,
    f: &dyn Fn([f64; 2]) -> f64,
    k: usize,
    quad_degree: usize,
) -> PwPoly {
    let corners = mesh.corners(t);
    let center = [
        (corners[0][0] + corners[1][0] + corners[2][0]) / 3.0,
        (corners[0][1] + corners[1][1] + corners[2][1]) / 3.0,
    ];
    let scale = mesh.diameter(t);
    let n = mono_count(k);
    let rule = tri_rule_any(quad_degree.max(2 * k));
    let mut gram = crate::dense::DMat::zeros(n, n);
    let mut rhs = crate::dense::DMat::zeros(n, 1);
    let mut basis = vec![0.0; n];
    let jac = 2.0 * mesh.area(t);
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let x = [
            p[0] * corners[0][0] + p[1] * corners[1][0] + p[2] * corners[2][0],
            p[0] * corners[0][1] + p[1] * corners[1][1] + p[2] * corners[2][1],
        ];
        let xi = (x[0] - center[0]) / scale;
        let eta = (x[1] - center[1]) / scale;
        for d in 0..=k {
            for j in 0..=d {
                basis[mono_index(d - j, j)] = xi.powi((d - j) as i32) * eta.powi(j as i32);
            }
        }
        let fx = f(x);
        let wj = w * jac;
        for i in 0..n {
            rhs.add(i, 0, wj * basis[i] * fx);
            for j in 0..n {
                gram.add(i, j, wj * basis[i] * basis[j]);
            }
        }
    }
    crate::dense::lu_solve(&gram, &mut rhs).expect("triangle mass matrix is positive definite");
    PwPoly { center, scale, degree: k, coeffs: (0..n).map(|i| rhs.get(i, 0)).collect() }
}

/// Edgewise L2 projection of a function onto polynomials of degree `k` in the
/// edge parameter.
pub fn project_on_edge(
    mesh: &Mesh,
    e: usize,
    f: &dyn Fn([f64; 2]) -> f64,
    k: usize,
    quad_degree: usize,
) -> Poly1 {
    let edge = &mesh.edges[e];
    let a = mesh.vertices[edge.a];
    let b = mesh.vertices[edge.b];
    let n = k + 1;
    let rule = edge_rule_any(quad_degree.max(2 * k));
    let mut gram = crate::dense::DMat::zeros(n, n);
    let mut rhs = crate::dense::DMat::zeros(n, 1);
    for (t, w) in rule.points.iter().zip(&rule.weights) {
        let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let fx = f(x);
        for i in 0..n {
            let ti = t.powi(i as i32);
            rhs.add(i, 0, w * ti * fx);
            for j in 0..n {
                gram.add(i, j, w * ti * t.powi(j as i32));
            }
        }
    }
    crate::dense::lu_solve(&gram, &mut rhs).expect("edge mass matrix is positive definite");
    Poly1 { coeffs: (0..n).map(|i| rhs.get(i, 0)).collect() }
}
