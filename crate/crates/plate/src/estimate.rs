//! A posteriori error indicators: the two equivalent jump families, the
//! normal-normal jump term, volume terms and oscillations for plain L2
//! sources, the general-source residual indicators mu1/mu2/mu3 with the data
//! approximation error, per-scheme totals, dual-norm indicators for piecewise
//! polynomial functionals, and a conforming fine-grid surrogate for dual
//! norms.

use crate::assemble::{hct_stiffness, Scheme, SchemeConfig, Smoother};
use crate::mesh::Mesh;
use crate::quadrature::{edge_rule_any, tri_rule_any};
use crate::source::{project_on_triangle, MeshSource, Poly1, PwPoly, ScalarData, SourceSpec};
use crate::spaces::{edge_jump_terms, DiscreteField, DofMap, PwEval, SpaceKind};
use crate::transfer::{companion_matrix, morley_matrix_from_refined_hct};
use std::sync::Arc;

#[derive(Debug)]
pub enum EstimateError {
    DataAssumption { scheme: Scheme, requirement: String },
    Assemble(crate::assemble::AssembleError),
    Source(crate::source::SourceError),
}

impl std::fmt::Display for EstimateError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimateError::DataAssumption { scheme, requirement } => {
                write!(f, "smoother-free estimate refused for {}: {}", scheme.name(), requirement)
            }
            EstimateError::Assemble(e) => write!(f, "{e}"),
            EstimateError::Source(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EstimateError {}

impl From<crate::assemble::AssembleError> for EstimateError {
    fn from(e: crate::assemble::AssembleError) -> Self {
        EstimateError::Assemble(e)
    }
}

impl From<crate::source::SourceError> for EstimateError {
    fn from(e: crate::source::SourceError) -> Self {
        EstimateError::Source(e)
    }
}

/// Hessian-tangential jump family: per interior edge h_E times the squared
/// L2 norm of the tangential Hessian jump, plus the jump-product edge parts
/// (which include boundary traces).
#[derive(Debug, Clone)]
pub struct JumpFamilyA {
    /// Per edge, squared; zero on boundary edges.
    pub hessian_tau_sq: Vec<f64>,
    /// Per edge, squared; boundary edges carry trace terms.
    pub jh_sq: Vec<f64>,
}

impl JumpFamilyA {
    pub fn total_hessian_tau_sq(&self) -> f64 {
        self.hessian_tau_sq.iter().sum()
    }

    pub fn total_jh_sq(&self) -> f64 {
        self.jh_sq.iter().sum()
    }

    pub fn total_sq(&self) -> f64 {
        self.total_hessian_tau_sq() + self.total_jh_sq()
    }
}

pub fn jump_estimator_a(u: &impl PwEval, mesh: &Mesh) -> JumpFamilyA {
    let rule = edge_rule_any(6);
    let constant = u.constant_hessians();
    let mut hessian_tau_sq = vec![0.0; mesh.n_edges()];
    let mut jh_sq = vec![0.0; mesh.n_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        if let Some(tm) = edge.t_minus {
            let tau = edge.tangent;
            let int = if constant {
                let hp = u.eval_pw(mesh, edge.t_plus, edge.mid).2;
                let hm = u.eval_pw(mesh, tm, edge.mid).2;
                let j = [hp[0] - hm[0], hp[1] - hm[1], hp[2] - hm[2]];
                let jt = [j[0] * tau[0] + j[1] * tau[1], j[1] * tau[0] + j[2] * tau[1]];
                jt[0] * jt[0] + jt[1] * jt[1]
            } else {
                let a = mesh.vertices[edge.a];
                let b = mesh.vertices[edge.b];
                let mut int = 0.0;
                for (tq, wq) in rule.points.iter().zip(&rule.weights) {
                    let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
                    let hp = u.eval_pw(mesh, edge.t_plus, x).2;
                    let hm = u.eval_pw(mesh, tm, x).2;
                    let j = [hp[0] - hm[0], hp[1] - hm[1], hp[2] - hm[2]];
                    let jt = [j[0] * tau[0] + j[1] * tau[1], j[1] * tau[0] + j[2] * tau[1]];
                    int += wq * (jt[0] * jt[0] + jt[1] * jt[1]);
                }
                int
            };
            hessian_tau_sq[e] = edge.length * (edge.length * int);
        }
        let (vertex, mean) = edge_jump_terms(u, u, mesh, e, 4);
        jh_sq[e] = vertex + mean;
    }
    JumpFamilyA { hessian_tau_sq, jh_sq }
}

/// Trace jump family: per edge h^-3 times the squared value jump plus h^-1
/// times the squared normal-derivative jump, boundary edges included with
/// the trace convention.
#[derive(Debug, Clone)]
pub struct JumpFamilyB {
    pub value_sq: Vec<f64>,
    pub normal_sq: Vec<f64>,
}

impl JumpFamilyB {
    pub fn per_edge_sq(&self, e: usize) -> f64 {
        self.value_sq[e] + self.normal_sq[e]
    }

    pub fn total_sq(&self) -> f64 {
        self.value_sq.iter().sum::<f64>() + self.normal_sq.iter().sum::<f64>()
    }
}

pub fn jump_estimator_b(u: &impl PwEval, mesh: &Mesh) -> JumpFamilyB {
    let rule = edge_rule_any(6);
    let mut value_sq = vec![0.0; mesh.n_edges()];
    let mut normal_sq = vec![0.0; mesh.n_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let a = mesh.vertices[edge.a];
        let b = mesh.vertices[edge.b];
        let h = edge.length;
        let mut val_int = 0.0;
        let mut nrm_int = 0.0;
        for (tq, wq) in rule.points.iter().zip(&rule.weights) {
            let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
            let (vp, gp, _) = u.eval_pw(mesh, edge.t_plus, x);
            let (jv, jg) = match edge.t_minus {
                Some(tm) => {
                    let (vm, gm, _) = u.eval_pw(mesh, tm, x);
                    (vp - vm, [gp[0] - gm[0], gp[1] - gm[1]])
                }
                None => (vp, gp),
            };
            let jn = jg[0] * edge.normal[0] + jg[1] * edge.normal[1];
            val_int += wq * jv * jv;
            nrm_int += wq * jn * jn;
        }
        value_sq[e] = (h * val_int) / (h * h * h);
        normal_sq[e] = (h * nrm_int) / h;
    }
    JumpFamilyB { value_sq, normal_sq }
}

/// Normal-normal Hessian jumps over interior edges: h_E times the squared L2
/// norm of the jump of the second normal derivative.
pub fn nn_jump_estimator(u: &impl PwEval, mesh: &Mesh) -> Vec<f64> {
    let rule = edge_rule_any(6);
    let constant = u.constant_hessians();
    let mut out = vec![0.0; mesh.n_edges()];
    for (e, edge) in mesh.edges.iter().enumerate() {
        let Some(tm) = edge.t_minus else { continue };
        let nrm = edge.normal;
        let int = if constant {
            let hp = u.eval_pw(mesh, edge.t_plus, edge.mid).2;
            let hm = u.eval_pw(mesh, tm, edge.mid).2;
            let j = [hp[0] - hm[0], hp[1] - hm[1], hp[2] - hm[2]];
            let nn = j[0] * nrm[0] * nrm[0] + 2.0 * j[1] * nrm[0] * nrm[1] + j[2] * nrm[1] * nrm[1];
            nn * nn
        } else {
            let a = mesh.vertices[edge.a];
            let b = mesh.vertices[edge.b];
            let mut int = 0.0;
            for (tq, wq) in rule.points.iter().zip(&rule.weights) {
                let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
                let hp = u.eval_pw(mesh, edge.t_plus, x).2;
                let hm = u.eval_pw(mesh, tm, x).2;
                let j = [hp[0] - hm[0], hp[1] - hm[1], hp[2] - hm[2]];
                let nn =
                    j[0] * nrm[0] * nrm[0] + 2.0 * j[1] * nrm[0] * nrm[1] + j[2] * nrm[1] * nrm[1];
                int += wq * nn * nn;
            }
            int
        };
        out[e] = edge.length * (edge.length * int);
    }
    out
}

/// Per-element volume weight and quadratic oscillation of a scalar source:
/// squared h^2-weighted L2 norm of f and of f minus its elementwise
/// quadratic projection.
pub fn volume_and_osc(
    f: &ScalarData,
    mesh: &Mesh,
    quad_degree: usize,
) -> (Vec<f64>, Vec<f64>) {
    let rule = tri_rule_any(quad_degree);
    let nt = mesh.n_triangles();
    let mut volume_sq = vec![0.0; nt];
    let mut osc_sq = vec![0.0; nt];
    for t in 0..nt {
        let corners = mesh.corners(t);
        let h = mesh.diameter(t);
        let h4 = h * h * h * h;
        let ff = rule.integrate(&corners, |x| {
            let v = f.eval(x);
            v * v
        });
        volume_sq[t] = h4 * ff;
        let p = project_on_triangle(mesh, t, &|x| f.eval(x), 2, quad_degree);
        let dd = rule.integrate(&corners, |x| {
            let d = f.eval(x) - p.eval(x);
            d * d
        });
        osc_sq[t] = h4 * dd.max(0.0);
    }
    (volume_sq, osc_sq)
}

/// The three residual indicator families for polynomial data: the volume
/// residual per element, the edge flux residual, and the normal-moment
/// residual with its two branches.
#[derive(Debug, Clone)]
pub struct MuParts {
    pub mu1_sq: Vec<f64>,
    pub mu2_sq: Vec<f64>,
    pub mu3_sq: Vec<f64>,
}

impl MuParts {
    pub fn total_sq(&self) -> f64 {
        self.mu1_sq.iter().sum::<f64>()
            + self.mu2_sq.iter().sum::<f64>()
            + self.mu3_sq.iter().sum::<f64>()
    }

    pub fn total(&self) -> f64 {
        self.total_sq().sqrt()
    }
}

/// Low-level evaluation of the residual indicators from per-triangle
/// polynomial volume data and per-edge polynomial line data in the edge
/// parameter. `hessians` supplies the constant elementwise Hessian of the
/// discrete solution for the Lagrange-transfer branch of mu3 (`None` for the
/// mean-free branch).
pub fn mu_from_polynomials(
    mesh: &Mesh,
    f_apx: &[[PwPoly; 6]],
    g0_apx: &[Poly1],
    g1_apx: &[Poly1],
    hessians: Option<&[[f64; 3]]>,
) -> MuParts {
    let nt = mesh.n_triangles();
    let ne = mesh.n_edges();
    let rule = tri_rule_any(8);

    // Volume residual: F0 - div F1 + div^2 F2 with the matrix convention
    // F2 = [[f20, f11/2], [f11/2, f02]].
    let mut mu1_sq = vec![0.0; nt];
    for t in 0..nt {
        let d = &f_apx[t];
        let higher = !(d[1].is_zero() && d[2].is_zero() && d[3].is_zero() && d[4].is_zero() && d[5].is_zero());
        if d[0].is_zero() && !higher {
            continue;
        }
        let corners = mesh.corners(t);
        let h = mesh.diameter(t);
        let int = if higher {
            let div_f1 = [d[1].dx(), d[2].dy()];
            let div2_f2 = [d[3].dx().dx(), d[4].dx().dy(), d[5].dy().dy()];
            rule.integrate(&corners, |x| {
                let q = d[0].eval(x) - div_f1[0].eval(x) - div_f1[1].eval(x)
                    + div2_f2[0].eval(x)
                    + div2_f2[1].eval(x)
                    + div2_f2[2].eval(x);
                q * q
            })
        } else {
            rule.integrate(&corners, |x| {
                let q = d[0].eval(x);
                q * q
            })
        };
        mu1_sq[t] = h.powi(4) * int;
    }

    // Edge residuals over interior edges.
    let mut mu2_sq = vec![0.0; ne];
    let mut mu3_sq = vec![0.0; ne];
    let any_first_order: bool = f_apx
        .iter()
        .any(|d| !(d[1].is_zero() && d[2].is_zero() && d[3].is_zero() && d[4].is_zero() && d[5].is_zero()));
    for (e, edge) in mesh.edges.iter().enumerate() {
        let Some(tm) = edge.t_minus else { continue };
        // Quick exit when neither side carries first/second-order data, no
        // line densities act, and no Hessian shift applies.
        if !any_first_order
            && g0_apx[e].is_zero()
            && g1_apx[e].is_zero()
            && hessians.is_none()
        {
            continue;
        }
        let tp = edge.t_plus;
        let a = mesh.vertices[edge.a];
        let b = mesh.vertices[edge.b];
        let nrm = edge.normal;
        let tau = edge.tangent;
        let h = edge.length;

        // Side contribution of V . nu with V = F1 - div F2 - d(F2 tau)/ds.
        let side_flux = |t: usize| -> Poly1 {
            let d = &f_apx[t];
            let f2 = matrix_components(d);
            let div_f2 = [
                f2[0].dx().add_assigned(&f2[1].dy()),
                f2[1].dx().add_assigned(&f2[2].dy()),
            ];
            let f2tau = [
                scale_add(&f2[0], tau[0], &f2[1], tau[1]),
                scale_add(&f2[1], tau[0], &f2[2], tau[1]),
            ];
            let ds_f2tau = [f2tau[0].directional(tau), f2tau[1].directional(tau)];
            let vx = d[1].restrict(a, b).sub(&div_f2[0].restrict(a, b)).sub(&ds_f2tau[0].restrict(a, b));
            let vy = d[2].restrict(a, b).sub(&div_f2[1].restrict(a, b)).sub(&ds_f2tau[1].restrict(a, b));
            let mut out = vx;
            for c in &mut out.coeffs {
                *c *= nrm[0];
            }
            let mut vyn = vy;
            for c in &mut vyn.coeffs {
                *c *= nrm[1];
            }
            out.add(&vyn)
        };
        let jump_flux = side_flux(tp).sub(&side_flux(tm));
        let r2 = g0_apx[e].add(&jump_flux);
        mu2_sq[e] = h.powi(3) * r2.l2_sq(h);

        // Normal moment: G1 + [F2 nu] . nu, optionally shifted by the
        // discrete Hessian for the Lagrange-transfer branch.
        let side_moment = |t: usize| -> Poly1 {
            let d = &f_apx[t];
            let f2 = matrix_components(d);
            // nu^T F2 nu as a 2D polynomial restricted to the edge.
            let mut qm = f2[0].restrict(a, b);
            for c in &mut qm.coeffs {
                *c *= nrm[0] * nrm[0];
            }
            let mut qxy = f2[1].restrict(a, b);
            for c in &mut qxy.coeffs {
                *c *= 2.0 * nrm[0] * nrm[1];
            }
            let mut qyy = f2[2].restrict(a, b);
            for c in &mut qyy.coeffs {
                *c *= nrm[1] * nrm[1];
            }
            qm.add(&qxy).add(&qyy)
        };
        let mut rho = g1_apx[e].add(&side_moment(tp).sub(&side_moment(tm)));
        match hessians {
            Some(hs) => {
                let nn = |h3: &[f64; 3]| {
                    h3[0] * nrm[0] * nrm[0] + 2.0 * h3[1] * nrm[0] * nrm[1] + h3[2] * nrm[1] * nrm[1]
                };
                let shift = nn(&hs[tp]) - nn(&hs[tm]);
                rho = rho.sub(&Poly1::constant(shift));
            }
            None => {
                // Remove the edge mean.
                let mean = rho.mean();
                rho = rho.sub(&Poly1::constant(mean));
            }
        }
        mu3_sq[e] = h * rho.l2_sq(h);
    }

    MuParts { mu1_sq, mu2_sq, mu3_sq }
}

/// Matrix components (xx, xy, yy) of the second-order data with the 1/2
/// convention on the mixed entry.
fn matrix_components(d: &[PwPoly; 6]) -> [PwPoly; 3] {
    let mut xy = d[4].clone();
    xy.scale_coeffs(0.5);
    [d[3].clone(), xy, d[5].clone()]
}

fn scale_add(a: &PwPoly, fa: f64, b: &PwPoly, fb: f64) -> PwPoly {
    let mut out = a.clone();
    out.scale_coeffs(fa);
    let mut bb = b.clone();
    bb.scale_coeffs(fb);
    out.add_assign_compatible(&bb, 1.0);
    out
}

trait AddAssigned {
    fn add_assigned(&self, other: &PwPoly) -> PwPoly;
}

impl AddAssigned for PwPoly {
    fn add_assigned(&self, other: &PwPoly) -> PwPoly {
        let mut out = self.clone();
        out.add_assign_compatible(other, 1.0);
        out
    }
}

/// Residual indicators of a realized source against a discrete solution.
/// The Lagrange-transfer branch of mu3 is selected for the continuous
/// interior penalty scheme.
pub fn general_mu(source: &MeshSource, u_h: Option<&DiscreteField>, scheme: Scheme) -> MuParts {
    let mesh = &source.mesh;
    let hessians: Option<Vec<[f64; 3]>> = if scheme == Scheme::C0ip {
        let hs: Vec<[f64; 3]> = (0..mesh.n_triangles())
            .map(|t| match u_h {
                Some(u) => {
                    let c = mesh.corners(t);
                    let centroid = [
                        (c[0][0] + c[1][0] + c[2][0]) / 3.0,
                        (c[0][1] + c[1][1] + c[2][1]) / 3.0,
                    ];
                    u.eval_in(t, centroid).2
                }
                None => [0.0; 3],
            })
            .collect();
        Some(hs)
    } else {
        None
    };
    mu_from_polynomials(mesh, &source.f_apx, &source.g0_apx, &source.g1_apx, hessians.as_deref())
}

/// Data approximation error per element: volume components weighted by
/// h^{2-|alpha|}, plus the adjacent loaded-edge terms weighted by
/// h^{3/2-j}.
pub fn apx_error(source: &MeshSource) -> (Vec<f64>, f64) {
    let mesh = &source.mesh;
    // Exact polynomial data approximates itself.
    if matches!(source.spec.approx, crate::source::ApproxRule::ExactPoly) {
        return (vec![0.0; mesh.n_triangles()], 0.0);
    }
    let q = source.spec.quad_degree;
    let rule = tri_rule_any(q);
    let erule = edge_rule_any(q.max(6));
    let nt = mesh.n_triangles();
    let mut per_element = vec![0.0; nt];
    let weights_pow = [2.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    for t in 0..nt {
        let corners = mesh.corners(t);
        let h = mesh.diameter(t);
        let mut sum = 0.0;
        for c in 0..6 {
            let exact = &source.spec.volume[c];
            let apx = &source.f_apx[t][c];
            if exact.is_zero() && apx.is_zero() {
                continue;
            }
            let int = rule.integrate(&corners, |x| {
                let d = exact.eval(x) - apx.eval(x);
                d * d
            });
            sum += h.powf(2.0 * weights_pow[c]) * int;
        }
        per_element[t] = sum;
    }
    // Edge terms: each loaded edge contributes to every adjacent triangle.
    for (order, (edges, load, apx)) in [
        (0usize, (&source.gamma0, source.spec.line0.as_ref(), &source.g0_apx)),
        (1usize, (&source.gamma1, source.spec.line1.as_ref(), &source.g1_apx)),
    ] {
        let Some(load) = load else { continue };
        for &e in edges.iter() {
            let edge = &mesh.edges[e];
            let a = mesh.vertices[edge.a];
            let b = mesh.vertices[edge.b];
            let h = edge.length;
            let mut int = 0.0;
            for (tq, wq) in erule.points.iter().zip(&erule.weights) {
                let x = [a[0] + tq * (b[0] - a[0]), a[1] + tq * (b[1] - a[1])];
                let d = load.density.eval(x) - apx[e].eval(*tq);
                int += wq * d * d;
            }
            let contribution = h.powf(2.0 * (1.5 - order as f64)) * (h * int);
            per_element[edge.t_plus] += contribution;
            if let Some(tm) = edge.t_minus {
                per_element[tm] += contribution;
            }
        }
    }
    let total = per_element.iter().sum::<f64>().sqrt();
    (per_element, total)
}

/// All indicator components of one solve, with the per-theorem totals.
#[derive(Debug, Clone)]
pub struct EstimatorReport {
    pub scheme: Scheme,
    pub smoother: Smoother,
    pub mu: MuParts,
    pub apx_sq: Vec<f64>,
    pub family_a: JumpFamilyA,
    pub family_b: JumpFamilyB,
    /// Interior normal-normal Hessian jumps (enters the C0IP totals).
    pub nn_sq: Vec<f64>,
    /// Plain-L2 volume weight per element, when the source is a plain
    /// density: squared h^2-weighted norm of f.
    pub volume_sq: Option<Vec<f64>>,
    pub osc_sq: Option<Vec<f64>>,
}

impl EstimatorReport {
    pub fn apx_total_sq(&self) -> f64 {
        self.apx_sq.iter().sum()
    }

    pub fn nn_total_sq(&self) -> f64 {
        self.nn_sq.iter().sum()
    }

    fn nn_term(&self) -> f64 {
        if self.scheme == Scheme::C0ip {
            self.nn_total_sq()
        } else {
            0.0
        }
    }

    /// General-source theorem total with the Hessian-tangential jump family.
    pub fn total_general_a(&self) -> f64 {
        (self.mu.total_sq() + self.apx_total_sq() + self.family_a.total_sq() + self.nn_term())
            .sqrt()
    }

    /// General-source theorem total with the trace jump family.
    pub fn total_general_b(&self) -> f64 {
        (self.mu.total_sq() + self.apx_total_sq() + self.family_b.total_sq() + self.nn_term())
            .sqrt()
    }

    /// Plain-L2 theorem total (volume weight plus jumps), family A.
    pub fn total_l2_a(&self) -> Option<f64> {
        let v = self.volume_sq.as_ref()?;
        Some((v.iter().sum::<f64>() + self.family_a.total_sq() + self.nn_term()).sqrt())
    }

    /// Plain-L2 theorem total, family B.
    pub fn total_l2_b(&self) -> Option<f64> {
        let v = self.volume_sq.as_ref()?;
        Some((v.iter().sum::<f64>() + self.family_b.total_sq() + self.nn_term()).sqrt())
    }

    pub fn osc_total_sq(&self) -> f64 {
        self.osc_sq.as_ref().map(|o| o.iter().sum()).unwrap_or(0.0)
    }

    /// Squared indicators redistributed to elements: element terms plus half
    /// of every adjacent edge term (full share on boundary edges).
    pub fn element_indicators(&self, mesh: &Mesh) -> Vec<f64> {
        let nt = mesh.n_triangles();
        let mut eta = vec![0.0; nt];
        for t in 0..nt {
            eta[t] += self.mu.mu1_sq[t] + self.apx_sq[t];
            if let Some(v) = &self.volume_sq {
                eta[t] += v[t];
            }
        }
        for (e, edge) in mesh.edges.iter().enumerate() {
            let mut edge_sq = self.mu.mu2_sq[e]
                + self.mu.mu3_sq[e]
                + self.family_a.hessian_tau_sq[e]
                + self.family_a.jh_sq[e];
            if self.scheme == Scheme::C0ip {
                edge_sq += self.nn_sq[e];
            }
            match edge.t_minus {
                Some(tm) => {
                    eta[edge.t_plus] += 0.5 * edge_sq;
                    eta[tm] += 0.5 * edge_sq;
                }
                None => eta[edge.t_plus] += edge_sq,
            }
        }
        eta
    }
}

/// Whether the source is a plain scalar density (only the zeroth volume
/// component, no line or point loads).
fn is_plain_l2(source: &MeshSource) -> bool {
    source.spec.volume[1..].iter().all(|c| c.is_zero())
        && source.spec.line0.is_none()
        && source.spec.line1.is_none()
        && source.point_vertices.is_empty()
}

/// Validate the data assumptions required for the smoother-free estimate.
fn check_identity_assumptions(source: &MeshSource, scheme: Scheme) -> Result<(), EstimateError> {
    match scheme {
        Scheme::C0ip => {
            let f2_zero = source.f_apx.iter().all(|d| d[3].is_zero() && d[4].is_zero() && d[5].is_zero());
            if !f2_zero {
                return Err(EstimateError::DataAssumption {
                    scheme,
                    requirement: "second-order volume approximations (F2) must vanish".into(),
                });
            }
            if !source.g1_apx.iter().all(|g| g.is_zero()) {
                return Err(EstimateError::DataAssumption {
                    scheme,
                    requirement: "the first-order line approximation (G1) must vanish".into(),
                });
            }
        }
        _ => {
            let f1_zero = source.f_apx.iter().all(|d| d[1].is_zero() && d[2].is_zero());
            if !f1_zero {
                return Err(EstimateError::DataAssumption {
                    scheme,
                    requirement: "first-order volume approximations (F1) must vanish".into(),
                });
            }
            let f2_const = source
                .f_apx
                .iter()
                .all(|d| d[3].effective_degree() == 0 && d[4].effective_degree() == 0 && d[5].effective_degree() == 0);
            if !f2_const {
                return Err(EstimateError::DataAssumption {
                    scheme,
                    requirement: "second-order volume approximations (F2) must be piecewise constant".into(),
                });
            }
        }
    }
    Ok(())
}

/// Assemble the full indicator report of a discrete solution for the
/// configured scheme and source. For the smoother-free configuration the
/// data assumptions of the general-source theory are validated first.
pub fn scheme_total(
    u_h: &DiscreteField,
    source: &MeshSource,
    config: &SchemeConfig,
) -> Result<EstimatorReport, EstimateError> {
    if config.smoother == Smoother::Identity {
        check_identity_assumptions(source, config.scheme)?;
    }
    let mesh = &source.mesh;
    let mu = general_mu(source, Some(u_h), config.scheme);
    let (apx_sq, _) = apx_error(source);
    let family_a = jump_estimator_a(u_h, mesh);
    let family_b = jump_estimator_b(u_h, mesh);
    let nn_sq = nn_jump_estimator(u_h, mesh);
    let (volume_sq, osc_sq) = if is_plain_l2(source) {
        let (v, o) = volume_and_osc(&source.spec.volume[0], mesh, source.spec.quad_degree);
        (Some(v), Some(o))
    } else {
        (None, None)
    };
    Ok(EstimatorReport {
        scheme: config.scheme,
        smoother: config.smoother,
        mu,
        apx_sq,
        family_a,
        family_b,
        nn_sq,
        volume_sq,
        osc_sq,
    })
}

/// Dual-norm indicators of a piecewise polynomial functional given by its
/// zeroth, first, and second order densities per triangle; the discrete
/// solution is zero and the data approximation error vanishes.
///
/// `lambda2` holds the symmetric matrix components (xx, xy, yy).
pub fn functional_dualnorm(
    mesh: &Arc<Mesh>,
    lambda0: &[PwPoly],
    lambda1: &[[PwPoly; 2]],
    lambda2: &[[PwPoly; 3]],
    scheme: Scheme,
) -> MuParts {
    let nt = mesh.n_triangles();
    let f_apx: Vec<[PwPoly; 6]> = (0..nt)
        .map(|t| {
            let mut xy = lambda2[t][1].clone();
            // The mixed volume component carries twice the matrix entry
            // under the 1/2 convention.
            xy.scale_coeffs(2.0);
            [
                lambda0[t].clone(),
                lambda1[t][0].clone(),
                lambda1[t][1].clone(),
                lambda2[t][0].clone(),
                xy,
                lambda2[t][2].clone(),
            ]
        })
        .collect();
    let g0 = vec![Poly1::zero(); mesh.n_edges()];
    let g1 = vec![Poly1::zero(); mesh.n_edges()];
    let hessians: Option<Vec<[f64; 3]>> = if scheme == Scheme::C0ip {
        Some(vec![[0.0; 3]; nt])
    } else {
        None
    };
    mu_from_polynomials(mesh, &f_apx, &g0, &g1, hessians.as_deref())
}

/// Conforming fine-grid surrogate of a dual norm: the energy norm of the
/// Riesz representation in the macro space on a `depth`-times uniformly
/// refined mesh. A computable lower bound of the true dual norm, increasing
/// in the depth.
pub fn surrogate_dual_norm(
    spec: &SourceSpec,
    mesh: &Arc<Mesh>,
    depth: usize,
) -> Result<f64, EstimateError> {
    let mut fine = Arc::clone(mesh);
    for _ in 0..depth {
        fine = Arc::new(fine.refine_uniform().0);
    }
    let hct = Arc::new(DofMap::new(&fine, SpaceKind::Hct));
    let fine_source = MeshSource::realize(spec, &fine)?;
    let load = crate::assemble::hct_load(&hct, &fine_source);
    riesz_energy(&hct, &load)
}

fn riesz_energy(hct: &Arc<DofMap>, load: &[f64]) -> Result<f64, EstimateError> {
    Ok(riesz_energies(hct, std::slice::from_ref(&load.to_vec()))?[0])
}

/// Energy norms of the Riesz representations of several loads on the macro
/// space, with one shared factorization.
pub fn riesz_energies(hct: &Arc<DofMap>, loads: &[Vec<f64>]) -> Result<Vec<f64>, EstimateError> {
    if hct.n_dofs == 0 {
        return Ok(vec![0.0; loads.len()]);
    }
    let stiffness = hct_stiffness(hct);
    let trips: Vec<faer::sparse::Triplet<usize, usize, f64>> =
        stiffness.iter().map(|&(i, j, v)| faer::sparse::Triplet::new(i, j, v)).collect();
    let n = hct.n_dofs;
    let a = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
        .map_err(|e| {
            EstimateError::Assemble(crate::assemble::AssembleError::Factorization {
                message: format!("{e:?}"),
                smallest_diagonal: 0.0,
            })
        })?;
    let symbolic = faer::sparse::linalg::solvers::SymbolicLu::try_new(a.symbolic()).map_err(|e| {
        EstimateError::Assemble(crate::assemble::AssembleError::Factorization {
            message: format!("{e:?}"),
            smallest_diagonal: 0.0,
        })
    })?;
    let lu = faer::sparse::linalg::solvers::Lu::try_new_with_symbolic(symbolic, a.as_ref())
        .map_err(|e| {
            EstimateError::Assemble(crate::assemble::AssembleError::Factorization {
                message: format!("{e:?}"),
                smallest_diagonal: 0.0,
            })
        })?;
    use faer::linalg::solvers::SolveCore;
    let mut out = Vec::with_capacity(loads.len());
    for load in loads {
        assert_eq!(load.len(), n);
        let mut x = faer::Mat::<f64>::zeros(n, 1);
        for i in 0..n {
            x[(i, 0)] = load[i];
        }
        lu.solve_in_place_with_conj(faer::Conj::No, x.as_mut());
        let e2: f64 = (0..n).map(|i| x[(i, 0)] * load[i]).sum();
        out.push(e2.max(0.0).sqrt());
    }
    Ok(out)
}

/// Batch variant of [`surrogate_dual_norm_pw`] sharing the refinement chain
/// and the factorization across functionals.
pub fn surrogate_batch_pw(
    mesh: &Arc<Mesh>,
    functionals: &[PwFunctional],
    depth: usize,
) -> Result<Vec<f64>, EstimateError> {
    let (meshes, traces) = refine_chain(mesh, depth);
    let fine = meshes.last().unwrap();
    let hct = Arc::new(DofMap::new(fine, SpaceKind::Hct));
    let ancestor = ancestor_map(&traces, fine.n_triangles());
    let loads: Vec<Vec<f64>> = functionals.iter().map(|f| f.load_on(&hct, &ancestor)).collect();
    riesz_energies(&hct, &loads)
}

/// Batch variant of [`surrogate_dual_norm_composed`].
pub fn surrogate_batch_composed(
    mesh: &Arc<Mesh>,
    functionals: &[PwFunctional],
    depth: usize,
) -> Result<Vec<f64>, EstimateError> {
    let (meshes, traces) = refine_chain(mesh, depth);
    let fine = meshes.last().unwrap();
    let fine_hct = Arc::new(DofMap::new(fine, SpaceKind::Hct));
    let ancestor = ancestor_map(&traces, fine.n_triangles());
    let morley = Arc::new(DofMap::new(mesh, SpaceKind::Morley));
    let coarse_hct = Arc::new(DofMap::new(mesh, SpaceKind::Hct));
    let identity: Vec<usize> = (0..mesh.n_triangles()).collect();
    let interp = morley_matrix_from_refined_hct(&morley, &fine_hct, &meshes, &traces);
    let lift = companion_matrix(&morley, &coarse_hct);
    let loads: Vec<Vec<f64>> = functionals
        .iter()
        .map(|f| {
            let c_fine = f.load_on(&fine_hct, &ancestor);
            let c_coarse = f.load_on(&coarse_hct, &identity);
            let pulled = interp.apply_transpose(&lift.apply_transpose(&c_coarse));
            c_fine.iter().zip(&pulled).map(|(a, b)| a - b).collect()
        })
        .collect();
    riesz_energies(&fine_hct, &loads)
}

/// Volume data of a functional given per coarse triangle, evaluated on
/// descendants through the refinement parent maps.
pub struct PwFunctional {
    /// Per coarse triangle: the six volume components.
    pub data: Vec<[PwPoly; 6]>,
}

impl PwFunctional {
    pub fn from_matrix_data(
        lambda0: &[PwPoly],
        lambda1: &[[PwPoly; 2]],
        lambda2: &[[PwPoly; 3]],
    ) -> PwFunctional {
        let data = (0..lambda0.len())
            .map(|t| {
                let mut xy = lambda2[t][1].clone();
                xy.scale_coeffs(2.0);
                [
                    lambda0[t].clone(),
                    lambda1[t][0].clone(),
                    lambda1[t][1].clone(),
                    lambda2[t][0].clone(),
                    xy,
                    lambda2[t][2].clone(),
                ]
            })
            .collect();
        PwFunctional { data }
    }

    /// Load vector on a macro space over a refined mesh; `ancestor[t]` maps
    /// fine triangles to the coarse triangles carrying the data.
    fn load_on(&self, hct: &DofMap, ancestor: &[usize]) -> Vec<f64> {
        let mesh = &hct.mesh;
        let rule = tri_rule_any(8);
        let mut b = vec![0.0; hct.n_dofs];
        let mut scratch = Vec::new();
        for t in 0..mesh.n_triangles() {
            let d = &self.data[ancestor[t]];
            let shapes = hct.shapes(t);
            let globals = hct.globals(t);
            for sub in 0..3 {
                let sc = shapes.subtriangle(sub);
                let jac = 2.0 * crate::quadrature::triangle_area(&sc);
                for (p, wq) in rule.points.iter().zip(&rule.weights) {
                    let x = [
                        p[0] * sc[0][0] + p[1] * sc[1][0] + p[2] * sc[2][0],
                        p[0] * sc[0][1] + p[1] * sc[1][1] + p[2] * sc[2][1],
                    ];
                    let fv: [f64; 6] = std::array::from_fn(|c| d[c].eval(x));
                    shapes.eval_all_on_sub(sub, x, &mut scratch);
                    let w = wq * jac;
                    for (i, &g) in globals.iter().enumerate() {
                        if g < 0 {
                            continue;
                        }
                        let (v, gr, hs) = scratch[i];
                        b[g as usize] += w
                            * (fv[0] * v
                                + fv[1] * gr[0]
                                + fv[2] * gr[1]
                                + fv[3] * hs[0]
                                + fv[4] * hs[1]
                                + fv[5] * hs[2]);
                    }
                }
            }
        }
        b
    }
}

/// Surrogate dual norm of a piecewise polynomial functional at the given
/// refinement depth.
pub fn surrogate_dual_norm_pw(
    mesh: &Arc<Mesh>,
    functional: &PwFunctional,
    depth: usize,
) -> Result<f64, EstimateError> {
    let (meshes, traces) = refine_chain(mesh, depth);
    let fine = meshes.last().unwrap();
    let hct = Arc::new(DofMap::new(fine, SpaceKind::Hct));
    let ancestor = ancestor_map(&traces, fine.n_triangles());
    let load = functional.load_on(&hct, &ancestor);
    riesz_energy(&hct, &load)
}

/// Surrogate dual norm of the functional composed with (1 - J I_M), the
/// structure appearing in the reliability bound: the smoothing chain is
/// evaluated through the coarse Morley interpolation of the fine macro basis.
pub fn surrogate_dual_norm_composed(
    mesh: &Arc<Mesh>,
    functional: &PwFunctional,
    depth: usize,
) -> Result<f64, EstimateError> {
    let (meshes, traces) = refine_chain(mesh, depth);
    let fine = meshes.last().unwrap();
    let fine_hct = Arc::new(DofMap::new(fine, SpaceKind::Hct));
    let ancestor = ancestor_map(&traces, fine.n_triangles());
    let c_fine = functional.load_on(&fine_hct, &ancestor);

    let morley = Arc::new(DofMap::new(mesh, SpaceKind::Morley));
    let coarse_hct = Arc::new(DofMap::new(mesh, SpaceKind::Hct));
    let identity_ancestors: Vec<usize> = (0..mesh.n_triangles()).collect();
    let c_coarse = functional.load_on(&coarse_hct, &identity_ancestors);

    let interp = morley_matrix_from_refined_hct(&morley, &fine_hct, &meshes, &traces);
    let lift = companion_matrix(&morley, &coarse_hct);
    // c' = c_fine - interp^T lift^T c_coarse.
    let lifted = lift.apply_transpose(&c_coarse);
    let pulled = interp.apply_transpose(&lifted);
    let c_composed: Vec<f64> = c_fine.iter().zip(&pulled).map(|(a, b)| a - b).collect();
    riesz_energy(&fine_hct, &c_composed)
}

fn refine_chain(mesh: &Arc<Mesh>, depth: usize) -> (Vec<Arc<Mesh>>, Vec<crate::mesh::UniformTrace>) {
    let mut meshes = vec![Arc::clone(mesh)];
    let mut traces = Vec::new();
    for _ in 0..depth {
        let (m, t) = meshes.last().unwrap().refine_uniform();
        meshes.push(Arc::new(m));
        traces.push(t);
    }
    (meshes, traces)
}

fn ancestor_map(traces: &[crate::mesh::UniformTrace], n_fine: usize) -> Vec<usize> {
    let mut ancestor: Vec<usize> = (0..n_fine).collect();
    for level in (0..traces.len()).rev() {
        for a in ancestor.iter_mut() {
            *a = traces[level].parent[*a];
        }
    }
    // Walk from fine to coarse: apply parents in reverse order.
    // (The loop above already does exactly that.)
    ancestor
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{unit_square_four, unit_square_two};
    use crate::rng::Rng;
    use crate::source::{ApproxRule, LineLoad};
    use crate::spaces::nodal_field;

    fn arc(m: crate::mesh::Mesh) -> Arc<Mesh> {
        Arc::new(m)
    }

    fn two_triangle_field(f: &dyn Fn([f64; 2]) -> f64, g: &dyn Fn([f64; 2]) -> [f64; 2]) -> (Arc<Mesh>, DiscreteField) {
        // f on triangle 0, zero on triangle 1.
        let mesh = arc(unit_square_two());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let nodal = nodal_field(&map, f, g, 4);
        let mut field = DiscreteField::zeros(&map);
        field.coeffs[..6].copy_from_slice(&nodal.coeffs[..6]);
        (mesh, field)
    }

    #[test]
    fn hessian_tau_jump_closed_form() {
        // v = x^2 on one triangle, 0 on the other: the tangential Hessian
        // jump on the diagonal gives h * |[D2 v] tau|^2 * h = 4.
        let (mesh, field) = two_triangle_field(&|x| x[0] * x[0], &|x| [2.0 * x[0], 0.0]);
        let fam = jump_estimator_a(&field, &mesh);
        let diag = (0..mesh.n_edges()).find(|&e| !mesh.edges[e].boundary()).unwrap();
        assert!((fam.hessian_tau_sq[diag] - 4.0).abs() < 1e-12, "{}", fam.hessian_tau_sq[diag]);
        for (e, edge) in mesh.edges.iter().enumerate() {
            if edge.boundary() {
                assert_eq!(fam.hessian_tau_sq[e], 0.0);
            }
        }
    }

    #[test]
    fn global_quadratic_has_no_interior_jumps() {
        let mesh = arc(unit_square_four());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::DgP2));
        let field = nodal_field(&map, &|x| x[0] * x[0] - x[0] * x[1], &|x| [2.0 * x[0] - x[1], -x[0]], 4);
        let fam = jump_estimator_a(&field, &mesh);
        assert!(fam.total_hessian_tau_sq() < 1e-13);
        let nn = nn_jump_estimator(&field, &mesh);
        assert!(nn.iter().sum::<f64>() < 1e-13);
    }

    #[test]
    fn value_jump_closed_form() {
        // v = x on one triangle: squared value-jump term on the diagonal is
        // h^-3 * h/3 = 1/6.
        let (mesh, field) = two_triangle_field(&|x| x[0], &|_| [1.0, 0.0]);
        let fam = jump_estimator_b(&field, &mesh);
        let diag = (0..mesh.n_edges()).find(|&e| !mesh.edges[e].boundary()).unwrap();
        assert!((fam.value_sq[diag] - 1.0 / 6.0).abs() < 1e-13, "{}", fam.value_sq[diag]);
    }

    #[test]
    fn nn_jump_closed_form() {
        // v = x^2 on one triangle: [d2v/dn2] = 2 nu_x^2 = 1 on the diagonal;
        // contribution h * 1 * h = 2.
        let (mesh, field) = two_triangle_field(&|x| x[0] * x[0], &|x| [2.0 * x[0], 0.0]);
        let nn = nn_jump_estimator(&field, &mesh);
        let diag = (0..mesh.n_edges()).find(|&e| !mesh.edges[e].boundary()).unwrap();
        assert!((nn[diag] - 2.0).abs() < 1e-12, "{}", nn[diag]);
    }

    #[test]
    fn volume_and_oscillation_closed_forms() {
        let mesh = arc(crate::mesh::build_mesh(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap());
        // Quadratic source: zero oscillation.
        let f = ScalarData::Poly(PwPoly::global(2, {
            let mut c = vec![0.0; 6];
            c[crate::source::mono_index(0, 0)] = 1.0;
            c[crate::source::mono_index(2, 0)] = 3.0;
            c
        }));
        let (_, osc) = volume_and_osc(&f, &mesh, 8);
        assert!(osc[0] < 1e-13);
        // Unit source: h^2-weighted norm = h^2 sqrt(area) with h = sqrt(2).
        let one = ScalarData::Poly(PwPoly::constant(1.0));
        let (vol, osc) = volume_and_osc(&one, &mesh, 8);
        assert!((vol[0].sqrt() - 2.0 * (0.5f64).sqrt()).abs() < 1e-13);
        assert!(osc[0] < 1e-14);
        // Cubic source against a high-degree quadrature oracle.
        let cubic = ScalarData::Func(Arc::new(|x: [f64; 2]| x[0] * x[0] * x[0]));
        let (_, osc) = volume_and_osc(&cubic, &mesh, 10);
        assert!(osc[0] > 1e-8);
        let p = project_on_triangle(&mesh, 0, &|x| x[0] * x[0] * x[0], 2, 10);
        let oracle = tri_rule_any(10).integrate(&mesh.corners(0), |x| {
            let d = x[0] * x[0] * x[0] - p.eval(x);
            d * d
        }) * 4.0; // h^4 = 4
        assert!((osc[0] - oracle).abs() < 1e-13 * oracle.max(1.0));
    }

    #[test]
    fn mu_vanishes_for_zero_and_constant_data() {
        let mesh = arc(unit_square_four());
        let zero = MeshSource::realize(&SourceSpec::zero(), &mesh).unwrap();
        let mu = general_mu(&zero, None, Scheme::Morley);
        assert!(mu.total() < 1e-15);

        // Globally constant second-order data: no divergence, no jumps.
        let mut spec = SourceSpec::zero();
        spec.volume[3] = ScalarData::Poly(PwPoly::constant(1.0));
        spec.volume[5] = ScalarData::Poly(PwPoly::constant(1.0));
        let source = MeshSource::realize(&spec, &mesh).unwrap();
        let mu = general_mu(&source, None, Scheme::Morley);
        assert!(mu.total() < 1e-13, "{}", mu.total());
    }

    #[test]
    fn elementwise_pythagoras_for_projected_density() {
        // F0 = quadratic projection of f, all other data zero: mu1 plus the
        // oscillation recovers the full volume weight elementwise.
        let mesh = arc(unit_square_four().refine_uniform().0);
        let f = crate::manufactured::load_polynomial();
        let spec = SourceSpec::from_l2(ScalarData::Poly(f), ApproxRule::Project { k: 2 });
        let source = MeshSource::realize(&spec, &mesh).unwrap();
        let mu = general_mu(&source, None, Scheme::Morley);
        assert!(mu.mu2_sq.iter().sum::<f64>() < 1e-14);
        assert!(mu.mu3_sq.iter().sum::<f64>() < 1e-14);
        let (volume_sq, osc_sq) = volume_and_osc(&source.spec.volume[0], &mesh, 8);
        for t in 0..mesh.n_triangles() {
            let lhs = mu.mu1_sq[t] + osc_sq[t];
            assert!(
                (lhs - volume_sq[t]).abs() <= 1e-12 * volume_sq[t].max(1e-30),
                "triangle {t}: {lhs} vs {}",
                volume_sq[t]
            );
        }
        // The apx error coincides with the oscillation here.
        let (apx_sq, _) = apx_error(&source);
        for t in 0..mesh.n_triangles() {
            assert!((apx_sq[t] - osc_sq[t]).abs() <= 1e-12 * osc_sq[t].max(1e-30));
        }
    }

    #[test]
    fn apx_closed_form_for_unit_line_load() {
        // g0 = 1 on one interior edge with zero approximation: each adjacent
        // element receives h^3 * h = h^4.
        let mesh = arc(unit_square_four());
        let mut spec = SourceSpec::zero();
        spec.line0 = Some(LineLoad {
            segments: vec![([0.0, 0.0], [0.5, 0.5])],
            density: ScalarData::Poly(PwPoly::constant(1.0)),
        });
        spec.approx = ApproxRule::Explicit {
            f: Box::new([None, None, None, None, None, None]),
            g0: None,
            g1: None,
        };
        let source = MeshSource::realize(&spec, &mesh).unwrap();
        let e = source.gamma0[0];
        let h = mesh.edges[e].length;
        let (apx_sq, _) = apx_error(&source);
        let tp = mesh.edges[e].t_plus;
        assert!((apx_sq[tp] - h.powi(4)).abs() < 1e-13, "{} vs {}", apx_sq[tp], h.powi(4));
    }

    #[test]
    fn mu_is_homogeneous_in_the_data() {
        let mesh = arc(unit_square_four());
        let mut rng = Rng::new(71);
        let lambda0: Vec<PwPoly> = (0..mesh.n_triangles())
            .map(|_| PwPoly::constant(rng.uniform(-1.0, 1.0)))
            .collect();
        let lambda1: Vec<[PwPoly; 2]> = (0..mesh.n_triangles())
            .map(|_| [PwPoly::constant(rng.uniform(-1.0, 1.0)), PwPoly::constant(rng.uniform(-1.0, 1.0))])
            .collect();
        let lambda2: Vec<[PwPoly; 3]> = (0..mesh.n_triangles())
            .map(|_| {
                [
                    PwPoly::constant(rng.uniform(-1.0, 1.0)),
                    PwPoly::constant(rng.uniform(-1.0, 1.0)),
                    PwPoly::constant(rng.uniform(-1.0, 1.0)),
                ]
            })
            .collect();
        let mu = functional_dualnorm(&mesh, &lambda0, &lambda1, &lambda2, Scheme::Morley);
        let scaled0: Vec<PwPoly> = lambda0
            .iter()
            .map(|p| {
                let mut q = p.clone();
                q.scale_coeffs(-3.0);
                q
            })
            .collect();
        let scaled1: Vec<[PwPoly; 2]> = lambda1
            .iter()
            .map(|p| {
                std::array::from_fn(|i| {
                    let mut q = p[i].clone();
                    q.scale_coeffs(-3.0);
                    q
                })
            })
            .collect();
        let scaled2: Vec<[PwPoly; 3]> = lambda2
            .iter()
            .map(|p| {
                std::array::from_fn(|i| {
                    let mut q = p[i].clone();
                    q.scale_coeffs(-3.0);
                    q
                })
            })
            .collect();
        let mu_scaled = functional_dualnorm(&mesh, &scaled0, &scaled1, &scaled2, Scheme::Morley);
        assert!((mu_scaled.total() - 3.0 * mu.total()).abs() < 1e-12 * mu.total().max(1.0));
    }

    #[test]
    fn dualnorm_purely_volumetric_data() {
        // Random piecewise constants in the zeroth component only: mu1 is
        // the weighted volume norm, the edge terms vanish.
        let mesh = arc(unit_square_four());
        let mut rng = Rng::new(5);
        let lambda0: Vec<PwPoly> = (0..mesh.n_triangles())
            .map(|_| PwPoly::constant(rng.uniform(-2.0, 2.0)))
            .collect();
        let zero1: Vec<[PwPoly; 2]> =
            (0..mesh.n_triangles()).map(|_| [PwPoly::zero(), PwPoly::zero()]).collect();
        let zero2: Vec<[PwPoly; 3]> = (0..mesh.n_triangles())
            .map(|_| [PwPoly::zero(), PwPoly::zero(), PwPoly::zero()])
            .collect();
        let mu = functional_dualnorm(&mesh, &lambda0, &zero1, &zero2, Scheme::Morley);
        assert!(mu.mu2_sq.iter().sum::<f64>() < 1e-16);
        assert!(mu.mu3_sq.iter().sum::<f64>() < 1e-16);
        for t in 0..mesh.n_triangles() {
            let want = mesh.diameter(t).powi(4) * lambda0[t].eval([0.0, 0.0]).powi(2) * mesh.area(t);
            assert!((mu.mu1_sq[t] - want).abs() < 1e-12 * want.max(1e-30));
        }
        // Globally constant matrix data: no jumps anywhere.
        let id2: Vec<[PwPoly; 3]> = (0..mesh.n_triangles())
            .map(|_| [PwPoly::constant(1.0), PwPoly::zero(), PwPoly::constant(1.0)])
            .collect();
        let zero0: Vec<PwPoly> = (0..mesh.n_triangles()).map(|_| PwPoly::zero()).collect();
        let mu = functional_dualnorm(&mesh, &zero0, &zero1, &id2, Scheme::Morley);
        assert!(mu.total() < 1e-14);
    }

    #[test]
    fn identity_assumption_refusals() {
        let mesh = arc(unit_square_four());
        // C0IP with nonzero F2 and no smoother must be refused.
        let mut spec = SourceSpec::zero();
        spec.volume[3] = ScalarData::Poly(PwPoly::constant(1.0));
        let source = MeshSource::realize(&spec, &mesh).unwrap();
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::S20));
        let u = DiscreteField::zeros(&map);
        let config = SchemeConfig::new(Scheme::C0ip);
        let err = scheme_total(&u, &source, &config);
        assert!(matches!(err, Err(EstimateError::DataAssumption { .. })));
        // Morley with constant F2 is fine, with linear F2 it is not.
        let morley = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
        let um = DiscreteField::zeros(&morley);
        let mconfig = SchemeConfig::new(Scheme::Morley);
        assert!(scheme_total(&um, &source, &mconfig).is_ok());
        let mut spec2 = SourceSpec::zero();
        spec2.volume[1] = ScalarData::Poly(PwPoly::constant(0.5));
        let source2 = MeshSource::realize(&spec2, &mesh).unwrap();
        let err2 = scheme_total(&um, &source2, &mconfig);
        assert!(matches!(err2, Err(EstimateError::DataAssumption { .. })));
        // With the smoother everything is admissible.
        let sconfig = SchemeConfig::new(Scheme::Morley).with_smoother(Smoother::Companion);
        assert!(scheme_total(&um, &source2, &sconfig).is_ok());
    }

    #[test]
    fn zero_solution_zero_source_gives_zero_totals() {
        let mesh = arc(unit_square_four());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
        let u = DiscreteField::zeros(&map);
        let source = MeshSource::realize(&SourceSpec::zero(), &mesh).unwrap();
        let config = SchemeConfig::new(Scheme::Morley);
        let report = scheme_total(&u, &source, &config).unwrap();
        assert!(report.total_general_a() < 1e-14);
        assert!(report.total_general_b() < 1e-14);
    }

    #[test]
    fn smoother_distance_within_jump_family_band() {
        // The mesh-norm distance to the smoother image is equivalent to
        // either jump family; the ratio stays within a factor-two band
        // across one refinement.
        let ratios = |mesh: &Arc<Mesh>| -> (f64, f64) {
            let morley = Arc::new(DofMap::new(mesh, SpaceKind::Morley));
            let hct = Arc::new(DofMap::new(mesh, SpaceKind::Hct));
            let dg = Arc::new(DofMap::new(mesh, SpaceKind::DgP2));
            let mut rng = Rng::new(99);
            let mut v = DiscreteField::zeros(&dg);
            rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
            let jv = crate::transfer::smoother(&v, &morley, &hct);
            let d2 = crate::spaces::norm_h(&crate::spaces::Difference(&v, &jv), mesh, 4).powi(2);
            let a = jump_estimator_a(&v, mesh).total_sq();
            let b = jump_estimator_b(&v, mesh).total_sq();
            (d2 / a, d2 / b)
        };
        let coarse = Arc::new(unit_square_four());
        let fine = Arc::new(coarse.refine_uniform().0);
        let (ra0, rb0) = ratios(&coarse);
        let (ra1, rb1) = ratios(&fine);
        assert!(ra0.is_finite() && rb0.is_finite() && ra0 > 0.0 && rb0 > 0.0);
        assert!((ra1 / ra0).log2().abs() <= 1.0, "family-A ratio {ra0} -> {ra1}");
        assert!((rb1 / rb0).log2().abs() <= 1.0, "family-B ratio {rb0} -> {rb1}");
    }

    #[test]
    fn surrogate_zero_functional() {
        let mesh = arc(unit_square_four());
        let d = surrogate_dual_norm(&SourceSpec::zero(), &mesh, 1).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn surrogate_riesz_identity_on_same_mesh() {
        // The functional a(u, .) of a known macro field has dual norm equal
        // to the energy norm of u; at depth 0 the surrogate solves on the
        // same space and recovers it exactly.
        let mesh = arc(unit_square_four().refine_uniform().0);
        let hct = Arc::new(DofMap::new(&mesh, SpaceKind::Hct));
        let mut rng = Rng::new(13);
        let mut u = DiscreteField::zeros(&hct);
        rng.fill_uniform(&mut u.coeffs, -1.0, 1.0);
        let stiffness = hct_stiffness(&hct);
        let load = crate::assemble::spmv(hct.n_dofs, &stiffness, &u.coeffs);
        let d = riesz_energy(&hct, &load).unwrap();
        let energy = crate::spaces::energy_pw(&u, &mesh, 4);
        assert!((d - energy).abs() < 1e-9 * energy, "{d} vs {energy}");
    }

    #[test]
    fn surrogate_point_load_grows_with_depth() {
        let mesh = arc(unit_square_four());
        let spec = SourceSpec::point_load([0.5, 0.5], 1.0);
        let mut prev = 0.0;
        for depth in 1..=3 {
            let d = surrogate_dual_norm(&spec, &mesh, depth).unwrap();
            assert!(d.is_finite() && d > prev, "depth {depth}: {d} vs {prev}");
            prev = d;
        }
        assert!(prev < 1.0, "point evaluations are bounded in the plate energy");
    }

    #[test]
    fn composed_surrogate_is_bounded_by_mu_scale() {
        // Smoke test of the composed functional machinery: for volumetric
        // piecewise-constant data the composed dual norm is finite and
        // smaller than the plain one (the smoothing chain removes the
        // interpolant part).
        let mesh = arc(unit_square_four().refine_uniform().0);
        let mut rng = Rng::new(3);
        let lambda0: Vec<PwPoly> = (0..mesh.n_triangles())
            .map(|_| PwPoly::constant(rng.uniform(-1.0, 1.0)))
            .collect();
        let zero1: Vec<[PwPoly; 2]> =
            (0..mesh.n_triangles()).map(|_| [PwPoly::zero(), PwPoly::zero()]).collect();
        let zero2: Vec<[PwPoly; 3]> = (0..mesh.n_triangles())
            .map(|_| [PwPoly::zero(), PwPoly::zero(), PwPoly::zero()])
            .collect();
        let f = PwFunctional::from_matrix_data(&lambda0, &zero1, &zero2);
        let plain = surrogate_dual_norm_pw(&mesh, &f, 2).unwrap();
        let composed = surrogate_dual_norm_composed(&mesh, &f, 2).unwrap();
        assert!(plain.is_finite() && composed.is_finite());
        assert!(composed > 0.0 && plain > 0.0);
    }
}
