//! First-order companion study: the Poisson model problem discretized with
//! Crouzeix-Raviart elements, its residual estimator with normal-derivative
//! jumps, the jump-free bound constant, and the interpolation constant check.

use crate::assemble::{solve_linear, LinearSystem, SchemeMatrix};
use crate::manufactured::PoissonCase;
use crate::mesh::Mesh;
use crate::quadrature::{edge_rule_any, tri_rule_any};
use crate::spaces::{DiscreteField, DofMap, SpaceKind};
use std::sync::Arc;

/// One level of the companion study.
#[derive(Debug, Clone)]
pub struct CrRow {
    pub level: usize,
    pub ndof: usize,
    pub hmax: f64,
    /// Piecewise gradient error against the closed-form solution.
    pub err_energy: f64,
    /// Volume weight ||h f||.
    pub volume: f64,
    /// Normal-jump estimator over interior edges (square root of the sum).
    pub jumps: f64,
    /// Largest edge constant in the jump-free bound
    /// h^{1/2} |[grad u] . nu| <= C ||h f|| on the edge patch.
    pub lemma_constant: f64,
}

#[derive(Debug, Clone, Default)]
pub struct CrStudy {
    pub rows: Vec<CrRow>,
}

/// Stiffness and load of the Crouzeix-Raviart discretization.
pub fn cr_system(map: &Arc<DofMap>, f: &dyn Fn([f64; 2]) -> f64) -> LinearSystem {
    assert_eq!(map.kind, SpaceKind::Cr);
    let mesh = &map.mesh;
    let mut main = Vec::new();
    let mut rhs = vec![0.0; map.n_dofs];
    let rule = tri_rule_any(6);
    for t in 0..mesh.n_triangles() {
        let shapes = map.shapes(t);
        let globals = map.globals(t);
        let corners = mesh.corners(t);
        let centroid = [
            (corners[0][0] + corners[1][0] + corners[2][0]) / 3.0,
            (corners[0][1] + corners[1][1] + corners[2][1]) / 3.0,
        ];
        let area = mesh.area(t);
        let grads: Vec<[f64; 2]> = (0..3).map(|i| shapes.eval(i, centroid).1).collect();
        for (i, &gi) in globals.iter().enumerate() {
            if gi < 0 {
                continue;
            }
            for (j, &gj) in globals.iter().enumerate() {
                if gj < 0 {
                    continue;
                }
                let v = area * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                main.push((gi as usize, gj as usize, v));
            }
        }
        for (i, &gi) in globals.iter().enumerate() {
            if gi < 0 {
                continue;
            }
            rhs[gi as usize] += rule.integrate(&corners, |x| f(x) * shapes.eval(i, x).0);
        }
    }
    LinearSystem {
        matrix: SchemeMatrix { n: map.n_dofs, main, pen_rows: Vec::new(), pen_weights: Vec::new() },
        rhs,
        symmetric: true,
    }
}

/// Mean-matching interpolation into the Crouzeix-Raviart space: every edge
/// dof is the integral mean of the input along the edge.
pub fn cr_interpolate(
    map: &Arc<DofMap>,
    f: &dyn Fn([f64; 2]) -> f64,
    edge_degree: usize,
) -> DiscreteField {
    assert_eq!(map.kind, SpaceKind::Cr);
    let mesh = &map.mesh;
    let rule = edge_rule_any(edge_degree);
    let mut out = DiscreteField::zeros(map);
    for (e, edge) in mesh.edges.iter().enumerate() {
        let ie = map.interior_edge[e];
        if ie < 0 {
            continue;
        }
        let a = mesh.vertices[edge.a];
        let b = mesh.vertices[edge.b];
        let mut mean = 0.0;
        for (t, w) in rule.points.iter().zip(&rule.weights) {
            mean += w * f([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
        out.coeffs[ie as usize] = mean;
    }
    out
}

/// Piecewise gradient error of a CR field against a smooth reference.
pub fn cr_energy_error(
    u_h: &DiscreteField,
    grad: &dyn Fn([f64; 2]) -> [f64; 2],
    quad_degree: usize,
) -> f64 {
    let mesh = &u_h.map.mesh;
    let rule = tri_rule_any(quad_degree);
    let mut sum = 0.0;
    for t in 0..mesh.n_triangles() {
        sum += rule.integrate(&mesh.corners(t), |x| {
            let gh = u_h.eval_in(t, x).1;
            let g = grad(x);
            (g[0] - gh[0]).powi(2) + (g[1] - gh[1]).powi(2)
        });
    }
    sum.sqrt()
}

/// First-order interpolation-constant ratio |h^{-1}(v - I v)| / |grad v| for
/// a smooth clamped field.
pub fn cr_interpolation_ratio(
    map: &Arc<DofMap>,
    value: &dyn Fn([f64; 2]) -> f64,
    gradient: &dyn Fn([f64; 2]) -> [f64; 2],
    quad_degree: usize,
) -> f64 {
    let mesh = &map.mesh;
    let iv = cr_interpolate(map, value, quad_degree.min(9));
    let rule = tri_rule_any(quad_degree);
    let mut num = 0.0;
    let mut den = 0.0;
    for t in 0..mesh.n_triangles() {
        let h = mesh.diameter(t);
        num += rule.integrate(&mesh.corners(t), |x| {
            let d = value(x) - iv.eval_in(t, x).0;
            d * d
        }) / (h * h);
        den += rule.integrate(&mesh.corners(t), |x| {
            let g = gradient(x);
            g[0] * g[0] + g[1] * g[1]
        });
    }
    (num / den).sqrt()
}

/// Run the companion study on successively refined meshes.
pub fn cr_poisson_demo(
    initial: &Arc<Mesh>,
    case: &PoissonCase,
    levels: usize,
) -> Result<CrStudy, crate::assemble::AssembleError> {
    let mut mesh = Arc::clone(initial);
    let mut study = CrStudy::default();
    for level in 1..=levels {
        mesh = Arc::new(mesh.refine_uniform().0);
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Cr));
        let system = cr_system(&map, &case.load);
        let coeffs = solve_linear(&system)?;
        let u_h = DiscreteField { map: Arc::clone(&map), coeffs };

        let err = cr_energy_error(&u_h, &case.gradient, 8);
        // Volume weight ||h f||.
        let rule = tri_rule_any(8);
        let mut vol_sq = 0.0;
        let mut vol_by_tri = vec![0.0; mesh.n_triangles()];
        for t in 0..mesh.n_triangles() {
            let h = mesh.diameter(t);
            let v = h * h
                * rule.integrate(&mesh.corners(t), |x| {
                    let fx = (case.load)(x);
                    fx * fx
                });
            vol_by_tri[t] = v;
            vol_sq += v;
        }
        // Normal-derivative jumps over interior edges; the gradients are
        // piecewise constant so the midpoint value is exact.
        let mut jumps_sq = 0.0;
        let mut lemma_constant: f64 = 0.0;
        for edge in &mesh.edges {
            let Some(tm) = edge.t_minus else { continue };
            let gp = u_h.eval_in(edge.t_plus, edge.mid).1;
            let gm = u_h.eval_in(tm, edge.mid).1;
            let jn = (gp[0] - gm[0]) * edge.normal[0] + (gp[1] - gm[1]) * edge.normal[1];
            let term = edge.length * (edge.length * jn * jn);
            jumps_sq += term;
            let patch_vol = vol_by_tri[edge.t_plus] + vol_by_tri[tm];
            if patch_vol > 1e-28 {
                lemma_constant = lemma_constant.max((term / patch_vol).sqrt());
            }
        }

        study.rows.push(CrRow {
            level,
            ndof: map.n_dofs,
            hmax: mesh.max_diameter(),
            err_energy: err,
            volume: vol_sq.sqrt(),
            jumps: jumps_sq.sqrt(),
            lemma_constant,
        });
    }
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manufactured::poisson_square;
    use crate::mesh::unit_square_four;

    #[test]
    fn zero_load_gives_zero_solution_and_estimators() {
        let mesh = Arc::new(unit_square_four().refine_uniform().0);
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Cr));
        let system = cr_system(&map, &|_| 0.0);
        let coeffs = solve_linear(&system).unwrap();
        assert!(coeffs.iter().all(|&c| c.abs() < 1e-14));
    }

    #[test]
    fn cr_interpolation_mean_property() {
        let mesh = Arc::new(unit_square_four());
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Cr));
        let f = |x: [f64; 2]| x[0] * x[0] + 0.5 * x[1];
        let iv = cr_interpolate(&map, &f, 6);
        let rule = edge_rule_any(6);
        for (e, edge) in mesh.edges.iter().enumerate() {
            if map.interior_edge[e] < 0 {
                continue;
            }
            let a = mesh.vertices[edge.a];
            let b = mesh.vertices[edge.b];
            let mut mean_f = 0.0;
            let mut mean_i = 0.0;
            for (t, w) in rule.points.iter().zip(&rule.weights) {
                let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                mean_f += w * f(x);
                mean_i += w * iv.eval_in(edge.t_plus, x).0;
            }
            assert!((mean_f - mean_i).abs() < 1e-13);
        }
    }

    #[test]
    fn convergence_and_bounded_lemma_constant() {
        let case = poisson_square();
        let mesh = Arc::new(unit_square_four());
        let study = cr_poisson_demo(&mesh, &case, 4).unwrap();
        assert_eq!(study.rows.len(), 4);
        let hs: Vec<f64> = study.rows.iter().map(|r| r.hmax).collect();
        let errs: Vec<f64> = study.rows.iter().map(|r| r.err_energy).collect();
        let slope = crate::adapt::loglog_slope(&hs, &errs);
        assert!((slope - 1.0).abs() < 0.15, "slope {slope}");
        // The jump-free bound constant stays of one size across levels.
        let c0 = study.rows[0].lemma_constant;
        for row in &study.rows {
            assert!(row.lemma_constant <= 2.0 * c0 && row.lemma_constant >= c0 / 2.0);
        }
    }

    #[test]
    fn interpolation_constant_holds_for_smooth_fields() {
        let mesh = Arc::new(unit_square_four().refine_uniform().0);
        let map = Arc::new(DofMap::new(&mesh, SpaceKind::Cr));
        // Clamped bubbles of varying shape.
        for (k, l) in [(1.0, 1.0), (2.0, 1.0), (1.5, 2.5)] {
            let v = move |x: [f64; 2]| {
                (std::f64::consts::PI * k * x[0]).sin() * (std::f64::consts::PI * l * x[1]).sin()
            };
            let g = move |x: [f64; 2]| {
                let pi = std::f64::consts::PI;
                [
                    pi * k * (pi * k * x[0]).cos() * (pi * l * x[1]).sin(),
                    pi * l * (pi * k * x[0]).sin() * (pi * l * x[1]).cos(),
                ]
            };
            let ratio = cr_interpolation_ratio(&map, &v, &g, 10);
            assert!(ratio <= 0.2983, "ratio {ratio} exceeds the interpolation constant");
        }
    }
}
