//! Named verification checks: one line of output per invariant, pass or
//! fail, intended for the `verify` subcommand and quick health checks after
//! changes.

use crate::assemble::{assemble_matrix, estimate_ellipticity, Scheme, SchemeConfig};
use crate::mesh::{l_shape, unit_square_four, unit_square_two};
use crate::rng::Rng;
use crate::source::{PwPoly, ScalarData};
use crate::spaces::{jh_product, DiscreteField, DofMap, SpaceKind};
use crate::transfer::{companion, interpolate_morley};
use std::sync::Arc;

pub struct CheckResult {
    pub name: &'static str,
    pub description: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = (&'static str, &'static str, fn() -> Result<String, String>);

fn check_mesh_counts() -> Result<String, String> {
    let sq = unit_square_two();
    if sq.n_edges() != 5 {
        return Err(format!("square edge count {}", sq.n_edges()));
    }
    let l = l_shape();
    let euler = l.n_vertices() as i64 - l.n_edges() as i64 + l.n_triangles() as i64;
    if euler != 1 {
        return Err(format!("euler number {euler}"));
    }
    if (l.total_area() - 3.0).abs() > 1e-12 {
        return Err(format!("area {}", l.total_area()));
    }
    Ok("square and L-domain counts".into())
}

fn check_bisection_conformity() -> Result<String, String> {
    let mut mesh = l_shape();
    for round in 0..6 {
        let marked: Vec<usize> = (0..mesh.n_triangles()).step_by(3).collect();
        mesh = mesh.refine_bisect(&marked).map_err(|e| e.to_string())?;
        let euler = mesh.n_vertices() as i64 - mesh.n_edges() as i64 + mesh.n_triangles() as i64;
        if euler != 1 {
            return Err(format!("round {round}: euler {euler}"));
        }
    }
    Ok(format!("{} triangles after 6 rounds", mesh.n_triangles()))
}

fn check_quadrature() -> Result<String, String> {
    let rule = crate::quadrature::quad_triangle(10).map_err(|e| e.to_string())?;
    let got: f64 = rule
        .points
        .iter()
        .zip(&rule.weights)
        .map(|(p, w)| w * p[1].powi(4) * p[2].powi(4))
        .sum();
    let want = 576.0 / 3_628_800.0;
    if (got - want).abs() > 1e-14 {
        return Err(format!("degree-10 moment {got} vs {want}"));
    }
    Ok("degree-10 triangle moment exact".into())
}

fn check_kronecker() -> Result<String, String> {
    let corners = [[0.1, -0.2], [1.3, 0.25], [0.4, 1.1]];
    let normals = crate::shapes::outward_normals(&corners);
    for set in [
        crate::shapes::p2_shapes(corners).map_err(|e| e.to_string())?,
        crate::shapes::morley_shapes(corners, &normals).map_err(|e| e.to_string())?,
        crate::shapes::hct_shapes(corners, &normals).map_err(|e| e.to_string())?,
    ] {
        for (i, &kind) in set.dofs.iter().enumerate() {
            for j in 0..set.len() {
                let got = crate::shapes::apply_dof(
                    &corners,
                    &normals,
                    kind,
                    &|x| set.eval(j, x).0,
                    &|x| set.eval(j, x).1,
                );
                let want = if i == j { 1.0 } else { 0.0 };
                if (got - want).abs() > 1e-10 {
                    return Err(format!("{:?} dof {i} shape {j}: {got}", set.kind));
                }
            }
        }
    }
    Ok("P2, Morley, and macro element".into())
}

fn check_morley_jump_free() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four());
    let morley = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
    let mut rng = Rng::new(2024);
    let mut v = DiscreteField::zeros(&morley);
    rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
    let j = jh_product(&v, &v, &mesh);
    if j.abs() > 1e-12 {
        return Err(format!("jump product {j}"));
    }
    Ok("vertex and mean jumps vanish".into())
}

fn check_right_inverse() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four().refine_uniform().0);
    let morley = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
    let hct = Arc::new(DofMap::new(&mesh, SpaceKind::Hct));
    let mut rng = Rng::new(7);
    for _ in 0..5 {
        let mut v = DiscreteField::zeros(&morley);
        rng.fill_uniform(&mut v.coeffs, -1.0, 1.0);
        let back = interpolate_morley(&companion(&v, &hct), &morley);
        for (a, b) in v.coeffs.iter().zip(&back.coeffs) {
            if (a - b).abs() > 1e-12 {
                return Err(format!("coefficient drift {}", (a - b).abs()));
            }
        }
    }
    Ok("interpolation after lifting is the identity".into())
}

fn check_ellipticity() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four());
    let map = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
    let alpha = estimate_ellipticity(&map, &SchemeConfig::new(Scheme::Morley))
        .map_err(|e| e.to_string())?;
    if (alpha - 1.0).abs() > 1e-8 {
        return Err(format!("alpha {alpha}"));
    }
    Ok(format!("alpha = {alpha:.10}"))
}

fn check_symmetry() -> Result<String, String> {
    let mesh = Arc::new(unit_square_two());
    for scheme in [Scheme::Dg1, Scheme::Dg2, Scheme::C0ip, Scheme::Wopsip] {
        let map = Arc::new(DofMap::new(&mesh, scheme.space()));
        let trips = assemble_matrix(&map, &SchemeConfig::new(scheme))
            .map_err(|e| e.to_string())?
            .full_triplets();
        let n = map.n_dofs;
        let mut a = vec![0.0; n * n];
        for (i, j, v) in trips {
            a[i * n + j] += v;
        }
        for i in 0..n {
            for j in 0..n {
                if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 {
                    return Err(format!("{scheme:?} asymmetric"));
                }
            }
        }
    }
    Ok("all default assemblies symmetric".into())
}

fn check_pythagoras() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four());
    let f = crate::manufactured::load_polynomial();
    let spec = crate::source::SourceSpec::from_l2(
        ScalarData::Poly(f),
        crate::source::ApproxRule::Project { k: 2 },
    );
    let source = crate::source::MeshSource::realize(&spec, &mesh).map_err(|e| e.to_string())?;
    let mu = crate::estimate::general_mu(&source, None, Scheme::Morley);
    let (volume_sq, osc_sq) =
        crate::estimate::volume_and_osc(&source.spec.volume[0], &mesh, 8);
    for t in 0..mesh.n_triangles() {
        let lhs = mu.mu1_sq[t] + osc_sq[t];
        if (lhs - volume_sq[t]).abs() > 1e-12 * volume_sq[t].max(1e-30) {
            return Err(format!("triangle {t}: {lhs} vs {}", volume_sq[t]));
        }
    }
    Ok("projected density splits the volume weight".into())
}

fn check_mu_homogeneity() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four());
    let nt = mesh.n_triangles();
    let mut rng = Rng::new(17);
    let l0: Vec<PwPoly> = (0..nt).map(|_| PwPoly::constant(rng.uniform(-1.0, 1.0))).collect();
    let z1: Vec<[PwPoly; 2]> = (0..nt).map(|_| [PwPoly::zero(), PwPoly::zero()]).collect();
    let z2: Vec<[PwPoly; 3]> =
        (0..nt).map(|_| [PwPoly::zero(), PwPoly::zero(), PwPoly::zero()]).collect();
    let mu = crate::estimate::functional_dualnorm(&mesh, &l0, &z1, &z2, Scheme::Morley);
    let scaled: Vec<PwPoly> = l0
        .iter()
        .map(|p| {
            let mut q = p.clone();
            q.scale_coeffs(2.0);
            q
        })
        .collect();
    let mu2 = crate::estimate::functional_dualnorm(&mesh, &scaled, &z1, &z2, Scheme::Morley);
    if (mu2.total() - 2.0 * mu.total()).abs() > 1e-12 * mu.total().max(1e-30) {
        return Err(format!("{} vs {}", mu2.total(), 2.0 * mu.total()));
    }
    Ok("scaling the data scales the indicator".into())
}

fn check_cr_constant() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four().refine_uniform().0);
    let map = Arc::new(DofMap::new(&mesh, SpaceKind::Cr));
    let pi = std::f64::consts::PI;
    let v = move |x: [f64; 2]| (pi * x[0]).sin() * (pi * x[1]).sin();
    let g = move |x: [f64; 2]| {
        [pi * (pi * x[0]).cos() * (pi * x[1]).sin(), pi * (pi * x[0]).sin() * (pi * x[1]).cos()]
    };
    let ratio = crate::poisson::cr_interpolation_ratio(&map, &v, &g, 10);
    if ratio > 0.2983 {
        return Err(format!("ratio {ratio}"));
    }
    Ok(format!("ratio {ratio:.4} below 0.2983"))
}

fn check_solver() -> Result<String, String> {
    let mesh = Arc::new(unit_square_four().refine_uniform().0);
    let map = Arc::new(DofMap::new(&mesh, SpaceKind::Morley));
    let config = SchemeConfig::new(Scheme::Morley);
    let spec = crate::source::SourceSpec::from_l2(
        ScalarData::Poly(crate::manufactured::load_polynomial()),
        crate::source::ApproxRule::ExactPoly,
    );
    let source = crate::source::MeshSource::realize(&spec, &mesh).map_err(|e| e.to_string())?;
    let sys = crate::assemble::assemble_system(&map, &config, &source, None)
        .map_err(|e| e.to_string())?;
    let sol = crate::assemble::solve_linear(&sys).map_err(|e| e.to_string())?;
    let res = sys.matrix.residual(&sol, &sys.rhs);
    let rn: f64 = res.iter().map(|r| r * r).sum::<f64>().sqrt();
    let bn: f64 = sys.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
    if rn / bn > 1e-10 {
        return Err(format!("residual {}", rn / bn));
    }
    Ok(format!("residual {:.2e}", rn / bn))
}

const CHECKS: &[Check] = &[
    ("mesh-counts", "edge, Euler, and area counts of the built-in domains", check_mesh_counts),
    ("bisection-conformity", "newest-vertex bisection keeps the mesh conforming", check_bisection_conformity),
    ("quadrature-exactness", "triangle rules integrate monomials exactly", check_quadrature),
    ("shape-kronecker", "dof functionals are dual to the shape functions", check_kronecker),
    ("jump-free-morley", "the jump product annihilates Morley fields", check_morley_jump_free),
    ("companion-right-inverse", "Morley interpolation inverts the conforming lift", check_right_inverse),
    ("ellipticity-morley", "the Morley ellipticity constant is one", check_ellipticity),
    ("symmetry", "symmetric parameter choices give symmetric matrices", check_symmetry),
    ("volume-split", "projected densities split the volume weight exactly", check_pythagoras),
    ("indicator-homogeneity", "dual-norm indicators scale linearly with the data", check_mu_homogeneity),
    ("interpolation-constant", "the first-order interpolation constant bound holds", check_cr_constant),
    ("solver-contract", "the direct solver meets its residual contract", check_solver),
];

/// Run every named check, printing one line per invariant; returns true when
/// all of them pass.
pub fn run_verification(mut out: impl std::io::Write) -> std::io::Result<bool> {
    let mut all = true;
    for (name, description, check) in CHECKS {
        match check() {
            Ok(detail) => writeln!(out, "PASS {name}: {detail}")?,
            Err(detail) => {
                all = false;
                writeln!(out, "FAIL {name}: {description} -- {detail}")?;
            }
        }
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        let mut buffer = Vec::new();
        let ok = run_verification(&mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        assert!(ok, "verification output:\n{text}");
        assert_eq!(text.lines().count(), CHECKS.len());
    }
}
