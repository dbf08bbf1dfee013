//! Estimator-driven adaptive refinement: bulk marking on the element
//! indicators and newest-vertex bisection, with a per-level study record.

use crate::assemble::{assemble_system, solve_linear, SchemeConfig, Smoother, SmootherOps};
use crate::estimate::{scheme_total, EstimateError, EstimatorReport};
use crate::manufactured::ManufacturedCase;
use crate::mesh::{Mesh, MeshError};
use crate::source::{MeshSource, SourceSpec};
use crate::spaces::{jh_product, DiscreteField, DofMap};
use std::sync::Arc;
use std::time::Instant;

/// One study level: sizes, error (when an exact solution is known),
/// estimator totals, and timing.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub level: usize,
    pub ndof: usize,
    pub hmax: f64,
    pub err_energy: Option<f64>,
    /// Theorem total with the Hessian-tangential jump family.
    pub est_a: f64,
    /// Theorem total with the trace jump family.
    pub est_b: f64,
    /// The scheme's named-theorem total (plain L2 form when the source is a
    /// plain density, otherwise the general-source form), family A jumps.
    pub est_theorem: f64,
    pub osc: f64,
    pub apx: f64,
    pub eff_index: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct StudyRecord {
    pub rows: Vec<StudyRow>,
}

#[derive(Debug)]
pub enum AdaptError {
    Assemble(crate::assemble::AssembleError),
    Estimate(EstimateError),
    Mesh(MeshError),
    Source(crate::source::SourceError),
}

impl std::fmt::Display for AdaptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AdaptError::Assemble(e) => write!(f, "assembly: {e}"),
            AdaptError::Estimate(e) => write!(f, "estimate: {e}"),
            AdaptError::Mesh(e) => write!(f, "mesh: {e}"),
            AdaptError::Source(e) => write!(f, "source: {e}"),
        }
    }
}

impl std::error::Error for AdaptError {}

impl From<crate::assemble::AssembleError> for AdaptError {
    fn from(e: crate::assemble::AssembleError) -> Self {
        AdaptError::Assemble(e)
    }
}

impl From<EstimateError> for AdaptError {
    fn from(e: EstimateError) -> Self {
        AdaptError::Estimate(e)
    }
}

impl From<MeshError> for AdaptError {
    fn from(e: MeshError) -> Self {
        AdaptError::Mesh(e)
    }
}

impl From<crate::source::SourceError> for AdaptError {
    fn from(e: crate::source::SourceError) -> Self {
        AdaptError::Source(e)
    }
}

/// Bulk marking: the smallest prefix of elements in decreasing indicator
/// order whose squared indicators reach the fraction `theta` of the total.
/// Ties break toward smaller element ids; an all-zero map yields the empty
/// set.
pub fn mark_doerfler(indicators_sq: &[f64], theta: f64) -> Vec<usize> {
    assert!(theta > 0.0 && theta <= 1.0);
    let total: f64 = indicators_sq.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators_sq.len()).collect();
    order.sort_by(|&a, &b| {
        indicators_sq[b]
            .partial_cmp(&indicators_sq[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut marked = Vec::new();
    let mut acc = 0.0;
    for t in order {
        if indicators_sq[t] <= 0.0 {
            break;
        }
        marked.push(t);
        acc += indicators_sq[t];
        if acc >= theta * total {
            break;
        }
    }
    marked.sort_unstable();
    marked
}

#[derive(Debug, Clone)]
pub struct AdaptiveOptions {
    /// Bulk fraction of the squared estimator to mark.
    pub mark_theta: f64,
    pub max_dofs: usize,
    pub max_levels: usize,
    /// Stop when the theorem total drops below this.
    pub tolerance: f64,
}

impl Default for AdaptiveOptions {
    fn default() -> Self {
        AdaptiveOptions { mark_theta: 0.5, max_dofs: 20_000, max_levels: 40, tolerance: 1e-8 }
    }
}

/// Error in the natural norm of the scheme: the piecewise energy distance
/// plus the solution's own jump product (the exact solution contributes no
/// jumps). The energy part collapses the discrete field to one polynomial
/// per element before the quadrature loop.
pub fn scheme_error(
    u_h: &DiscreteField,
    case: &ManufacturedCase,
    mesh: &Mesh,
    quad_degree: usize,
) -> f64 {
    let rule = crate::quadrature::tri_rule_any(quad_degree);
    let mut energy_sq = 0.0;
    for t in 0..mesh.n_triangles() {
        let local = u_h.local_poly(t);
        let corners = mesh.corners(t);
        match u_h.map.kind {
            crate::spaces::SpaceKind::Hct => {
                // Subtriangle-wise for the piecewise-cubic macro field.
                let c = [
                    (corners[0][0] + corners[1][0] + corners[2][0]) / 3.0,
                    (corners[0][1] + corners[1][1] + corners[2][1]) / 3.0,
                ];
                for k in 0..3 {
                    let sub = [corners[(k + 1) % 3], corners[(k + 2) % 3], c];
                    energy_sq += rule.integrate(&sub, |x| {
                        let hh = local.eval_on_sub(k, x).2;
                        let he = (case.hessian)(x);
                        let d = [he[0] - hh[0], he[1] - hh[1], he[2] - hh[2]];
                        d[0] * d[0] + 2.0 * d[1] * d[1] + d[2] * d[2]
                    });
                }
            }
            _ => {
                energy_sq += rule.integrate(&corners, |x| {
                    let hh = local.eval(x).2;
                    let he = (case.hessian)(x);
                    let d = [he[0] - hh[0], he[1] - hh[1], he[2] - hh[2]];
                    d[0] * d[0] + 2.0 * d[1] * d[1] + d[2] * d[2]
                });
            }
        }
    }
    (energy_sq + jh_product(u_h, u_h, mesh)).max(0.0).sqrt()
}

/// One solve-estimate step on a fixed mesh.
pub fn solve_and_estimate(
    mesh: &Arc<Mesh>,
    config: &SchemeConfig,
    spec: &SourceSpec,
    exact: Option<&ManufacturedCase>,
) -> Result<(DiscreteField, EstimatorReport, StudyRow), AdaptError> {
    let start = Instant::now();
    let map = Arc::new(DofMap::new(mesh, config.scheme.space()));
    let ops = match config.smoother {
        Smoother::Companion => Some(SmootherOps::new(&map)),
        Smoother::Identity => None,
    };
    let source = MeshSource::realize(spec, mesh)?;
    let system = assemble_system(&map, config, &source, ops.as_ref())?;
    let coeffs = solve_linear(&system)?;
    let u_h = DiscreteField { map: Arc::clone(&map), coeffs };
    let report = scheme_total(&u_h, &source, config)?;
    let err = exact.map(|case| scheme_error(&u_h, case, mesh, 8));
    let est_theorem = report.total_l2_a().unwrap_or_else(|| report.total_general_a());
    let row = StudyRow {
        level: 0,
        ndof: map.n_dofs,
        hmax: mesh.max_diameter(),
        err_energy: err,
        est_a: report.total_general_a(),
        est_b: report.total_general_b(),
        est_theorem,
        osc: report.osc_total_sq().sqrt(),
        apx: report.apx_total_sq().sqrt(),
        eff_index: err.map(|e| if e > 0.0 { est_theorem / e } else { f64::NAN }),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    Ok((u_h, report, row))
}

/// Adaptive loop: solve, estimate, mark, bisect until the dof budget, the
/// level cap, or the tolerance is reached.
pub fn adaptive_loop(
    initial: &Arc<Mesh>,
    config: &SchemeConfig,
    spec: &SourceSpec,
    exact: Option<&ManufacturedCase>,
    options: &AdaptiveOptions,
) -> Result<(StudyRecord, Arc<Mesh>), AdaptError> {
    let mut mesh = Arc::clone(initial);
    let mut record = StudyRecord::default();
    for level in 0..options.max_levels {
        let (_, report, mut row) = solve_and_estimate(&mesh, config, spec, exact)?;
        row.level = level;
        let total = row.est_theorem;
        let ndof = row.ndof;
        let indicators = report.element_indicators(&mesh);
        record.rows.push(row);
        if total <= options.tolerance || ndof >= options.max_dofs {
            break;
        }
        let marked = mark_doerfler(&indicators, options.mark_theta);
        if marked.is_empty() {
            break;
        }
        mesh = Arc::new(mesh.refine_bisect(&marked)?);
    }
    Ok((record, mesh))
}

/// Uniform-refinement study over the given number of levels (level 1 is one
/// refinement of the initial mesh).
pub fn uniform_study(
    initial: &Arc<Mesh>,
    config: &SchemeConfig,
    spec: &SourceSpec,
    exact: Option<&ManufacturedCase>,
    levels: usize,
) -> Result<StudyRecord, AdaptError> {
    let mut mesh = Arc::clone(initial);
    let mut record = StudyRecord::default();
    for level in 1..=levels {
        mesh = Arc::new(mesh.refine_uniform().0);
        let (_, _, mut row) = solve_and_estimate(&mesh, config, spec, exact)?;
        row.level = level;
        record.rows.push(row);
    }
    Ok(record)
}

/// Least-squares slope of log(y) against log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..xs.len() {
        num += (lx[i] - mx) * (ly[i] - my);
        den += (lx[i] - mx) * (lx[i] - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assemble::Scheme;
    use crate::mesh::unit_square_four;
    use crate::source::{ApproxRule, ScalarData, SourceSpec};

    #[test]
    fn doerfler_marking_rules() {
        // theta = 1 marks every element with a nonzero indicator.
        let ind = vec![1.0, 0.0, 2.0, 0.5];
        let all = mark_doerfler(&ind, 1.0);
        assert_eq!(all, vec![0, 2, 3]);
        // A dominant element is a singleton for small theta.
        let dom = vec![0.01, 10.0, 0.02];
        assert_eq!(mark_doerfler(&dom, 0.5), vec![1]);
        // Uniform indicators: ceil(n/2) elements at theta = 0.5.
        let unif = vec![1.0; 7];
        assert_eq!(mark_doerfler(&unif, 0.5).len(), 4);
        // All-zero signals convergence.
        assert!(mark_doerfler(&[0.0, 0.0], 0.5).is_empty());
    }

    #[test]
    fn adaptive_loop_zero_source_terminates_immediately() {
        let mesh = Arc::new(unit_square_four());
        let config = SchemeConfig::new(Scheme::Morley);
        let spec = SourceSpec::zero();
        let (record, _) = adaptive_loop(&mesh, &config, &spec, None, &AdaptiveOptions::default())
            .unwrap();
        assert_eq!(record.rows.len(), 1);
        assert!(record.rows[0].est_theorem <= 1e-10);
    }

    #[test]
    fn adaptive_loop_point_load_estimator_decreases() {
        let mesh = Arc::new(unit_square_four());
        let config = SchemeConfig::new(Scheme::Morley).with_smoother(Smoother::Companion);
        let spec = SourceSpec::point_load([0.5, 0.5], 1.0);
        let options = AdaptiveOptions { max_dofs: 900, ..Default::default() };
        let (record, _) = adaptive_loop(&mesh, &config, &spec, None, &options).unwrap();
        assert!(record.rows.len() >= 4, "expected several levels, got {}", record.rows.len());
        for pair in record.rows.windows(2) {
            assert!(pair[1].ndof > pair[0].ndof, "dof counts strictly increase");
            assert!(
                pair[1].est_theorem < pair[0].est_theorem,
                "estimator decreases: {} -> {}",
                pair[0].est_theorem,
                pair[1].est_theorem
            );
        }
    }

    #[test]
    fn uniform_study_records_decreasing_errors() {
        let case = crate::manufactured::manufactured_square();
        let spec = SourceSpec::from_l2(
            ScalarData::Poly(case.load.clone()),
            ApproxRule::ExactPoly,
        );
        let mesh = Arc::new(unit_square_four());
        let config = SchemeConfig::new(Scheme::Morley);
        let record = uniform_study(&mesh, &config, &spec, Some(&case), 3).unwrap();
        assert_eq!(record.rows.len(), 3);
        for pair in record.rows.windows(2) {
            assert!(pair[1].err_energy.unwrap() < pair[0].err_energy.unwrap());
        }
        let hs: Vec<f64> = record.rows.iter().map(|r| r.hmax).collect();
        let errs: Vec<f64> = record.rows.iter().map(|r| r.err_energy.unwrap()).collect();
        let slope = loglog_slope(&hs, &errs);
        assert!((slope - 1.0).abs() < 0.3, "slope {slope}");
    }
}
