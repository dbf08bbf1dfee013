//! Study driver: runs the configured uniform or adaptive experiment, writes
//! the CSV reports and the optional log-log SVG plot.

use crate::adapt::{adaptive_loop, solve_and_estimate, uniform_study, AdaptiveOptions, StudyRecord};
use crate::config::{RunConfig, StudyKind};
use crate::estimate::EstimatorReport;
use crate::mesh::Mesh;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

#[derive(Debug)]
pub enum StudyError {
    Config(String),
    Numerical(String),
    Io(std::io::Error),
}

impl std::fmt::Display for StudyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StudyError::Config(m) => write!(f, "configuration: {m}"),
            StudyError::Numerical(m) => write!(f, "numerical stage: {m}"),
            StudyError::Io(e) => write!(f, "io: {e}"),
        }
    }
}

impl std::error::Error for StudyError {}

impl From<std::io::Error> for StudyError {
    fn from(e: std::io::Error) -> Self {
        StudyError::Io(e)
    }
}

/// The fixed CSV header of study records.
pub const STUDY_CSV_HEADER: &str =
    "level,ndof,hmax,err_energy,estA,estB,est_theorem,osc,apx,eff_index";

pub fn study_csv(record: &StudyRecord) -> String {
    let mut out = String::new();
    out.push_str(STUDY_CSV_HEADER);
    out.push('\n');
    for row in &record.rows {
        let err = row.err_energy.map(|e| format!("{e:.12e}")).unwrap_or_else(|| "nan".into());
        let eff = row.eff_index.map(|e| format!("{e:.6}")).unwrap_or_else(|| "nan".into());
        writeln!(
            out,
            "{},{},{:.8e},{},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e},{}",
            row.level,
            row.ndof,
            row.hmax,
            err,
            row.est_a,
            row.est_b,
            row.est_theorem,
            row.osc,
            row.apx,
            eff
        )
        .unwrap();
    }
    out
}

/// Parse the study CSV back into (level, ndof, est_theorem) tuples; used by
/// the round-trip test and kept deliberately strict about the header.
pub fn parse_study_csv(text: &str) -> Result<Vec<(usize, usize, f64)>, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty csv")?;
    if header != STUDY_CSV_HEADER {
        return Err(format!("unexpected header {header}"));
    }
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 10 {
            return Err(format!("expected 10 columns, got {}", cols.len()));
        }
        let level: usize = cols[0].parse().map_err(|_| "bad level")?;
        let ndof: usize = cols[1].parse().map_err(|_| "bad ndof")?;
        let est: f64 = cols[6].parse().map_err(|_| "bad estimator")?;
        rows.push((level, ndof, est));
    }
    Ok(rows)
}

/// Per-estimator-name summary rows, one per level.
pub fn estimator_csv(scheme: &str, record: &StudyRecord) -> String {
    let mut out = String::from("level,scheme,estimator_name,total,error_energy,efficiency_index\n");
    for row in &record.rows {
        let err = row.err_energy.unwrap_or(f64::NAN);
        for (name, total) in [
            ("family_a", row.est_a),
            ("family_b", row.est_b),
            ("theorem", row.est_theorem),
            ("osc", row.osc),
            ("apx", row.apx),
        ] {
            let eff = if err > 0.0 { total / err } else { f64::NAN };
            writeln!(
                out,
                "{},{},{},{:.12e},{:.12e},{:.6}",
                row.level, scheme, name, total, err, eff
            )
            .unwrap();
        }
    }
    out
}

/// Per-entity indicator file: `entity_id,value`.
pub fn entity_csv(values: &[f64]) -> String {
    let mut out = String::from("entity_id,value\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v:.12e}").unwrap();
    }
    out
}

/// Fixed-canvas log-log SVG with decade grid and two reference slopes.
pub fn study_svg(record: &StudyRecord) -> String {
    let series: Vec<(&str, &str, Vec<(f64, f64)>)> = {
        let mut s = Vec::new();
        let est: Vec<(f64, f64)> = record
            .rows
            .iter()
            .map(|r| (r.ndof as f64, r.est_theorem.max(1e-300)))
            .collect();
        s.push(("estimator", "#1f77b4", est));
        let err: Vec<(f64, f64)> = record
            .rows
            .iter()
            .filter_map(|r| r.err_energy.map(|e| (r.ndof as f64, e.max(1e-300))))
            .collect();
        if !err.is_empty() {
            s.push(("error", "#d62728", err));
        }
        s
    };
    let (width, height) = (800.0, 600.0);
    let margin = 60.0;
    let mut xmin = f64::INFINITY;
    let mut xmax = -f64::INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = -f64::INFINITY;
    for (_, _, pts) in &series {
        for &(x, y) in pts {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() || xmin <= 0.0 {
        xmin = 1.0;
        xmax = 10.0;
        ymin = 0.1;
        ymax = 1.0;
    }
    let (lx0, lx1) = (xmin.log10().floor(), xmax.log10().ceil().max(xmin.log10().floor() + 1.0));
    let (ly0, ly1) = (ymin.log10().floor(), ymax.log10().ceil().max(ymin.log10().floor() + 1.0));
    let sx = |x: f64| margin + (x.log10() - lx0) / (lx1 - lx0) * (width - 2.0 * margin);
    let sy = |y: f64| height - margin - (y.log10() - ly0) / (ly1 - ly0) * (height - 2.0 * margin);

    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    )
    .unwrap();
    writeln!(svg, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>").unwrap();
    // Decade grid.
    let mut d = lx0;
    while d <= lx1 + 0.5 {
        let x = sx(10f64.powf(d));
        writeln!(
            svg,
            "<line x1=\"{x:.1}\" y1=\"{margin}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#dddddd\"/>",
            height - margin
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-size=\"12\" text-anchor=\"middle\">1e{d:.0}</text>",
            height - margin + 20.0
        )
        .unwrap();
        d += 1.0;
    }
    let mut d = ly0;
    while d <= ly1 + 0.5 {
        let y = sy(10f64.powf(d));
        writeln!(
            svg,
            "<line x1=\"{margin}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>",
            width - margin
        )
        .unwrap();
        writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{y:.1}\" font-size=\"12\" text-anchor=\"end\">1e{d:.0}</text>",
            margin - 6.0
        )
        .unwrap();
        d += 1.0;
    }
    // Reference slope guides (rates 0.5 and 1.0 against dof count).
    if let Some((_, _, pts)) = series.first() {
        if pts.len() >= 2 {
            let (x0, y0) = pts[0];
            let xe = pts.last().unwrap().0;
            for (rate, dash) in [(0.5, "4 4"), (1.0, "8 4")] {
                let ye = y0 * (x0 / xe).powf(rate);
                writeln!(
                    svg,
                    "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#999999\" stroke-dasharray=\"{dash}\"/>",
                    sx(x0),
                    sy(y0),
                    sx(xe),
                    sy(ye)
                )
                .unwrap();
            }
        }
    }
    for (name, color, pts) in &series {
        if pts.is_empty() {
            continue;
        }
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
        writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        )
        .unwrap();
        for &(x, y) in pts {
            writeln!(svg, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", sx(x), sy(y))
                .unwrap();
        }
        let (x, y) = pts[0];
        writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" fill=\"{color}\">{name}</text>",
            sx(x) + 8.0,
            sy(y) - 8.0
        )
        .unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    svg
}

/// Outcome of a driver invocation.
pub struct StudyArtifacts {
    pub record: StudyRecord,
    pub final_mesh: Arc<Mesh>,
    pub final_report: Option<EstimatorReport>,
}

/// Run the configured study and write artifacts into the output directory.
pub fn run_study(config: &RunConfig, out_dir: Option<&Path>) -> Result<StudyArtifacts, StudyError> {
    let mesh = Arc::new(
        config
            .build_mesh()
            .map_err(|e| StudyError::Config(e.to_string()))?,
    );
    let (spec, case) = config.build_source();
    let record;
    let final_mesh;
    let mut final_report = None;
    match config.study {
        StudyKind::Uniform => {
            record = uniform_study(&mesh, &config.scheme, &spec, case.as_ref(), config.levels)
                .map_err(|e| StudyError::Numerical(e.to_string()))?;
            let mut m = Arc::clone(&mesh);
            for _ in 0..config.levels {
                m = Arc::new(m.refine_uniform().0);
            }
            final_mesh = m;
        }
        StudyKind::Adaptive => {
            let options = AdaptiveOptions {
                mark_theta: config.mark_theta,
                max_dofs: config.max_dofs,
                ..Default::default()
            };
            let (rec, fm) = adaptive_loop(&mesh, &config.scheme, &spec, case.as_ref(), &options)
                .map_err(|e| StudyError::Numerical(e.to_string()))?;
            record = rec;
            final_mesh = fm;
        }
        StudyKind::Verify => {
            return Err(StudyError::Config(
                "the verification suite runs through the `verify` subcommand".into(),
            ))
        }
    }
    // Recompute the final-level report for the per-entity files.
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("study.csv"), study_csv(&record))?;
        std::fs::write(
            dir.join("estimators.csv"),
            estimator_csv(config.scheme.scheme.name(), &record),
        )?;
        if config.svg {
            std::fs::write(dir.join("study.svg"), study_svg(&record))?;
        }
        let (_, report, _) = solve_and_estimate(&final_mesh, &config.scheme, &spec, case.as_ref())
            .map_err(|e| StudyError::Numerical(e.to_string()))?;
        std::fs::write(
            dir.join("indicators_elements.csv"),
            entity_csv(&report.element_indicators(&final_mesh)),
        )?;
        std::fs::write(dir.join("indicators_mu2_edges.csv"), entity_csv(&report.mu.mu2_sq))?;
        std::fs::write(
            dir.join("indicators_hessian_tau_edges.csv"),
            entity_csv(&report.family_a.hessian_tau_sq),
        )?;
        final_report = Some(report);
    }
    Ok(StudyArtifacts { record, final_mesh, final_report })
}

/// Single solve on the (uniformly pre-refined) domain: prints one study row.
pub fn run_solve(config: &RunConfig, out_dir: Option<&Path>) -> Result<StudyArtifacts, StudyError> {
    let mesh0 = Arc::new(
        config
            .build_mesh()
            .map_err(|e| StudyError::Config(e.to_string()))?,
    );
    let mut mesh = mesh0;
    for _ in 0..config.levels {
        mesh = Arc::new(mesh.refine_uniform().0);
    }
    let (spec, case) = config.build_source();
    let (_, report, mut row) = solve_and_estimate(&mesh, &config.scheme, &spec, case.as_ref())
        .map_err(|e| StudyError::Numerical(e.to_string()))?;
    row.level = config.levels;
    let mut record = StudyRecord::default();
    record.rows.push(row);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("study.csv"), study_csv(&record))?;
        std::fs::write(
            dir.join("indicators_elements.csv"),
            entity_csv(&report.element_indicators(&mesh)),
        )?;
    }
    Ok(StudyArtifacts { record, final_mesh: mesh, final_report: Some(report) })
}
