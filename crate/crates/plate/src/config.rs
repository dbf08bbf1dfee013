//! Line-oriented run configuration: `[section]` headers and `key = value`
//! pairs, with `#` comments. Two sections are understood: `[run]` for the
//! domain, scheme, and study controls, and `[source]` for the load.
//!
//! Polynomial data values are given as a degree followed by the monomial
//! coefficients in the order 1; x, y; x^2, xy, y^2; ... Segment lists are
//! flat coordinate quadruples x1 y1 x2 y2.

use crate::assemble::{Scheme, SchemeConfig, Smoother};
use crate::source::{mono_count, ApproxRule, LineLoad, PointLoad, PwPoly, ScalarData, SourceSpec};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Domain {
    SquareTwo,
    SquareFour,
    LShape,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    Uniform,
    Adaptive,
    Verify,
}

#[derive(Debug, Clone)]
pub enum SourceConfig {
    Manufactured,
    Constant(f64),
    Point { at: [f64; 2], intensity: f64 },
    General(Box<SourceSpec>),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: Domain,
    pub scheme: SchemeConfig,
    pub study: StudyKind,
    pub levels: usize,
    pub max_dofs: usize,
    pub mark_theta: f64,
    pub source: SourceConfig,
    pub out_dir: Option<PathBuf>,
    pub svg: bool,
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError { line, message: message.into() }
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut domain = Domain::SquareFour;
    let mut scheme = SchemeConfig::new(Scheme::Morley);
    let mut study = StudyKind::Uniform;
    let mut levels = 4usize;
    let mut max_dofs = 20_000usize;
    let mut mark_theta = 0.5f64;
    let mut out_dir = None;
    let mut svg = false;

    let mut source_kind: Option<String> = None;
    let mut constant_value = 1.0f64;
    let mut point: Option<([f64; 2], f64)> = None;
    let mut volume: [ScalarData; 6] = [
        ScalarData::Zero,
        ScalarData::Zero,
        ScalarData::Zero,
        ScalarData::Zero,
        ScalarData::Zero,
        ScalarData::Zero,
    ];
    let mut g0_segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    let mut g1_segments: Vec<([f64; 2], [f64; 2])> = Vec::new();
    let mut g0_poly: Option<PwPoly> = None;
    let mut g1_poly: Option<PwPoly> = None;
    let mut approx = ApproxRule::Project { k: 2 };
    let mut extra_points: Vec<PointLoad> = Vec::new();

    let mut section = String::from("run");
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| err(lineno, "unterminated section header"))?;
            section = name.trim().to_string();
            if section != "run" && section != "source" {
                return Err(err(lineno, format!("unknown section `{section}`")));
            }
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(lineno, "expected `key = value`"))?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = |v: &str| -> Result<f64, ConfigError> {
            v.parse().map_err(|_| err(lineno, format!("bad number `{v}` for `{key}`")))
        };
        let parse_usize = |v: &str| -> Result<usize, ConfigError> {
            v.parse().map_err(|_| err(lineno, format!("bad integer `{v}` for `{key}`")))
        };
        let parse_numbers = |v: &str| -> Result<Vec<f64>, ConfigError> {
            v.split_whitespace()
                .map(|tok| tok.parse().map_err(|_| err(lineno, format!("bad number `{tok}` in `{key}`"))))
                .collect()
        };
        let parse_poly = |v: &str| -> Result<PwPoly, ConfigError> {
            let nums = parse_numbers(v)?;
            if nums.is_empty() {
                return Err(err(lineno, format!("`{key}` needs a degree and coefficients")));
            }
            let degree = nums[0] as usize;
            let coeffs = nums[1..].to_vec();
            if coeffs.len() != mono_count(degree) {
                return Err(err(
                    lineno,
                    format!(
                        "`{key}`: degree {degree} needs {} coefficients, got {}",
                        mono_count(degree),
                        coeffs.len()
                    ),
                ));
            }
            Ok(PwPoly::global(degree, coeffs))
        };
        let parse_segments = |v: &str| -> Result<Vec<([f64; 2], [f64; 2])>, ConfigError> {
            let nums = parse_numbers(v)?;
            if nums.len() % 4 != 0 || nums.is_empty() {
                return Err(err(lineno, format!("`{key}` needs coordinate quadruples")));
            }
            Ok(nums
                .chunks(4)
                .map(|c| ([c[0], c[1]], [c[2], c[3]]))
                .collect())
        };

        match (section.as_str(), key) {
            ("run", "domain") => {
                domain = match value {
                    "square2" => Domain::SquareTwo,
                    "square" | "square4" => Domain::SquareFour,
                    "lshape" => Domain::LShape,
                    other => match other.strip_prefix("file:") {
                        Some(path) => Domain::File(PathBuf::from(path.trim())),
                        None => return Err(err(lineno, format!("unknown domain `{other}`"))),
                    },
                }
            }
            ("run", "scheme") => {
                scheme.scheme = Scheme::parse(value)
                    .ok_or_else(|| err(lineno, format!("unknown scheme `{value}`")))?;
            }
            ("run", "smoother") => {
                scheme.smoother = match value {
                    "id" | "identity" => Smoother::Identity,
                    "jh" | "companion" => Smoother::Companion,
                    other => return Err(err(lineno, format!("unknown smoother `{other}`"))),
                }
            }
            ("run", "theta") => scheme.theta = parse_f64(value)?,
            ("run", "sigma1") => scheme.sigma1 = parse_f64(value)?,
            ("run", "sigma2") => scheme.sigma2 = parse_f64(value)?,
            ("run", "sigma_ip") => scheme.sigma_ip = parse_f64(value)?,
            ("run", "study") => {
                study = match value {
                    "uniform" => StudyKind::Uniform,
                    "adaptive" => StudyKind::Adaptive,
                    "verify" => StudyKind::Verify,
                    other => return Err(err(lineno, format!("unknown study kind `{other}`"))),
                }
            }
            ("run", "levels") => levels = parse_usize(value)?,
            ("run", "max_dofs") => max_dofs = parse_usize(value)?,
            ("run", "mark_theta") => mark_theta = parse_f64(value)?,
            ("run", "out") => out_dir = Some(PathBuf::from(value)),
            ("run", "svg") => svg = value == "true" || value == "1",
            ("run", other) => return Err(err(lineno, format!("unknown key `{other}` in [run]"))),
            ("source", "kind") => source_kind = Some(value.to_string()),
            ("source", "value") => constant_value = parse_f64(value)?,
            ("source", "point") => {
                let nums = parse_numbers(value)?;
                if nums.len() != 3 {
                    return Err(err(lineno, "`point` needs `x y intensity`"));
                }
                match point {
                    None => point = Some(([nums[0], nums[1]], nums[2])),
                    Some(_) => extra_points.push(PointLoad {
                        at: [nums[0], nums[1]],
                        intensity: nums[2],
                    }),
                }
            }
            ("source", "f0") => volume[0] = ScalarData::Poly(parse_poly(value)?),
            ("source", "f10") => volume[1] = ScalarData::Poly(parse_poly(value)?),
            ("source", "f01") => volume[2] = ScalarData::Poly(parse_poly(value)?),
            ("source", "f20") => volume[3] = ScalarData::Poly(parse_poly(value)?),
            ("source", "f11") => volume[4] = ScalarData::Poly(parse_poly(value)?),
            ("source", "f02") => volume[5] = ScalarData::Poly(parse_poly(value)?),
            ("source", "g0_segments") => g0_segments = parse_segments(value)?,
            ("source", "g1_segments") => g1_segments = parse_segments(value)?,
            ("source", "g0") => g0_poly = Some(parse_poly(value)?),
            ("source", "g1") => g1_poly = Some(parse_poly(value)?),
            ("source", "approx") => {
                approx = match value {
                    "exact" => ApproxRule::ExactPoly,
                    other => match other.strip_prefix("project:") {
                        Some(k) => ApproxRule::Project {
                            k: k.parse().map_err(|_| err(lineno, "bad projection degree"))?,
                        },
                        None => return Err(err(lineno, format!("unknown approx rule `{other}`"))),
                    },
                }
            }
            ("source", other) => {
                return Err(err(lineno, format!("unknown key `{other}` in [source]")))
            }
            _ => unreachable!(),
        }
    }

    let source = match source_kind.as_deref() {
        None | Some("manufactured") => SourceConfig::Manufactured,
        Some("constant") => SourceConfig::Constant(constant_value),
        Some("point") => {
            let (at, intensity) =
                point.ok_or_else(|| err(0, "source kind `point` needs a `point = x y intensity` line"))?;
            SourceConfig::Point { at, intensity }
        }
        Some("general") => {
            let mut spec = SourceSpec::zero();
            spec.volume = volume;
            spec.approx = approx;
            if !g0_segments.is_empty() {
                spec.line0 = Some(LineLoad {
                    segments: g0_segments,
                    density: g0_poly.clone().map(ScalarData::Poly).unwrap_or(ScalarData::Zero),
                });
            }
            if !g1_segments.is_empty() {
                spec.line1 = Some(LineLoad {
                    segments: g1_segments,
                    density: g1_poly.clone().map(ScalarData::Poly).unwrap_or(ScalarData::Zero),
                });
            }
            if let Some((at, intensity)) = point {
                spec.points.push(PointLoad { at, intensity });
            }
            spec.points.extend(extra_points);
            SourceConfig::General(Box::new(spec))
        }
        Some(other) => return Err(err(0, format!("unknown source kind `{other}`"))),
    };

    Ok(RunConfig {
        domain,
        scheme,
        study,
        levels,
        max_dofs,
        mark_theta,
        source,
        out_dir,
        svg,
    })
}

impl RunConfig {
    /// Materialize the domain's initial mesh.
    pub fn build_mesh(&self) -> Result<crate::mesh::Mesh, Box<dyn std::error::Error>> {
        Ok(match &self.domain {
            Domain::SquareTwo => crate::mesh::unit_square_two(),
            Domain::SquareFour => crate::mesh::unit_square_four(),
            Domain::LShape => crate::mesh::l_shape(),
            Domain::File(path) => {
                let text = std::fs::read_to_string(path)?;
                crate::mesh::parse_mesh_file(&text)?
            }
        })
    }

    /// Materialize the source description and, when available, the matching
    /// closed-form solution.
    pub fn build_source(&self) -> (SourceSpec, Option<crate::manufactured::ManufacturedCase>) {
        match &self.source {
            SourceConfig::Manufactured => {
                let case = crate::manufactured::manufactured_square();
                let spec = SourceSpec::from_l2(
                    ScalarData::Poly(case.load.clone()),
                    ApproxRule::ExactPoly,
                );
                (spec, Some(case))
            }
            SourceConfig::Constant(c) => (
                SourceSpec::from_l2(ScalarData::Poly(PwPoly::constant(*c)), ApproxRule::ExactPoly),
                None,
            ),
            SourceConfig::Point { at, intensity } => {
                (SourceSpec::point_load(*at, *intensity), None)
            }
            SourceConfig::General(spec) => ((**spec).clone(), None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "\
# plate study
[run]
domain = square4
scheme = dg1
smoother = jh
theta = 1.0
sigma1 = 20
sigma2 = 20
study = uniform
levels = 3
svg = true

[source]
kind = manufactured
";
        let config = parse_config(text).unwrap();
        assert_eq!(config.scheme.scheme, Scheme::Dg1);
        assert_eq!(config.scheme.smoother, Smoother::Companion);
        assert_eq!(config.levels, 3);
        assert!(config.svg);
        assert!(matches!(config.source, SourceConfig::Manufactured));
    }

    #[test]
    fn unknown_scheme_errors_with_line() {
        let text = "[run]\nscheme = biharmonic9000\n";
        let e = parse_config(text).unwrap_err();
        assert_eq!(e.line, 2);
        assert!(e.message.contains("biharmonic9000"));
    }

    #[test]
    fn general_source_round_trip() {
        let text = "\
[run]
scheme = morley
[source]
kind = general
f0 = 2 1 0 0 0 0 0
g0_segments = 0 0 0.5 0.5
g0 = 0 1
point = 0.5 0.5 2.5
approx = project:2
";
        let config = parse_config(text).unwrap();
        let SourceConfig::General(spec) = &config.source else {
            panic!("expected general source");
        };
        assert!(!spec.volume[0].is_zero());
        assert!(spec.line0.is_some());
        assert_eq!(spec.points.len(), 1);
    }

    #[test]
    fn point_source_requires_point_line() {
        let text = "[source]\nkind = point\n";
        assert!(parse_config(text).is_err());
    }
}
