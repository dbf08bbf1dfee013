//! Quadrature rules on the reference triangle and the unit interval.
//!
//! Triangle rules are built as conical products of Gauss-Legendre rules and
//! then symmetrized over the six affine symmetries of the reference triangle,
//! so every returned rule is invariant under permutations of the barycentric
//! coordinates. Edge rules are plain Gauss-Legendre on [0, 1].

/// Quadrature rule on the reference triangle with vertices
/// (0,0), (1,0), (0,1). Points are stored in barycentric coordinates.
#[derive(Debug, Clone)]
pub struct TriQuadrature {
    /// Barycentric coordinates (l0, l1, l2) of each point.
    pub points: Vec<[f64; 3]>,
    /// Weights, summing to the reference area 1/2.
    pub weights: Vec<f64>,
    /// All polynomials up to this total degree are integrated exactly.
    pub exactness_degree: usize,
}

/// Quadrature rule on the unit interval [0, 1].
#[derive(Debug, Clone)]
pub struct EdgeQuadrature {
    /// Parameter values t in [0, 1].
    pub points: Vec<f64>,
    /// Weights, summing to 1.
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuadratureError {
    UnsupportedTriangleDegree(usize),
    UnsupportedEdgeDegree(usize),
}

impl std::fmt::Display for QuadratureError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QuadratureError::UnsupportedTriangleDegree(d) => {
                write!(f, "unsupported triangle quadrature degree {d} (supported: 1..=10)")
            }
            QuadratureError::UnsupportedEdgeDegree(d) => {
                write!(f, "unsupported edge quadrature degree {d} (supported: 0..=9)")
            }
        }
    }
}

impl std::error::Error for QuadratureError {}

/// Gauss-Legendre nodes and weights on [-1, 1].
///
/// Nodes are roots of the Legendre polynomial P_n found by Newton iteration
/// from the Chebyshev initial guess; exact for polynomials of degree 2n-1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let kf = k as f64;
        let p2 = ((2.0 * kf + 1.0) * x * p1 - kf * p0) / (kf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Gauss-Legendre rule mapped to [0, 1].
fn gauss_unit_interval(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let points = x.iter().map(|xi| 0.5 * (xi + 1.0)).collect();
    let weights = w.iter().map(|wi| 0.5 * wi).collect();
    (points, weights)
}

/// Symmetric triangle rule of the requested exactness degree, 1..=10.
pub fn quad_triangle(degree: usize) -> Result<TriQuadrature, QuadratureError> {
    if degree < 1 || degree > 10 {
        return Err(QuadratureError::UnsupportedTriangleDegree(degree));
    }
    Ok(tri_rule_any(degree))
}

/// Triangle rule of arbitrary exactness, without the degree cap of
/// [`quad_triangle`]. Serves oracle integrals of high-degree polynomial
/// data in tests and norm evaluations.
pub fn tri_rule_any(degree: usize) -> TriQuadrature {
    // Conical product: int_T f = int_0^1 (1-x) int_0^1 f(x, u(1-x)) du dx.
    // The (1-x) factor raises the x-degree by one.
    let m = (degree + 2).div_ceil(2);
    let n = (degree + 1).div_ceil(2);
    let (xs, wxs) = gauss_unit_interval(m);
    let (us, wus) = gauss_unit_interval(n);
    let mut points = Vec::with_capacity(6 * m * n);
    let mut weights = Vec::with_capacity(6 * m * n);
    for (x, wx) in xs.iter().zip(&wxs) {
        for (u, wu) in us.iter().zip(&wus) {
            let y = u * (1.0 - x);
            let w = wx * wu * (1.0 - x);
            let bary = [1.0 - x - y, *x, y];
            // Average over the six barycentric permutations for symmetry.
            for perm in PERMS3 {
                points.push([bary[perm[0]], bary[perm[1]], bary[perm[2]]]);
                weights.push(w / 6.0);
            }
        }
    }
    TriQuadrature { points, weights, exactness_degree: degree }
}

const PERMS3: [[usize; 3]; 6] =
    [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Gauss rule on [0, 1] of the requested exactness degree, 0..=9.
pub fn quad_edge(degree: usize) -> Result<EdgeQuadrature, QuadratureError> {
    if degree > 9 {
        return Err(QuadratureError::UnsupportedEdgeDegree(degree));
    }
    Ok(edge_rule_any(degree))
}

/// Edge rule of arbitrary exactness, without the degree cap of
/// [`quad_edge`].
pub fn edge_rule_any(degree: usize) -> EdgeQuadrature {
    let n = (degree + 1).div_ceil(2).max(1);
    let (points, weights) = gauss_unit_interval(n);
    EdgeQuadrature { points, weights, exactness_degree: degree }
}

impl TriQuadrature {
    /// Integrate a function over a physical triangle with the given vertex
    /// coordinates.
    pub fn integrate(&self, v: &[[f64; 2]; 3], f: impl Fn([f64; 2]) -> f64) -> f64 {
        let jac = 2.0 * triangle_area(v);
        let mut sum = 0.0;
        for (p, w) in self.points.iter().zip(&self.weights) {
            let x = p[0] * v[0][0] + p[1] * v[1][0] + p[2] * v[2][0];
            let y = p[0] * v[0][1] + p[1] * v[1][1] + p[2] * v[2][1];
            sum += w * f([x, y]);
        }
        sum * jac
    }
}

impl EdgeQuadrature {
    /// Integrate a function along the segment from `a` to `b` (arclength ds).
    pub fn integrate(&self, a: [f64; 2], b: [f64; 2], f: impl Fn([f64; 2]) -> f64) -> f64 {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let mut sum = 0.0;
        for (t, w) in self.points.iter().zip(&self.weights) {
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            sum += w * f([x, y]);
        }
        sum * len
    }
}

/// Signed area of the triangle with vertices `v`, positive when
/// counterclockwise.
pub fn triangle_signed_area(v: &[[f64; 2]; 3]) -> f64 {
    0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[2][0] - v[0][0]) * (v[1][1] - v[0][1]))
}

/// Absolute triangle area.
pub fn triangle_area(v: &[[f64; 2]; 3]) -> f64 {
    triangle_signed_area(v).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    // Oracle: int over the reference triangle of x^a y^b = a! b! / (a+b+2)!.
    fn monomial_integral(a: usize, b: usize) -> f64 {
        let mut val = 1.0;
        // a! b! / (a+b+2)! computed stably as a product.
        for k in 1..=(a + b + 2) {
            val /= k as f64;
        }
        for k in 1..=a {
            val *= k as f64;
        }
        for k in 1..=b {
            val *= k as f64;
        }
        val
    }

    fn apply_tri(rule: &TriQuadrature, f: impl Fn(f64, f64) -> f64) -> f64 {
        rule.points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * f(p[1], p[2]))
            .sum()
    }

    #[test]
    fn weights_sum_to_reference_measures() {
        for d in 1..=10 {
            let rule = quad_triangle(d).unwrap();
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 0.5).abs() < 1e-14, "degree {d}: weight sum {s}");
        }
        for d in 0..=9 {
            let rule = quad_edge(d).unwrap();
            let s: f64 = rule.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-14, "degree {d}: weight sum {s}");
        }
    }

    #[test]
    fn triangle_rules_are_exact_for_all_monomials() {
        for d in 1..=10 {
            let rule = quad_triangle(d).unwrap();
            for a in 0..=d {
                for b in 0..=(d - a) {
                    let got = apply_tri(&rule, |x, y| x.powi(a as i32) * y.powi(b as i32));
                    let want = monomial_integral(a, b);
                    assert!(
                        (got - want).abs() < 1e-12,
                        "degree {d}, monomial x^{a} y^{b}: {got} vs {want}"
                    );
                }
            }
        }
    }

    #[test]
    fn degree_one_is_centroid_scale() {
        let rule = quad_triangle(1).unwrap();
        let got = apply_tri(&rule, |_, _| 1.0);
        assert!((got - 0.5).abs() < 1e-15);
    }

    #[test]
    fn degree_two_integrates_x_squared() {
        // int x^2 over the reference triangle = 1/12.
        let rule = quad_triangle(2).unwrap();
        let got = apply_tri(&rule, |x, _| x * x);
        assert!((got - 1.0 / 12.0).abs() < 1e-14, "{got}");
    }

    #[test]
    fn degree_ten_integrates_x4_y4() {
        // 4! 4! / 10! = 576 / 3628800.
        let rule = quad_triangle(10).unwrap();
        let got = apply_tri(&rule, |x, y| x.powi(4) * y.powi(4));
        let want = 576.0 / 3_628_800.0;
        assert!((got - want).abs() < 1e-14, "{got} vs {want}");
    }

    #[test]
    fn internal_rule_handles_degree_sixteen() {
        let rule = tri_rule_any(16);
        let got = apply_tri(&rule, |x, y| x.powi(8) * y.powi(8));
        // 8! 8! / 18!.
        let want = monomial_integral(8, 8);
        assert!((got - want).abs() < 1e-15 + 1e-12 * want.abs());
    }

    #[test]
    fn edge_rules_match_power_integrals() {
        // Midpoint rule at degree 1.
        let r1 = quad_edge(1).unwrap();
        assert_eq!(r1.points.len(), 1);
        assert!((r1.points[0] - 0.5).abs() < 1e-15);
        // 2-point Gauss integrates t^3 to 1/4.
        let r3 = quad_edge(3).unwrap();
        assert_eq!(r3.points.len(), 2);
        let got: f64 = r3.points.iter().zip(&r3.weights).map(|(t, w)| w * t.powi(3)).sum();
        assert!((got - 0.25).abs() < 1e-14);
        // 5-point Gauss integrates t^9 to 1/10.
        let r9 = quad_edge(9).unwrap();
        assert_eq!(r9.points.len(), 5);
        let got: f64 = r9.points.iter().zip(&r9.weights).map(|(t, w)| w * t.powi(9)).sum();
        assert!((got - 0.1).abs() < 1e-14);
    }

    #[test]
    fn unsupported_degrees_error() {
        assert!(quad_triangle(0).is_err());
        assert!(quad_triangle(11).is_err());
        assert!(quad_edge(10).is_err());
    }

    #[test]
    fn triangle_rule_is_symmetric() {
        // Invariance under swapping two barycentric coordinates: integrating
        // x^3 y and y^3 x must agree.
        let rule = quad_triangle(7).unwrap();
        let a = apply_tri(&rule, |x, y| x.powi(3) * y);
        let b = apply_tri(&rule, |x, y| y.powi(3) * x);
        assert!((a - b).abs() < 1e-16);
    }
}
