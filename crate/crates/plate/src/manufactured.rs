//! Closed-form reference solutions on the unit square for convergence
//! studies: a clamped plate case with polynomial load and a Poisson case for
//! the companion first-order study.

use crate::source::{mono_count, mono_index, PwPoly};

/// Closed-form solution with exact derivatives and matching load.
#[derive(Clone)]
pub struct ManufacturedCase {
    pub name: &'static str,
    pub value: fn([f64; 2]) -> f64,
    pub gradient: fn([f64; 2]) -> [f64; 2],
    pub hessian: fn([f64; 2]) -> [f64; 3],
    /// Polynomial load driving the plate equation.
    pub load: PwPoly,
}

fn g(t: f64) -> f64 {
    let s = t * (1.0 - t);
    s * s
}

fn dg(t: f64) -> f64 {
    2.0 * t - 6.0 * t * t + 4.0 * t * t * t
}

fn ddg(t: f64) -> f64 {
    2.0 - 12.0 * t + 12.0 * t * t
}

fn u_square(x: [f64; 2]) -> f64 {
    g(x[0]) * g(x[1])
}

fn grad_square(x: [f64; 2]) -> [f64; 2] {
    [dg(x[0]) * g(x[1]), g(x[0]) * dg(x[1])]
}

fn hess_square(x: [f64; 2]) -> [f64; 3] {
    [ddg(x[0]) * g(x[1]), dg(x[0]) * dg(x[1]), g(x[0]) * ddg(x[1])]
}

/// Coefficients of the biharmonic load of (x(1-x) y(1-y))^2, produced once by
/// symbolic differentiation and frozen here; the unit test re-derives them
/// with an independent polynomial-calculus oracle.
pub fn load_polynomial() -> PwPoly {
    let mut coeffs = vec![0.0; mono_count(4)];
    let mut set = |i: usize, j: usize, v: f64| coeffs[mono_index(i, j)] = v;
    set(0, 0, 8.0);
    set(1, 0, -48.0);
    set(0, 1, -48.0);
    set(2, 0, 72.0);
    set(1, 1, 288.0);
    set(0, 2, 72.0);
    set(3, 0, -48.0);
    set(2, 1, -288.0);
    set(1, 2, -288.0);
    set(0, 3, -48.0);
    set(4, 0, 24.0);
    set(2, 2, 288.0);
    set(0, 4, 24.0);
    PwPoly::global(4, coeffs)
}

/// Clamped plate on the unit square: u = (x(1-x) y(1-y))^2.
pub fn manufactured_square() -> ManufacturedCase {
    ManufacturedCase {
        name: "square-bubble",
        value: u_square,
        gradient: grad_square,
        hessian: hess_square,
        load: load_polynomial(),
    }
}

/// First-order (Poisson) case on the unit square: u = x(1-x) y(1-y) with
/// load -Laplace u = 2y(1-y) + 2x(1-x).
#[derive(Clone)]
pub struct PoissonCase {
    pub value: fn([f64; 2]) -> f64,
    pub gradient: fn([f64; 2]) -> [f64; 2],
    pub load: fn([f64; 2]) -> f64,
}

fn u_poisson(x: [f64; 2]) -> f64 {
    x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
}

fn grad_poisson(x: [f64; 2]) -> [f64; 2] {
    [
        (1.0 - 2.0 * x[0]) * x[1] * (1.0 - x[1]),
        x[0] * (1.0 - x[0]) * (1.0 - 2.0 * x[1]),
    ]
}

fn load_poisson(x: [f64; 2]) -> f64 {
    2.0 * x[1] * (1.0 - x[1]) + 2.0 * x[0] * (1.0 - x[0])
}

pub fn poisson_square() -> PoissonCase {
    PoissonCase { value: u_poisson, gradient: grad_poisson, load: load_poisson }
}
