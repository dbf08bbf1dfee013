//! Lowest-order nonstandard finite element methods for the clamped plate
//! (biharmonic) problem on polygonal domains, with residual-based a
//! posteriori error estimation and adaptive mesh refinement.
//!
//! The crate provides
//! - shape-regular triangulations with uniform (red) and newest-vertex
//!   bisection refinement ([`mesh`]),
//! - quadrature rules and local shape function sets for quadratic Lagrange,
//!   Morley, and Hsieh-Clough-Tocher macro elements ([`quadrature`],
//!   [`shapes`]),
//! - global degree-of-freedom maps and discrete fields with trace and jump
//!   evaluation on edges ([`spaces`]),
//! - the transfer operators between the discrete spaces: averaged Morley
//!   interpolation, Lagrange transfer, the conforming companion, and the
//!   composite smoother ([`transfer`]),
//! - assembly and direct sparse solution of the Morley, discontinuous
//!   Galerkin (two variants), C0 interior penalty, and weakly over-penalized
//!   symmetric interior penalty discretizations ([`assemble`]),
//! - general right-hand sides combining volume densities up to second
//!   derivative order, line loads, and point loads ([`source`]),
//! - error indicators for all schemes, oscillations, data approximation
//!   errors, and a dual-norm surrogate ([`estimate`]),
//! - a Doerfler-marking adaptive loop ([`adapt`]),
//! - a Crouzeix-Raviart Poisson companion study ([`poisson`]) and the
//!   driver layer with config parsing, CSV/SVG reports, and a verification
//!   suite ([`config`], [`study`], [`verify`]).

pub mod adapt;
pub mod assemble;
pub mod config;
pub mod dense;
pub mod estimate;
pub mod manufactured;
pub mod mesh;
pub mod poisson;
pub mod quadrature;
pub mod rng;
pub mod shapes;
pub mod source;
pub mod spaces;
pub mod study;
pub mod transfer;
pub mod verify;
