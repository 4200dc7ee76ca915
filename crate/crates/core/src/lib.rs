//! Numerical laboratory for geodesic flows on warped-product metrics near
//! a flat torus: curvature, geodesics and shadowing, Riccati solutions,
//! decay certificates and pressure-gap bounds.

// `!(a < b)` is how NaN inputs get rejected throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod geodesics;
pub mod geometry;
pub mod ode;
pub mod pressure;
pub mod report;
pub mod riccati;
pub mod roots;
pub mod runner;
pub mod scaling;
