//! Numerical homogenization of monotone second-order operators on
//! periodically perforated planar domains with mean-zero Fourier data on the
//! perforation boundaries.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`geometry`] / [`mesh`] build a triangulated periodicity cell
//!    `Y = [-1/2, 1/2]^2` minus a single inclusion, and tile scaled copies of
//!    it into a perforated macroscopic domain.
//! 2. [`models`] define the volume flux `a(xi, y)` and the surface exchange
//!    law `g(u, y)`, both drawn from a named catalog, with the surface law
//!    shifted to discrete mean zero over the hole boundary.
//! 3. [`cell`] solves the periodic corrector problem on the cell and
//!    integrates it into effective coefficients; [`table`] samples those
//!    coefficients on a grid and interpolates.
//! 4. [`macroscale`] solves the effective (homogenized) elliptic and
//!    parabolic problems driven by the tabulated coefficients; [`fine`]
//!    solves the same physics directly on the perforated fine mesh.
//! 5. [`harness`] wires the pieces into reproducible convergence and
//!    verification studies behind a flat key = value configuration format.
//!
//! All floating-point work is `f64`. Every randomized probe takes an explicit
//! seed and all reductions are index-ordered, so identical inputs produce
//! bit-identical outputs.

pub mod cell;
pub mod error;
pub mod fem;
pub mod fields;
pub mod fine;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod macroscale;
pub mod mesh;
pub mod models;
pub mod periodic;
pub mod table;

pub use error::{Error, Result};
