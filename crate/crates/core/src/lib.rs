//! Simulation and verification toolkit for superprocesses with quadratic,
//! type-dependent branching on a finite type space.
//!
//! The crate covers the extinction tail `v_t(x) = N_x[H_max > t]` and the
//! Log-Laplace equation ([`numerics`]), the Perron–Frobenius data of
//! `Diag(beta) - Q` ([`spectral`]), the h-transform to unit quadratic
//! coefficient and the associated Girsanov weights ([`girsanov`]), exact
//! spine samplers ([`spine`]), a branching-particle Monte-Carlo oracle
//! ([`particle`]), Williams-decomposition samplers ([`williams`]) and a
//! battery of identity checks ([`verify`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod model;
pub mod numerics;
pub mod girsanov;
pub mod particle;
pub mod paths;
pub mod spectral;
pub mod spine;
pub mod stats;
pub mod streams;
pub mod verify;
pub mod williams;

pub use error::{Error, Result};
pub use model::{FiniteMeasure, MultitypeModel, TimeGrid};
