//! Deterministic solvers: Log-Laplace equation, extinction tail `v` and
//! its derivative, Feynman–Kac expectations.

pub mod field;
pub mod ode;
pub mod solve;

pub use field::ScalarField;
pub use ode::{integrate, OdeOptions, OdeSolution};
pub use solve::{
    bismut_cross_check, dv0_closed, feynman_kac, feynman_kac_field, solve_dv, solve_laplace, solve_laplace_with,
    solve_v, solve_v_with, v0_closed, v_initial, ExtinctionFields, SolverConfig,
};
