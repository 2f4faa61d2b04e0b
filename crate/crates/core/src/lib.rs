//! Parallel-in-time trajectory optimization.
//!
//! A sequential convex programming loop ([`scp`]) linearizes a nonlinear
//! optimal control problem ([`ocp`]) around a nominal trajectory and hands the
//! resulting QP to a consensus ADMM engine ([`admm`]) whose iterations are
//! independent per collocation node: dense per-node solves ([`dense`]), a
//! closed-form dynamic-consistency average, and set projections ([`prox`]).

// `!(a > b)` rejects NaN along with the ordinary failures.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dense;
pub mod ocp;
pub mod prox;
pub mod models;
pub mod admm;
pub mod scp;
pub mod batch;
pub mod experiment;
