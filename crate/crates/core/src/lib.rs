//! Violation-free distributed optimization of constraint-coupled convex
//! quadratic programs.
//!
//! Coupled constraints `sum_i a_i^m' x_i + b_i^m <= 0` are split into local
//! ones through auxiliary allocation variables `y` whose Laplacian image
//! shifts each agent's budget. Each agent solves a small QP; the flows in
//! [`flows`] move `y` along a subgradient assembled from neighbor
//! multiplier differences, and every intermediate iterate stays feasible
//! for the original problem.

pub mod cbf;
pub mod error;
pub mod flows;
mod linalg;
pub mod localqp;
pub mod network;
pub mod problem;
pub mod qp;
pub mod scenarios;

pub use error::{Error, Result};
pub use flows::{FlowParams, FlowState, FlowTrace, Saturation, Variant};
pub use localqp::{LocalProblem, LocalSolution};
pub use network::{Graph, Permutation, SparsityPattern};
pub use problem::{AgentSpec, CentralizedSolution, CoupledProblem, QuadraticCost, Structure};
