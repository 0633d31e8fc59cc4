//! Robust adaptive nonlinear MPC with ellipsoidal tubes.
//!
//! The controller linearizes a basis-function model around a nominal
//! trajectory, bounds every source of prediction error (parameter mismatch,
//! linearization remainder, additive disturbance) with polytopes, and
//! confines the uncertain part of the predicted state to a sequence of
//! ellipsoids `{e : e'Ve <= beta_k^2}`. Each outer iteration is a
//! second-order cone program; a backtracking line search on the nominal
//! perturbation sequence keeps every iteration feasible.
//!
//! This crate is `no_std` (it needs `alloc`). Conic programs are built in a
//! solver-neutral form ([`conic::ConicProgram`]) and handed to whatever
//! implements [`conic::ConicBackend`]; the `tubempc` crate ships one backed by
//! Clarabel.
//!
//! Module map:
//!
//! - [`geometry`]: polytopes, ellipsoids, V-norms, constraint tightening.
//! - [`model`]: basis-function dynamics, Jacobians, error-set oracles.
//! - [`linearize`]: nominal rollouts and per-step linearization records.
//! - [`tube`]: the per-step contraction certificate `lambda_k`.
//! - [`terminal`]: LDI, terminal LMI, terminal set and terminal cost.
//! - [`ocp`]: assembly of the online SOCP and solution extraction.
//! - [`controller`]: outer iterations, line search, warm shifting.
//! - [`estimator`]: set-membership parameter estimation.
#![no_std]
#![allow(clippy::too_many_arguments, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod conic;
pub mod controller;
pub mod estimator;
pub mod geometry;
pub mod linearize;
pub mod model;
pub mod ocp;
pub mod problem;
pub mod terminal;
pub mod tube;

mod linalg;

pub use conic::{ConicBackend, ConicProgram, SolveStatus, SolverSettings};
pub use controller::{Controller, ControllerConfig, StepReport};
pub use estimator::ParamEstimate;
pub use geometry::{BoxSet, Ellipsoid, EllipsoidShape, HPolytope, PolytopeSet, VPolytope};
pub use linalg::{Matrix, Vector};
pub use model::{BasisModel, BasisTerm, QuadraticBasisModel};
pub use problem::ProblemData;
pub use terminal::{TerminalHorizon, TerminalParams};
