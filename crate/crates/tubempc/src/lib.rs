//! Solver backend, file formats, benchmarks and command-line front end for
//! `tubempc-core`.

#![allow(clippy::too_many_arguments)]

// Links the system BLAS/LAPACK used by the PSD cones.
extern crate openblas_src;

pub mod backend;

pub use backend::ClarabelBackend;
pub use tubempc_core as core;
pub mod bench;
pub mod formats;
pub mod verify;
