//! Dense CP decomposition: alternating least squares and Gauss-Newton with an
//! implicit, preconditioned CG solver, plus problem generators and an
//! experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod als;
pub mod cli;
pub mod error;
pub mod gauss_newton;
pub mod generators;
pub mod harness;
pub mod io;
pub mod kruskal;
pub mod linalg;
pub mod mttkrp;
pub mod report;
pub mod tensor;

pub use als::{als_optimize, als_sweep, AlsConfig};
pub use error::{CpError, Result};
pub use gauss_newton::{gn_optimize, gn_step, Armijo, GnConfig, RegMode, RegSchedule, RegShape};
pub use kruskal::{GammaSet, KruskalModel, ResidualFitness};
pub use mttkrp::{mttkrp, mttkrp_all, MttkrpWorkspace};
pub use report::{ConvergenceReport, IterationRecord, Status};
pub use tensor::{DenseTensor, Matrix};
