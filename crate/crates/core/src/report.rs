//! Per-iteration convergence traces.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    ConvergedResidual,
    ConvergedGradient,
    ConvergedStep,
    CapHit,
    NumericalFailure,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::ConvergedResidual => "converged_residual",
            Self::ConvergedGradient => "converged_gradient",
            Self::ConvergedStep => "converged_step",
            Self::CapHit => "cap_hit",
            Self::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub residual: f64,
    pub fitness: f64,
    pub lambda: f64,
    pub cg_iters: usize,
    /// Cumulative wall time since the optimizer started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub records: Vec<IterationRecord>,
    pub status: Status,
    /// Fully resolved configuration of the run, when produced by the harness.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl ConvergenceReport {
    pub fn new() -> Self {
        Self { records: Vec::new(), status: Status::CapHit, config: None }
    }

    pub fn push(&mut self, rec: IterationRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.iter < rec.iter && r.seconds <= rec.seconds));
        self.records.push(rec);
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.records.last().map(|r| r.residual)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn total_cg_iters(&self) -> usize {
        self.records.iter().map(|r| r.cg_iters).sum()
    }
}

impl Default for ConvergenceReport {
    fn default() -> Self {
        Self::new()
    }
}
