//! Alternating least squares over the dimension tree.
//!
//! Each sweep visits modes in ascending order and solves the regularized
//! normal equations `A⁽ⁿ⁾ (Γ⁽ⁿ⁾ + λI) = M⁽ⁿ⁾`. Reported residuals are always
//! the unregularized objective.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::kruskal::{residual_fitness_refined, KruskalModel};
use crate::linalg::spd_solve;
use crate::mttkrp::{mttkrp, MttkrpWorkspace};
use crate::report::{ConvergenceReport, IterationRecord, Status};
use crate::tensor::{gram, hadamard, DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub max_sweeps: usize,
    pub residual_tol: f64,
    pub step_tol: f64,
    pub lambda0: f64,
    /// `λ` is divided by this every `decay_every` sweeps.
    pub decay_factor: f64,
    pub decay_every: Option<usize>,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 10_000,
            residual_tol: 5e-5,
            step_tol: 1e-7,
            lambda0: 0.0,
            decay_factor: 1.0,
            decay_every: None,
        }
    }
}

impl AlsConfig {
    /// Regularized ALS used for matrix-multiplication tensors: `λ` starts at
    /// 0.01 and halves every 100 sweeps, for up to 20000 sweeps.
    pub fn matmul_decay() -> Self {
        Self {
            max_sweeps: 20_000,
            residual_tol: 1e-8,
            step_tol: 0.0,
            lambda0: 0.01,
            decay_factor: 2.0,
            decay_every: Some(100),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol >= 0.0 && self.step_tol >= 0.0) {
            return Err(CpError::InvalidConfig("tolerances must be non-negative".into()));
        }
        if !(self.lambda0 >= 0.0) {
            return Err(CpError::InvalidConfig("lambda0 must be non-negative".into()));
        }
        if !(self.decay_factor >= 1.0) {
            return Err(CpError::InvalidConfig("decay_factor must be >= 1".into()));
        }
        if self.decay_every == Some(0) {
            return Err(CpError::InvalidConfig("decay_every must be positive".into()));
        }
        Ok(())
    }

    /// Regularization in effect for 0-based sweep `sweep`.
    pub fn lambda_at(&self, sweep: usize) -> f64 {
        match self.decay_every {
            Some(every) => self.lambda0 / self.decay_factor.powi((sweep / every) as i32),
            None => self.lambda0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepDiagnostics {
    /// `Σₙ ‖A⁽ⁿ⁾_new − A⁽ⁿ⁾_old‖_F`.
    pub step_norm: f64,
    pub full_contractions: usize,
    /// MTTKRP of the last mode, consistent with the returned model.
    pub m_last: Matrix,
    pub grams: Vec<Matrix>,
}

/// One ALS sweep.
pub fn als_sweep(
    x: &DenseTensor,
    model: &KruskalModel,
    lambda: f64,
    ws: &mut MttkrpWorkspace,
) -> Result<(KruskalModel, SweepDiagnostics)> {
    model.conforms_to(x)?;
    let before = ws.full_contractions();
    let mut next = model.clone();
    let mut grams = model.grams();
    let rank = model.rank();
    let mut step_norm = 0.0;
    let mut m_last = Matrix::zeros(0, 0);
    for n in 0..model.order() {
        let mut gamma = Matrix::filled(rank, rank, 1.0);
        for (m, g) in grams.iter().enumerate() {
            if m != n {
                gamma = hadamard(&gamma, g)?;
            }
        }
        let m_n = mttkrp(x, next.factors(), n, Some(ws))?;
        let updated = spd_solve(&gamma, &m_n, lambda)?;
        step_norm += updated.sub(next.factor(n)).frobenius_norm();
        grams[n] = gram(&updated);
        next.set_factor(n, updated)?;
        m_last = m_n;
    }
    let diag = SweepDiagnostics {
        step_norm,
        full_contractions: ws.full_contractions() - before,
        m_last,
        grams,
    };
    Ok((next, diag))
}

/// Runs sweeps until the residual or step tolerance is met, or the sweep cap.
pub fn als_optimize(
    x: &DenseTensor,
    model: &KruskalModel,
    cfg: &AlsConfig,
) -> Result<(KruskalModel, ConvergenceReport)> {
    cfg.validate()?;
    model.conforms_to(x)?;
    let xnorm2 = x.norm_sq();
    let mut report = ConvergenceReport::new();
    let mut ws = MttkrpWorkspace::new();
    let mut current = model.clone();
    let start = Instant::now();
    for sweep in 0..cfg.max_sweeps {
        let lambda = cfg.lambda_at(sweep);
        let (next, diag) = als_sweep(x, &current, lambda, &mut ws)?;
        let rf = residual_fitness_refined(&next, &diag.grams, x, xnorm2, Some(&diag.m_last))?;
        if !rf.residual.is_finite() {
            return Err(CpError::NumericalFailure(format!("non-finite residual at sweep {sweep}")));
        }
        current = next;
        report.push(IterationRecord {
            iter: sweep + 1,
            residual: rf.residual,
            fitness: rf.fitness,
            lambda,
            cg_iters: 0,
            seconds: start.elapsed().as_secs_f64(),
        });
        if rf.residual < cfg.residual_tol {
            report.status = Status::ConvergedResidual;
            break;
        }
        if diag.step_norm < cfg.step_tol {
            report.status = Status::ConvergedStep;
            break;
        }
    }
    Ok((current, report))
}
