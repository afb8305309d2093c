//! Gauss-Newton for CP with an implicit, preconditioned conjugate gradient
//! inner solver.
//!
//! The approximate Hessian `JᵀJ` is never formed. Its block `(n, p)` acts on
//! a per-mode matrix `W⁽ᵖ⁾` as
//!
//! ```text
//! n = p:  W⁽ⁿ⁾ Γ⁽ⁿ'ⁿ⁾
//! n ≠ p:  A⁽ⁿ⁾ (Γ⁽ⁿ'ᵖ⁾ ∗ A⁽ᵖ⁾ᵀW⁽ᵖ⁾)ᵀ
//! ```
//!
//! so one product costs `O(N Σₙ sₙ R²)`. The diagonal blocks are
//! `Γ⁽ⁿ'ⁿ⁾ ⊗ I`, whose inverses (after the Levenberg-Marquardt shift) form
//! the block preconditioner.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::kruskal::{objective_dense, residual_fitness_refined, GammaSet, KruskalModel, ResidualFitness};
use crate::linalg::spd_inverse;
use crate::mttkrp::{mttkrp_all, MttkrpWorkspace};
use crate::report::{ConvergenceReport, IterationRecord, Status};
use crate::tensor::{hadamard, DenseTensor, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    Constant,
    Varying,
}

/// What `λ` multiplies: the identity, or the diagonal of `JᵀJ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegShape {
    Identity,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Up,
}

/// Levenberg-Marquardt damping state.
///
/// In varying mode `λ` is divided by `mu` every step until it drops below
/// `lower`, then multiplied by `mu` until it exceeds `upper`, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegSchedule {
    pub mode: RegMode,
    pub shape: RegShape,
    pub lambda: f64,
    pub mu: f64,
    pub lower: f64,
    pub upper: f64,
    pub direction: Direction,
}

impl RegSchedule {
    pub const DEFAULT_UPPER: f64 = 1e-2;
    pub const DEFAULT_LOWER: f64 = 1e-6;
    pub const DEFAULT_MU: f64 = 2.0;

    /// Oscillating schedule starting at `upper` and heading down.
    pub fn varying(shape: RegShape, lower: f64, upper: f64, mu: f64) -> Self {
        Self { mode: RegMode::Varying, shape, lambda: upper, mu, lower, upper, direction: Direction::Down }
    }

    pub fn varying_default(shape: RegShape) -> Self {
        Self::varying(shape, Self::DEFAULT_LOWER, Self::DEFAULT_UPPER, Self::DEFAULT_MU)
    }

    pub fn constant(shape: RegShape, lambda: f64) -> Self {
        Self {
            mode: RegMode::Constant,
            shape,
            lambda,
            mu: Self::DEFAULT_MU,
            lower: Self::DEFAULT_LOWER,
            upper: Self::DEFAULT_UPPER,
            direction: Direction::Down,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(CpError::InvalidConfig(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.mode == RegMode::Varying {
            if !(self.mu > 1.0) {
                return Err(CpError::InvalidConfig(format!("mu must exceed 1, got {}", self.mu)));
            }
            if !(self.lower > 0.0 && self.lower < self.upper) {
                return Err(CpError::InvalidConfig(format!(
                    "need 0 < lower < upper, got lower={} upper={}",
                    self.lower, self.upper
                )));
            }
        }
        Ok(())
    }

    /// The schedule after one step.
    pub fn next(&self) -> Self {
        let mut s = self.clone();
        if s.mode == RegMode::Constant {
            return s;
        }
        match s.direction {
            Direction::Down => {
                s.lambda /= s.mu;
                if s.lambda < s.lower {
                    s.direction = Direction::Up;
                }
            }
            Direction::Up => {
                s.lambda *= s.mu;
                if s.lambda > s.upper {
                    s.direction = Direction::Down;
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Armijo {
    pub c1: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for Armijo {
    fn default() -> Self {
        Self { c1: 1e-4, shrink: 0.5, max_backtracks: 20 }
    }
}

/// Denominator of the CG direction coefficient `β`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// `⟨R_new, Z_new⟩ / ⟨R_old, Z_old⟩`.
    Standard,
    /// `⟨R_new, Z_new⟩ / ⟨W, Q⟩`, kept for comparison only.
    WqDenominator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnConfig {
    /// Stop once `Σₙ ‖G⁽ⁿ⁾‖_F` is at or below this; 0 disables.
    pub grad_tol: f64,
    pub residual_tol: f64,
    pub step_tol: f64,
    pub max_iters: usize,
    pub cg_tol: f64,
    /// `None` means `min(Σₙ sₙ R, 10 R)`.
    pub cg_max_iters: Option<usize>,
    pub schedule: RegSchedule,
    pub armijo: Option<Armijo>,
    pub beta_rule: BetaRule,
}

impl Default for GnConfig {
    fn default() -> Self {
        Self {
            grad_tol: 0.0,
            residual_tol: 5e-5,
            step_tol: 1e-7,
            max_iters: 500,
            cg_tol: 1e-3,
            cg_max_iters: None,
            schedule: RegSchedule::varying_default(RegShape::Identity),
            armijo: None,
            beta_rule: BetaRule::Standard,
        }
    }
}

impl GnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cg_tol > 0.0) {
            return Err(CpError::InvalidConfig("cg_tol must be positive".into()));
        }
        if self.cg_max_iters == Some(0) {
            return Err(CpError::InvalidConfig("cg_max_iters must be positive".into()));
        }
        if !(self.grad_tol >= 0.0 && self.residual_tol >= 0.0 && self.step_tol >= 0.0) {
            return Err(CpError::InvalidConfig("tolerances must be non-negative".into()));
        }
        if let Some(a) = self.armijo {
            if !(a.c1 > 0.0 && a.c1 < 1.0 && a.shrink > 0.0 && a.shrink < 1.0) {
                return Err(CpError::InvalidConfig("armijo c1 and shrink must lie in (0, 1)".into()));
            }
        }
        self.schedule.validate()
    }

    pub fn cg_cap(&self, model: &KruskalModel) -> usize {
        self.cg_max_iters
            .unwrap_or_else(|| model.num_variables().min(10 * model.rank()))
            .max(1)
    }
}

/// `G⁽ⁿ⁾ = A⁽ⁿ⁾ Γ⁽ⁿ'ⁿ⁾ − M⁽ⁿ⁾`, the gradient of `½‖X − [[A]]‖²`.
pub fn gradient(model: &KruskalModel, mttkrps: &[Matrix], gammas: &GammaSet) -> Vec<Matrix> {
    model
        .factors()
        .iter()
        .zip(mttkrps)
        .enumerate()
        .map(|(n, (a, m))| a.matmul(gammas.diag(n)).sub(m))
        .collect()
}

fn sum_norms(ms: &[Matrix]) -> f64 {
    ms.iter().map(Matrix::frobenius_norm).sum()
}

fn sum_inner(a: &[Matrix], b: &[Matrix]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.inner(y)).sum()
}

/// Scales column `r` of `w` by `d[r]`.
fn scale_columns(w: &Matrix, d: &[f64]) -> Matrix {
    let cols = w.cols();
    let mut out = w.clone();
    for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v *= d[i % cols];
    }
    out
}

/// `(JᵀJ + λ Reg) W` via structured contractions.
pub fn hessian_matvec(
    model: &KruskalModel,
    gammas: &GammaSet,
    w: &[Matrix],
    lambda: f64,
    shape: RegShape,
) -> Vec<Matrix> {
    let order = model.order();
    // A⁽ᵖ⁾ᵀ W⁽ᵖ⁾ is shared by every off-diagonal block in column p
    let projected: Vec<Matrix> = (0..order).map(|p| model.factor(p).t_matmul(&w[p])).collect();
    (0..order)
        .map(|n| {
            let mut u = match shape {
                _ if lambda == 0.0 => Matrix::zeros(w[n].rows(), w[n].cols()),
                RegShape::Identity => w[n].scaled(lambda),
                RegShape::Diagonal => {
                    let d: Vec<f64> = gammas.diag(n).diagonal().iter().map(|g| lambda * g).collect();
                    scale_columns(&w[n], &d)
                }
            };
            // Γ⁽ⁿ'ⁿ⁾ is exactly symmetric
            u.add_matmul(1.0, &w[n], gammas.diag(n));
            if order > 1 {
                let rank = model.rank();
                let mut acc = Matrix::zeros(rank, rank);
                for p in (0..order).filter(|&p| p != n) {
                    acc.axpy(1.0, &hadamard(gammas.get(n, p), &projected[p]).expect("rank"));
                }
                u.add_matmul(1.0, model.factor(n), &acc.transpose());
            }
            u
        })
        .collect()
}

/// Default variable cap for [`explicit_jacobian`] and [`explicit_jtj`].
pub const EXPLICIT_VARIABLE_CAP: usize = 2000;

/// Column of variable `(n, k, r)` in the explicit Jacobian: modes in order,
/// each factor vectorized column-major.
pub fn variable_offsets(model: &KruskalModel) -> Vec<usize> {
    model
        .dims()
        .iter()
        .scan(0, |acc, &s| {
            let off = *acc;
            *acc += s * model.rank();
            Some(off)
        })
        .collect()
}

/// Dense Jacobian of the residual `X − [[A]]`, built entry by entry from its
/// definition: `∂r_i / ∂a⁽ⁿ⁾_{k r} = −δ_{iₙ k} Π_{m≠n} a⁽ᵐ⁾_{iₘ r}`.
///
/// Rows follow the row-major order of tensor entries; columns follow
/// [`variable_offsets`].
pub fn explicit_jacobian(model: &KruskalModel, cap: usize) -> Result<Matrix> {
    let vars = model.num_variables();
    if vars > cap {
        return Err(CpError::TooLarge { requested: vars, cap });
    }
    let rows: usize = model.dims().iter().product();
    let offsets = variable_offsets(model);
    let order = model.order();
    let mut j = Matrix::zeros(rows, vars);
    let mut idx = vec![0usize; order];
    for row in 0..rows {
        for n in 0..order {
            let s = model.dims()[n];
            for r in 0..model.rank() {
                let prod: f64 = (0..order)
                    .filter(|&m| m != n)
                    .map(|m| model.factor(m).get(idx[m], r))
                    .product();
                j.set(row, offsets[n] + r * s + idx[n], -prod);
            }
        }
        crate::tensor::increment_index(&mut idx, model.dims());
    }
    Ok(j)
}

/// `JᵀJ` from [`explicit_jacobian`]. Test oracle for the implicit product.
pub fn explicit_jtj(model: &KruskalModel, cap: usize) -> Result<Matrix> {
    let j = explicit_jacobian(model, cap)?;
    let mut h = j.t_matmul(&j);
    crate::tensor::symmetrize(&mut h);
    Ok(h)
}

/// Column-major stacking of per-mode matrices, matching [`variable_offsets`].
pub fn vectorize(ms: &[Matrix]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.transpose().into_vec()).collect()
}

/// Inverse of [`vectorize`] for the shapes of `model`.
pub fn unvectorize(model: &KruskalModel, v: &[f64]) -> Vec<Matrix> {
    let rank = model.rank();
    variable_offsets(model)
        .iter()
        .zip(model.dims())
        .map(|(&off, &s)| Matrix::from_fn(s, rank, |k, r| v[off + r * s + k]))
        .collect()
}

/// `(Γ⁽ⁿ'ⁿ⁾ + λ Reg)⁻¹` for every mode.
pub fn build_preconditioner(gammas: &GammaSet, lambda: f64, shape: RegShape) -> Result<Vec<Matrix>> {
    (0..gammas.order())
        .map(|n| {
            let g = gammas.diag(n);
            match shape {
                RegShape::Identity => spd_inverse(g, lambda),
                RegShape::Diagonal => {
                    let mut shifted = g.clone();
                    for r in 0..g.rows() {
                        shifted.set(r, r, g.get(r, r) * (1.0 + lambda));
                    }
                    spd_inverse(&shifted, 0.0)
                }
            }
        })
        .collect()
}

/// Iterates of the inner solver, one matrix per mode.
#[derive(Debug, Clone)]
pub struct CgState {
    pub v: Vec<Matrix>,
    pub residual: Vec<Matrix>,
    pub preconditioned: Vec<Matrix>,
    pub direction: Vec<Matrix>,
    pub product: Vec<Matrix>,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub update: Vec<Matrix>,
    pub iterations: usize,
    /// `Σ‖R⁽ⁿ⁾‖ ≤ ε_cg Σ‖G⁽ⁿ⁾‖` held on exit.
    pub converged: bool,
    pub cap_hit: bool,
    /// `Σ⟨W, Q⟩ ≤ 0` was met; the update is the last iterate.
    pub breakdown: bool,
}

/// Preconditioned CG on `(JᵀJ + λ Reg) vec(V) = −vec(G)`.
pub fn cp_cg(
    model: &KruskalModel,
    gammas: &GammaSet,
    grads: &[Matrix],
    lambda: f64,
    cfg: &GnConfig,
) -> Result<CgOutcome> {
    let shape = cfg.schedule.shape;
    let cap = cfg.cg_cap(model);
    let gnorm = sum_norms(grads);
    let zeros: Vec<Matrix> = grads.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
    if gnorm == 0.0 {
        return Ok(CgOutcome { update: zeros, iterations: 0, converged: true, cap_hit: false, breakdown: false });
    }
    let pinv = build_preconditioner(gammas, lambda, shape)?;
    let apply_pinv = |r: &[Matrix]| -> Vec<Matrix> { r.iter().zip(&pinv).map(|(r, p)| r.matmul(p)).collect() };

    let residual: Vec<Matrix> = grads.iter().map(|g| g.scaled(-1.0)).collect();
    let preconditioned = apply_pinv(&residual);
    let mut st = CgState {
        v: zeros.clone(),
        direction: preconditioned.clone(),
        residual,
        preconditioned,
        product: zeros,
        iterations: 0,
    };
    let mut rz = sum_inner(&st.residual, &st.preconditioned);
    let mut outcome = CgOutcome { update: Vec::new(), iterations: 0, converged: false, cap_hit: false, breakdown: false };
    loop {
        if sum_norms(&st.residual) <= cfg.cg_tol * gnorm {
            outcome.converged = true;
            break;
        }
        if st.iterations >= cap {
            outcome.cap_hit = true;
            break;
        }
        st.product = hessian_matvec(model, gammas, &st.direction, lambda, shape);
        let wq = sum_inner(&st.direction, &st.product);
        if !(wq > 0.0) {
            if !wq.is_finite() {
                return Err(CpError::NumericalFailure("non-finite curvature in CG".into()));
            }
            outcome.breakdown = true;
            break;
        }
        let alpha = rz / wq;
        for n in 0..st.v.len() {
            st.v[n].axpy(alpha, &st.direction[n]);
            st.residual[n].axpy(-alpha, &st.product[n]);
        }
        st.preconditioned = apply_pinv(&st.residual);
        let rz_new = sum_inner(&st.residual, &st.preconditioned);
        let beta = match cfg.beta_rule {
            BetaRule::Standard => rz_new / rz,
            BetaRule::WqDenominator => rz_new / wq,
        };
        for n in 0..st.direction.len() {
            let mut d = st.preconditioned[n].clone();
            d.axpy(beta, &st.direction[n]);
            st.direction[n] = d;
        }
        rz = rz_new;
        st.iterations += 1;
        if !alpha.is_finite() || !beta.is_finite() || st.v.iter().any(|m| !m.is_finite()) {
            return Err(CpError::NumericalFailure(format!("CG diverged at iteration {}", st.iterations)));
        }
    }
    outcome.iterations = st.iterations;
    outcome.update = st.v;
    Ok(outcome)
}

/// Everything Gauss-Newton needs at one point, from one MTTKRP pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub mttkrps: Vec<Matrix>,
    pub gammas: GammaSet,
    pub grads: Vec<Matrix>,
    /// `Σₙ ‖G⁽ⁿ⁾‖_F`.
    pub grad_norm: f64,
    pub fit: ResidualFitness,
}

pub fn evaluate(x: &DenseTensor, model: &KruskalModel, xnorm2: f64, ws: &mut MttkrpWorkspace) -> Result<Evaluation> {
    model.conforms_to(x)?;
    let mttkrps = mttkrp_all(x, model.factors(), ws)?;
    let gammas = GammaSet::build(model);
    let grads = gradient(model, &mttkrps, &gammas);
    let grad_norm = sum_norms(&grads);
    let fit = residual_fitness_refined(model, gammas.grams(), x, xnorm2, mttkrps.last())?;
    Ok(Evaluation { mttkrps, gammas, grads, grad_norm, fit })
}

/// Backtracking on `f(α) = ½‖X − [[A + αV]]‖²` until
/// `f(α) ≤ f(0) + c1 α ⟨∇f, V⟩`. Returns `(α, exhausted)`; on exhaustion
/// `α = shrink^max_backtracks`.
pub fn armijo_search(
    x: &DenseTensor,
    model: &KruskalModel,
    grads: &[Matrix],
    direction: &[Matrix],
    params: &Armijo,
) -> Result<(f64, bool)> {
    let f0 = objective_dense(model, x)?;
    let slope = sum_inner(grads, direction);
    let mut alpha = 1.0;
    for _ in 0..=params.max_backtracks {
        let f = objective_dense(&model.updated(direction, alpha), x)?;
        if f <= f0 + params.c1 * alpha * slope {
            return Ok((alpha, false));
        }
        alpha *= params.shrink;
    }
    Ok((params.shrink.powi(params.max_backtracks as i32), true))
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub lambda: f64,
    pub cg_iters: usize,
    pub cg_converged: bool,
    pub cg_breakdown: bool,
    pub alpha: f64,
    pub armijo_exhausted: bool,
    /// `Σₙ ‖α V⁽ⁿ⁾‖_F`.
    pub step_norm: f64,
}

/// One Gauss-Newton update from a precomputed [`Evaluation`]. The schedule
/// advances once.
pub fn step_from(
    x: &DenseTensor,
    model: &KruskalModel,
    eval: &Evaluation,
    cfg: &GnConfig,
    schedule: &mut RegSchedule,
) -> Result<(KruskalModel, StepDiagnostics)> {
    let lambda = schedule.lambda;
    let mut diag = StepDiagnostics {
        lambda,
        cg_iters: 0,
        cg_converged: true,
        cg_breakdown: false,
        alpha: 0.0,
        armijo_exhausted: false,
        step_norm: 0.0,
    };
    if eval.grad_norm == 0.0 {
        *schedule = schedule.next();
        return Ok((model.clone(), diag));
    }
    let cg_cfg = GnConfig { schedule: schedule.clone(), ..cfg.clone() };
    let cg = cp_cg(model, &eval.gammas, &eval.grads, lambda, &cg_cfg)?;
    diag.cg_iters = cg.iterations;
    diag.cg_converged = cg.converged;
    diag.cg_breakdown = cg.breakdown;
    let (alpha, exhausted) = match &cfg.armijo {
        Some(params) => armijo_search(x, model, &eval.grads, &cg.update, params)?,
        None => (1.0, false),
    };
    diag.alpha = alpha;
    diag.armijo_exhausted = exhausted;
    diag.step_norm = alpha * sum_norms(&cg.update);
    *schedule = schedule.next();
    Ok((model.updated(&cg.update, alpha), diag))
}

/// One Gauss-Newton iteration: MTTKRPs, Γ, gradient, CG, update.
pub fn gn_step(
    x: &DenseTensor,
    model: &KruskalModel,
    ws: &mut MttkrpWorkspace,
    cfg: &GnConfig,
    schedule: &mut RegSchedule,
) -> Result<(KruskalModel, StepDiagnostics)> {
    let eval = evaluate(x, model, x.norm_sq(), ws)?;
    step_from(x, model, &eval, cfg, schedule)
}

/// Iterates Gauss-Newton until a tolerance or the iteration cap is reached.
/// Trace record `k` describes the model after `k` steps.
pub fn gn_optimize(x: &DenseTensor, model: &KruskalModel, cfg: &GnConfig) -> Result<(KruskalModel, ConvergenceReport)> {
    cfg.validate()?;
    model.conforms_to(x)?;
    let xnorm2 = x.norm_sq();
    let mut report = ConvergenceReport::new();
    if cfg.max_iters == 0 {
        return Ok((model.clone(), report));
    }
    let start = Instant::now();
    let mut ws = MttkrpWorkspace::new();
    let mut schedule = cfg.schedule.clone();
    let mut current = model.clone();
    let mut eval = evaluate(x, &current, xnorm2, &mut ws)?;
    if eval.fit.residual < cfg.residual_tol {
        report.status = Status::ConvergedResidual;
        return Ok((current, report));
    }
    for it in 0..cfg.max_iters {
        let (next, diag) = step_from(x, &current, &eval, cfg, &mut schedule)?;
        eval = evaluate(x, &next, xnorm2, &mut ws)?;
        if !eval.fit.residual.is_finite() {
            return Err(CpError::NumericalFailure(format!("non-finite residual at iteration {}", it + 1)));
        }
        current = next;
        report.push(IterationRecord {
            iter: it + 1,
            residual: eval.fit.residual,
            fitness: eval.fit.fitness,
            lambda: diag.lambda,
            cg_iters: diag.cg_iters,
            seconds: start.elapsed().as_secs_f64(),
        });
        if eval.fit.residual < cfg.residual_tol {
            report.status = Status::ConvergedResidual;
            break;
        }
        if cfg.grad_tol > 0.0 && eval.grad_norm <= cfg.grad_tol {
            report.status = Status::ConvergedGradient;
            break;
        }
        if diag.step_norm < cfg.step_tol {
            report.status = Status::ConvergedStep;
            break;
        }
    }
    Ok((current, report))
}
