//! Experiment runners: single traces, convergence-likelihood studies, the
//! matrix-multiplication protocol, matvec timing, and report output.
//!
//! Likelihood studies run every `(problem, init)` pair on the current rayon
//! pool and collect results by index, so reports do not depend on the
//! thread count or scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{als_optimize, AlsConfig};
use crate::error::{CpError, Result};
use crate::gauss_newton::{
    explicit_jtj, gn_optimize, gradient, hessian_matvec, vectorize, Armijo, GnConfig, RegSchedule, RegShape,
    EXPLICIT_VARIABLE_CAP,
};
use crate::generators::{derive_seed, random_model, FactorDistribution, Family, ProblemSpec};
use crate::kruskal::{objective_dense, GammaSet, KruskalModel};
use crate::mttkrp::mttkrp_naive;
use crate::report::{ConvergenceReport, Status};
use crate::tensor::{DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Als(AlsConfig),
    Gn(GnConfig),
}

impl OptimizerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Als(_) => "als",
            Self::Gn(_) => "gn",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Als(c) => c.validate(),
            Self::Gn(c) => c.validate(),
        }
    }

    pub fn run(&self, x: &DenseTensor, init: &KruskalModel) -> Result<(KruskalModel, ConvergenceReport)> {
        match self {
            Self::Als(c) => als_optimize(x, init, c),
            Self::Gn(c) => gn_optimize(x, init, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Family, shape and rank of the problems. Its `seed` is not used;
    /// problem `p` is generated from `derive_seed([master_seed, rank, p])`.
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub num_problems: usize,
    pub num_inits: usize,
    pub init_distribution: FactorDistribution,
    pub master_seed: u64,
    /// An init counts as converged when its final relative residual is
    /// below this.
    pub success_tol: f64,
}

impl ExperimentSpec {
    pub fn new(problem: ProblemSpec, optimizer: OptimizerSpec, master_seed: u64) -> Self {
        let success_tol = match &optimizer {
            OptimizerSpec::Als(c) => c.residual_tol,
            OptimizerSpec::Gn(c) => c.residual_tol,
        };
        Self {
            init_distribution: default_init_distribution(problem.family),
            problem,
            optimizer,
            num_problems: 1,
            num_inits: 1,
            master_seed,
            success_tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_problems == 0 || self.num_inits == 0 {
            return Err(CpError::InvalidConfig("num_problems and num_inits must be at least 1".into()));
        }
        self.problem.validate()?;
        self.init_distribution.validate()?;
        self.optimizer.validate()
    }

    pub fn problem_seed(&self, problem: usize) -> u64 {
        derive_seed(&[self.master_seed, self.problem.rank as u64, problem as u64])
    }

    pub fn init_seed(&self, problem: usize, init: usize) -> u64 {
        derive_seed(&[self.master_seed, self.problem.rank as u64, problem as u64, init as u64])
    }

    pub fn instance_problem(&self, problem: usize) -> ProblemSpec {
        ProblemSpec { seed: self.problem_seed(problem), ..self.problem.clone() }
    }

    pub fn instance_init(&self, problem: usize, init: usize) -> Result<KruskalModel> {
        random_model(&self.problem.dims, self.problem.rank, self.init_distribution, self.init_seed(problem, init))
    }

    pub fn with_rank(&self, rank: usize) -> Self {
        let mut s = self.clone();
        s.problem.rank = rank;
        s
    }
}

/// Uniform(0, 1) for positive problem families, standard Gaussian otherwise.
pub fn default_init_distribution(family: Family) -> FactorDistribution {
    match family {
        Family::Uniform { low, .. } if low >= 0.0 => FactorDistribution::UNIFORM_01,
        _ => FactorDistribution::Gaussian,
    }
}

/// Relative residual of `model` against `x`, from a dense reconstruction.
fn dense_residual(model: &KruskalModel, x: &DenseTensor) -> Result<f64> {
    let xnorm = x.norm();
    if xnorm == 0.0 {
        return Err(CpError::ZeroNorm);
    }
    Ok((2.0 * objective_dense(model, x)?).sqrt() / xnorm)
}

/// Runs problem 0, init 0 of `spec` and returns its full trace. Optimizer
/// errors become a `numerical_failure` status.
pub fn run_trace(spec: &ExperimentSpec) -> Result<ConvergenceReport> {
    spec.validate()?;
    let x = spec.instance_problem(0).tensor()?;
    let init = spec.instance_init(0, 0)?;
    let mut report = match spec.optimizer.run(&x, &init) {
        Ok((_, report)) => report,
        Err(_) => ConvergenceReport { status: Status::NumericalFailure, ..ConvergenceReport::new() },
    };
    report.config = Some(serde_json::to_value(spec)?);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRow {
    pub rank: usize,
    pub problem: usize,
    pub init: usize,
    pub status: Status,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: usize,
    pub num_problems: usize,
    /// Converged inits for each problem.
    pub converged_inits: Vec<usize>,
    /// Problems with at least one converged init.
    pub problems_converged: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    pub config: serde_json::Value,
    pub ranks: Vec<RankSummary>,
    pub rows: Vec<InstanceRow>,
}

impl LikelihoodReport {
    pub fn fraction(&self, rank: usize) -> Option<f64> {
        self.ranks.iter().find(|s| s.rank == rank).map(|s| s.fraction)
    }
}

fn run_instance(spec: &ExperimentSpec, x: &DenseTensor, problem: usize, init: usize) -> InstanceRow {
    let outcome = spec
        .instance_init(problem, init)
        .and_then(|m0| spec.optimizer.run(x, &m0))
        .and_then(|(model, report)| {
            let residual = match report.final_residual() {
                Some(r) => r,
                None => dense_residual(&model, x)?,
            };
            Ok((report.status, residual, report.iterations()))
        });
    let (status, residual, iterations) = outcome.unwrap_or((Status::NumericalFailure, f64::NAN, 0));
    InstanceRow {
        rank: spec.problem.rank,
        problem,
        init,
        status,
        residual,
        iterations,
        converged: residual < spec.success_tol,
    }
}

/// Summarizes rows of one rank.
pub fn summarize(rank: usize, num_problems: usize, rows: &[InstanceRow]) -> RankSummary {
    let mut converged_inits = vec![0; num_problems];
    for row in rows.iter().filter(|r| r.rank == rank && r.converged) {
        converged_inits[row.problem] += 1;
    }
    let problems_converged = converged_inits.iter().filter(|&&c| c > 0).count();
    RankSummary {
        rank,
        num_problems,
        converged_inits,
        problems_converged,
        fraction: problems_converged as f64 / num_problems as f64,
    }
}

fn likelihood_rows(spec: &ExperimentSpec) -> Result<Vec<InstanceRow>> {
    spec.validate()?;
    let tensors: Vec<DenseTensor> = (0..spec.num_problems)
        .into_par_iter()
        .map(|p| spec.instance_problem(p).tensor())
        .collect::<Result<_>>()?;
    let inits = spec.num_inits;
    Ok((0..spec.num_problems * inits)
        .into_par_iter()
        .map(|k| run_instance(spec, &tensors[k / inits], k / inits, k % inits))
        .collect())
}

/// `num_problems × num_inits` runs at the rank of `spec.problem`.
pub fn run_likelihood(spec: &ExperimentSpec) -> Result<LikelihoodReport> {
    run_likelihood_ranks(spec, &[spec.problem.rank])
}

/// [`run_likelihood`] repeated for several ranks, one summary per rank.
pub fn run_likelihood_ranks(spec: &ExperimentSpec, ranks: &[usize]) -> Result<LikelihoodReport> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &rank in ranks {
        let s = spec.with_rank(rank);
        let r = likelihood_rows(&s)?;
        summaries.push(summarize(rank, s.num_problems, &r));
        rows.extend(r);
    }
    let mut config = serde_json::to_value(spec)?;
    config["ranks"] = serde_json::to_value(ranks)?;
    Ok(LikelihoodReport { config, ranks: summaries, rows })
}

/// Matrix-multiplication protocol: one pure ALS arm with a decaying `λ`,
/// and hybrid arms that warm-start Gauss-Newton with regularized ALS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatmulProtocol {
    pub als: AlsConfig,
    pub warm_start: AlsConfig,
    /// Gauss-Newton arms, by name, each run from the same warm start.
    pub hybrid: Vec<(String, GnConfig)>,
    pub init_distribution: FactorDistribution,
    pub success_tol: f64,
}

impl Default for MatmulProtocol {
    fn default() -> Self {
        let gn = GnConfig {
            residual_tol: 1e-8,
            step_tol: 0.0,
            max_iters: 500,
            schedule: RegSchedule::constant(RegShape::Identity, 1e-3),
            ..GnConfig::default()
        };
        let armijo = GnConfig { armijo: Some(Armijo::default()), ..gn.clone() };
        Self {
            als: AlsConfig::matmul_decay(),
            warm_start: AlsConfig {
                max_sweeps: 200,
                residual_tol: 1e-8,
                step_tol: 0.0,
                lambda0: 0.01,
                decay_factor: 1.0,
                decay_every: None,
            },
            hybrid: vec![("hybrid_constant".into(), gn), ("hybrid_armijo".into(), armijo)],
            init_distribution: FactorDistribution::Gaussian,
            success_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmRow {
    pub init: usize,
    pub status: Status,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub converged: usize,
    pub num_inits: usize,
    pub best_residual: f64,
    pub rows: Vec<ArmRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatmulReport {
    pub config: serde_json::Value,
    pub arms: Vec<ArmSummary>,
}

impl MatmulReport {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

fn arm_row(init: usize, outcome: Result<(KruskalModel, ConvergenceReport)>, x: &DenseTensor, tol: f64) -> ArmRow {
    let row = outcome.and_then(|(model, report)| {
        let residual = dense_residual(&model, x)?;
        Ok(ArmRow { init, status: report.status, residual, iterations: report.iterations(), converged: residual < tol })
    });
    row.unwrap_or(ArmRow { init, status: Status::NumericalFailure, residual: f64::NAN, iterations: 0, converged: false })
}

fn arm_summary(arm: String, rows: Vec<ArmRow>) -> ArmSummary {
    let best_residual = rows.iter().map(|r| r.residual).filter(|r| r.is_finite()).fold(f64::INFINITY, f64::min);
    ArmSummary { arm, converged: rows.iter().filter(|r| r.converged).count(), num_inits: rows.len(), best_residual, rows }
}

pub fn run_matmul_protocol(n: usize, rank: usize, num_inits: usize, seed: u64) -> Result<MatmulReport> {
    run_matmul_with(&MatmulProtocol::default(), n, rank, num_inits, seed)
}

/// Runs every arm of `protocol` from the same `num_inits` initializations.
/// Residuals are recomputed densely, so they are exact to working
/// precision.
pub fn run_matmul_with(protocol: &MatmulProtocol, n: usize, rank: usize, num_inits: usize, seed: u64) -> Result<MatmulReport> {
    if rank == 0 || num_inits == 0 {
        return Err(CpError::InvalidConfig("rank and num_inits must be positive".into()));
    }
    protocol.als.validate()?;
    protocol.warm_start.validate()?;
    for (_, c) in &protocol.hybrid {
        c.validate()?;
    }
    let spec = ProblemSpec::new(Family::Matmul { n }, 3, n * n, rank, seed);
    let x = spec.tensor()?;
    let init = |i: usize| random_model(&spec.dims, rank, protocol.init_distribution, derive_seed(&[seed, rank as u64, i as u64]));
    let per_init: Vec<(ArmRow, Vec<ArmRow>)> = (0..num_inits)
        .into_par_iter()
        .map(|i| {
            let m0 = match init(i) {
                Ok(m) => m,
                Err(_) => {
                    let failed = arm_row(i, Err(CpError::NumericalFailure("init".into())), &x, protocol.success_tol);
                    return (failed.clone(), vec![failed; protocol.hybrid.len()]);
                }
            };
            let als = arm_row(i, als_optimize(&x, &m0, &protocol.als), &x, protocol.success_tol);
            let warm = als_optimize(&x, &m0, &protocol.warm_start);
            let hybrid = protocol
                .hybrid
                .iter()
                .map(|(_, cfg)| {
                    let out = match &warm {
                        Ok((m, warm_report)) => gn_optimize(&x, m, cfg).map(|(model, mut report)| {
                            report.records.splice(0..0, warm_report.records.iter().cloned());
                            (model, report)
                        }),
                        Err(e) => Err(CpError::NumericalFailure(format!("warm start failed: {e}"))),
                    };
                    arm_row(i, out, &x, protocol.success_tol)
                })
                .collect();
            (als, hybrid)
        })
        .collect();
    let mut arms = vec![arm_summary("als_decay".into(), per_init.iter().map(|(a, _)| a.clone()).collect())];
    for (k, (name, _)) in protocol.hybrid.iter().enumerate() {
        arms.push(arm_summary(name.clone(), per_init.iter().map(|(_, h)| h[k].clone()).collect()));
    }
    let config = serde_json::json!({
        "n": n,
        "rank": rank,
        "num_inits": num_inits,
        "seed": seed,
        "protocol": protocol,
    });
    Ok(MatmulReport { config, arms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatvecTiming {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub calls: usize,
    pub seconds_per_call: f64,
}

/// Times [`hessian_matvec`] on a random model, repeating until at least
/// `min_seconds` have elapsed, and reports the best of three such batches.
pub fn bench_matvec(dims: &[usize], rank: usize, seed: u64, min_seconds: f64) -> Result<MatvecTiming> {
    let model = random_model(dims, rank, FactorDistribution::Gaussian, seed)?;
    let w = random_model(dims, rank, FactorDistribution::Gaussian, seed ^ 1)?.into_factors();
    let gammas = GammaSet::build(&model);
    let mut best = f64::INFINITY;
    let mut calls_used = 0;
    for _ in 0..3 {
        let start = Instant::now();
        let mut calls = 0;
        while calls == 0 || start.elapsed().as_secs_f64() < min_seconds {
            std::hint::black_box(hessian_matvec(&model, &gammas, &w, 1e-3, RegShape::Identity));
            calls += 1;
        }
        let per = start.elapsed().as_secs_f64() / calls as f64;
        if per < best {
            best = per;
            calls_used = calls;
        }
    }
    Ok(MatvecTiming { dims: dims.to_vec(), rank, calls: calls_used, seconds_per_call: best })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// Quick self-check of the implicit operators against explicit
/// constructions on `cases` random models per check.
pub fn selftest_oracles(cases: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    let mut matvec = 0.0f64;
    let mut blocks = 0.0f64;
    let mut grad = 0.0f64;
    for c in 0..cases {
        let order = 2 + c % 3;
        let s = 2 + c % 3;
        let rank = 1 + c % 3;
        let dims = vec![s; order];
        let cs = derive_seed(&[seed, c as u64]);
        let model = random_model(&dims, rank, FactorDistribution::Gaussian, cs)?;
        let w = random_model(&dims, rank, FactorDistribution::Gaussian, cs ^ 1)?.into_factors();
        let gammas = GammaSet::build(&model);
        let h = explicit_jtj(&model, EXPLICIT_VARIABLE_CAP)?;
        let vw = vectorize(&w);
        let dense: Vec<f64> = (0..h.rows()).map(|i| h.row(i).iter().zip(&vw).map(|(a, b)| a * b).sum()).collect();
        matvec = matvec.max(rel_err(&vectorize(&hessian_matvec(&model, &gammas, &w, 0.0, RegShape::Identity)), &dense));

        let mut off = 0;
        for n in 0..order {
            let g = gammas.diag(n);
            for r in 0..rank {
                for z in 0..rank {
                    for k in 0..s {
                        for l in 0..s {
                            let want = if k == l { g.get(r, z) } else { 0.0 };
                            blocks = blocks.max((h.get(off + r * s + k, off + z * s + l) - want).abs());
                        }
                    }
                }
            }
            off += s * rank;
        }

        let x = random_model(&dims, rank, FactorDistribution::Gaussian, cs ^ 2)?.reconstruct()?;
        let ms: Vec<Matrix> = (0..order).map(|n| mttkrp_naive(&x, model.factors(), n)).collect::<Result<_>>()?;
        let g = vectorize(&gradient(&model, &ms, &gammas));
        let step = 1e-5;
        let mut fd = Vec::with_capacity(g.len());
        for n in 0..order {
            for r in 0..rank {
                for k in 0..s {
                    let f = |d: f64| -> Result<f64> {
                        let mut m = model.clone();
                        let mut a = m.factor(n).clone();
                        a.set(k, r, a.get(k, r) + d);
                        m.set_factor(n, a)?;
                        objective_dense(&m, &x)
                    };
                    fd.push((f(step)? - f(-step)?) / (2.0 * step));
                }
            }
        }
        grad = grad.max(rel_err(&g, &fd));
    }
    let check = |name: &str, max_error: f64, tolerance: f64| OracleCheck {
        name: name.into(),
        cases,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    };
    Ok(vec![
        check("implicit_matvec_vs_explicit_jtj", matvec, 1e-12),
        check("diagonal_blocks_kronecker", blocks, 1e-12),
        check("gradient_vs_finite_differences", grad, 1e-6),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

/// Reports that can be written as CSV or JSON.
pub trait Emit: Serialize {
    fn write_csv(&self, w: &mut dyn Write) -> Result<()>;
}

impl Emit for ConvergenceReport {
    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "iter,residual,fitness,lambda,cg_iters,seconds")?;
        for r in &self.records {
            writeln!(w, "{},{:e},{:e},{:e},{},{:e}", r.iter, r.residual, r.fitness, r.lambda, r.cg_iters, r.seconds)?;
        }
        Ok(())
    }
}

impl Emit for LikelihoodReport {
    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "rank,problem,init,status,residual,iterations,converged")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:e},{},{}",
                r.rank,
                r.problem,
                r.init,
                r.status.as_str(),
                r.residual,
                r.iterations,
                r.converged
            )?;
        }
        Ok(())
    }
}

impl Emit for MatmulReport {
    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "arm,init,status,residual,iterations,converged")?;
        for a in &self.arms {
            for r in &a.rows {
                writeln!(w, "{},{},{},{:e},{},{}", a.arm, r.init, r.status.as_str(), r.residual, r.iterations, r.converged)?;
            }
        }
        Ok(())
    }
}

impl Emit for Vec<OracleCheck> {
    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "name,cases,max_error,tolerance,passed")?;
        for c in self {
            writeln!(w, "{},{},{:e},{:e},{}", c.name, c.cases, c.max_error, c.tolerance, c.passed)?;
        }
        Ok(())
    }
}

impl Emit for Vec<MatvecTiming> {
    fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "dims,rank,calls,seconds_per_call")?;
        for t in self {
            let dims: Vec<String> = t.dims.iter().map(usize::to_string).collect();
            writeln!(w, "{},{},{},{:e}", dims.join("x"), t.rank, t.calls, t.seconds_per_call)?;
        }
        Ok(())
    }
}

pub fn write_report<R: Emit + ?Sized>(report: &R, format: Format, w: &mut dyn Write) -> Result<()> {
    match format {
        Format::Csv => report.write_csv(w)?,
        Format::Json => {
            serde_json::to_writer_pretty(&mut *w, report)?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `report` to `path`, or to stdout when `path` is `None`.
pub fn emit_report<R: Emit + ?Sized>(report: &R, format: Format, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_report(report, format, &mut BufWriter::new(File::create(p)?)),
        None => write_report(report, format, &mut std::io::stdout().lock()),
    }
}
