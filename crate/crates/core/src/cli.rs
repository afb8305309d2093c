//! Command-line front end. Options may come from flags or from a JSON file
//! passed with `--config`; flags win. Every run prints its resolved
//! configuration to stderr.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::als::AlsConfig;
use crate::error::{CpError, Result};
use crate::gauss_newton::{Armijo, GnConfig, RegSchedule, RegShape};
use crate::generators::{Family, ProblemSpec};
use crate::harness::{
    bench_matvec, emit_report, run_likelihood_ranks, run_matmul_with, run_trace, selftest_oracles, ExperimentSpec,
    Format, MatmulProtocol, OptimizerSpec,
};

#[derive(Debug, Parser)]
#[command(name = "cpkit", version, about = "CP decomposition experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One problem, one initialization, full convergence trace.
    Trace(Options),
    /// Convergence likelihood over many problems and initializations.
    Likelihood(Options),
    /// ALS and hybrid ALS/Gauss-Newton on the matrix-multiplication tensor.
    Matmul(Options),
    /// Time the implicit Hessian-vector product.
    BenchMatvec(Options),
    /// Check implicit operators against explicit constructions.
    SelftestOracle(Options),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyArg {
    Uniform01,
    Uniform11,
    Gaussian,
    Matmul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Als,
    Gn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegArg {
    Constant,
    Varying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeArg {
    Identity,
    Diagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Options {
    /// JSON file with any of these options (snake_case keys).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
    /// Extents, comma separated; a single value is repeated `order` times.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    /// Rank, or a comma-separated list of ranks.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyArg>,
    /// Matrix size for the matmul family.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg: Option<RegArg>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg_shape: Option<ShapeArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_upper: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_lower: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub armijo: bool,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cg_max_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problems: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inits: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Worker threads; falls back to CPKIT_THREADS, then all cores.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Output file; stdout when absent.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<FormatArg>,
    /// Minimum timing window per measurement, for bench-matvec.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_seconds: Option<f64>,
}

impl Options {
    /// Fills unset fields from the `--config` file, if any.
    pub fn with_config_file(self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let mut base = serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(&path)?)?;
        let over = serde_json::to_value(&self)?;
        match (&mut base, over) {
            (serde_json::Value::Object(b), serde_json::Value::Object(o)) => b.extend(o),
            _ => return Err(CpError::InvalidConfig(format!("{} must hold a JSON object", path.display()))),
        }
        let mut merged: Options = serde_json::from_value(base)?;
        merged.config = Some(path);
        Ok(merged)
    }

    fn family(&self) -> Family {
        match self.family.unwrap_or(FamilyArg::Uniform11) {
            FamilyArg::Uniform01 => Family::UNIFORM_01,
            FamilyArg::Uniform11 => Family::UNIFORM_11,
            FamilyArg::Gaussian => Family::Gaussian,
            FamilyArg::Matmul => Family::Matmul { n: self.n.unwrap_or(2) },
        }
    }

    pub fn resolved_dims(&self) -> Result<Vec<usize>> {
        if let Family::Matmul { n } = self.family() {
            return Ok(vec![n * n; 3]);
        }
        let order = self.order.unwrap_or(3);
        match self.dims.as_deref() {
            None => Ok(vec![4; order]),
            Some([s]) => Ok(vec![*s; order]),
            Some(d) if self.order.is_none_or(|o| o == d.len()) => Ok(d.to_vec()),
            Some(d) => Err(CpError::InvalidConfig(format!("--dims has {} entries but --order is {order}", d.len()))),
        }
    }

    pub fn ranks(&self, default: usize) -> Vec<usize> {
        self.rank.clone().filter(|r| !r.is_empty()).unwrap_or_else(|| vec![default])
    }

    pub fn gn_config(&self) -> GnConfig {
        let shape = match self.reg_shape.unwrap_or(ShapeArg::Identity) {
            ShapeArg::Identity => RegShape::Identity,
            ShapeArg::Diagonal => RegShape::Diagonal,
        };
        let schedule = match self.reg.unwrap_or(RegArg::Varying) {
            RegArg::Constant => RegSchedule::constant(shape, self.lambda.unwrap_or(1e-3)),
            RegArg::Varying => {
                let mut s = RegSchedule::varying(
                    shape,
                    self.lambda_lower.unwrap_or(RegSchedule::DEFAULT_LOWER),
                    self.lambda_upper.unwrap_or(RegSchedule::DEFAULT_UPPER),
                    self.mu.unwrap_or(RegSchedule::DEFAULT_MU),
                );
                if let Some(l) = self.lambda {
                    s.lambda = l;
                }
                s
            }
        };
        let d = GnConfig::default();
        GnConfig {
            residual_tol: self.residual_tol.unwrap_or(d.residual_tol),
            step_tol: self.step_tol.unwrap_or(d.step_tol),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            cg_tol: self.cg_tol.unwrap_or(d.cg_tol),
            cg_max_iters: self.cg_max_iters,
            schedule,
            armijo: self.armijo.then(Armijo::default),
            ..d
        }
    }

    pub fn als_config(&self) -> AlsConfig {
        let d = AlsConfig::default();
        AlsConfig {
            max_sweeps: self.max_iters.unwrap_or(d.max_sweeps),
            residual_tol: self.residual_tol.unwrap_or(d.residual_tol),
            step_tol: self.step_tol.unwrap_or(d.step_tol),
            lambda0: self.lambda.unwrap_or(d.lambda0),
            ..d
        }
    }

    pub fn experiment(&self, rank: usize) -> Result<ExperimentSpec> {
        let optimizer = match self.optimizer.unwrap_or(OptimizerArg::Gn) {
            OptimizerArg::Als => OptimizerSpec::Als(self.als_config()),
            OptimizerArg::Gn => OptimizerSpec::Gn(self.gn_config()),
        };
        let problem = ProblemSpec { family: self.family(), dims: self.resolved_dims()?, rank, seed: 0 };
        let mut spec = ExperimentSpec::new(problem, optimizer, self.seed.unwrap_or(0));
        spec.num_problems = self.problems.unwrap_or(1);
        spec.num_inits = self.inits.unwrap_or(1);
        spec.validate()?;
        Ok(spec)
    }

    /// Matmul protocol with the Gauss-Newton arms adjusted by any of
    /// `--lambda`, `--cg-tol`, `--cg-max-iters`, `--max-iters`.
    pub fn matmul_protocol(&self) -> MatmulProtocol {
        let mut p = MatmulProtocol::default();
        for (_, cfg) in &mut p.hybrid {
            if let Some(l) = self.lambda {
                cfg.schedule.lambda = l;
            }
            if let Some(t) = self.cg_tol {
                cfg.cg_tol = t;
            }
            cfg.cg_max_iters = self.cg_max_iters.or(cfg.cg_max_iters);
            cfg.max_iters = self.max_iters.unwrap_or(cfg.max_iters);
        }
        p
    }

    pub fn threads(&self) -> Option<usize> {
        self.threads.or_else(|| std::env::var("CPKIT_THREADS").ok()?.trim().parse().ok())
    }

    fn format(&self, default: Format) -> Format {
        match self.format {
            Some(FormatArg::Csv) => Format::Csv,
            Some(FormatArg::Json) => Format::Json,
            None => default,
        }
    }
}

fn print_config(command: &str, value: &serde_json::Value) -> Result<()> {
    eprintln!("resolved config ({command}): {}", serde_json::to_string(value)?);
    Ok(())
}

/// Runs a parsed command. Returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    let (name, opts) = match cli.command {
        Command::Trace(o) => ("trace", o),
        Command::Likelihood(o) => ("likelihood", o),
        Command::Matmul(o) => ("matmul", o),
        Command::BenchMatvec(o) => ("bench-matvec", o),
        Command::SelftestOracle(o) => ("selftest-oracle", o),
    };
    let opts = opts.with_config_file()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = opts.threads() {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| CpError::InvalidConfig(e.to_string()))?;
    pool.install(|| dispatch(name, &opts))
}

fn dispatch(name: &str, opts: &Options) -> Result<i32> {
    let out = opts.out.as_deref();
    match name {
        "trace" => {
            let ranks = opts.ranks(2);
            let spec = opts.experiment(ranks[0])?;
            print_config(name, &serde_json::to_value(&spec)?)?;
            emit_report(&run_trace(&spec)?, opts.format(Format::Csv), out)?;
        }
        "likelihood" => {
            let ranks = opts.ranks(3);
            let spec = opts.experiment(ranks[0])?;
            let report = run_likelihood_ranks(&spec, &ranks)?;
            print_config(name, &report.config)?;
            emit_report(&report, opts.format(Format::Json), out)?;
        }
        "matmul" => {
            let n = opts.n.unwrap_or(2);
            let rank = opts.ranks(7)[0];
            let protocol = opts.matmul_protocol();
            let report = run_matmul_with(&protocol, n, rank, opts.inits.unwrap_or(100), opts.seed.unwrap_or(0))?;
            print_config(name, &report.config)?;
            emit_report(&report, opts.format(Format::Json), out)?;
        }
        "bench-matvec" => {
            let dims = opts.resolved_dims()?;
            let min_seconds = opts.min_seconds.unwrap_or(0.05);
            let ranks = opts.ranks(10);
            print_config(name, &serde_json::json!({ "dims": dims, "ranks": ranks, "min_seconds": min_seconds }))?;
            let timings = ranks
                .iter()
                .map(|&r| bench_matvec(&dims, r, opts.seed.unwrap_or(0), min_seconds))
                .collect::<Result<Vec<_>>>()?;
            emit_report(&timings, opts.format(Format::Csv), out)?;
        }
        "selftest-oracle" => {
            let cases = opts.problems.unwrap_or(50);
            let seed = opts.seed.unwrap_or(0);
            print_config(name, &serde_json::json!({ "cases": cases, "seed": seed }))?;
            let checks = selftest_oracles(cases, seed)?;
            emit_report(&checks, opts.format(Format::Csv), out)?;
            if checks.iter().any(|c| !c.passed) {
                return Ok(1);
            }
        }
        _ => unreachable!("unknown command {name}"),
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Options {
        let cli = Cli::try_parse_from(std::iter::once("cpkit").chain(args.iter().copied())).unwrap();
        match cli.command {
            Command::Trace(o) | Command::Likelihood(o) | Command::Matmul(o) | Command::BenchMatvec(o) | Command::SelftestOracle(o) => o,
        }
    }

    #[test]
    fn defaults_resolve_to_documented_values() {
        let o = parse(&["trace"]);
        let gn = o.gn_config();
        assert_eq!(gn.cg_tol, 1e-3);
        assert_eq!(gn.residual_tol, 5e-5);
        assert_eq!(gn.step_tol, 1e-7);
        assert_eq!(gn.max_iters, 500);
        assert_eq!(gn.schedule, RegSchedule::varying_default(RegShape::Identity));
        assert_eq!(o.als_config().max_sweeps, 10_000);
        assert_eq!(o.resolved_dims().unwrap(), vec![4, 4, 4]);
    }

    #[test]
    fn flags_map_onto_configs() {
        let o = parse(&[
            "likelihood", "--order", "4", "--dims", "5", "--rank", "3,5", "--reg", "constant", "--lambda", "1e-5",
            "--reg-shape", "diagonal", "--armijo", "--cg-max-iters", "7",
        ]);
        assert_eq!(o.resolved_dims().unwrap(), vec![5; 4]);
        assert_eq!(o.ranks(1), vec![3, 5]);
        let gn = o.gn_config();
        assert_eq!(gn.schedule, RegSchedule::constant(RegShape::Diagonal, 1e-5));
        assert!(gn.armijo.is_some());
        assert_eq!(gn.cg_max_iters, Some(7));
    }

    #[test]
    fn mismatched_dims_rejected() {
        assert!(parse(&["trace", "--order", "3", "--dims", "2,3"]).resolved_dims().is_err());
        assert_eq!(parse(&["trace", "--dims", "2,3"]).resolved_dims().unwrap(), vec![2, 3]);
    }

    #[test]
    fn matmul_family_dims() {
        let o = parse(&["trace", "--family", "matmul", "--n", "3"]);
        assert_eq!(o.resolved_dims().unwrap(), vec![9, 9, 9]);
    }

    #[test]
    fn config_file_fills_unset_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"rank": [4], "lambda_upper": 0.5, "optimizer": "als", "seed": 3}"#).unwrap();
        let o = parse(&["trace", "--config", path.to_str().unwrap(), "--seed", "9"]).with_config_file().unwrap();
        assert_eq!(o.rank, Some(vec![4]));
        assert_eq!(o.lambda_upper, Some(0.5));
        assert_eq!(o.optimizer, Some(OptimizerArg::Als));
        assert_eq!(o.seed, Some(9));
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"rnak": 4}"#).unwrap();
        assert!(parse(&["trace", "--config", path.to_str().unwrap()]).with_config_file().is_err());
    }
}
