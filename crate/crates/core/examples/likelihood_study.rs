//! Convergence likelihood of ALS and Gauss-Newton on exact low-rank
//! 4×4×4 problems with signed uniform factors.
//!
//! Usage: cargo run --release --example likelihood_study [problems] [inits]

use cpkit::generators::{Family, ProblemSpec};
use cpkit::harness::{run_likelihood_ranks, ExperimentSpec, OptimizerSpec};
use cpkit::{AlsConfig, GnConfig};

fn main() -> cpkit::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let problems = args.next().unwrap_or(30);
    let inits = args.next().unwrap_or(5);
    let ranks = [3, 5, 6, 7, 9];
    let problem = ProblemSpec::new(Family::UNIFORM_11, 3, 4, ranks[0], 0);

    println!("rank  als    gn");
    let mut fractions = Vec::new();
    for optimizer in [OptimizerSpec::Als(AlsConfig::default()), OptimizerSpec::Gn(GnConfig::default())] {
        let mut spec = ExperimentSpec::new(problem.clone(), optimizer, 2024);
        spec.num_problems = problems;
        spec.num_inits = inits;
        fractions.push(run_likelihood_ranks(&spec, &ranks)?);
    }
    for &rank in &ranks {
        println!(
            "{rank:>4}  {:.3}  {:.3}",
            fractions[0].fraction(rank).unwrap_or(0.0),
            fractions[1].fraction(rank).unwrap_or(0.0)
        );
    }
    Ok(())
}
