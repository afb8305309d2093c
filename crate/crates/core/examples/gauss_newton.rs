//! Gauss-Newton with implicit CG on the same kind of problem, compared with
//! ALS from the same start.

use cpkit::generators::{random_low_rank, random_model, FactorDistribution, Family, ProblemSpec};
use cpkit::{als_optimize, gn_optimize, AlsConfig, GnConfig};

fn main() -> cpkit::Result<()> {
    let spec = ProblemSpec::new(Family::UNIFORM_11, 3, 30, 8, 5);
    let (_, x) = random_low_rank(&spec)?;
    let init = random_model(x.dims(), 8, FactorDistribution::Gaussian, 6)?;

    let (_, gn) = gn_optimize(&x, &init, &GnConfig::default())?;
    println!("iter  residual    lambda     cg");
    for r in &gn.records {
        println!("{:>4}  {:.3e}  {:.2e}  {:>3}", r.iter, r.residual, r.lambda, r.cg_iters);
    }
    let (_, als) = als_optimize(&x, &init, &AlsConfig::default())?;
    let secs = |r: &cpkit::ConvergenceReport| r.records.last().map_or(0.0, |l| l.seconds);
    println!(
        "gauss-newton: {} in {} iterations ({} CG steps), {:.3}s",
        gn.status.as_str(),
        gn.iterations(),
        gn.total_cg_iters(),
        secs(&gn)
    );
    println!("als:          {} in {} sweeps, {:.3}s", als.status.as_str(), als.iterations(), secs(&als));
    Ok(())
}
