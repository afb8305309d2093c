//! Alternating least squares on an exact rank-5 tensor.

use cpkit::generators::{random_low_rank, random_model, FactorDistribution, Family, ProblemSpec};
use cpkit::{als_optimize, AlsConfig};

fn main() -> cpkit::Result<()> {
    let spec = ProblemSpec::new(Family::UNIFORM_01, 3, 20, 5, 11);
    let (_, x) = random_low_rank(&spec)?;
    let init = random_model(x.dims(), 5, FactorDistribution::UNIFORM_01, 12)?;

    let (_, report) = als_optimize(&x, &init, &AlsConfig::default())?;
    for r in report.records.iter().filter(|r| r.iter.is_power_of_two()) {
        println!("sweep {:>5}  residual {:.3e}  fitness {:.6}", r.iter, r.residual, r.fitness);
    }
    println!("{} after {} sweeps, final residual {:.3e}", report.status.as_str(), report.iterations(), report.final_residual().unwrap_or(f64::NAN));
    Ok(())
}
