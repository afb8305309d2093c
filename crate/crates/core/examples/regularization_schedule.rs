//! The oscillating damping schedule, and how its variants fare on a
//! moderately hard problem.

use cpkit::generators::{random_low_rank, random_model, FactorDistribution, Family, ProblemSpec};
use cpkit::{gn_optimize, Armijo, GnConfig, RegSchedule, RegShape};

fn main() -> cpkit::Result<()> {
    let mut s = RegSchedule::varying(RegShape::Identity, 1e-3, 1e-2, 2.0);
    let lambdas: Vec<String> = (0..12)
        .map(|_| {
            s = s.next();
            format!("{:.2e}", s.lambda)
        })
        .collect();
    println!("varying schedule: {}", lambdas.join(" "));

    let (_, x) = random_low_rank(&ProblemSpec::new(Family::UNIFORM_11, 3, 4, 6, 3))?;
    let variants = [
        ("varying identity", RegSchedule::varying_default(RegShape::Identity), None),
        ("varying diagonal", RegSchedule::varying_default(RegShape::Diagonal), None),
        ("constant 1e-3", RegSchedule::constant(RegShape::Identity, 1e-3), None),
        ("constant 1e-5", RegSchedule::constant(RegShape::Identity, 1e-5), None),
        ("constant 1e-3 + armijo", RegSchedule::constant(RegShape::Identity, 1e-3), Some(Armijo::default())),
    ];
    for (name, schedule, armijo) in variants {
        let mut converged = 0;
        for seed in 0..10 {
            let init = random_model(x.dims(), 6, FactorDistribution::Gaussian, seed)?;
            let cfg = GnConfig { schedule: schedule.clone(), armijo, ..GnConfig::default() };
            if gn_optimize(&x, &init, &cfg)?.1.status == cpkit::Status::ConvergedResidual {
                converged += 1;
            }
        }
        println!("{name:<24} {converged}/10 inits converged");
    }
    Ok(())
}
