//! Searches for rank-7 decompositions of the 2×2 matrix-multiplication
//! tensor (Strassen's algorithm) with regularized ALS and with ALS-warmed
//! Gauss-Newton.
//!
//! Usage: cargo run --release --example matmul_strassen [inits] [seed]

use cpkit::generators::{matmul_tensor, strassen_model};
use cpkit::harness::run_matmul_protocol;

fn main() -> cpkit::Result<()> {
    let mut args = std::env::args().skip(1);
    let inits = args.next().map_or(100, |a| a.parse().expect("integer inits"));
    let seed = args.next().map_or(7, |a| a.parse().expect("integer seed"));

    let t = matmul_tensor(2)?;
    let exact = strassen_model().reconstruct()?;
    println!("known rank-7 model reproduces T: {}", exact == t);

    let report = run_matmul_protocol(2, 7, inits, seed)?;
    for arm in &report.arms {
        println!(
            "{:<16} converged {:>3}/{}  best residual {:.3e}",
            arm.arm, arm.converged, arm.num_inits, arm.best_residual
        );
    }
    Ok(())
}
