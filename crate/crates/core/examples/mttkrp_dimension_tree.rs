//! MTTKRP through the dimension tree: one ALS-style pass over all modes
//! issues two full-tensor contractions, regardless of the tensor order.

use cpkit::generators::{random_model, FactorDistribution};
use cpkit::mttkrp::{mttkrp, mttkrp_naive};
use cpkit::MttkrpWorkspace;

fn main() -> cpkit::Result<()> {
    for order in 3..=5 {
        let dims = vec![8; order];
        let x = random_model(&dims, 4, FactorDistribution::Gaussian, 1)?.reconstruct()?;
        let mut model = random_model(&dims, 3, FactorDistribution::Gaussian, 2)?;
        let mut ws = MttkrpWorkspace::new();
        let mut worst = 0.0f64;
        for n in 0..order {
            let m = mttkrp(&x, model.factors(), n, Some(&mut ws))?;
            worst = worst.max(m.max_abs_diff(&mttkrp_naive(&x, model.factors(), n)?));
            // an ALS update would replace factor n here
            let mut f = model.factor(n).clone();
            f.scale(0.5);
            model.set_factor(n, f)?;
        }
        println!(
            "N={order}: {} full contractions for {order} MTTKRPs, max |tree - naive| = {worst:.1e}",
            ws.full_contractions()
        );
    }
    Ok(())
}
