//! Discount (beta-gamma) volatility: simulated paths for several discount
//! factors, then posterior draws of a variance path from residuals.

use ltfm::dlm::discount_variance_ffbs;
use ltfm::model::VolatilityInit;
use ltfm::simulate::discount_volatility_path;
use ltfm::stats::{mean, quantile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> ltfm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let init = VolatilityInit { n0: 5.0, s0: 1.0 };
    for lambda in [1.0, 0.99, 0.95, 0.8] {
        let path = discount_volatility_path(&mut rng, 200, lambda, init);
        let logs: Vec<f64> = path.iter().map(|v| v.ln()).collect();
        println!(
            "lambda {lambda:.2}: variance range [{:.3}, {:.3}], sd of log variance {:.3}",
            path.iter().cloned().fold(f64::INFINITY, f64::min),
            path.iter().cloned().fold(0.0, f64::max),
            ltfm::stats::variance(&logs).sqrt()
        );
    }

    // Residuals whose variance jumps from 1 to 9 halfway through.
    let z = Normal::new(0.0, 1.0).unwrap();
    let residuals: Vec<f64> = (0..300)
        .map(|t| if t < 150 { 1.0 } else { 3.0 } * z.sample(&mut rng))
        .collect();
    let draws: Vec<Vec<f64>> = (0..400)
        .map(|_| discount_variance_ffbs(&residuals, 0.95, 5.0, 1.0, &mut rng).map(|p| p.variances))
        .collect::<ltfm::Result<_>>()?;
    println!("\nposterior of v_t under lambda = 0.95 (truth 1 then 9):");
    for t in [20, 100, 140, 160, 200, 280] {
        let at: Vec<f64> = draws.iter().map(|d| d[t]).collect();
        println!(
            "  t={t:>3}: mean {:.2}, 90% interval [{:.2}, {:.2}]",
            mean(&at),
            quantile(&at, 0.05),
            quantile(&at, 0.95)
        );
    }
    Ok(())
}
