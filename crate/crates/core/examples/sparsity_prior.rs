//! Prior probability that a thresholded coefficient is active, as a function
//! of the threshold scale `K`, checked against Monte Carlo draws.

use ltfm::threshold::{simulate_ar1, sparsity_probability, threshold_upper};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ltfm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (phi, v) = (0.98, 0.1);
    println!("{:>5} {:>10} {:>12}", "K", "formula", "monte carlo");
    for k in [0.5, 1.0, 2.0, 3.0, 4.0, 6.0] {
        let exact = sparsity_probability(k)?;
        let n = 40_000;
        let active = (0..n)
            .filter(|_| {
                let d = rng.random::<f64>() * threshold_upper(0.0, phi, v, k);
                let beta = simulate_ar1(&mut rng, 1, 0.0, phi, v)[0];
                beta.abs() >= d
            })
            .count();
        println!("{k:>5.1} {exact:>10.4} {:>12.4}", active as f64 / n as f64);
    }
    Ok(())
}
