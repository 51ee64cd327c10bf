//! A latent AR(1) coefficient switched off whenever it falls inside the
//! threshold band.

use ltfm::threshold::{apply_threshold, simulate_ar1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let beta = simulate_ar1(&mut rng, 120, 0.2, 0.97, 0.05);
    for d in [0.0, 0.1, 0.2, 0.35] {
        let lt = apply_threshold(&beta, d);
        let active = lt.s.iter().filter(|&&s| s).count();
        let switches = lt.s.windows(2).filter(|w| w[0] != w[1]).count();
        println!(
            "d = {d:.2}: active {active:>3}/{} time points, {switches} switches",
            lt.s.len()
        );
    }

    let lt = apply_threshold(&beta, 0.2);
    let bar: String = lt.s.iter().map(|&s| if s { '#' } else { '.' }).collect();
    println!("\nactivity at d = 0.20:\n{bar}");
}
