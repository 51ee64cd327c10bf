//! Split a latent TVAR process into quasi-periodic and real components and
//! confirm they add back up to the process.

use ltfm::decomposition::{companion_roots, decompose_state, reconstruction_error};
use ltfm::io::parse_config;
use ltfm::simulate::{ar_coefficients_from_roots, simulate_dataset, DeltaSpec, SimulationSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONFIG: &str = r#"
[model]
channels = 3
tvar_order = 5
factor_lags = 2
anchor_lag = 1
variant = "M"
lambda_w = 0.99
lambda_sigma = 0.99
threshold_k = 3.0

[model.mcmc]
burn_in = 10
draws = 10
seed = 2
"#;

fn main() -> ltfm::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let delta = ar_coefficients_from_roots(&[(0.97, 0.04), (0.9, 0.2)], &[0.6]);
    for z in companion_roots(&delta) {
        println!("root modulus {:.3}, frequency {:.3}", z.norm(), z.arg().abs() / std::f64::consts::TAU);
    }

    let spec = SimulationSpec {
        delta: Some(DeltaSpec::Constant(delta)),
        ..SimulationSpec::demo(&cfg.model, 400)
    };
    let truth = simulate_dataset(&cfg.model, &cfg.prior, &spec, &mut ChaCha8Rng::seed_from_u64(2))?;
    let set = decompose_state(&truth.state)?;
    println!(
        "\nmax |x_t - sum of components| = {:.2e}",
        reconstruction_error(&set, &truth.state.x)
    );

    println!("\n{:>4} {:>8} {:>10} {:>10} {:>8}", "t", "x", "slow", "fast", "real");
    for t in (40..=400).step_by(40) {
        let c = set.at(t);
        println!(
            "{t:>4} {:>8.2} {:>10.2} {:>10.2} {:>8.2}",
            truth.state.x_at(t as isize),
            c.quasi[0].value,
            c.quasi[1].value,
            c.real[0].value
        );
    }
    Ok(())
}
