//! Simulate a small panel from the demonstration setting, fit Model M and
//! report latent-process recovery and dynamic sparsity.

use ltfm::io::parse_config;
use ltfm::sampler::run_mcmc;
use ltfm::simulate::{simulate_dataset, SimulationSpec};
use ltfm::stats::correlation;
use ltfm::summaries::{shrinkage_probabilities, summarize_trajectories};
use ltfm::validate_config;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONFIG: &str = r#"
[model]
channels = 4
tvar_order = 2
factor_lags = 2
anchor_lag = 1
variant = "M"
lambda_w = 0.99
lambda_sigma = 0.99
threshold_k = 3.0

[model.mcmc]
burn_in = 300
draws = 400
seed = 5

[prior.psi_prec]
dof = 100.0
scale = [1e4, 0.0, 0.0, 1e4]
"#;

fn main() -> ltfm::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let spec = SimulationSpec::demo(&cfg.model, 300);
    let truth = simulate_dataset(&cfg.model, &cfg.prior, &spec, &mut ChaCha8Rng::seed_from_u64(5))?;

    let model = validate_config(cfg.model.clone(), cfg.prior.clone(), truth.data.clone())?;
    let draws = run_mcmc(model)?;
    println!("{} draws, acceptance {:?}", draws.len(), draws.acceptance);

    let x = summarize_trajectories(&draws, "x", 0.9)?;
    let fitted: Vec<f64> = x.points.iter().map(|p| p.mean).collect();
    let actual: Vec<f64> = (1..=truth.data.n_time()).map(|t| truth.state.x_at(t as isize)).collect();
    let covered = x.points.iter().zip(&actual).filter(|(p, &a)| p.contains(a)).count();
    println!(
        "x: correlation with truth {:.3}, 90% coverage {:.3}",
        correlation(&fitted, &actual),
        covered as f64 / actual.len() as f64
    );

    let shrink = shrinkage_probabilities(&draws)?;
    let big_t = truth.data.n_time();
    println!("\nPr(b_ikt active), averaged over time, against the true active share:");
    for i in 2..=cfg.model.channels {
        for k in 1..=cfg.model.factor_lags {
            let post = (1..=big_t).map(|t| shrink.loading(i, k, t)).sum::<f64>() / big_t as f64;
            let active = (1..=big_t)
                .filter(|&t| truth.state.loading(i - 1, k - 1, t) != 0.0)
                .count() as f64
                / big_t as f64;
            println!("  channel {i}, lag {}: posterior {post:.2}, truth {active:.2}", k - 1);
        }
    }
    Ok(())
}
