//! Expected responses of every channel to a one-off shock in the latent
//! process, from the true state of a simulated panel, with evolving and
//! frozen coefficients.

use std::collections::BTreeMap;

use ltfm::impulse::{impulse_response, CoefficientMode, ImpulseRequest};
use ltfm::io::parse_config;
use ltfm::model::Draw;
use ltfm::sampler::initial_state;
use ltfm::simulate::{simulate_dataset, SimulationSpec};
use ltfm::PosteriorDraws;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONFIG: &str = r#"
[model]
channels = 4
tvar_order = 4
factor_lags = 3
anchor_lag = 2
variant = "M"
lambda_w = 0.99
lambda_sigma = 0.99
threshold_k = 3.0

[model.mcmc]
burn_in = 10
draws = 10
seed = 4
"#;

fn main() -> ltfm::Result<()> {
    let cfg = parse_config(CONFIG)?;
    let spec = SimulationSpec::demo(&cfg.model, 300);
    let truth = simulate_dataset(&cfg.model, &cfg.prior, &spec, &mut ChaCha8Rng::seed_from_u64(4))?;
    let as_draws = PosteriorDraws {
        config: cfg.model.clone(),
        prior: cfg.prior.clone(),
        resolved: initial_state(&cfg.model, &cfg.prior, &truth.data).1,
        channel_names: truth.data.channel_names().to_vec(),
        draws: vec![Draw {
            sweep: 0,
            loglik: truth.state.conditional_loglik(&truth.data),
            state: truth.state.clone(),
        }],
        acceptance: BTreeMap::new(),
    };

    for mode in [CoefficientMode::Evolve, CoefficientMode::Frozen] {
        let mut req = ImpulseRequest::new(vec![100, 200], 24);
        req.mode = mode;
        req.replicates = 20;
        let surf = impulse_response(&as_draws, &truth.data, &req)?;
        println!("{mode:?} coefficients, shock {:.2}:", surf.shock);
        for (o, t0) in surf.origins.iter().enumerate() {
            for i in 0..surf.channels {
                let path: Vec<String> = surf.path(o, i)[..10].iter().map(|v| format!("{v:6.2}")).collect();
                println!("  t0={t0:>3} channel {}: {}", i + 1, path.join(" "));
            }
        }
    }
    Ok(())
}
