#![allow(dead_code)]

use ltfm::model::{McmcSettings, PriorSpec, Tuning};
use ltfm::sampler::run_mcmc;
use ltfm::simulate::{simulate_dataset, LtTruth, SimulationSpec, TruthRecord};
use ltfm::{validate_config, ModelConfig, ObservationMatrix, PosteriorDraws, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn config(m: usize, p: usize, r: usize, s: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        channels: m,
        tvar_order: p,
        factor_lags: r,
        anchor_lag: s,
        variant,
        lambda_w: 0.99,
        lambda_sigma: 0.99,
        threshold_k: 3.0,
        k_overrides: Vec::new(),
        mcmc: McmcSettings {
            burn_in: 200,
            draws: 300,
            thin: 1,
            seed: 1,
        },
        tuning: Tuning::default(),
    }
}

pub fn with_sweeps(mut cfg: ModelConfig, burn_in: usize, draws: usize, seed: u64) -> ModelConfig {
    cfg.mcmc = McmcSettings {
        burn_in,
        draws,
        thin: 1,
        seed,
    };
    cfg
}

/// Sets the Wishart prior on `Psi^{-1}` to `dof` with scale `c I`, so that
/// `Psi` is near `1 / (dof c)`.
pub fn psi_prior(prior: &mut PriorSpec, p: usize, dof: f64, c: f64) {
    prior.psi_prec.dof = dof;
    prior.psi_prec.scale = (0..p * p).map(|k| if k % (p + 1) == 0 { c } else { 0.0 }).collect();
}

pub fn fit(cfg: &ModelConfig, prior: &PriorSpec, data: &ObservationMatrix) -> PosteriorDraws {
    let model = validate_config(cfg.clone(), prior.clone(), data.clone()).expect("valid model");
    run_mcmc(model).expect("sampler run")
}

pub fn simulate(cfg: &ModelConfig, prior: &PriorSpec, spec: &SimulationSpec, seed: u64) -> TruthRecord {
    simulate_dataset(cfg, prior, spec, &mut ChaCha8Rng::seed_from_u64(seed)).expect("simulation")
}

pub fn constants(values: &[f64]) -> Vec<LtTruth> {
    values
        .iter()
        .map(|&v| if v == 0.0 { LtTruth::zero() } else { LtTruth::constant(v) })
        .collect()
}

/// Posterior mean of `x_t` for `t = 1..=T`.
pub fn posterior_mean_x(draws: &PosteriorDraws) -> Vec<f64> {
    let big_t = draws.dims().expect("draws").t;
    let n = draws.len() as f64;
    (1..=big_t)
        .map(|t| draws.draws.iter().map(|d| d.state.x_at(t as isize)).sum::<f64>() / n)
        .collect()
}
