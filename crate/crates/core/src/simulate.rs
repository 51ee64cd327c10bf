//! Synthetic data from the full generative model with recorded truth.
//!
//! Any component left unspecified in a [`SimulationSpec`] is drawn from the
//! prior. Volatilities use the multiplicative beta-gamma evolution that
//! matches the discount model assumed by the sampler.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{ConfigError, Error, Result};
use crate::model::{
    Dims, LatentStateSet, LtHyperPrior, LtProcessSet, ModelConfig, ObservationMatrix, PriorSpec,
    TvVarState, Variant, VolatilityInit,
};
use crate::threshold;

/// Absolute value beyond which a simulated path counts as explosive.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSpec {
    Constant(Vec<f64>),
    /// Row-major `(T+1) x p`, rows `t = 0..=T`.
    Path(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceSpec {
    Constant(f64),
    /// Values for `t = 1..=T`.
    Path(Vec<f64>),
}

/// Truth for one thresholded AR(1) process. `d = None` draws the threshold
/// from its prior; `beta = None` simulates the trajectory from the AR(1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtTruth {
    pub mu: f64,
    pub phi: f64,
    pub v: f64,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
}

impl LtTruth {
    /// A coefficient that is exactly zero at all times.
    pub fn zero() -> Self {
        Self {
            mu: 0.0,
            phi: 0.0,
            v: 0.0,
            d: Some(0.0),
            beta: None,
        }
    }

    /// A constant, always-active coefficient.
    pub fn constant(value: f64) -> Self {
        Self {
            mu: value,
            phi: 0.0,
            v: 0.0,
            d: Some(0.0),
            beta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationSpec {
    pub n_time: usize,
    #[serde(default)]
    pub delta: Option<DeltaSpec>,
    /// Row-major `p x p`.
    #[serde(default)]
    pub psi: Option<Vec<f64>>,
    #[serde(default)]
    pub w: Option<VarianceSpec>,
    /// One entry per channel; channel 1 must be constant.
    #[serde(default)]
    pub sigma2: Option<Vec<VarianceSpec>>,
    /// `(m-1) * r` processes, channel-major.
    #[serde(default)]
    pub loadings: Option<Vec<LtTruth>>,
    /// `m * m` processes, row-major (Model M+).
    #[serde(default)]
    pub tvvar: Option<Vec<LtTruth>>,
    /// `x_{-p+1}, ..., x_0`.
    #[serde(default)]
    pub x_init: Option<Vec<f64>>,
    #[serde(default)]
    pub y0: Option<Vec<f64>>,
    /// Regeneration attempts when a path explodes (default 10).
    #[serde(default)]
    pub max_attempts: Option<usize>,
}

impl SimulationSpec {
    pub fn from_prior(n_time: usize) -> Self {
        Self {
            n_time,
            ..Default::default()
        }
    }

    /// A stable, moderately persistent setting for demonstrations: constant
    /// TVAR coefficients with quasi-periodic roots at frequencies 0.05, 0.15,
    /// 0.3 and moduli 0.95, 0.85, 0.7 (real roots fill odd orders), a small
    /// random-walk covariance, `w = 25` and `σ² = 20` for every channel.
    /// Loadings and their thresholds are drawn from the prior. For Model M+
    /// the only spill-over is `a_21 = 0.3`, with `y_0 = 0`.
    pub fn demo(config: &ModelConfig, n_time: usize) -> Self {
        let p = config.tvar_order;
        let m = config.channels;
        let (tvvar, y0) = if config.variant == Variant::MPlus {
            let mut a = vec![LtTruth::zero(); m * m];
            if m > 1 {
                a[m] = LtTruth::constant(0.3);
            }
            (Some(a), Some(vec![0.0; m]))
        } else {
            (None, None)
        };
        let pairs = [(0.95, 0.05), (0.85, 0.15), (0.7, 0.3)];
        let n_pairs = (p / 2).min(pairs.len());
        let reals = vec![0.5; p - 2 * n_pairs];
        let delta = ar_coefficients_from_roots(&pairs[..n_pairs], &reals);
        Self {
            n_time,
            delta: Some(DeltaSpec::Constant(delta)),
            psi: Some(crate::model::scaled_identity(p, 1e-8)),
            w: Some(VarianceSpec::Constant(25.0)),
            sigma2: Some(vec![VarianceSpec::Constant(20.0); config.channels]),
            x_init: Some(vec![0.0; p]),
            tvvar,
            y0,
            ..Default::default()
        }
    }
}

/// AR coefficients `δ` whose characteristic roots are the given conjugate
/// pairs `(modulus, frequency)` and real roots.
pub fn ar_coefficients_from_roots(pairs: &[(f64, f64)], reals: &[f64]) -> Vec<f64> {
    // Polynomial coefficients, highest power first, leading 1.
    let mut poly = vec![1.0];
    let mul = |poly: &[f64], factor: &[f64]| {
        let mut out = vec![0.0; poly.len() + factor.len() - 1];
        for (i, a) in poly.iter().enumerate() {
            for (j, b) in factor.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    };
    for &(rho, f) in pairs {
        let c = 2.0 * rho * (std::f64::consts::TAU * f).cos();
        poly = mul(&poly, &[1.0, -c, rho * rho]);
    }
    for &root in reals {
        poly = mul(&poly, &[1.0, -root]);
    }
    poly[1..].iter().map(|c| -c).collect()
}

/// Generated data together with the latent values that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub state: LatentStateSet,
    pub data: ObservationMatrix,
    /// Number of regenerations caused by explosive paths.
    pub regenerations: usize,
}

fn mismatch(what: &'static str, expected: usize, found: usize) -> Error {
    ConfigError::DimensionMismatch {
        what,
        expected,
        found,
    }
    .into()
}

fn variance_path(spec: &VarianceSpec, big_t: usize) -> Result<Vec<f64>> {
    match spec {
        VarianceSpec::Constant(v) => Ok(vec![*v; big_t]),
        VarianceSpec::Path(p) if p.len() == big_t => Ok(p.clone()),
        VarianceSpec::Path(p) => Err(mismatch("variance path", big_t, p.len())),
    }
}

/// Variance path under the discount model: `phi_0 ~ G(n0/2, n0 s0/2)`,
/// `phi_t = phi_{t-1} gamma_t / lambda` with
/// `gamma_t ~ Beta(lambda n_{t-1}/2, (1-lambda) n_{t-1}/2)` and
/// `n_t = lambda n_{t-1} + 1`.
pub fn discount_volatility_path<R: Rng + ?Sized>(
    rng: &mut R,
    n_time: usize,
    lambda: f64,
    init: VolatilityInit,
) -> Vec<f64> {
    let mut n = init.n0;
    let mut prec = dist::gamma(rng, 0.5 * init.n0, 0.5 * init.n0 * init.s0);
    let mut out = Vec::with_capacity(n_time);
    for _ in 0..n_time {
        if lambda < 1.0 {
            let g = dist::beta(rng, 0.5 * lambda * n, 0.5 * (1.0 - lambda) * n);
            prec = prec * g / lambda;
        }
        n = lambda * n + 1.0;
        out.push(1.0 / prec);
    }
    out
}

fn hyper_from_prior<R: Rng + ?Sized>(rng: &mut R, prior: &LtHyperPrior) -> (f64, f64, f64) {
    let mu = prior.mu_normal.mean + prior.mu_normal.variance.sqrt() * dist::std_normal(rng);
    let phi = 2.0 * dist::beta(rng, prior.phi_beta.a, prior.phi_beta.b) - 1.0;
    let v = dist::gamma(rng, prior.v_prec.shape, prior.v_prec.rate).recip().sqrt();
    (mu, phi, v)
}

fn lt_processes<R: Rng + ?Sized>(
    rng: &mut R,
    truths: Option<&[LtTruth]>,
    n_proc: usize,
    n_time: usize,
    prior: &LtHyperPrior,
    k_of: impl Fn(usize) -> f64,
) -> Result<LtProcessSet> {
    if let Some(t) = truths {
        if t.len() != n_proc {
            return Err(mismatch("thresholded processes", n_proc, t.len()));
        }
    }
    let mut set = LtProcessSet::zeros(n_proc, n_time);
    for j in 0..n_proc {
        let truth = truths.map(|t| &t[j]);
        let (mu, phi, v) = match truth {
            Some(t) => (t.mu, t.phi, t.v),
            None => hyper_from_prior(rng, prior),
        };
        let d = match truth.and_then(|t| t.d) {
            Some(d) => d,
            None => rng.random::<f64>() * threshold::threshold_upper(mu, phi, v, k_of(j)),
        };
        let beta = match truth.and_then(|t| t.beta.clone()) {
            Some(b) if b.len() == n_time => b,
            Some(b) => return Err(mismatch("beta trajectory", n_time, b.len())),
            None => threshold::simulate_ar1(rng, n_time, mu, phi, v),
        };
        set.traj_mut(j).copy_from_slice(&beta);
        set.threshold[j] = d;
        set.mu[j] = mu;
        set.phi[j] = phi;
        set.v[j] = v;
    }
    Ok(set)
}

/// Draws one dataset from the generative model of `config.variant`.
pub fn simulate_dataset<R: Rng + ?Sized>(
    config: &ModelConfig,
    prior: &PriorSpec,
    spec: &SimulationSpec,
    rng: &mut R,
) -> Result<TruthRecord> {
    config.validate()?;
    prior.validate(config.tvar_order)?;
    if spec.n_time < 2 {
        return Err(ConfigError::TooSmall {
            what: "number of time points T",
            min: 2,
            value: spec.n_time,
        }
        .into());
    }
    let attempts = spec.max_attempts.unwrap_or(10).max(1);
    for attempt in 0..attempts {
        if let Some((state, data)) = simulate_once(config, prior, spec, rng)? {
            return Ok(TruthRecord {
                state,
                data,
                regenerations: attempt,
            });
        }
    }
    Err(Error::Explosive { attempts })
}

fn simulate_once<R: Rng + ?Sized>(
    config: &ModelConfig,
    prior: &PriorSpec,
    spec: &SimulationSpec,
    rng: &mut R,
) -> Result<Option<(LatentStateSet, ObservationMatrix)>> {
    let big_t = spec.n_time;
    let dims = Dims::of(config, big_t);
    let (m, p, r) = (dims.m, dims.p, dims.r);
    let n_time = big_t + 1;

    let psi = match &spec.psi {
        Some(v) if v.len() == p * p => v.clone(),
        Some(v) => return Err(mismatch("psi", p * p, v.len())),
        None => {
            let scale = DMatrix::from_row_slice(p, p, &prior.psi_prec.scale);
            let u = dist::wishart(rng, prior.psi_prec.dof, &scale)?;
            let psi = dist::spd_inverse(&u).ok_or_else(|| Error::Numerical {
                t: 0,
                what: "Psi^{-1} prior draw is singular".into(),
            })?;
            crate::sampler::row_major(&psi)
        }
    };

    let delta = match &spec.delta {
        Some(DeltaSpec::Constant(d)) if d.len() == p => d.repeat(n_time),
        Some(DeltaSpec::Constant(d)) => return Err(mismatch("delta", p, d.len())),
        Some(DeltaSpec::Path(d)) if d.len() == n_time * p => d.clone(),
        Some(DeltaSpec::Path(d)) => return Err(mismatch("delta path", n_time * p, d.len())),
        None => {
            let mean = DVector::from_row_slice(&prior.delta0.mean);
            let cov0 = DMatrix::from_row_slice(p, p, &prior.delta0.cov);
            let psi_m = DMatrix::from_row_slice(p, p, &psi);
            let mut cur = dist::mvn(rng, &mean, &cov0);
            let zero = DVector::zeros(p);
            let mut out = Vec::with_capacity(n_time * p);
            out.extend(cur.iter());
            for _ in 1..n_time {
                cur += dist::mvn(rng, &zero, &psi_m);
                out.extend(cur.iter());
            }
            out
        }
    };

    let unit = VolatilityInit { n0: 1.0, s0: 1.0 };
    let w = match &spec.w {
        Some(s) => variance_path(s, big_t)?,
        None => discount_volatility_path(rng, big_t, config.lambda_w, prior.w_init.unwrap_or(unit)),
    };

    let mut sigma2 = Vec::with_capacity(m * big_t);
    match &spec.sigma2 {
        Some(list) if list.len() == m => {
            if !matches!(list[0], VarianceSpec::Constant(_)) {
                return Err(ConfigError::Invalid("channel 1 observation variance must be constant".into()).into());
            }
            for s in list {
                sigma2.extend(variance_path(s, big_t)?);
            }
        }
        Some(list) => return Err(mismatch("sigma2 channels", m, list.len())),
        None => {
            let g = prior.sigma1_prec;
            let s1 = 1.0 / dist::gamma(rng, g.shape, g.rate);
            sigma2.extend(std::iter::repeat_n(s1, big_t));
            for _ in 1..m {
                let init = prior.sigma_init.unwrap_or(unit);
                sigma2.extend(discount_volatility_path(rng, big_t, config.lambda_sigma, init));
            }
        }
    }

    let loadings = lt_processes(
        rng,
        spec.loadings.as_deref(),
        (m - 1) * r,
        n_time,
        &prior.loadings,
        |j| config.k_for(j / r + 1, j % r),
    )?;

    let tvvar = if config.variant == Variant::MPlus {
        let alpha = lt_processes(
            rng,
            spec.tvvar.as_deref(),
            m * m,
            n_time,
            &prior.tvvar,
            |_| config.threshold_k,
        )?;
        let y0 = match &spec.y0 {
            Some(y) if y.len() == m => y.clone(),
            Some(y) => return Err(mismatch("y0", m, y.len())),
            None => (0..m)
                .map(|_| prior.y0_variance.unwrap_or(1.0).sqrt() * dist::std_normal(rng))
                .collect(),
        };
        Some(TvVarState { alpha, y0 })
    } else {
        None
    };

    let mut x = vec![0.0; big_t + p];
    match &spec.x_init {
        Some(v) if v.len() == p => x[..p].copy_from_slice(v),
        Some(v) => return Err(mismatch("x_init", p, v.len())),
        None => {
            let sd = prior.x0_variance.unwrap_or(1.0).sqrt();
            for xi in x.iter_mut().take(p) {
                *xi = sd * dist::std_normal(rng);
            }
        }
    }

    let mut state = LatentStateSet {
        dims,
        x,
        delta,
        w,
        sigma2,
        loadings,
        psi,
        tvvar,
    };

    for t in 1..=big_t {
        let pred = (0..p)
            .map(|j| state.delta_at(t)[j] * state.x_at(t as isize - 1 - j as isize))
            .sum::<f64>();
        let xt = pred + state.w_at(t).sqrt() * dist::std_normal(rng);
        if !xt.is_finite() || xt.abs() > OVERFLOW_GUARD {
            return Ok(None);
        }
        state.set_x(t as isize, xt);
    }

    Ok(simulate_observations(&state, rng)?.map(|data| (state, data)))
}

/// Draws observations given every latent quantity in `state` (including
/// `y_0` for Model M+). Returns `None` if a value overflows.
pub fn simulate_observations<R: Rng + ?Sized>(
    state: &LatentStateSet,
    rng: &mut R,
) -> Result<Option<ObservationMatrix>> {
    let (big_t, m) = (state.dims.t, state.dims.m);
    let mut values = Vec::with_capacity(big_t * m);
    let mut prev: Vec<f64> = state.tvvar.as_ref().map(|tv| tv.y0.clone()).unwrap_or_default();
    for t in 1..=big_t {
        let mut row = Vec::with_capacity(m);
        for i in 0..m {
            let mut mean = state.factor_term(i, t);
            if state.tvvar.is_some() {
                let mut acc = 0.0;
                for (j, &y) in prev.iter().enumerate() {
                    let a = state.tvvar_coef(i, j, t);
                    if a != 0.0 {
                        acc += a * y;
                    }
                }
                mean += acc;
            }
            let y = mean + state.sigma2_at(i, t).sqrt() * dist::std_normal(rng);
            if !y.is_finite() || y.abs() > OVERFLOW_GUARD {
                return Ok(None);
            }
            row.push(y);
        }
        values.extend_from_slice(&row);
        prev = row;
    }
    let names = (1..=m).map(|i| format!("ch{i}")).collect();
    Ok(Some(ObservationMatrix::new(big_t, names, values)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_priors, McmcSettings};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(m: usize, p: usize, r: usize, s: usize, variant: Variant) -> ModelConfig {
        ModelConfig {
            channels: m,
            tvar_order: p,
            factor_lags: r,
            anchor_lag: s,
            variant,
            lambda_w: 0.99,
            lambda_sigma: 0.99,
            threshold_k: 3.0,
            k_overrides: vec![],
            mcmc: McmcSettings {
                burn_in: 0,
                draws: 1,
                thin: 1,
                seed: 1,
            },
            tuning: Default::default(),
        }
    }

    #[test]
    fn noiseless_limit_is_a_deterministic_recursion() {
        let cfg = config(3, 2, 2, 1, Variant::M);
        let prior = default_priors(&cfg);
        let big_t = 30;
        let spec = SimulationSpec {
            n_time: big_t,
            delta: Some(DeltaSpec::Constant(vec![1.2, -0.5])),
            psi: Some(vec![0.0; 4]),
            w: Some(VarianceSpec::Constant(0.0)),
            sigma2: Some(vec![VarianceSpec::Constant(0.0); 3]),
            loadings: Some(vec![
                LtTruth::constant(0.5),
                LtTruth::constant(-0.25),
                LtTruth::constant(2.0),
                LtTruth::zero(),
            ]),
            x_init: Some(vec![0.3, 1.0]),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = simulate_dataset(&cfg, &prior, &spec, &mut rng).unwrap();
        let mut x = vec![0.3, 1.0];
        for _ in 0..big_t {
            let n = x.len();
            x.push(1.2 * x[n - 1] - 0.5 * x[n - 2]);
        }
        // x[t + 1] holds x_t.
        for t in 1..=big_t {
            let y = rec.data.row(t);
            assert!((y[0] - x[t + 1]).abs() < 1e-12);
            assert!((y[1] - (0.5 * x[t + 1] - 0.25 * x[t])).abs() < 1e-12);
            assert!((y[2] - 2.0 * x[t + 1]).abs() < 1e-12 * x[t + 1].abs().max(1.0));
        }
    }

    #[test]
    fn same_seed_same_record() {
        let cfg = config(3, 2, 2, 2, Variant::MPlus);
        let prior = default_priors(&cfg);
        let spec = SimulationSpec {
            n_time: 50,
            psi: Some(vec![1e-5, 0.0, 0.0, 1e-5]),
            delta: Some(DeltaSpec::Constant(vec![0.5, -0.2])),
            ..Default::default()
        };
        let a = simulate_dataset(&cfg, &prior, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = simulate_dataset(&cfg, &prior, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.state.w.iter().all(|&w| w > 0.0));
        assert!(a.state.sigma2.iter().all(|&s| s > 0.0));
        assert_eq!(a.data.n_time(), 50);
    }

    #[test]
    fn explosive_paths_are_reported() {
        let cfg = config(2, 1, 1, 1, Variant::M);
        let prior = default_priors(&cfg);
        let spec = SimulationSpec {
            n_time: 400,
            delta: Some(DeltaSpec::Constant(vec![1.5])),
            psi: Some(vec![0.0]),
            w: Some(VarianceSpec::Constant(1.0)),
            max_attempts: Some(3),
            ..Default::default()
        };
        let err = simulate_dataset(&cfg, &prior, &spec, &mut ChaCha8Rng::seed_from_u64(2)).unwrap_err();
        assert!(matches!(err, Error::Explosive { attempts: 3 }));
    }

    #[test]
    fn stationary_variance_matches_yule_walker() {
        let cfg = config(2, 2, 1, 1, Variant::M);
        let prior = default_priors(&cfg);
        let (d1, d2) = (0.6, -0.3);
        let spec = SimulationSpec {
            n_time: 200_000,
            delta: Some(DeltaSpec::Constant(vec![d1, d2])),
            psi: Some(vec![0.0; 4]),
            w: Some(VarianceSpec::Constant(1.0)),
            x_init: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        let rec = simulate_dataset(&cfg, &prior, &spec, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        // Yule-Walker: gamma0 = (1 - d2) / ((1 + d2) ((1 - d2)^2 - d1^2)) for unit innovations.
        let gamma0 = (1.0 - d2) / ((1.0 + d2) * ((1.0 - d2) * (1.0 - d2) - d1 * d1));
        let xs = &rec.state.x[2..];
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((var - gamma0).abs() / gamma0 < 0.05, "{var} vs {gamma0}");
    }

    #[test]
    fn active_fraction_matches_formula_under_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let prior = LtHyperPrior::default();
        let k = 3.0;
        let n_proc = 20_000;
        let n_time = 50;
        let mut active = Vec::with_capacity(n_proc);
        for _ in 0..n_proc {
            let (_, phi, v) = hyper_from_prior(&mut rng, &prior);
            let d = rng.random::<f64>() * threshold::threshold_upper(0.0, phi, v, k);
            let beta = threshold::simulate_ar1(&mut rng, n_time, 0.0, phi, v);
            let frac = beta.iter().filter(|b| b.abs() >= d).count() as f64 / n_time as f64;
            active.push(frac);
        }
        let mean = active.iter().sum::<f64>() / n_proc as f64;
        let sd = (active.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n_proc as f64).sqrt();
        let se = sd / (n_proc as f64).sqrt();
        let expect = threshold::sparsity_probability(k).unwrap();
        assert!((mean - expect).abs() < 3.0 * se, "{mean} vs {expect} (se {se})");
    }

    #[test]
    fn roots_round_trip_through_coefficients() {
        let delta = ar_coefficients_from_roots(&[(0.95, 0.05)], &[0.5]);
        assert_eq!(delta.len(), 3);
        let c = 2.0 * 0.95 * (std::f64::consts::TAU * 0.05).cos();
        assert!((delta[0] - (c + 0.5)).abs() < 1e-15);
        assert!((delta[2] - 0.5 * 0.95 * 0.95).abs() < 1e-15);
        let cfg = config(4, 6, 5, 3, Variant::M);
        let spec = SimulationSpec::demo(&cfg, 300);
        let rec = simulate_dataset(&cfg, &default_priors(&cfg), &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(rec.regenerations, 0);
        assert!(rec.state.x.iter().all(|x| x.abs() < 1e4));
    }

    #[test]
    fn wrong_dimensions_are_rejected() {
        let cfg = config(3, 2, 2, 1, Variant::M);
        let prior = default_priors(&cfg);
        let spec = SimulationSpec {
            n_time: 10,
            loadings: Some(vec![LtTruth::zero(); 3]),
            ..Default::default()
        };
        let err = simulate_dataset(&cfg, &prior, &spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap_err();
        assert!(matches!(err, Error::Config(ConfigError::DimensionMismatch { .. })));
    }
}
