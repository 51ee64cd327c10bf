//! Domain types shared by every stage of the analysis: observations,
//! model configuration, priors, the latent state of one MCMC draw, and the
//! posterior draw store.
//!
//! Time conventions used throughout the crate:
//!
//! * observations `y_t` exist for `t = 1..=T` and live in row `t-1`;
//! * the latent factor `x_t` is stored for `t = -p+1..=T`;
//! * TVAR coefficients `delta_t` and all thresholded AR(1) processes are
//!   stored for `t = 0..=T` (index `t`);
//! * variances `w_t`, `sigma_it^2` are stored for `t = 1..=T` (index `t-1`).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// `T x m` multivariate series with channel labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationMatrix {
    n_time: usize,
    n_channels: usize,
    values: Vec<f64>,
    channel_names: Vec<String>,
}

impl ObservationMatrix {
    /// Builds a matrix from row-major values (`values[(t-1)*m + i]`).
    pub fn new(
        n_time: usize,
        channel_names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<Self, ConfigError> {
        let n_channels = channel_names.len();
        if n_time < 2 {
            return Err(ConfigError::TooSmall {
                what: "number of time points T",
                min: 2,
                value: n_time,
            });
        }
        if n_channels < 2 {
            return Err(ConfigError::TooSmall {
                what: "number of channels m",
                min: 2,
                value: n_channels,
            });
        }
        if values.len() != n_time * n_channels {
            return Err(ConfigError::DimensionMismatch {
                what: "observation values",
                expected: n_time * n_channels,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(ConfigError::NonFiniteData {
                row: pos / n_channels + 1,
                col: pos % n_channels + 1,
            });
        }
        Ok(Self {
            n_time,
            n_channels,
            values,
            channel_names,
        })
    }

    /// Builds a matrix with generated names `ch1..chm`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ConfigError> {
        let m = rows.first().map_or(0, Vec::len);
        let names = (1..=m).map(|i| format!("ch{i}")).collect();
        let mut values = Vec::with_capacity(rows.len() * m);
        for row in rows {
            if row.len() != m {
                return Err(ConfigError::DimensionMismatch {
                    what: "row length",
                    expected: m,
                    found: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), names, values)
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `y_{it}` with 0-based channel `i` and 1-based time `t`.
    #[inline]
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.values[(t - 1) * self.n_channels + i]
    }

    /// Row `y_t`, `t` in `1..=T`.
    pub fn row(&self, t: usize) -> &[f64] {
        let start = (t - 1) * self.n_channels;
        &self.values[start..start + self.n_channels]
    }

    pub fn channel(&self, i: usize) -> Vec<f64> {
        (1..=self.n_time).map(|t| self.get(i, t)).collect()
    }

    /// Keeps rows `drop+1, drop+1+stride, ...`.
    pub fn subsample(&self, stride: usize, drop_leading: usize) -> Result<Self, ConfigError> {
        if stride == 0 {
            return Err(ConfigError::Invalid("stride must be >= 1".into()));
        }
        let mut values = Vec::new();
        let mut n = 0;
        for t in (drop_leading + 1..=self.n_time).step_by(stride) {
            values.extend_from_slice(self.row(t));
            n += 1;
        }
        Self::new(n, self.channel_names.clone(), values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Dynamic transfer response factor model.
    #[serde(rename = "M")]
    M,
    /// Model M plus a thresholded TV-VAR(1) term `A_t y_{t-1}`.
    #[serde(rename = "M+")]
    MPlus,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::M => "M",
            Variant::MPlus => "M+",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "M" | "m" => Ok(Variant::M),
            "M+" | "m+" | "MPlus" | "mplus" => Ok(Variant::MPlus),
            other => Err(ConfigError::Invalid(format!("unknown variant {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcSettings {
    pub burn_in: usize,
    pub draws: usize,
    #[serde(default = "one")]
    pub thin: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

/// Proposal tuning for the Metropolis steps. Adaptation only runs during
/// burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tuning {
    /// Multiplier on the conditional variance used by the `phi` proposal.
    pub phi_scale: f64,
    /// Sweeps between adaptation updates during burn-in.
    pub adapt_every: usize,
    pub target_low: f64,
    pub target_high: f64,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            phi_scale: 1.0,
            adapt_every: 50,
            target_low: 0.25,
            target_high: 0.6,
        }
    }
}

/// Per-coefficient override of the threshold range multiplier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KOverride {
    /// 1-based channel index (2..=m).
    pub channel: usize,
    /// 1-based lag column (1..=r).
    pub lag: usize,
    pub k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of channels `m`.
    pub channels: usize,
    /// TVAR order `p`.
    pub tvar_order: usize,
    /// Number of factor lags `r`.
    pub factor_lags: usize,
    /// Anchor column `s` in `1..=r`; channel 1 loads `x_{t-s+1}` with unit weight.
    pub anchor_lag: usize,
    pub variant: Variant,
    pub lambda_w: f64,
    pub lambda_sigma: f64,
    /// Threshold prior range multiplier `K`.
    pub threshold_k: f64,
    #[serde(default)]
    pub k_overrides: Vec<KOverride>,
    pub mcmc: McmcSettings,
    #[serde(default)]
    pub tuning: Tuning,
}

impl ModelConfig {
    /// A 19-channel EEG setup: `m=19, p=6, r=5, s=3`, `lambda=0.99`, `K=3`,
    /// 5,000 burn-in sweeps and 20,000 retained draws.
    pub fn eeg_default() -> Self {
        Self {
            channels: 19,
            tvar_order: 6,
            factor_lags: 5,
            anchor_lag: 3,
            variant: Variant::M,
            lambda_w: 0.99,
            lambda_sigma: 0.99,
            threshold_k: 3.0,
            k_overrides: Vec::new(),
            mcmc: McmcSettings {
                burn_in: 5_000,
                draws: 20_000,
                thin: 1,
                seed: 0,
            },
            tuning: Tuning::default(),
        }
    }

    /// Dimension of the companion state used for `x`: `max(p, r)`.
    pub fn state_dim(&self) -> usize {
        self.tvar_order.max(self.factor_lags)
    }

    /// `K` for loading process of 0-based channel `i >= 1`, 0-based lag `k`.
    pub fn k_for(&self, i: usize, k: usize) -> f64 {
        self.k_overrides
            .iter()
            .rev()
            .find(|o| o.channel == i + 1 && o.lag == k + 1)
            .map_or(self.threshold_k, |o| o.k)
    }

    /// Checks the configuration on its own.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (p, r, s) = (self.tvar_order, self.factor_lags, self.anchor_lag);
        if self.channels < 2 {
            return Err(ConfigError::TooSmall {
                what: "number of channels m",
                min: 2,
                value: self.channels,
            });
        }
        if p < 1 {
            return Err(ConfigError::TooSmall {
                what: "TVAR order p",
                min: 1,
                value: p,
            });
        }
        if r < 1 {
            return Err(ConfigError::TooSmall {
                what: "factor lags r",
                min: 1,
                value: r,
            });
        }
        if s < 1 || s > r {
            return Err(ConfigError::AnchorOutOfRange { s, r });
        }
        if r > p + 1 {
            return Err(ConfigError::LagsExceedOrder { r, p });
        }
        for (name, value) in [("lambda_w", self.lambda_w), ("lambda_sigma", self.lambda_sigma)] {
            if !(value > 0.8 && value <= 1.0) {
                return Err(ConfigError::DiscountOutOfRange { name, value });
            }
        }
        if !(self.threshold_k > 0.0 && self.threshold_k.is_finite()) {
            return Err(ConfigError::NonPositiveK(self.threshold_k));
        }
        for o in &self.k_overrides {
            if !(o.k > 0.0 && o.k.is_finite()) {
                return Err(ConfigError::NonPositiveK(o.k));
            }
            if o.channel < 2 || o.channel > self.channels || o.lag < 1 || o.lag > r {
                return Err(ConfigError::Invalid(format!(
                    "K override for channel {} lag {} out of range",
                    o.channel, o.lag
                )));
            }
        }
        if self.mcmc.draws < 1 {
            return Err(ConfigError::Mcmc("draws must be >= 1".into()));
        }
        if self.mcmc.thin < 1 {
            return Err(ConfigError::Mcmc("thin must be >= 1".into()));
        }
        let t = &self.tuning;
        if !(t.phi_scale > 0.0) || t.adapt_every == 0 || !(t.target_low < t.target_high) {
            return Err(ConfigError::Invalid("tuning settings".into()));
        }
        Ok(())
    }
}

/// Gamma distribution in shape-rate form (mean `shape / rate`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPrior {
    pub a: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub variance: f64,
}

/// Wishart `W(dof, scale)` with `E[U] = dof * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WishartPrior {
    pub dof: f64,
    /// Row-major `p x p` scale matrix.
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvNormalPrior {
    pub mean: Vec<f64>,
    /// Row-major covariance.
    pub cov: Vec<f64>,
}

/// Initial degrees of freedom and point estimate for a discount variance
/// sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolatilityInit {
    pub n0: f64,
    pub s0: f64,
}

/// Priors for the hyper-parameters of thresholded AR(1) processes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtHyperPrior {
    /// Gamma prior on `1 / v^2`.
    pub v_prec: GammaPrior,
    /// Beta prior on `(phi + 1) / 2`.
    pub phi_beta: BetaPrior,
    pub mu_normal: NormalPrior,
}

impl Default for LtHyperPrior {
    fn default() -> Self {
        Self {
            v_prec: GammaPrior {
                shape: 50.0,
                rate: 0.01,
            },
            phi_beta: BetaPrior { a: 20.0, b: 1.5 },
            mu_normal: NormalPrior {
                mean: 0.0,
                variance: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Gamma prior on `sigma_1^{-2}`.
    pub sigma1_prec: GammaPrior,
    /// Hyper-priors of the loading processes `beta_ikt`.
    pub loadings: LtHyperPrior,
    /// Hyper-priors of the TV-VAR processes `alpha_ijt` (Model M+).
    pub tvvar: LtHyperPrior,
    /// Wishart prior on `Psi^{-1}`.
    pub psi_prec: WishartPrior,
    /// Variance of the initial latent states; `None` scales it to the data
    /// (`1e6` times the sample variance of channel 1).
    pub x0_variance: Option<f64>,
    pub delta0: MvNormalPrior,
    /// `None` derives `(1, variance of the first 20 residuals)` at start-up.
    pub w_init: Option<VolatilityInit>,
    pub sigma_init: Option<VolatilityInit>,
    /// Variance of the latent `y_0` (Model M+); `None` uses 10 times each
    /// channel's mean square.
    pub y0_variance: Option<f64>,
}

impl PriorSpec {
    /// Default priors, scaled for EEG-like data.
    pub fn default_for(config: &ModelConfig) -> Self {
        let p = config.tvar_order;
        Self {
            sigma1_prec: GammaPrior {
                shape: 500.0,
                rate: 1e4,
            },
            loadings: LtHyperPrior::default(),
            tvvar: LtHyperPrior::default(),
            psi_prec: WishartPrior {
                dof: 100.0,
                scale: scaled_identity(p, 1e-3),
            },
            x0_variance: None,
            delta0: MvNormalPrior {
                mean: vec![0.0; p],
                cov: scaled_identity(p, 1.0),
            },
            w_init: None,
            sigma_init: None,
            y0_variance: None,
        }
    }

    pub fn validate(&self, p: usize) -> Result<(), ConfigError> {
        fn pos(name: &str, value: f64) -> Result<(), ConfigError> {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(ConfigError::NonPositivePrior {
                    name: name.to_string(),
                    value,
                })
            }
        }
        pos("sigma1_prec.shape", self.sigma1_prec.shape)?;
        pos("sigma1_prec.rate", self.sigma1_prec.rate)?;
        for (tag, h) in [("loadings", &self.loadings), ("tvvar", &self.tvvar)] {
            pos(&format!("{tag}.v_prec.shape"), h.v_prec.shape)?;
            pos(&format!("{tag}.v_prec.rate"), h.v_prec.rate)?;
            pos(&format!("{tag}.phi_beta.a"), h.phi_beta.a)?;
            pos(&format!("{tag}.phi_beta.b"), h.phi_beta.b)?;
            pos(&format!("{tag}.mu_normal.variance"), h.mu_normal.variance)?;
            if !h.mu_normal.mean.is_finite() {
                return Err(ConfigError::Invalid(format!("{tag}.mu_normal.mean")));
            }
        }
        pos("psi_prec.dof", self.psi_prec.dof)?;
        if self.psi_prec.dof <= p as f64 - 1.0 {
            return Err(ConfigError::WishartDof {
                dof: self.psi_prec.dof,
                min: p as f64 - 1.0,
            });
        }
        check_len("psi_prec.scale", p * p, self.psi_prec.scale.len())?;
        check_spd("psi_prec.scale", &self.psi_prec.scale, p)?;
        check_len("delta0.mean", p, self.delta0.mean.len())?;
        check_len("delta0.cov", p * p, self.delta0.cov.len())?;
        check_spd("delta0.cov", &self.delta0.cov, p)?;
        if let Some(v) = self.x0_variance {
            pos("x0_variance", v)?;
        }
        if let Some(v) = self.y0_variance {
            pos("y0_variance", v)?;
        }
        for (tag, init) in [("w_init", self.w_init), ("sigma_init", self.sigma_init)] {
            if let Some(init) = init {
                pos(&format!("{tag}.n0"), init.n0)?;
                pos(&format!("{tag}.s0"), init.s0)?;
            }
        }
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), ConfigError> {
    if expected == found {
        Ok(())
    } else {
        Err(ConfigError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

fn check_spd(name: &str, values: &[f64], p: usize) -> Result<(), ConfigError> {
    let m = nalgebra::DMatrix::from_row_slice(p, p, values);
    if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) || m.cholesky().is_none() {
        return Err(ConfigError::NonPositivePrior {
            name: format!("{name} (not symmetric positive definite)"),
            value: f64::NAN,
        });
    }
    Ok(())
}

pub(crate) fn scaled_identity(p: usize, c: f64) -> Vec<f64> {
    let mut v = vec![0.0; p * p];
    for j in 0..p {
        v[j * p + j] = c;
    }
    v
}

/// Default prior settings for `config`.
pub fn default_priors(config: &ModelConfig) -> PriorSpec {
    PriorSpec::default_for(config)
}

/// A configuration, prior and data set that passed [`validate_config`].
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    pub config: ModelConfig,
    pub prior: PriorSpec,
    pub data: ObservationMatrix,
}

/// Checks every invariant and the agreement between config and data.
pub fn validate_config(
    config: ModelConfig,
    prior: PriorSpec,
    data: ObservationMatrix,
) -> Result<ValidatedModel, ConfigError> {
    config.validate()?;
    prior.validate(config.tvar_order)?;
    if data.n_channels() != config.channels {
        return Err(ConfigError::DimensionMismatch {
            what: "channels in data",
            expected: config.channels,
            found: data.n_channels(),
        });
    }
    if let Some(pos) = data.values().iter().position(|v| !v.is_finite()) {
        return Err(ConfigError::NonFiniteData {
            row: pos / data.n_channels() + 1,
            col: pos % data.n_channels() + 1,
        });
    }
    Ok(ValidatedModel {
        config,
        prior,
        data,
    })
}

/// Dimensions of a latent state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub m: usize,
    pub p: usize,
    pub r: usize,
    /// 1-based anchor column.
    pub s: usize,
    pub t: usize,
}

impl Dims {
    pub fn of(config: &ModelConfig, n_time: usize) -> Self {
        Self {
            m: config.channels,
            p: config.tvar_order,
            r: config.factor_lags,
            s: config.anchor_lag,
            t: n_time,
        }
    }

    /// Index of the loading process for 0-based channel `i >= 1`, lag `k`.
    #[inline]
    pub fn loading_index(&self, i: usize, k: usize) -> usize {
        (i - 1) * self.r + k
    }

    #[inline]
    pub fn alpha_index(&self, i: usize, j: usize) -> usize {
        i * self.m + j
    }
}

/// A set of independent latent-threshold AR(1) processes observed over
/// `t = 0..=T`, with per-process thresholds and hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtProcessSet {
    pub n_proc: usize,
    /// `T + 1`.
    pub n_time: usize,
    /// Process-major: `beta[j * n_time + t]`.
    pub beta: Vec<f64>,
    pub threshold: Vec<f64>,
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
    /// Innovation standard deviations.
    pub v: Vec<f64>,
}

impl LtProcessSet {
    pub fn zeros(n_proc: usize, n_time: usize) -> Self {
        Self {
            n_proc,
            n_time,
            beta: vec![0.0; n_proc * n_time],
            threshold: vec![0.0; n_proc],
            mu: vec![0.0; n_proc],
            phi: vec![0.0; n_proc],
            v: vec![1.0; n_proc],
        }
    }

    #[inline]
    pub fn traj(&self, j: usize) -> &[f64] {
        &self.beta[j * self.n_time..(j + 1) * self.n_time]
    }

    #[inline]
    pub fn traj_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.beta[j * self.n_time..(j + 1) * self.n_time]
    }

    #[inline]
    pub fn beta_at(&self, j: usize, t: usize) -> f64 {
        self.beta[j * self.n_time + t]
    }

    /// Indicator `|beta_jt| >= d_j`.
    #[inline]
    pub fn active(&self, j: usize, t: usize) -> bool {
        self.beta_at(j, t).abs() >= self.threshold[j]
    }

    /// Thresholded value `beta_jt * s_jt`.
    #[inline]
    pub fn effective(&self, j: usize, t: usize) -> f64 {
        let b = self.beta_at(j, t);
        if b.abs() >= self.threshold[j] {
            b
        } else {
            0.0
        }
    }

    /// Stationary standard deviation `u = v / sqrt(1 - phi^2)`.
    pub fn stationary_sd(&self, j: usize) -> f64 {
        self.v[j] / (1.0 - self.phi[j] * self.phi[j]).sqrt()
    }
}

/// Model M+ additions: thresholded TV-VAR(1) coefficients and `y_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvVarState {
    /// `m * m` processes; process `i * m + j` is `alpha_{ij}`.
    pub alpha: LtProcessSet,
    pub y0: Vec<f64>,
}

/// One complete configuration of every latent quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentStateSet {
    pub dims: Dims,
    /// `x_t` for `t = -p+1..=T` (`x[t + p - 1]`).
    pub x: Vec<f64>,
    /// `delta_t` for `t = 0..=T`, row-major `(T+1) x p`.
    pub delta: Vec<f64>,
    /// `w_t` for `t = 1..=T`.
    pub w: Vec<f64>,
    /// `sigma_it^2`, channel-major `m x T`; channel 0 is constant.
    pub sigma2: Vec<f64>,
    /// Loading processes for channels `2..=m`, `(m - 1) * r` of them.
    pub loadings: LtProcessSet,
    /// Row-major `p x p`.
    pub psi: Vec<f64>,
    pub tvvar: Option<TvVarState>,
}

impl LatentStateSet {
    #[inline]
    pub fn x_at(&self, t: isize) -> f64 {
        self.x[(t + self.dims.p as isize - 1) as usize]
    }

    #[inline]
    pub fn set_x(&mut self, t: isize, value: f64) {
        let p = self.dims.p as isize;
        self.x[(t + p - 1) as usize] = value;
    }

    #[inline]
    pub fn delta_at(&self, t: usize) -> &[f64] {
        let p = self.dims.p;
        &self.delta[t * p..(t + 1) * p]
    }

    #[inline]
    pub fn w_at(&self, t: usize) -> f64 {
        self.w[t - 1]
    }

    #[inline]
    pub fn sigma2_at(&self, i: usize, t: usize) -> f64 {
        self.sigma2[i * self.dims.t + t - 1]
    }

    pub fn sigma1_sq(&self) -> f64 {
        self.sigma2[0]
    }

    /// Thresholded loading `b_{ikt}`; channel 0 is the fixed anchor row.
    #[inline]
    pub fn loading(&self, i: usize, k: usize, t: usize) -> f64 {
        if i == 0 {
            if k + 1 == self.dims.s {
                1.0
            } else {
                0.0
            }
        } else {
            self.loadings.effective(self.dims.loading_index(i, k), t)
        }
    }

    /// Effective TV-VAR coefficient `a_{ijt}` (zero for Model M).
    #[inline]
    pub fn tvvar_coef(&self, i: usize, j: usize, t: usize) -> f64 {
        match &self.tvvar {
            Some(tv) => tv.alpha.effective(self.dims.alpha_index(i, j), t),
            None => 0.0,
        }
    }

    /// `sum_k b_{ikt} x_{t-k}`.
    pub fn factor_term(&self, i: usize, t: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.dims.r {
            let b = self.loading(i, k, t);
            if b != 0.0 {
                acc += b * self.x_at(t as isize - k as isize);
            }
        }
        acc
    }

    /// `y_{t-1}` as seen by the model: the latent `y_0` at `t = 1`.
    pub fn lagged_obs<'a>(&'a self, data: &'a ObservationMatrix, t: usize) -> Option<&'a [f64]> {
        let tv = self.tvvar.as_ref()?;
        Some(if t == 1 { &tv.y0 } else { data.row(t - 1) })
    }

    /// `[A_t y_{t-1}]_i`, exactly `0.0` for Model M.
    pub fn tvvar_term(&self, data: &ObservationMatrix, i: usize, t: usize) -> f64 {
        let Some(prev) = self.lagged_obs(data, t) else {
            return 0.0;
        };
        let mut acc = 0.0;
        for (j, &y) in prev.iter().enumerate() {
            let a = self.tvvar_coef(i, j, t);
            if a != 0.0 {
                acc += a * y;
            }
        }
        acc
    }

    /// Conditional mean of `y_{it}` given every latent quantity.
    pub fn fitted_mean(&self, data: &ObservationMatrix, i: usize, t: usize) -> f64 {
        self.tvvar_term(data, i, t) + self.factor_term(i, t)
    }

    /// `log p(y | all latent states)`.
    pub fn conditional_loglik(&self, data: &ObservationMatrix) -> f64 {
        let mut ll = 0.0;
        for t in 1..=self.dims.t {
            for i in 0..self.dims.m {
                let mean = self.fitted_mean(data, i, t);
                ll += crate::dist::normal_logpdf(data.get(i, t), mean, self.sigma2_at(i, t));
            }
        }
        ll
    }

    /// TVAR residual `x_t - delta_t' (x_{t-1}, ..., x_{t-p})`.
    pub fn tvar_residual(&self, t: usize) -> f64 {
        let d = self.delta_at(t);
        let mut pred = 0.0;
        for (j, dj) in d.iter().enumerate() {
            pred += dj * self.x_at(t as isize - 1 - j as isize);
        }
        self.x_at(t as isize) - pred
    }
}

/// One retained posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    /// 0-based sweep index after burn-in.
    pub sweep: usize,
    pub loglik: f64,
    pub state: LatentStateSet,
}

/// Data-scaled prior settings fixed at the start of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedPrior {
    pub x0_variance: f64,
    pub w_init: VolatilityInit,
    /// Per channel; entry 0 is unused.
    pub sigma_init: Vec<VolatilityInit>,
    /// Per channel, Model M+ only.
    pub y0_variance: Vec<f64>,
}

/// Posterior sample store: thinned draws plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: ModelConfig,
    pub prior: PriorSpec,
    pub resolved: ResolvedPrior,
    pub channel_names: Vec<String>,
    pub draws: Vec<Draw>,
    /// Acceptance rate per Metropolis-Hastings family.
    pub acceptance: BTreeMap<String, f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn dims(&self) -> Option<Dims> {
        self.draws.first().map(|d| d.state.dims)
    }

    /// Keeps every `k`-th draw.
    pub fn thinned(&self, k: usize) -> Self {
        let mut out = self.clone();
        out.draws = self.draws.iter().step_by(k.max(1)).cloned().collect();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eeg_data(t: usize, m: usize) -> ObservationMatrix {
        let values = (0..t * m).map(|k| (k as f64 * 0.37).sin() * 50.0).collect();
        let names = (1..=m).map(|i| format!("c{i}")).collect();
        ObservationMatrix::new(t, names, values).unwrap()
    }

    #[test]
    fn eeg_configuration_is_valid() {
        let config = ModelConfig::eeg_default();
        let prior = default_priors(&config);
        assert_eq!(
            (config.channels, config.tvar_order, config.factor_lags, config.anchor_lag),
            (19, 6, 5, 3)
        );
        validate_config(config, prior, eeg_data(3000, 19)).unwrap();
    }

    #[test]
    fn single_field_violations_are_named() {
        let base = ModelConfig::eeg_default();
        let prior = default_priors(&base);
        let data = eeg_data(50, 19);

        let mut c = base.clone();
        c.anchor_lag = 6;
        let e = validate_config(c, prior.clone(), data.clone()).unwrap_err();
        assert!(e.to_string().contains("anchor index out of range"), "{e}");

        let mut c = base.clone();
        c.tvar_order = 2;
        let p2 = default_priors(&c);
        let e = validate_config(c, p2, data.clone()).unwrap_err();
        assert!(e.to_string().contains("r exceeds p+1"), "{e}");

        let mut c = base.clone();
        c.channels = 18;
        let e = validate_config(c, prior.clone(), data.clone()).unwrap_err();
        assert!(matches!(e, ConfigError::DimensionMismatch { .. }));

        let mut pr = prior.clone();
        pr.sigma1_prec.rate = 0.0;
        let e = validate_config(base.clone(), pr, data.clone()).unwrap_err();
        assert!(matches!(e, ConfigError::NonPositivePrior { .. }));

        let mut pr = prior.clone();
        pr.psi_prec.dof = 4.0;
        let e = validate_config(base.clone(), pr, data.clone()).unwrap_err();
        assert!(matches!(e, ConfigError::WishartDof { .. }));

        let mut c = base.clone();
        c.lambda_w = 0.5;
        let e = validate_config(c, prior.clone(), data.clone()).unwrap_err();
        assert!(matches!(e, ConfigError::DiscountOutOfRange { .. }));

        let mut c = base;
        c.threshold_k = 0.0;
        let e = validate_config(c, prior, data).unwrap_err();
        assert!(matches!(e, ConfigError::NonPositiveK(_)));
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let e = ObservationMatrix::new(2, vec!["a".into(), "b".into()], vec![1.0, 2.0, f64::NAN, 3.0])
            .unwrap_err();
        assert_eq!(e, ConfigError::NonFiniteData { row: 2, col: 1 });
    }

    #[test]
    fn default_prior_moments() {
        let prior = default_priors(&ModelConfig::eeg_default());
        // E[sigma_1^-2] = 0.05 so the implied scale is about 4.47.
        let mean_prec = prior.sigma1_prec.shape / prior.sigma1_prec.rate;
        assert!((mean_prec.recip().sqrt() - 4.472).abs() < 1e-3);
        let mean_vprec = prior.loadings.v_prec.shape / prior.loadings.v_prec.rate;
        assert_eq!(mean_vprec, 5000.0);
        assert!((mean_vprec.recip().sqrt() - 0.01414).abs() < 1e-4);
        let c = ModelConfig::eeg_default();
        assert_eq!((c.lambda_w, c.lambda_sigma, c.threshold_k), (0.99, 0.99, 3.0));
    }

    #[test]
    fn v_precision_prior_moment_by_monte_carlo() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let prior = default_priors(&ModelConfig::eeg_default()).loadings.v_prec;
        let g = rand_distr::Gamma::new(prior.shape, 1.0 / prior.rate).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let mean: f64 = (0..n).map(|_| g.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 5000.0).abs() / 5000.0 < 0.01, "{mean}");
    }

    #[test]
    fn subsample_keeps_strided_rows() {
        let data = eeg_data(20, 2);
        let sub = data.subsample(6, 2).unwrap();
        assert_eq!(sub.n_time(), 3);
        assert_eq!(sub.row(1), data.row(3));
        assert_eq!(sub.row(2), data.row(9));
        assert_eq!(sub.row(3), data.row(15));
    }
}
