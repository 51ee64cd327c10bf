//! Posterior summaries: pointwise trajectories with credible intervals,
//! shrinkage probabilities, thresholded loading estimates and DIC.
//!
//! Intervals are equal-tailed and use linear interpolation between order
//! statistics (type 7 in the Hyndman-Fan scheme), so for draws `1..=100` the
//! central 90% interval is `[5.95, 95.05]`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::model::{Dims, LatentStateSet, ObservationMatrix, PosteriorDraws, Variant};
use crate::stats;

/// Mean and central interval of a set of scalar draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSummary {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl IntervalSummary {
    pub fn of(values: impl IntoIterator<Item = f64>, level: f64) -> Self {
        let mut v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self {
                mean: f64::NAN,
                lower: f64::NAN,
                upper: f64::NAN,
            };
        }
        v.sort_by(f64::total_cmp);
        let tail = 0.5 * (1.0 - level);
        Self {
            mean: stats::mean(&v),
            lower: stats::quantile_sorted(&v, tail),
            upper: stats::quantile_sorted(&v, 1.0 - tail),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// A scalar trajectory of the latent state. Indices are 1-based as in the
/// model notation: channels `i = 1..=m`, lags `k = 1..=r` (lag `k - 1`) and
/// TVAR coefficients `j = 1..=p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selector {
    X,
    W,
    Delta(usize),
    Sigma2(usize),
    /// Latent `β_{ikt}`.
    Beta(usize, usize),
    /// Thresholded `b_{ikt}`.
    Loading(usize, usize),
    Alpha(usize, usize),
    /// Thresholded `a_{ijt}`.
    TvVar(usize, usize),
}

impl fmt::Display for Selector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Selector::X => write!(f, "x"),
            Selector::W => write!(f, "w"),
            Selector::Delta(j) => write!(f, "delta[{j}]"),
            Selector::Sigma2(i) => write!(f, "sigma2[{i}]"),
            Selector::Beta(i, k) => write!(f, "beta[{i},{k}]"),
            Selector::Loading(i, k) => write!(f, "b[{i},{k}]"),
            Selector::Alpha(i, j) => write!(f, "alpha[{i},{j}]"),
            Selector::TvVar(i, j) => write!(f, "a[{i},{j}]"),
        }
    }
}

impl FromStr for Selector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::UnknownSelector(s.to_string());
        let s = s.trim();
        let (name, idx) = match s.find('[') {
            Some(open) if s.ends_with(']') => (&s[..open], &s[open + 1..s.len() - 1]),
            Some(_) => return Err(bad()),
            None => (s, ""),
        };
        let idx: Vec<usize> = if idx.is_empty() {
            vec![]
        } else {
            idx.split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<_>>()?
        };
        if idx.contains(&0) {
            return Err(bad());
        }
        Ok(match (name, idx.as_slice()) {
            ("x", []) => Selector::X,
            ("w", []) => Selector::W,
            ("delta", [j]) => Selector::Delta(*j),
            ("sigma2", [i]) => Selector::Sigma2(*i),
            ("beta", [i, k]) => Selector::Beta(*i, *k),
            ("b", [i, k]) => Selector::Loading(*i, *k),
            ("alpha", [i, j]) => Selector::Alpha(*i, *j),
            ("a", [i, j]) => Selector::TvVar(*i, *j),
            _ => return Err(bad()),
        })
    }
}

impl Selector {
    fn check(&self, dims: &Dims, variant: Variant) -> Result<()> {
        let ok = match *self {
            Selector::X | Selector::W => true,
            Selector::Delta(j) => j <= dims.p,
            Selector::Sigma2(i) => i <= dims.m,
            Selector::Beta(i, k) => (2..=dims.m).contains(&i) && k <= dims.r,
            Selector::Loading(i, k) => i <= dims.m && k <= dims.r,
            Selector::Alpha(i, j) | Selector::TvVar(i, j) => {
                variant == Variant::MPlus && i <= dims.m && j <= dims.m
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::UnknownSelector(self.to_string()))
        }
    }

    /// Value at `t` (1-based) in one state.
    pub fn value(&self, s: &LatentStateSet, t: usize) -> f64 {
        let alpha = |i: usize, j: usize| s.tvvar.as_ref().map(|tv| tv.alpha.beta_at(s.dims.alpha_index(i, j), t));
        match *self {
            Selector::X => s.x_at(t as isize),
            Selector::W => s.w_at(t),
            Selector::Delta(j) => s.delta_at(t)[j - 1],
            Selector::Sigma2(i) => s.sigma2_at(i - 1, t),
            Selector::Beta(i, k) => s.loadings.beta_at(s.dims.loading_index(i - 1, k - 1), t),
            Selector::Loading(i, k) => s.loading(i - 1, k - 1, t),
            Selector::Alpha(i, j) => alpha(i - 1, j - 1).unwrap_or(0.0),
            Selector::TvVar(i, j) => s.tvvar_coef(i - 1, j - 1, t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub series: String,
    pub level: f64,
    /// Entry `t - 1` for `t = 1..=T`.
    pub points: Vec<IntervalSummary>,
}

fn require_draws(draws: &PosteriorDraws) -> Result<Dims> {
    draws
        .dims()
        .ok_or_else(|| Error::Domain("posterior draw set is empty".into()))
}

/// Pointwise posterior mean and central `level` interval of a selected
/// scalar trajectory over `t = 1..=T`.
pub fn summarize_trajectories(draws: &PosteriorDraws, which: &str, level: f64) -> Result<TrajectorySummary> {
    let dims = require_draws(draws)?;
    let sel: Selector = which.parse()?;
    sel.check(&dims, draws.config.variant)?;
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Domain(format!("credibility level {level} outside [0, 1]")));
    }
    let points = (1..=dims.t)
        .map(|t| IntervalSummary::of(draws.draws.iter().map(|d| sel.value(&d.state, t)), level))
        .collect();
    Ok(TrajectorySummary {
        series: sel.to_string(),
        level,
        points,
    })
}

/// Values over a grid of processes and times `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessGrid {
    /// Number of rows per process group (`r` for loadings, `m` for TV-VAR).
    pub width: usize,
    pub n_proc: usize,
    pub n_time: usize,
    /// `values[j * n_time + t - 1]`.
    pub values: Vec<f64>,
}

impl ProcessGrid {
    fn new(width: usize, n_proc: usize, n_time: usize) -> Self {
        Self {
            width,
            n_proc,
            n_time,
            values: vec![0.0; n_proc * n_time],
        }
    }

    #[inline]
    pub fn get(&self, j: usize, t: usize) -> f64 {
        self.values[j * self.n_time + t - 1]
    }

    pub fn series(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_time..(j + 1) * self.n_time]
    }

    pub fn time_average(&self, j: usize) -> f64 {
        stats::mean(self.series(j))
    }
}

/// `Pr(s = 1 | y)` for loadings and, for Model M+, TV-VAR coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageProbabilities {
    /// Process `(i - 2) * r + (k - 1)` for channel `i = 2..=m`, lag index `k`.
    pub loadings: ProcessGrid,
    /// Process `(i - 1) * m + (j - 1)`.
    pub tvvar: Option<ProcessGrid>,
}

impl ShrinkageProbabilities {
    /// Loading probability for channel `i` in `2..=m`, `k` in `1..=r`.
    pub fn loading(&self, i: usize, k: usize, t: usize) -> f64 {
        self.loadings.get((i - 2) * self.loadings.width + k - 1, t)
    }
}

fn frequency_grid(draws: &PosteriorDraws, width: usize, pick: impl Fn(&LatentStateSet) -> Option<&crate::model::LtProcessSet>) -> Option<ProcessGrid> {
    let first = pick(&draws.draws.first()?.state)?;
    let n_time = first.n_time - 1;
    let mut g = ProcessGrid::new(width, first.n_proc, n_time);
    for d in &draws.draws {
        let set = pick(&d.state)?;
        for j in 0..set.n_proc {
            for t in 1..=n_time {
                if set.active(j, t) {
                    g.values[j * n_time + t - 1] += 1.0;
                }
            }
        }
    }
    let n = draws.len() as f64;
    g.values.iter_mut().for_each(|v| *v /= n);
    Some(g)
}

/// Draw frequency of `s = 1` for every thresholded coefficient and time.
pub fn shrinkage_probabilities(draws: &PosteriorDraws) -> Result<ShrinkageProbabilities> {
    let dims = require_draws(draws)?;
    let loadings = frequency_grid(draws, dims.r, |s| Some(&s.loadings)).expect("draws are nonempty");
    let tvvar = frequency_grid(draws, dims.m, |s| s.tvvar.as_ref().map(|tv| &tv.alpha));
    Ok(ShrinkageProbabilities { loadings, tvvar })
}

/// `b̂_{ikt} = E[β_{ikt} | y] · I(Pr(s_{ikt} = 1 | y) > 0.5)`, in the same
/// layout as [`ShrinkageProbabilities::loadings`].
pub fn estimated_loadings(draws: &PosteriorDraws) -> Result<ProcessGrid> {
    let probs = shrinkage_probabilities(draws)?;
    let mut out = probs.loadings.clone();
    let n = draws.len() as f64;
    for j in 0..out.n_proc {
        for t in 1..=out.n_time {
            let idx = j * out.n_time + t - 1;
            out.values[idx] = if probs.loadings.values[idx] > 0.5 {
                draws.draws.iter().map(|d| d.state.loadings.beta_at(j, t)).sum::<f64>() / n
            } else {
                0.0
            };
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicReport {
    pub dic: f64,
    /// `D̄`, the posterior mean deviance.
    pub mean_deviance: f64,
    /// Deviance at the plug-in point.
    pub plugin_deviance: f64,
    /// `p_D = D̄ - D̂`.
    pub effective_parameters: f64,
    pub n_draws: usize,
}

/// Deviance information criterion based on the observation density given
/// the latent states. The plug-in deviance uses posterior means of each
/// fitted mean `μ_{it}` and variance `σ²_{it}`.
pub fn compute_dic(draws: &PosteriorDraws, data: &ObservationMatrix) -> Result<DicReport> {
    let dims = require_draws(draws)?;
    if draws.draws.iter().any(|d| !d.loglik.is_finite()) {
        return Err(Error::MissingLikelihood);
    }
    let (m, big_t) = (dims.m, dims.t);
    if data.n_channels() != m || data.n_time() != big_t {
        return Err(Error::Domain("data do not match the posterior draws".into()));
    }
    let n = draws.len() as f64;
    let mean_deviance = draws.draws.iter().map(|d| -2.0 * d.loglik).sum::<f64>() / n;
    let mut mean = vec![0.0; m * big_t];
    let mut var = vec![0.0; m * big_t];
    for d in &draws.draws {
        for t in 1..=big_t {
            for i in 0..m {
                mean[i * big_t + t - 1] += d.state.fitted_mean(data, i, t);
                var[i * big_t + t - 1] += d.state.sigma2_at(i, t);
            }
        }
    }
    let mut plugin = 0.0;
    for t in 1..=big_t {
        for i in 0..m {
            let idx = i * big_t + t - 1;
            plugin -= 2.0 * dist::normal_logpdf(data.get(i, t), mean[idx] / n, var[idx] / n);
        }
    }
    Ok(DicReport {
        dic: 2.0 * mean_deviance - plugin,
        mean_deviance,
        plugin_deviance: plugin,
        effective_parameters: mean_deviance - plugin,
        n_draws: draws.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_priors, Draw, ModelConfig};
    use crate::sampler::initial_state;

    fn tiny() -> (PosteriorDraws, ObservationMatrix) {
        let mut cfg = ModelConfig::eeg_default();
        cfg.channels = 3;
        cfg.tvar_order = 2;
        cfg.factor_lags = 2;
        cfg.anchor_lag = 1;
        let prior = default_priors(&cfg);
        let big_t = 12;
        let values: Vec<f64> = (0..big_t * 3).map(|k| ((k * 7 % 11) as f64 - 5.0) * 0.8).collect();
        let names = vec!["a".into(), "b".into(), "c".into()];
        let data = ObservationMatrix::new(big_t, names, values).unwrap();
        let (state, resolved) = initial_state(&cfg, &prior, &data);
        let ll = state.conditional_loglik(&data);
        let draws = (0..4)
            .map(|s| Draw {
                sweep: s,
                loglik: ll,
                state: state.clone(),
            })
            .collect();
        let pd = PosteriorDraws {
            config: cfg,
            prior,
            resolved,
            channel_names: data.channel_names().to_vec(),
            draws,
            acceptance: Default::default(),
        };
        (pd, data)
    }

    #[test]
    fn hand_computed_interval() {
        let s = IntervalSummary::of((1..=100).map(f64::from), 0.9);
        assert!((s.lower - 5.95).abs() < 1e-12);
        assert!((s.upper - 95.05).abs() < 1e-12);
        assert!((s.mean - 50.5).abs() < 1e-12);
    }

    #[test]
    fn identical_draws_have_zero_width_and_zero_pd() {
        let (pd, data) = tiny();
        let sum = summarize_trajectories(&pd, "x", 0.95).unwrap();
        for (t, pt) in sum.points.iter().enumerate() {
            assert_eq!(pt.lower, pt.upper);
            assert_eq!(pt.mean, pd.draws[0].state.x_at(t as isize + 1));
        }
        let dic = compute_dic(&pd, &data).unwrap();
        assert!(dic.effective_parameters.abs() < 1e-9 * dic.mean_deviance.abs());
        assert!((dic.dic - dic.mean_deviance).abs() < 1e-9 * dic.mean_deviance.abs());
    }

    #[test]
    fn selectors_parse_and_reject() {
        assert_eq!("beta[2, 3]".parse::<Selector>().unwrap(), Selector::Beta(2, 3));
        assert_eq!("delta[1]".parse::<Selector>().unwrap(), Selector::Delta(1));
        for bad in ["y", "delta[0]", "beta[2]", "x[1]", "b[1,2"] {
            assert!(matches!(bad.parse::<Selector>(), Err(Error::UnknownSelector(_))), "{bad}");
        }
        let (pd, _) = tiny();
        assert!(summarize_trajectories(&pd, "alpha[1,1]", 0.9).is_err());
        assert!(summarize_trajectories(&pd, "beta[1,1]", 0.9).is_err());
        assert!(summarize_trajectories(&pd, "delta[3]", 0.9).is_err());
        for sel in ["w", "delta[2]", "sigma2[3]", "beta[3,2]", "b[1,1]"] {
            assert_eq!(summarize_trajectories(&pd, sel, 0.9).unwrap().points.len(), 12);
        }
    }

    #[test]
    fn shrinkage_and_loading_rule() {
        let (mut pd, _) = tiny();
        // Thresholds 0: always active.
        let probs = shrinkage_probabilities(&pd).unwrap();
        assert!(probs.loadings.values.iter().all(|&p| p == 1.0));
        assert_eq!(probs.loadings.values.len(), 2 * 2 * 12);
        // Half the draws active on process 0, all with beta 0.7.
        for (n, d) in pd.draws.iter_mut().enumerate() {
            d.state.loadings.traj_mut(0).fill(0.7);
            d.state.loadings.threshold[0] = if n % 2 == 0 { 0.0 } else { 1.0 };
        }
        let probs = shrinkage_probabilities(&pd).unwrap();
        assert_eq!(probs.loading(2, 1, 5), 0.5);
        let b = estimated_loadings(&pd).unwrap();
        assert_eq!(b.get(0, 5), 0.0);
        for d in pd.draws.iter_mut() {
            d.state.loadings.threshold[0] = 0.0;
        }
        let b = estimated_loadings(&pd).unwrap();
        assert!((b.get(0, 5) - 0.7).abs() < 1e-15);
        // Pr = 0.25 gives zero regardless of the mean.
        pd.draws[1].state.loadings.threshold[0] = 1.0;
        pd.draws[2].state.loadings.threshold[0] = 1.0;
        pd.draws[3].state.loadings.threshold[0] = 1.0;
        assert_eq!(estimated_loadings(&pd).unwrap().get(0, 1), 0.0);
    }

    #[test]
    fn missing_likelihood_is_reported() {
        let (mut pd, data) = tiny();
        pd.draws[2].loglik = f64::NAN;
        assert!(matches!(compute_dic(&pd, &data), Err(Error::MissingLikelihood)));
    }
}
