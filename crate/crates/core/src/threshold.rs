//! Latent threshold AR(1) processes: thresholding, the structured
//! threshold prior, and the MCMC updates local to one coefficient process.
//!
//! A process `beta_t` (`t = 0..=T`) follows a stationary AR(1) with mean
//! `mu`, persistence `phi` and innovation sd `v`; the effective coefficient
//! is `b_t = beta_t * I(|beta_t| >= d)` and the threshold has prior
//! `d ~ U(0, |mu| + K u)` with `u = v / sqrt(1 - phi^2)`.

use rand::Rng;

use crate::dist;
use crate::error::{Error, Result};
use crate::model::LtHyperPrior;

/// Prior probability that a coefficient is active, `Pr(|beta_t| >= d)`,
/// marginal over the threshold prior:
/// `2 - 2 Phi(K) - 2 phi(K) / K + sqrt(2 / pi) / K`.
///
/// The value does not depend on `phi` or `v`. It is exact for `mu = 0`;
/// a nonzero `mu` raises the active probability.
pub fn sparsity_probability(k: f64) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::Domain(format!("K must be positive and finite, got {k}")));
    }
    let tail = 2.0 * dist::norm_sf(k);
    let value = tail - 2.0 * dist::norm_pdf(k) / k + (2.0 / std::f64::consts::PI).sqrt() / k;
    Ok(value)
}

/// Parameters of one thresholded AR(1) process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LtAr1Params {
    pub mu: f64,
    pub phi: f64,
    pub v: f64,
    pub d: f64,
    pub k: f64,
}

impl LtAr1Params {
    pub fn stationary_sd(&self) -> f64 {
        self.v / (1.0 - self.phi * self.phi).sqrt()
    }

    /// Upper end of the threshold prior support.
    pub fn threshold_upper(&self) -> f64 {
        threshold_upper(self.mu, self.phi, self.v, self.k)
    }
}

#[inline]
pub fn threshold_upper(mu: f64, phi: f64, v: f64, k: f64) -> f64 {
    mu.abs() + k * v / (1.0 - phi * phi).sqrt()
}

/// Log of the threshold prior density at `d`, viewed as a function of the
/// hyper-parameters.
#[inline]
fn ln_threshold_factor(d: f64, mu: f64, phi: f64, v: f64, k: f64) -> f64 {
    let upper = threshold_upper(mu, phi, v, k);
    if d < upper {
        -upper.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// A thresholded trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LtTrajectory {
    pub beta: Vec<f64>,
    pub s: Vec<bool>,
    pub b: Vec<f64>,
}

#[inline]
pub fn threshold_value(beta: f64, d: f64) -> f64 {
    if beta.abs() >= d {
        beta
    } else {
        0.0
    }
}

pub fn apply_threshold(beta: &[f64], d: f64) -> LtTrajectory {
    let s: Vec<bool> = beta.iter().map(|b| b.abs() >= d).collect();
    let b = beta.iter().map(|&x| threshold_value(x, d)).collect();
    LtTrajectory {
        beta: beta.to_vec(),
        s,
        b,
    }
}

/// Conditional prior of `beta_t` given its neighbours, for `t = 0..=T`
/// on a trajectory of length `T + 1`. Returns `(mean, variance)`.
pub fn ar1_neighbor_conditional(
    traj: &[f64],
    t: usize,
    mu: f64,
    phi: f64,
    v: f64,
) -> (f64, f64) {
    let last = traj.len() - 1;
    let v2 = v * v;
    if last == 0 {
        (mu, v2 / (1.0 - phi * phi))
    } else if t == 0 {
        (mu + phi * (traj[1] - mu), v2)
    } else if t == last {
        (mu + phi * (traj[t - 1] - mu), v2)
    } else {
        let denom = 1.0 + phi * phi;
        (
            mu + phi * ((traj[t - 1] - mu) + (traj[t + 1] - mu)) / denom,
            v2 / denom,
        )
    }
}

/// Scalar observation `target = f' b + N(0, var)` informing a block of
/// coefficients at one time point.
#[derive(Debug, Clone, Copy)]
pub struct PointObservation<'a> {
    pub regressors: &'a [f64],
    pub target: f64,
    pub var: f64,
}

impl PointObservation<'_> {
    #[inline]
    fn loglik(&self, coef: impl Iterator<Item = f64>) -> f64 {
        let fit: f64 = coef.zip(self.regressors).map(|(c, f)| c * f).sum();
        let e = self.target - fit;
        -0.5 * e * e / self.var
    }
}

/// One Metropolis-within-Gibbs update of a block of coefficients sharing a
/// time point. The proposal is the exact conditional with every indicator
/// forced to 1; the acceptance ratio corrects for the thresholded
/// likelihood. Without an observation the update is an exact prior draw.
/// Returns whether the proposal was accepted.
pub fn sample_lt_point<R: Rng + ?Sized>(
    rng: &mut R,
    beta: &mut [f64],
    prior_mean: &[f64],
    prior_var: &[f64],
    thresholds: &[f64],
    obs: Option<PointObservation<'_>>,
) -> bool {
    let n = beta.len();
    let Some(obs) = obs else {
        for j in 0..n {
            beta[j] = prior_mean[j] + prior_var[j].sqrt() * dist::std_normal(rng);
        }
        return true;
    };
    // Exact Gaussian draw by perturbing a prior draw toward the data.
    let mut prop = vec![0.0; n];
    let mut fu = 0.0;
    let mut q = obs.var;
    for j in 0..n {
        prop[j] = prior_mean[j] + prior_var[j].sqrt() * dist::std_normal(rng);
        fu += obs.regressors[j] * prop[j];
        q += obs.regressors[j] * obs.regressors[j] * prior_var[j];
    }
    let eps = obs.var.sqrt() * dist::std_normal(rng);
    let scale = (obs.target - fu - eps) / q;
    for j in 0..n {
        prop[j] += prior_var[j] * obs.regressors[j] * scale;
    }
    let lt = |b: &[f64]| {
        obs.loglik(b.iter().zip(thresholds).map(|(&x, &d)| threshold_value(x, d)))
            - obs.loglik(b.iter().copied())
    };
    let log_ratio = lt(&prop) - lt(beta);
    if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
        beta.copy_from_slice(&prop);
        true
    } else {
        false
    }
}

/// Independence Metropolis-Hastings update of a threshold with the prior
/// `U(0, upper)` as proposal. `log_lik_ratio(d_new)` returns
/// `log L(d_new) - log L(d_current)`.
pub fn sample_threshold<R: Rng + ?Sized>(
    rng: &mut R,
    current: f64,
    upper: f64,
    mut log_lik_ratio: impl FnMut(f64) -> f64,
) -> (f64, bool) {
    let proposal = rng.random::<f64>() * upper;
    let lr = log_lik_ratio(proposal);
    if lr >= 0.0 || rng.random::<f64>().ln() < lr {
        (proposal, true)
    } else {
        (current, false)
    }
}

/// Change in Gaussian log-likelihood when the coefficient on `regressor`
/// changes by `delta_coef`, given the current residual.
#[inline]
pub fn residual_loglik_delta(residual: f64, regressor: f64, delta_coef: f64, var: f64) -> f64 {
    if delta_coef == 0.0 {
        return 0.0;
    }
    let e_new = residual - delta_coef * regressor;
    -0.5 * (e_new * e_new - residual * residual) / var
}

/// Conjugate normal conditional of `mu` given a trajectory, ignoring the
/// threshold prior. Returns `(mean, variance)`.
pub fn mu_conditional(traj: &[f64], phi: f64, v: f64, prior: &LtHyperPrior) -> (f64, f64) {
    let (m0, s02) = (prior.mu_normal.mean, prior.mu_normal.variance);
    let mut prec = 1.0 / s02;
    let mut num = m0 / s02;
    if let Some(&b0) = traj.first() {
        let v2 = v * v;
        let w0 = (1.0 - phi * phi) / v2;
        prec += w0;
        num += b0 * w0;
        let n = (traj.len() - 1) as f64;
        let c = 1.0 - phi;
        prec += n * c * c / v2;
        let s: f64 = traj.windows(2).map(|w| w[1] - phi * w[0]).sum();
        num += c * s / v2;
    }
    (num / prec, 1.0 / prec)
}

/// Shape and rate of the conjugate gamma conditional of `1/v^2`.
pub fn v_prec_conditional(traj: &[f64], mu: f64, phi: f64, prior: &LtHyperPrior) -> (f64, f64) {
    let mut shape = prior.v_prec.shape;
    let mut rate = prior.v_prec.rate;
    if let Some(&b0) = traj.first() {
        let z0 = b0 - mu;
        let mut ss = (1.0 - phi * phi) * z0 * z0;
        for w in traj.windows(2) {
            let e = (w[1] - mu) - phi * (w[0] - mu);
            ss += e * e;
        }
        shape += 0.5 * traj.len() as f64;
        rate += 0.5 * ss;
    }
    (shape, rate)
}

/// Log conditional density of `phi` up to a constant.
fn phi_log_target(
    traj: &[f64],
    phi: f64,
    mu: f64,
    v: f64,
    d: f64,
    k: f64,
    prior: &LtHyperPrior,
) -> f64 {
    if phi.abs() >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let mut lt = dist::beta_logpdf(0.5 * (phi + 1.0), prior.phi_beta.a, prior.phi_beta.b)
        + ln_threshold_factor(d, mu, phi, v, k);
    if let Some(&b0) = traj.first() {
        let v2 = v * v;
        let z0 = b0 - mu;
        let one_m = 1.0 - phi * phi;
        lt += 0.5 * one_m.ln() - 0.5 * one_m * z0 * z0 / v2;
        for w in traj.windows(2) {
            let e = (w[1] - mu) - phi * (w[0] - mu);
            lt -= 0.5 * e * e / v2;
        }
    }
    lt
}

/// Outcome of one hyper-parameter update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperUpdate {
    pub mu: f64,
    pub phi: f64,
    pub v: f64,
    pub mu_accepted: bool,
    pub phi_accepted: bool,
    pub v_accepted: bool,
}

/// Updates `(mu, phi, v)` of one process given its trajectory `beta_{0:T}`
/// and threshold `d`. Conjugate conditionals (ignoring the threshold prior)
/// serve as proposals for `mu` and `v`, and a truncated normal around the
/// least-squares estimate for `phi`; each step is corrected for the
/// dependence of the threshold prior on the hyper-parameters. An empty
/// trajectory targets the joint prior.
#[allow(clippy::too_many_arguments)]
pub fn sample_lt_hyperparams<R: Rng + ?Sized>(
    rng: &mut R,
    traj: &[f64],
    current: (f64, f64, f64),
    d: f64,
    k: f64,
    prior: &LtHyperPrior,
    phi_scale: f64,
) -> HyperUpdate {
    let (mut mu, mut phi, mut v) = current;

    let (mean, var) = mu_conditional(traj, phi, v, prior);
    let mu_prop = mean + var.sqrt() * dist::std_normal(rng);
    let lr = ln_threshold_factor(d, mu_prop, phi, v, k) - ln_threshold_factor(d, mu, phi, v, k);
    let mu_accepted = accept(rng, lr);
    if mu_accepted {
        mu = mu_prop;
    }

    let (shape, rate) = v_prec_conditional(traj, mu, phi, prior);
    let v_prop = dist::gamma(rng, shape, rate).recip().sqrt();
    let lr = ln_threshold_factor(d, mu, phi, v_prop, k) - ln_threshold_factor(d, mu, phi, v, k);
    let v_accepted = accept(rng, lr);
    if v_accepted {
        v = v_prop;
    }

    let phi_accepted = if traj.len() < 2 {
        let prop = 2.0 * dist::beta(rng, prior.phi_beta.a, prior.phi_beta.b) - 1.0;
        let lr = phi_log_target(traj, prop, mu, v, d, k, prior)
            - phi_log_target(traj, phi, mu, v, d, k, prior)
            - (dist::beta_logpdf(0.5 * (prop + 1.0), prior.phi_beta.a, prior.phi_beta.b)
                - dist::beta_logpdf(0.5 * (phi + 1.0), prior.phi_beta.a, prior.phi_beta.b));
        let ok = prop.abs() < 1.0 && accept(rng, lr);
        if ok {
            phi = prop;
        }
        ok
    } else {
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for w in traj.windows(2) {
            let (a, b) = (w[0] - mu, w[1] - mu);
            sxy += a * b;
            sxx += a * a;
        }
        let (center, sd) = if sxx > 1e-300 && (v * v / sxx).is_finite() {
            (sxy / sxx, (phi_scale * v * v / sxx).sqrt())
        } else {
            (0.0, 1.0)
        };
        let sd = sd.max(1e-12);
        let prop = dist::truncated_normal(rng, center, sd, -1.0, 1.0);
        let lr = phi_log_target(traj, prop, mu, v, d, k, prior)
            - phi_log_target(traj, phi, mu, v, d, k, prior)
            + dist::truncated_normal_logpdf(phi, center, sd, -1.0, 1.0)
            - dist::truncated_normal_logpdf(prop, center, sd, -1.0, 1.0);
        let ok = prop.abs() < 1.0 && accept(rng, lr);
        if ok {
            phi = prop;
        }
        ok
    };

    HyperUpdate {
        mu,
        phi,
        v,
        mu_accepted,
        phi_accepted,
        v_accepted,
    }
}

#[inline]
fn accept<R: Rng + ?Sized>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

/// Simulates `n_time` consecutive values of the stationary AR(1).
pub fn simulate_ar1<R: Rng + ?Sized>(rng: &mut R, n_time: usize, mu: f64, phi: f64, v: f64) -> Vec<f64> {
    let u = v / (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(n_time);
    let mut b = mu + u * dist::std_normal(rng);
    for _ in 0..n_time {
        out.push(b);
        b = mu + phi * (b - mu) + v * dist::std_normal(rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BetaPrior, GammaPrior, NormalPrior};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thresholding_cases() {
        let t = apply_threshold(&[0.5, 0.7, -0.65], 0.6);
        assert_eq!(t.s, vec![false, true, true]);
        assert_eq!(t.b, vec![0.0, 0.7, -0.65]);
        let t = apply_threshold(&[0.0, -1e-9, 3.0], 0.0);
        assert!(t.s.iter().all(|&s| s));
        assert_eq!(t.b, t.beta);
    }

    #[test]
    fn sparsity_probability_limits_and_errors() {
        assert!(sparsity_probability(0.0).is_err());
        assert!(sparsity_probability(-1.0).is_err());
        let small = sparsity_probability(1e-4).unwrap();
        assert!((small - 1.0).abs() < 1e-3, "{small}");
        let mut prev = 1.0;
        for i in 1..=100 {
            let p = sparsity_probability(i as f64 * 0.1).unwrap();
            assert!(p < prev && p > 0.0);
            prev = p;
        }
    }

    #[test]
    fn ar1_conditionals_at_endpoints() {
        let traj = [0.2, 0.4, 0.1];
        let (m, v) = ar1_neighbor_conditional(&traj, 0, 0.1, 0.9, 0.2);
        assert!((m - (0.1 + 0.9 * 0.3)).abs() < 1e-15 && (v - 0.04).abs() < 1e-15);
        let (m, v) = ar1_neighbor_conditional(&traj, 1, 0.1, 0.9, 0.2);
        assert!((m - (0.1 + 0.9 * 0.1 / 1.81)).abs() < 1e-15);
        assert!((v - 0.04 / 1.81).abs() < 1e-15);
        let (m, v) = ar1_neighbor_conditional(&traj, 2, 0.1, 0.9, 0.2);
        assert!((m - (0.1 + 0.9 * 0.3)).abs() < 1e-15 && (v - 0.04).abs() < 1e-15);
    }

    fn prior() -> LtHyperPrior {
        LtHyperPrior {
            v_prec: GammaPrior {
                shape: 3.0,
                rate: 0.3,
            },
            phi_beta: BetaPrior { a: 5.0, b: 2.0 },
            mu_normal: NormalPrior {
                mean: 0.2,
                variance: 0.5,
            },
        }
    }

    #[test]
    fn mu_conditional_by_hand() {
        let traj = [0.3, -0.1, 0.4, 0.25];
        let (phi, v) = (0.6, 0.5);
        let (mean, var) = mu_conditional(&traj, phi, v, &prior());
        // Complete-the-square over the four Gaussian factors written out.
        let v2 = v * v;
        let p0 = 1.0 / 0.5;
        let p1 = (1.0 - phi * phi) / v2;
        let p2 = 3.0 * (1.0 - phi) * (1.0 - phi) / v2;
        let s = (-0.1 - phi * 0.3) + (0.4 - phi * -0.1) + (0.25 - phi * 0.4);
        let prec = p0 + p1 + p2;
        let expect = (0.2 * p0 + 0.3 * p1 + (1.0 - phi) * s / v2) / prec;
        assert!((mean - expect).abs() < 1e-12);
        assert!((var - 1.0 / prec).abs() < 1e-12);
    }

    #[test]
    fn iid_trajectory_concentrates_hyperparameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mu_true, v_true) = (0.7, 0.3);
        let traj: Vec<f64> = (0..5000).map(|_| mu_true + v_true * dist::std_normal(&mut rng)).collect();
        let (m, _) = mu_conditional(&traj, 0.0, v_true, &prior());
        let (shape, rate) = v_prec_conditional(&traj, mu_true, 0.0, &prior());
        assert!((m - mu_true).abs() / mu_true < 0.05);
        let v2_mean = rate / (shape - 1.0);
        assert!((v2_mean - v_true * v_true).abs() / (v_true * v_true) < 0.05);
    }

    #[test]
    fn point_step_without_threshold_always_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut beta = [0.1, 0.2];
        let f = [1.0, -0.5];
        for _ in 0..1000 {
            let obs = PointObservation {
                regressors: &f,
                target: 0.3,
                var: 0.2,
            };
            assert!(sample_lt_point(&mut rng, &mut beta, &[0.0, 0.1], &[0.5, 0.3], &[0.0, 0.0], Some(obs)));
        }
    }

    #[test]
    fn point_step_matches_conjugate_posterior() {
        // Two coefficients, one observation; d = 0 so the draws are exact.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (pm, pv, f, y, s2): ([f64; 2], [f64; 2], [f64; 2], f64, f64) =
            ([0.5, -0.2], [0.4, 0.9], [1.5, 0.7], 1.1, 0.3);
        let q = s2 + f[0] * f[0] * pv[0] + f[1] * f[1] * pv[1];
        let e = y - f[0] * pm[0] - f[1] * pm[1];
        let mean0 = pm[0] + pv[0] * f[0] * e / q;
        let var0 = pv[0] - (pv[0] * f[0]).powi(2) / q;
        let n = 200_000;
        let (mut s, mut ss) = (0.0, 0.0);
        let mut beta = [0.0, 0.0];
        for _ in 0..n {
            let obs = PointObservation {
                regressors: &f,
                target: y,
                var: s2,
            };
            sample_lt_point(&mut rng, &mut beta, &pm, &pv, &[0.0, 0.0], Some(obs));
            s += beta[0];
            ss += beta[0] * beta[0];
        }
        let mean = s / n as f64;
        let var = ss / n as f64 - mean * mean;
        assert!((mean - mean0).abs() < 4.0 * (var0 / n as f64).sqrt());
        assert!((var - var0).abs() / var0 < 0.02);
    }

    #[test]
    fn threshold_accepts_everything_when_likelihood_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = 0.1;
        let mut acc = 0;
        for _ in 0..1000 {
            let (nd, ok) = sample_threshold(&mut rng, d, 0.8, |_| 0.0);
            d = nd;
            acc += ok as usize;
            assert!((0.0..0.8).contains(&d));
        }
        assert_eq!(acc, 1000);
    }

    #[test]
    fn prior_only_hyperparameter_chain_reproduces_prior_moments() {
        // Alternating hyper and threshold updates with no data targets the
        // joint prior, whose (mu, phi, v) marginals are the stated priors.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pr = prior();
        let k = 3.0;
        let (mut mu, mut phi, mut v, mut d) = (0.2, 0.5, 0.5, 0.0);
        let n = 100_000;
        let (mut s_mu, mut s_phi, mut s_prec) = (0.0, 0.0, 0.0);
        let (mut ss_mu, mut ss_phi, mut ss_prec) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let h = sample_lt_hyperparams(&mut rng, &[], (mu, phi, v), d, k, &pr, 1.0);
            (mu, phi, v) = (h.mu, h.phi, h.v);
            d = sample_threshold(&mut rng, d, threshold_upper(mu, phi, v, k), |_| 0.0).0;
            let prec = 1.0 / (v * v);
            s_mu += mu;
            ss_mu += mu * mu;
            s_phi += phi;
            ss_phi += phi * phi;
            s_prec += prec;
            ss_prec += prec * prec;
        }
        let nf = n as f64;
        // Independence proposals mix quickly; 5 naive s.e. leaves room for autocorrelation.
        let check = |s: f64, ss: f64, expect: f64| {
            let m = s / nf;
            let sd = (ss / nf - m * m).sqrt();
            assert!((m - expect).abs() < 5.0 * sd / nf.sqrt(), "{m} vs {expect}");
        };
        check(s_mu, ss_mu, 0.2);
        check(s_phi, ss_phi, 2.0 * 5.0 / 7.0 - 1.0);
        check(s_prec, ss_prec, 3.0 / 0.3);
    }

    proptest! {
        #[test]
        fn apply_threshold_is_idempotent(beta in proptest::collection::vec(-3.0f64..3.0, 1..40), d in 0.0f64..2.0) {
            let once = apply_threshold(&beta, d);
            let twice = apply_threshold(&once.b, d);
            prop_assert_eq!(&once.b, &twice.b);
            for (b, s) in once.b.iter().zip(&once.s) {
                prop_assert_eq!(b * (1.0 - (*s as u8 as f64)), 0.0);
            }
        }
    }
}
