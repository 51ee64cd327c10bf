//! Metropolis-within-Gibbs sampler for Models M and M+.
//!
//! One sweep updates, in order: the latent factor path (companion-form
//! FFBS), the TVAR coefficients (FFBS), the TVAR innovation variances and
//! observation variances (discount FFBS, conjugate gamma for the anchor
//! channel), the loading processes (per-time block MH, hyper-parameters,
//! thresholds), `Psi` (Wishart), and for M+ the TV-VAR coefficient
//! processes and the latent `y_0`.
//!
//! Channel-indexed blocks run in parallel. Each parallel block derives a
//! base seed from the chain's generator and gives every channel its own
//! ChaCha stream, so results do not depend on the thread count.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::dlm::{self, DlmSpec, ObsVar};
use crate::error::{Error, Result};
use crate::model::{
    Dims, Draw, LatentStateSet, LtHyperPrior, LtProcessSet, ModelConfig, ObservationMatrix,
    PosteriorDraws, PriorSpec, ResolvedPrior, TvVarState, ValidatedModel, Variant,
    VolatilityInit,
};
use crate::threshold::{self, PointObservation};

/// Which blocks a sweep updates. Disabled blocks keep their current values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub x: bool,
    pub delta: bool,
    pub w: bool,
    pub sigma: bool,
    pub loadings: bool,
    pub loading_hyper: bool,
    pub loading_thresholds: bool,
    pub psi: bool,
    pub tvvar: bool,
    pub tvvar_hyper: bool,
    pub tvvar_thresholds: bool,
    pub y0: bool,
}

impl Default for SweepPlan {
    fn default() -> Self {
        Self {
            x: true,
            delta: true,
            w: true,
            sigma: true,
            loadings: true,
            loading_hyper: true,
            loading_thresholds: true,
            psi: true,
            tvvar: true,
            tvvar_hyper: true,
            tvvar_thresholds: true,
            y0: true,
        }
    }
}

impl SweepPlan {
    /// Enabled step names in execution order.
    pub fn steps(&self, variant: Variant) -> Vec<&'static str> {
        let mut out = Vec::new();
        for (name, on) in [
            ("x", self.x),
            ("delta", self.delta),
            ("w", self.w),
            ("sigma", self.sigma),
            ("loadings", self.loadings || self.loading_hyper || self.loading_thresholds),
            ("psi", self.psi),
        ] {
            if on {
                out.push(name);
            }
        }
        if variant == Variant::MPlus {
            if self.tvvar || self.tvvar_hyper || self.tvvar_thresholds {
                out.push("tvvar");
            }
            if self.y0 {
                out.push("y0");
            }
        }
        out
    }

    /// A plan with every block disabled.
    pub fn none() -> Self {
        Self {
            x: false,
            delta: false,
            w: false,
            sigma: false,
            loadings: false,
            loading_hyper: false,
            loading_thresholds: false,
            psi: false,
            tvvar: false,
            tvvar_hyper: false,
            tvvar_thresholds: false,
            y0: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counter {
    pub accepted: u64,
    pub total: u64,
}

impl Counter {
    #[inline]
    fn record(&mut self, ok: bool) {
        self.total += 1;
        self.accepted += ok as u64;
    }

    fn merge(&mut self, other: Counter) {
        self.accepted += other.accepted;
        self.total += other.total;
    }

    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.accepted as f64 / self.total as f64)
    }
}

/// Acceptance counts of one family of thresholded processes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FamilyCounts {
    pub point: Counter,
    pub mu: Counter,
    pub phi: Counter,
    pub v: Counter,
    pub threshold: Counter,
}

impl FamilyCounts {
    fn merge(&mut self, o: &FamilyCounts) {
        self.point.merge(o.point);
        self.mu.merge(o.mu);
        self.phi.merge(o.phi);
        self.v.merge(o.v);
        self.threshold.merge(o.threshold);
    }

    fn rates(&self, prefix: &str, out: &mut BTreeMap<String, f64>) {
        for (name, c) in [
            ("point", self.point),
            ("mu", self.mu),
            ("phi", self.phi),
            ("v", self.v),
            ("threshold", self.threshold),
        ] {
            if let Some(r) = c.rate() {
                out.insert(format!("{prefix}_{name}"), r);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MhCounts {
    pub loadings: FamilyCounts,
    pub tvvar: FamilyCounts,
}

impl MhCounts {
    pub fn rates(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        self.loadings.rates("loading", &mut out);
        self.tvvar.rates("tvvar", &mut out);
        out
    }
}

/// Everything needed to continue a chain exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub state: LatentStateSet,
    pub rng: ChaCha8Rng,
    /// Number of completed sweeps (burn-in included).
    pub sweep: usize,
    pub phi_scale_loadings: f64,
    pub phi_scale_tvvar: f64,
    pub counts_burn: MhCounts,
    pub counts_main: MhCounts,
    window: MhCounts,
}

/// Fixed inputs shared by all steps.
#[derive(Debug, Clone)]
pub struct Context<'a> {
    pub config: &'a ModelConfig,
    pub prior: &'a PriorSpec,
    pub resolved: &'a ResolvedPrior,
    pub data: &'a ObservationMatrix,
}

pub(crate) fn substream(base: u64, idx: usize) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(base);
    r.set_stream(idx as u64);
    r
}

/// `p x p` companion matrix of a TVAR coefficient vector.
pub fn companion_matrix(delta: &[f64]) -> DMatrix<f64> {
    companion_of_dim(delta, delta.len())
}

fn companion_of_dim(delta: &[f64], n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(n, n);
    for (j, &d) in delta.iter().enumerate() {
        g[(0, j)] = d;
    }
    for j in 1..n {
        g[(j, j - 1)] = 1.0;
    }
    g
}

/// Draws `x_{-p+1:T}` given every other block.
pub fn sample_latent_x<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &LatentStateSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dims = state.dims;
    let (m, p, r, big_t) = (dims.m, dims.p, dims.r, dims.t);
    let n = p.max(r);
    let mut f = Vec::with_capacity(big_t);
    let mut g = Vec::with_capacity(big_t);
    let mut w = Vec::with_capacity(big_t);
    let mut v = Vec::with_capacity(big_t);
    let mut offsets = state.tvvar.as_ref().map(|_| Vec::with_capacity(big_t));
    let mut obs = Vec::with_capacity(big_t);
    for t in 1..=big_t {
        let mut ft = DMatrix::zeros(m, n);
        for i in 0..m {
            for k in 0..r {
                ft[(i, k)] = state.loading(i, k, t);
            }
        }
        f.push(ft);
        g.push(companion_of_dim(state.delta_at(t), n));
        let mut wt = DMatrix::zeros(n, n);
        wt[(0, 0)] = state.w_at(t);
        w.push(wt);
        v.push(ObsVar::Diagonal((0..m).map(|i| state.sigma2_at(i, t)).collect()));
        if let Some(o) = offsets.as_mut() {
            o.push(DVector::from_fn(m, |i, _| state.tvvar_term(ctx.data, i, t)));
        }
        obs.push(DVector::from_row_slice(ctx.data.row(t)));
    }
    let spec = DlmSpec {
        m0: DVector::zeros(n),
        c0: DMatrix::identity(n, n) * ctx.resolved.x0_variance,
        f,
        v,
        g,
        w,
        offsets,
    };
    let draw = dlm::ffbs_sample(&spec, &obs, rng)?;
    let mut x = vec![0.0; big_t + p];
    // z_0 = (x_0, x_{-1}, ..., x_{-n+1}); only x_{-p+1..0} is stored.
    for j in 0..p {
        x[p - 1 - j] = draw[0][j];
    }
    for t in 1..=big_t {
        x[t + p - 1] = draw[t][0];
    }
    Ok(x)
}

/// Draws `delta_{0:T}` (row-major `(T+1) x p`).
pub fn sample_tvar_coefficients<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &LatentStateSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p = state.dims.p;
    let big_t = state.dims.t;
    let mut f = Vec::with_capacity(big_t);
    let mut v = Vec::with_capacity(big_t);
    let mut obs = Vec::with_capacity(big_t);
    for t in 1..=big_t {
        f.push(DMatrix::from_fn(1, p, |_, j| state.x_at(t as isize - 1 - j as isize)));
        v.push(ObsVar::Diagonal(vec![state.w_at(t)]));
        obs.push(DVector::from_element(1, state.x_at(t as isize)));
    }
    let spec = DlmSpec {
        m0: DVector::from_row_slice(&ctx.prior.delta0.mean),
        c0: DMatrix::from_row_slice(p, p, &ctx.prior.delta0.cov),
        f,
        v,
        g: vec![DMatrix::identity(p, p)],
        w: vec![DMatrix::from_row_slice(p, p, &state.psi)],
        offsets: None,
    };
    let draw = dlm::ffbs_sample(&spec, &obs, rng)?;
    let mut out = Vec::with_capacity((big_t + 1) * p);
    for d in &draw {
        out.extend(d.iter());
    }
    Ok(out)
}

/// Observation residuals `y_it - E[y_it | states]` for `t = 1..=T`.
pub fn channel_residuals(data: &ObservationMatrix, state: &LatentStateSet, i: usize) -> Vec<f64> {
    (1..=state.dims.t)
        .map(|t| data.get(i, t) - state.fitted_mean(data, i, t))
        .collect()
}

/// Shape and rate of the gamma conditional of `sigma_1^{-2}`.
pub fn sigma1_conditional(ctx: &Context<'_>, state: &LatentStateSet) -> (f64, f64) {
    let rss: f64 = channel_residuals(ctx.data, state, 0).iter().map(|e| e * e).sum();
    (
        ctx.prior.sigma1_prec.shape + 0.5 * state.dims.t as f64,
        ctx.prior.sigma1_prec.rate + 0.5 * rss,
    )
}

/// Draws `w_{1:T}` from the discount model given TVAR residuals.
pub fn sample_w<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &LatentStateSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let res: Vec<f64> = (1..=state.dims.t).map(|t| state.tvar_residual(t)).collect();
    let init = ctx.resolved.w_init;
    Ok(dlm::discount_variance_ffbs(&res, ctx.config.lambda_w, init.n0, init.s0, rng)?.variances)
}

/// Draws every observation variance path: channel 1 constant (conjugate),
/// channels `2..=m` via discount FFBS.
pub fn sample_volatilities<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &LatentStateSet,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let dims = state.dims;
    let big_t = dims.t;
    let (shape, rate) = sigma1_conditional(ctx, state);
    let s1 = 1.0 / dist::gamma(rng, shape, rate);
    let base: u64 = rng.random();
    let paths: Vec<Result<Vec<f64>>> = (1..dims.m)
        .into_par_iter()
        .map(|i| {
            let mut r = substream(base, i);
            let res = channel_residuals(ctx.data, state, i);
            let init = ctx.resolved.sigma_init[i];
            dlm::discount_variance_ffbs(&res, ctx.config.lambda_sigma, init.n0, init.s0, &mut r)
                .map(|p| p.variances)
        })
        .collect();
    let mut out = Vec::with_capacity(dims.m * big_t);
    out.extend(std::iter::repeat_n(s1, big_t));
    for p in paths {
        out.extend(p?);
    }
    Ok(out)
}

/// Draws `Psi` given the TVAR coefficient path.
pub fn sample_psi<R: Rng + ?Sized>(
    prior: &PriorSpec,
    delta: &[f64],
    p: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let (dof, scale) = psi_conditional(prior, delta, p)?;
    let u = dist::wishart(rng, dof, &scale)?;
    let psi = dist::spd_inverse(&u).ok_or_else(|| Error::Numerical {
        t: 0,
        what: "Psi^{-1} draw is singular".into(),
    })?;
    Ok(row_major(&psi))
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    (0..r * c).map(|k| m[(k / c, k % c)]).collect()
}

/// Degrees of freedom and scale of the Wishart conditional of `Psi^{-1}`.
pub fn psi_conditional(prior: &PriorSpec, delta: &[f64], p: usize) -> Result<(f64, DMatrix<f64>)> {
    let n_states = delta.len() / p;
    let s0 = DMatrix::from_row_slice(p, p, &prior.psi_prec.scale);
    let mut acc = dist::spd_inverse(&s0).ok_or_else(|| Error::Numerical {
        t: 0,
        what: "Wishart prior scale is singular".into(),
    })?;
    for t in 1..n_states {
        let d = DVector::from_fn(p, |j, _| delta[t * p + j] - delta[(t - 1) * p + j]);
        acc += &d * d.transpose();
    }
    let scale = dist::spd_inverse(&acc).ok_or_else(|| Error::Numerical {
        t: n_states.saturating_sub(1),
        what: "Wishart posterior scale accumulation is singular".into(),
    })?;
    Ok((prior.psi_prec.dof + n_states.saturating_sub(1) as f64, scale))
}

/// Mutable view of the processes belonging to one channel or row.
struct ProcChunk<'a> {
    beta: &'a mut [f64],
    d: &'a mut [f64],
    mu: &'a mut [f64],
    phi: &'a mut [f64],
    v: &'a mut [f64],
}

fn split_chunks(set: &mut LtProcessSet, per: usize) -> Vec<ProcChunk<'_>> {
    let n_time = set.n_time;
    set.beta
        .chunks_mut(per * n_time)
        .zip(set.threshold.chunks_mut(per))
        .zip(set.mu.chunks_mut(per))
        .zip(set.phi.chunks_mut(per))
        .zip(set.v.chunks_mut(per))
        .map(|((((beta, d), mu), phi), v)| ProcChunk {
            beta,
            d,
            mu,
            phi,
            v,
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct BlockFlags {
    points: bool,
    hyper: bool,
    thresholds: bool,
}

/// Updates one block of thresholded processes that enter the same
/// observation: `resid_t = y_t - (everything) ` with this block's
/// contribution `sum_k b_kt reg_tk` included in the fit.
#[allow(clippy::too_many_arguments)]
fn lt_block_update<R: Rng + ?Sized>(
    rng: &mut R,
    chunk: ProcChunk<'_>,
    reg: &[f64],
    resid: &mut [f64],
    var: &[f64],
    ks: &[f64],
    prior: &LtHyperPrior,
    flags: BlockFlags,
    phi_scale: f64,
) -> FamilyCounts {
    let n = chunk.d.len();
    let n_time = chunk.beta.len() / n;
    let big_t = n_time - 1;
    let mut counts = FamilyCounts::default();
    let mut cur = vec![0.0; n];
    let mut pm = vec![0.0; n];
    let mut pv = vec![0.0; n];

    if flags.points {
        for t in 0..=big_t {
            for k in 0..n {
                let traj = &chunk.beta[k * n_time..(k + 1) * n_time];
                let (m, v) =
                    threshold::ar1_neighbor_conditional(traj, t, chunk.mu[k], chunk.phi[k], chunk.v[k]);
                pm[k] = m;
                pv[k] = v;
                cur[k] = traj[t];
            }
            if t == 0 {
                threshold::sample_lt_point(rng, &mut cur, &pm, &pv, chunk.d, None);
            } else {
                let f = &reg[(t - 1) * n..t * n];
                let fit_old: f64 = (0..n)
                    .map(|k| threshold::threshold_value(cur[k], chunk.d[k]) * f[k])
                    .sum();
                let target = resid[t - 1] + fit_old;
                let obs = PointObservation {
                    regressors: f,
                    target,
                    var: var[t - 1],
                };
                let ok = threshold::sample_lt_point(rng, &mut cur, &pm, &pv, chunk.d, Some(obs));
                counts.point.record(ok);
                if ok {
                    let fit_new: f64 = (0..n)
                        .map(|k| threshold::threshold_value(cur[k], chunk.d[k]) * f[k])
                        .sum();
                    resid[t - 1] = target - fit_new;
                }
            }
            for k in 0..n {
                chunk.beta[k * n_time + t] = cur[k];
            }
        }
    }

    for k in 0..n {
        let traj = &chunk.beta[k * n_time..(k + 1) * n_time];
        if flags.hyper {
            let h = threshold::sample_lt_hyperparams(
                rng,
                traj,
                (chunk.mu[k], chunk.phi[k], chunk.v[k]),
                chunk.d[k],
                ks[k],
                prior,
                phi_scale,
            );
            chunk.mu[k] = h.mu;
            chunk.phi[k] = h.phi;
            chunk.v[k] = h.v;
            counts.mu.record(h.mu_accepted);
            counts.phi.record(h.phi_accepted);
            counts.v.record(h.v_accepted);
        }
        if flags.thresholds {
            let upper = threshold::threshold_upper(chunk.mu[k], chunk.phi[k], chunk.v[k], ks[k]);
            let d_old = chunk.d[k];
            let (d_new, ok) = threshold::sample_threshold(rng, d_old, upper, |d_prop| {
                let mut lr = 0.0;
                for t in 1..=big_t {
                    let b = traj[t];
                    let delta = threshold::threshold_value(b, d_prop) - threshold::threshold_value(b, d_old);
                    lr += threshold::residual_loglik_delta(resid[t - 1], reg[(t - 1) * n + k], delta, var[t - 1]);
                }
                lr
            });
            counts.threshold.record(ok);
            if ok {
                for t in 1..=big_t {
                    let b = traj[t];
                    let delta = threshold::threshold_value(b, d_new) - threshold::threshold_value(b, d_old);
                    if delta != 0.0 {
                        resid[t - 1] -= delta * reg[(t - 1) * n + k];
                    }
                }
                chunk.d[k] = d_new;
            }
        }
    }
    counts
}

/// Updates every loading process of channels `2..=m`.
pub fn sample_loadings_block<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut LatentStateSet,
    plan: &SweepPlan,
    phi_scale: f64,
    rng: &mut R,
) -> FamilyCounts {
    let dims = state.dims;
    let (m, r, big_t) = (dims.m, dims.r, dims.t);
    let base: u64 = rng.random();
    let mut reg = vec![0.0; big_t * r];
    for t in 1..=big_t {
        for k in 0..r {
            reg[(t - 1) * r + k] = state.x_at(t as isize - k as isize);
        }
    }
    let resids: Vec<Vec<f64>> = (1..m).map(|i| channel_residuals(ctx.data, state, i)).collect();
    let vars: Vec<Vec<f64>> = (1..m)
        .map(|i| (1..=big_t).map(|t| state.sigma2_at(i, t)).collect())
        .collect();
    let flags = BlockFlags {
        points: plan.loadings,
        hyper: plan.loading_hyper,
        thresholds: plan.loading_thresholds,
    };
    let prior = &ctx.prior.loadings;
    let chunks = split_chunks(&mut state.loadings, r);
    let counts: Vec<FamilyCounts> = chunks
        .into_par_iter()
        .zip(resids.into_par_iter())
        .zip(vars.par_iter())
        .enumerate()
        .map(|(c, ((chunk, mut resid), var))| {
            let i = c + 1;
            let mut rr = substream(base, i);
            let ks: Vec<f64> = (0..r).map(|k| ctx.config.k_for(i, k)).collect();
            lt_block_update(&mut rr, chunk, &reg, &mut resid, var, &ks, prior, flags, phi_scale)
        })
        .collect();
    let mut total = FamilyCounts::default();
    for c in &counts {
        total.merge(c);
    }
    total
}

/// Updates every TV-VAR coefficient process (Model M+).
pub fn sample_tvvar_block<R: Rng + ?Sized>(
    ctx: &Context<'_>,
    state: &mut LatentStateSet,
    plan: &SweepPlan,
    phi_scale: f64,
    rng: &mut R,
) -> FamilyCounts {
    let dims = state.dims;
    let (m, big_t) = (dims.m, dims.t);
    if state.tvvar.is_none() {
        return FamilyCounts::default();
    }
    let base: u64 = rng.random();
    let mut reg = vec![0.0; big_t * m];
    for t in 1..=big_t {
        let prev = state.lagged_obs(ctx.data, t).expect("tvvar state present");
        reg[(t - 1) * m..t * m].copy_from_slice(prev);
    }
    let resids: Vec<Vec<f64>> = (0..m).map(|i| channel_residuals(ctx.data, state, i)).collect();
    let vars: Vec<Vec<f64>> = (0..m)
        .map(|i| (1..=big_t).map(|t| state.sigma2_at(i, t)).collect())
        .collect();
    let flags = BlockFlags {
        points: plan.tvvar,
        hyper: plan.tvvar_hyper,
        thresholds: plan.tvvar_thresholds,
    };
    let prior = &ctx.prior.tvvar;
    let k = ctx.config.threshold_k;
    let ks = vec![k; m];
    let tv = state.tvvar.as_mut().expect("tvvar state present");
    let chunks = split_chunks(&mut tv.alpha, m);
    let counts: Vec<FamilyCounts> = chunks
        .into_par_iter()
        .zip(resids.into_par_iter())
        .zip(vars.par_iter())
        .enumerate()
        .map(|(i, ((chunk, mut resid), var))| {
            let mut rr = substream(base, i);
            lt_block_update(&mut rr, chunk, &reg, &mut resid, var, &ks, prior, flags, phi_scale)
        })
        .collect();
    let mut total = FamilyCounts::default();
    for c in &counts {
        total.merge(c);
    }
    total
}

/// Normal conditional of `y_0` given `y_1` and all states: returns mean
/// and covariance. The prior is `N(0, diag(y0_variance))`.
pub fn y0_conditional(ctx: &Context<'_>, state: &LatentStateSet) -> (DVector<f64>, DMatrix<f64>) {
    let m = state.dims.m;
    let mut prec = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        prec[(i, i)] = 1.0 / ctx.resolved.y0_variance[i];
    }
    let a = DMatrix::from_fn(m, m, |i, j| state.tvvar_coef(i, j, 1));
    let sinv = DVector::from_fn(m, |i, _| 1.0 / state.sigma2_at(i, 1));
    let resid = DVector::from_fn(m, |i, _| ctx.data.get(i, 1) - state.factor_term(i, 1));
    let at_s = DMatrix::from_fn(m, m, |j, i| a[(i, j)] * sinv[i]);
    prec += &at_s * &a;
    let rhs = &at_s * resid;
    let cov = dist::spd_inverse(&prec).unwrap_or_else(|| {
        prec.clone()
            .pseudo_inverse(1e-14)
            .unwrap_or_else(|_| DMatrix::zeros(m, m))
    });
    let mean = &cov * rhs;
    (mean, cov)
}

pub fn sample_y0<R: Rng + ?Sized>(ctx: &Context<'_>, state: &LatentStateSet, rng: &mut R) -> Vec<f64> {
    let (mean, cov) = y0_conditional(ctx, state);
    dist::mvn(rng, &mean, &cov).iter().copied().collect()
}

fn var_of(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

/// Least squares `y ~ X b` with a tiny ridge for stability.
fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xtx = x.transpose() * x;
    let scale = xtx.diagonal().amax().max(1e-300);
    let ridge = DMatrix::identity(xtx.nrows(), xtx.nrows()) * (1e-10 * scale);
    let xty = x.transpose() * y;
    (xtx + ridge)
        .cholesky()
        .map(|c| c.solve(&xty))
        .unwrap_or_else(|| DVector::zeros(x.ncols()))
}

fn floor_var(v: f64, reference: f64) -> f64 {
    let floor = (1e-6 * reference).max(1e-12);
    if v.is_finite() && v > floor {
        v
    } else {
        floor
    }
}

/// Starting state and data-scaled prior settings.
///
/// The factor starts at the anchor channel shifted by its lag, TVAR and
/// loading coefficients at constant least-squares fits, thresholds at
/// zero and variances at residual variances.
pub fn initial_state(
    config: &ModelConfig,
    prior: &PriorSpec,
    data: &ObservationMatrix,
) -> (LatentStateSet, ResolvedPrior) {
    let dims = Dims::of(config, data.n_time());
    let (m, p, r, s, big_t) = (dims.m, dims.p, dims.r, dims.s, dims.t);
    let y1 = data.channel(0);
    let var_y1 = floor_var(var_of(&y1), 1.0);

    let mut x = vec![0.0; big_t + p];
    for idx in 0..big_t + p {
        let t = idx as isize - p as isize + 1;
        let src = t + s as isize - 1;
        if src >= 1 && src <= big_t as isize {
            x[idx] = y1[src as usize - 1];
        }
    }
    let x_at = |t: isize| x[(t + p as isize - 1) as usize];

    let xm = DMatrix::from_fn(big_t, p, |row, j| x_at(row as isize - j as isize));
    let xv = DVector::from_fn(big_t, |row, _| x_at(row as isize + 1));
    let d_hat = ols(&xm, &xv);
    let tvar_res: Vec<f64> = (0..big_t).map(|row| xv[row] - (xm.row(row) * &d_hat)[(0, 0)]).collect();
    let w0 = floor_var(var_of(&tvar_res), var_y1);

    let n_time = big_t + 1;
    let mut loadings = LtProcessSet::zeros((m - 1) * r, n_time);
    let phi0 = |h: &LtHyperPrior| 2.0 * h.phi_beta.a / (h.phi_beta.a + h.phi_beta.b) - 1.0;
    let v0 = |h: &LtHyperPrior| (h.v_prec.rate / h.v_prec.shape).sqrt();
    let lag_x = DMatrix::from_fn(big_t, r, |row, k| x_at(row as isize + 1 - k as isize));
    let mut sigma2 = vec![0.0; m * big_t];
    let mut resid_init: Vec<Vec<f64>> = vec![Vec::new(); m];
    for i in 1..m {
        let yi = DVector::from_vec(data.channel(i));
        let b = ols(&lag_x, &yi);
        let res = &yi - &lag_x * &b;
        let s2 = floor_var(var_of(res.as_slice()), var_of(yi.as_slice()).max(1e-12));
        for k in 0..r {
            let j = dims.loading_index(i, k);
            loadings.traj_mut(j).fill(b[k]);
            loadings.mu[j] = b[k];
            loadings.phi[j] = phi0(&prior.loadings);
            loadings.v[j] = v0(&prior.loadings);
        }
        sigma2[i * big_t..(i + 1) * big_t].fill(s2);
        resid_init[i] = res.iter().copied().collect();
    }
    let g = prior.sigma1_prec;
    let s1 = if g.shape > 1.0 {
        g.rate / (g.shape - 1.0)
    } else {
        g.rate / g.shape
    };
    sigma2[..big_t].fill(s1);

    let head = big_t.min(20);
    let w_init = prior.w_init.unwrap_or(VolatilityInit {
        n0: 1.0,
        s0: floor_var(mean_square(&tvar_res[..head]), w0),
    });
    let sigma_init: Vec<VolatilityInit> = (0..m)
        .map(|i| {
            prior.sigma_init.unwrap_or_else(|| {
                if i == 0 {
                    VolatilityInit { n0: 1.0, s0: s1 }
                } else {
                    VolatilityInit {
                        n0: 1.0,
                        s0: floor_var(mean_square(&resid_init[i][..head]), sigma2[i * big_t]),
                    }
                }
            })
        })
        .collect();
    let y0_variance: Vec<f64> = (0..m)
        .map(|i| {
            prior
                .y0_variance
                .unwrap_or_else(|| 10.0 * floor_var(mean_square(&data.channel(i)), 1.0))
        })
        .collect();
    let resolved = ResolvedPrior {
        x0_variance: prior.x0_variance.unwrap_or(1e6 * var_y1),
        w_init,
        sigma_init,
        y0_variance,
    };

    let mut delta = Vec::with_capacity(n_time * p);
    for _ in 0..n_time {
        delta.extend(d_hat.iter());
    }
    let psi_prec = DMatrix::from_row_slice(p, p, &prior.psi_prec.scale) * prior.psi_prec.dof;
    let psi_m = dist::spd_inverse(&psi_prec).unwrap_or_else(|| DMatrix::identity(p, p));
    let psi = row_major(&psi_m);

    let tvvar = (config.variant == Variant::MPlus).then(|| {
        let mut alpha = LtProcessSet::zeros(m * m, n_time);
        for j in 0..m * m {
            alpha.phi[j] = phi0(&prior.tvvar);
            alpha.v[j] = v0(&prior.tvvar);
        }
        TvVarState {
            alpha,
            y0: data.row(1).to_vec(),
        }
    });

    let state = LatentStateSet {
        dims,
        x,
        delta,
        w: vec![w0; big_t],
        sigma2,
        loadings,
        psi,
        tvvar,
    };
    (state, resolved)
}

/// A single MCMC chain.
#[derive(Debug, Clone)]
pub struct Sampler {
    pub config: ModelConfig,
    pub prior: PriorSpec,
    pub resolved: ResolvedPrior,
    pub data: ObservationMatrix,
    pub plan: SweepPlan,
    pub chain: ChainState,
}

impl Sampler {
    /// Initializes a chain from data-driven starting values and seeds its
    /// generator from `config.mcmc.seed`.
    pub fn new(model: ValidatedModel) -> Self {
        let ValidatedModel {
            config,
            prior,
            data,
        } = model;
        let (state, resolved) = initial_state(&config, &prior, &data);
        Self::with_state(config, prior, resolved, data, state)
    }

    pub fn with_state(
        config: ModelConfig,
        prior: PriorSpec,
        resolved: ResolvedPrior,
        data: ObservationMatrix,
        state: LatentStateSet,
    ) -> Self {
        let phi_scale = config.tuning.phi_scale;
        let rng = ChaCha8Rng::seed_from_u64(config.mcmc.seed);
        Self {
            config,
            prior,
            resolved,
            data,
            plan: SweepPlan::default(),
            chain: ChainState {
                state,
                rng,
                sweep: 0,
                phi_scale_loadings: phi_scale,
                phi_scale_tvvar: phi_scale,
                counts_burn: MhCounts::default(),
                counts_main: MhCounts::default(),
                window: MhCounts::default(),
            },
        }
    }

    /// Resumes a chain from a saved state.
    pub fn resume(
        config: ModelConfig,
        prior: PriorSpec,
        resolved: ResolvedPrior,
        data: ObservationMatrix,
        chain: ChainState,
    ) -> Self {
        Self {
            config,
            prior,
            resolved,
            data,
            plan: SweepPlan::default(),
            chain,
        }
    }

    pub fn state(&self) -> &LatentStateSet {
        &self.chain.state
    }

    pub fn context(&self) -> Context<'_> {
        Context {
            config: &self.config,
            prior: &self.prior,
            resolved: &self.resolved,
            data: &self.data,
        }
    }

    pub fn total_sweeps(&self) -> usize {
        self.config.mcmc.burn_in + self.config.mcmc.draws
    }

    pub fn is_done(&self) -> bool {
        self.chain.sweep >= self.total_sweeps()
    }

    /// One full sweep. On error the state is left at the last completed step.
    pub fn sweep(&mut self) -> Result<()> {
        let sweep = self.chain.sweep;
        let wrap = |step: &'static str| move |e: Error| Error::Sampler {
            sweep,
            step,
            source: Box::new(e),
        };
        let ctx = Context {
            config: &self.config,
            prior: &self.prior,
            resolved: &self.resolved,
            data: &self.data,
        };
        let plan = &self.plan;
        let chain = &mut self.chain;
        let rng = &mut chain.rng;
        let state = &mut chain.state;
        if plan.x {
            state.x = sample_latent_x(&ctx, state, rng).map_err(wrap("x"))?;
        }
        if plan.delta {
            state.delta = sample_tvar_coefficients(&ctx, state, rng).map_err(wrap("delta"))?;
        }
        if plan.w {
            state.w = sample_w(&ctx, state, rng).map_err(wrap("w"))?;
        }
        if plan.sigma {
            state.sigma2 = sample_volatilities(&ctx, state, rng).map_err(wrap("sigma"))?;
        }
        let mut counts = MhCounts::default();
        if plan.loadings || plan.loading_hyper || plan.loading_thresholds {
            counts.loadings = sample_loadings_block(&ctx, state, plan, chain.phi_scale_loadings, rng);
        }
        if plan.psi {
            state.psi = sample_psi(ctx.prior, &state.delta, state.dims.p, rng).map_err(wrap("psi"))?;
        }
        if state.tvvar.is_some() {
            if plan.tvvar || plan.tvvar_hyper || plan.tvvar_thresholds {
                counts.tvvar = sample_tvvar_block(&ctx, state, plan, chain.phi_scale_tvvar, rng);
            }
            if plan.y0 {
                let y0 = sample_y0(&ctx, state, rng);
                state.tvvar.as_mut().expect("checked").y0 = y0;
            }
        }
        let burn = self.config.mcmc.burn_in;
        if sweep < burn {
            chain.counts_burn.loadings.merge(&counts.loadings);
            chain.counts_burn.tvvar.merge(&counts.tvvar);
            chain.window.loadings.merge(&counts.loadings);
            chain.window.tvvar.merge(&counts.tvvar);
            let t = &self.config.tuning;
            if (sweep + 1) % t.adapt_every == 0 {
                chain.phi_scale_loadings = adapt(chain.phi_scale_loadings, chain.window.loadings.phi, t);
                chain.phi_scale_tvvar = adapt(chain.phi_scale_tvvar, chain.window.tvvar.phi, t);
                chain.window = MhCounts::default();
            }
        } else {
            chain.counts_main.loadings.merge(&counts.loadings);
            chain.counts_main.tvvar.merge(&counts.tvvar);
        }
        chain.sweep += 1;
        Ok(())
    }

    /// Post-burn-in index of the sweep just completed, if it is retained.
    pub fn retained_index(&self) -> Option<usize> {
        let burn = self.config.mcmc.burn_in;
        let done = self.chain.sweep;
        if done <= burn {
            return None;
        }
        let idx = done - burn - 1;
        ((idx + 1) % self.config.mcmc.thin == 0).then_some(idx)
    }

    /// Runs remaining sweeps, passing every retained draw to `on_draw`.
    pub fn run_with(&mut self, mut on_draw: impl FnMut(&Sampler, Draw) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            self.sweep()?;
            if let Some(idx) = self.retained_index() {
                let draw = Draw {
                    sweep: idx,
                    loglik: self.chain.state.conditional_loglik(&self.data),
                    state: self.chain.state.clone(),
                };
                on_draw(self, draw)?;
            }
        }
        Ok(())
    }

    /// Acceptance rates over retained-phase sweeps (burn-in if none yet).
    pub fn acceptance(&self) -> BTreeMap<String, f64> {
        let main = self.chain.counts_main.rates();
        if main.is_empty() {
            self.chain.counts_burn.rates()
        } else {
            main
        }
    }

    pub fn into_draws(self, draws: Vec<Draw>) -> PosteriorDraws {
        let acceptance = self.acceptance();
        PosteriorDraws {
            channel_names: self.data.channel_names().to_vec(),
            config: self.config,
            prior: self.prior,
            resolved: self.resolved,
            draws,
            acceptance,
        }
    }
}

fn adapt(scale: f64, c: Counter, t: &crate::model::Tuning) -> f64 {
    match c.rate() {
        Some(r) if r < t.target_low => (scale * 0.8).max(0.01),
        Some(r) if r > t.target_high => (scale * 1.25).min(100.0),
        _ => scale,
    }
}

/// Fits a validated model with the seed in its configuration.
pub fn run_mcmc(model: ValidatedModel) -> Result<PosteriorDraws> {
    run_mcmc_with_plan(model, SweepPlan::default())
}

pub fn run_mcmc_with_plan(model: ValidatedModel, plan: SweepPlan) -> Result<PosteriorDraws> {
    let mut sampler = Sampler::new(model);
    sampler.plan = plan;
    let mut draws = Vec::with_capacity(sampler.config.mcmc.draws / sampler.config.mcmc.thin);
    sampler.run_with(|_, d| {
        draws.push(d);
        Ok(())
    })?;
    Ok(sampler.into_draws(draws))
}
