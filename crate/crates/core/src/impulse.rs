//! Monte Carlo impulse responses to a shock in the latent innovation.
//!
//! For each posterior draw, origin `t0` and replicate, two forward paths are
//! simulated from the state at `t0`: one with `x_{t0+1}` shifted by `e` and
//! one without. The response at horizon `h` is the average difference of
//! `y_{t0+h}` between the two paths. With common random numbers both paths
//! share every coefficient, volatility and noise draw, so their difference is
//! propagated directly: it obeys the same recursions with the noise removed.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::model::{Draw, ObservationMatrix, PosteriorDraws, ResolvedPrior};
use crate::simulate::OVERFLOW_GUARD;

/// How time-varying coefficients move during the projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// `δ` follows its random walk, `β` and `α` their AR(1) laws, and the
    /// threshold indicators are re-evaluated at every step.
    #[default]
    Evolve,
    /// `δ`, `b` and `a` stay at their values at the origin.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseRequest {
    /// Origin times `t0` in `1..=T`.
    pub origins: Vec<usize>,
    pub horizon: usize,
    /// Shock size; `None` uses [`default_shock`].
    #[serde(default)]
    pub shock: Option<f64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub mode: CoefficientMode,
    /// Hold `w` and `σ²` at their origin values instead of evolving them.
    #[serde(default)]
    pub freeze_volatility: bool,
    /// Difference independently simulated paths instead of using common
    /// random numbers.
    #[serde(default)]
    pub independent_paths: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_replicates() -> usize {
    1
}

impl ImpulseRequest {
    pub fn new(origins: Vec<usize>, horizon: usize) -> Self {
        Self {
            origins,
            horizon,
            shock: None,
            replicates: 1,
            mode: CoefficientMode::Evolve,
            freeze_volatility: false,
            independent_paths: false,
            seed: 0,
        }
    }
}

/// Responses indexed by (origin, channel, horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSurface {
    pub channels: usize,
    pub origins: Vec<usize>,
    pub horizon: usize,
    pub shock: f64,
    /// `responses[(o * channels + i) * horizon + h - 1]`.
    pub responses: Vec<f64>,
    /// Paths dropped because they left the finite range, per
    /// `(origin, channel)`.
    pub divergent: Vec<usize>,
}

impl ImpulseSurface {
    /// Response of channel `i` (0-based) to a shock at origin index `o`,
    /// `h` steps ahead (`h >= 1`).
    pub fn get(&self, o: usize, i: usize, h: usize) -> f64 {
        self.responses[(o * self.channels + i) * self.horizon + h - 1]
    }

    pub fn path(&self, o: usize, i: usize) -> &[f64] {
        let start = (o * self.channels + i) * self.horizon;
        &self.responses[start..start + self.horizon]
    }
}

/// Average over `t` of the posterior mean of `sqrt(w_t)`.
pub fn default_shock(draws: &PosteriorDraws) -> Result<f64> {
    let first = draws
        .draws
        .first()
        .ok_or_else(|| Error::Domain("posterior draw set is empty".into()))?;
    let big_t = first.state.w.len();
    let total: f64 = draws
        .draws
        .iter()
        .map(|d| d.state.w.iter().map(|w| w.sqrt()).sum::<f64>())
        .sum();
    Ok(total / (big_t * draws.len()) as f64)
}

/// Degrees of freedom of the discount filter at `t0`.
fn dof_at(n0: f64, lambda: f64, t0: usize) -> f64 {
    (0..t0).fold(n0, |n, _| lambda * n + 1.0)
}

struct Streams {
    coef: ChaCha8Rng,
    loadings: ChaCha8Rng,
    tvvar: ChaCha8Rng,
    noise: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64, idx: u64) -> Self {
        let s = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(4 * idx + k);
            r
        };
        Self {
            coef: s(0),
            loadings: s(1),
            tvvar: s(2),
            noise: s(3),
        }
    }
}

/// Discount evolution of a precision `phi` with degrees of freedom `n`.
fn evolve_variance(rng: &mut ChaCha8Rng, var: &mut f64, n: &mut f64, lambda: f64) {
    if lambda < 1.0 {
        let g = dist::beta(rng, 0.5 * lambda * *n, 0.5 * (1.0 - lambda) * *n);
        *var *= lambda / g;
    }
    *n = lambda * *n + 1.0;
}

/// Forward path of `y_{t0+1..=t0+h}` (row-major `h x m`). With
/// `deviation` set, the path starts from zero and carries no noise, which
/// gives the shocked-minus-unshocked difference under shared draws.
#[allow(clippy::too_many_arguments)]
fn project(
    draw: &Draw,
    resolved: &ResolvedPrior,
    lambdas: (f64, f64),
    data: &ObservationMatrix,
    t0: usize,
    horizon: usize,
    shock: f64,
    req: &ImpulseRequest,
    deviation: bool,
    mut st: Streams,
) -> Vec<f64> {
    let s = &draw.state;
    let d = s.dims;
    let (m, p, r) = (d.m, d.p, d.r);
    let evolve = req.mode == CoefficientMode::Evolve;

    // History x_{t0-p+1..}, newest last.
    let mut x: Vec<f64> = if deviation {
        vec![0.0; p]
    } else {
        (0..p).rev().map(|j| s.x_at(t0 as isize - j as isize)).collect()
    };
    x.reserve(horizon);
    let mut delta = DVector::from_row_slice(s.delta_at(t0));
    let psi_l = dist::psd_factor(&DMatrix::from_row_slice(p, p, &s.psi));

    let mut beta: Vec<f64> = (0..s.loadings.n_proc).map(|j| s.loadings.beta_at(j, t0)).collect();
    let mut alpha: Option<Vec<f64>> = s
        .tvvar
        .as_ref()
        .map(|tv| (0..tv.alpha.n_proc).map(|j| tv.alpha.beta_at(j, t0)).collect());

    let (lw, ls) = lambdas;
    let mut w = s.w_at(t0);
    let mut nw = dof_at(resolved.w_init.n0, lw, t0);
    let mut sig: Vec<f64> = (0..m).map(|i| s.sigma2_at(i, t0)).collect();
    let mut ns: Vec<f64> = (0..m)
        .map(|i| resolved.sigma_init.get(i).map_or(1.0, |v| dof_at(v.n0, ls, t0)))
        .collect();

    let mut y_prev: Vec<f64> = match &s.tvvar {
        Some(_) if deviation => vec![0.0; m],
        Some(tv) if t0 == 0 => tv.y0.clone(),
        Some(_) => data.row(t0).to_vec(),
        None => vec![],
    };
    let mut out = Vec::with_capacity(horizon * m);
    let mut b = vec![0.0; m * r];
    let mut a = vec![0.0; if alpha.is_some() { m * m } else { 0 }];

    for n in 1..=horizon {
        if evolve {
            let z = DVector::from_fn(p, |_, _| dist::std_normal(&mut st.coef));
            delta += &psi_l * z;
        }
        if !req.freeze_volatility {
            evolve_variance(&mut st.coef, &mut w, &mut nw, lw);
            for i in 1..m {
                evolve_variance(&mut st.coef, &mut sig[i], &mut ns[i], ls);
            }
        }
        // Effective loadings at this step.
        for i in 0..m {
            for k in 0..r {
                b[i * r + k] = if i == 0 {
                    s.loading(0, k, t0)
                } else {
                    let j = d.loading_index(i, k);
                    let lp = &s.loadings;
                    if evolve {
                        let bj = &mut beta[j];
                        *bj = lp.mu[j] + lp.phi[j] * (*bj - lp.mu[j]) + lp.v[j] * dist::std_normal(&mut st.loadings);
                        if bj.abs() >= lp.threshold[j] {
                            *bj
                        } else {
                            0.0
                        }
                    } else {
                        lp.effective(j, t0)
                    }
                };
            }
        }
        if let (Some(al), Some(tv)) = (alpha.as_mut(), s.tvvar.as_ref()) {
            let ap = &tv.alpha;
            for j in 0..m * m {
                a[j] = if evolve {
                    let aj = &mut al[j];
                    *aj = ap.mu[j] + ap.phi[j] * (*aj - ap.mu[j]) + ap.v[j] * dist::std_normal(&mut st.tvvar);
                    if aj.abs() >= ap.threshold[j] {
                        *aj
                    } else {
                        0.0
                    }
                } else {
                    ap.effective(j, t0)
                };
            }
        }

        let len = x.len();
        let mut xt = 0.0;
        for j in 0..p {
            xt += delta[j] * x[len - 1 - j];
        }
        if !deviation {
            xt += w.sqrt() * dist::std_normal(&mut st.noise);
        }
        if n == 1 {
            xt += shock;
        }
        x.push(xt);

        let len = x.len();
        let mut y = vec![0.0; m];
        for i in 0..m {
            let mut mean = 0.0;
            for k in 0..r {
                let bik = b[i * r + k];
                if bik != 0.0 {
                    mean += bik * x[len - 1 - k];
                }
            }
            if !a.is_empty() {
                let mut acc = 0.0;
                for (j, &yp) in y_prev.iter().enumerate() {
                    let aij = a[i * m + j];
                    if aij != 0.0 {
                        acc += aij * yp;
                    }
                }
                mean += acc;
            }
            y[i] = if deviation {
                mean
            } else {
                mean + sig[i].sqrt() * dist::std_normal(&mut st.noise)
            };
        }
        out.extend_from_slice(&y);
        if !a.is_empty() {
            y_prev = y;
        }
    }
    out
}

/// Expected response surface averaged over draws and replicates.
pub fn impulse_response(
    draws: &PosteriorDraws,
    data: &ObservationMatrix,
    req: &ImpulseRequest,
) -> Result<ImpulseSurface> {
    let dims = draws
        .dims()
        .ok_or_else(|| Error::Domain("posterior draw set is empty".into()))?;
    if req.horizon == 0 || req.replicates == 0 || req.origins.is_empty() {
        return Err(Error::Domain(
            "impulse request needs at least one origin, horizon and replicate".into(),
        ));
    }
    if let Some(bad) = req.origins.iter().find(|&&t0| t0 < 1 || t0 > dims.t) {
        return Err(Error::Domain(format!("origin {bad} outside 1..={}", dims.t)));
    }
    let shock = match req.shock {
        Some(e) if e.is_finite() => e,
        Some(e) => return Err(Error::Domain(format!("shock size {e} is not finite"))),
        None => default_shock(draws)?,
    };
    let (m, h) = (dims.m, req.horizon);
    let n_o = req.origins.len();
    let lambdas = (draws.config.lambda_w, draws.config.lambda_sigma);

    let tasks: Vec<(usize, usize)> = (0..draws.len())
        .flat_map(|d| (0..n_o).map(move |o| (d, o)))
        .collect();
    let partial: Vec<(usize, Vec<f64>, Vec<usize>, Vec<usize>)> = tasks
        .par_iter()
        .map(|&(di, o)| {
            let draw = &draws.draws[di];
            let t0 = req.origins[o];
            let mut sum = vec![0.0; m * h];
            let mut used = vec![0usize; m];
            let mut dropped = vec![0usize; m];
            for rep in 0..req.replicates {
                let idx = ((di * n_o + o) * req.replicates + rep) as u64;
                let run = |e: f64, dev: bool, k: u64| {
                    project(draw, &draws.resolved, lambdas, data, t0, h, e, req, dev, Streams::new(req.seed, k))
                };
                let (shocked, base) = if req.independent_paths {
                    (run(shock, false, 2 * idx), run(0.0, false, 2 * idx + 1))
                } else {
                    (run(shock, true, 2 * idx), vec![0.0; h * m])
                };
                for i in 0..m {
                    let ok = (0..h).all(|n| {
                        let (a, b) = (shocked[n * m + i], base[n * m + i]);
                        a.is_finite() && b.is_finite() && a.abs() < OVERFLOW_GUARD && b.abs() < OVERFLOW_GUARD
                    });
                    if ok {
                        for n in 0..h {
                            sum[i * h + n] += shocked[n * m + i] - base[n * m + i];
                        }
                        used[i] += 1;
                    } else {
                        dropped[i] += 1;
                    }
                }
            }
            (o, sum, used, dropped)
        })
        .collect();

    let mut responses = vec![0.0; n_o * m * h];
    let mut counts = vec![0usize; n_o * m];
    let mut divergent = vec![0usize; n_o * m];
    for (o, sum, used, dropped) in partial {
        for i in 0..m {
            counts[o * m + i] += used[i];
            divergent[o * m + i] += dropped[i];
            for n in 0..h {
                responses[(o * m + i) * h + n] += sum[i * h + n];
            }
        }
    }
    for (cell, &c) in counts.iter().enumerate() {
        let scale = if c > 0 { 1.0 / c as f64 } else { f64::NAN };
        for v in &mut responses[cell * h..(cell + 1) * h] {
            *v *= scale;
        }
    }
    Ok(ImpulseSurface {
        channels: m,
        origins: req.origins.clone(),
        horizon: h,
        shock,
        responses,
        divergent,
    })
}

/// Impulse weights `ψ_0 = 1`, `ψ_n = Σ_l δ_l ψ_{n-l}` of a constant AR(p).
pub fn ar_impulse_weights(delta: &[f64], n: usize) -> Vec<f64> {
    let mut psi = vec![0.0; n];
    for k in 0..n {
        psi[k] = if k == 0 {
            1.0
        } else {
            delta
                .iter()
                .enumerate()
                .filter(|(l, _)| *l < k)
                .map(|(l, d)| d * psi[k - 1 - l])
                .sum()
        };
    }
    psi
}
