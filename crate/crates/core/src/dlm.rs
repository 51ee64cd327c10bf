//! Linear-Gaussian state-space kernels: Kalman filter, RTS smoother,
//! forward-filtering backward-sampling, and discount variance learning.
//!
//! States are indexed `0..=T` with `state_0 ~ N(m0, C0)`; observations are
//! indexed `1..=T` and stored at position `t-1`. Missing observation
//! entries are encoded as `NaN` and skipped in the update.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist;
use crate::error::{ConfigError, Error, Result};

/// Observation noise at one time point.
#[derive(Debug, Clone, PartialEq)]
pub enum ObsVar {
    /// Independent components; updates are applied one scalar at a time.
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

/// Time-varying DLM
/// `y_t = F_t state_t + offset_t + v_t`, `state_t = G_t state_{t-1} + w_t`.
///
/// Each per-time vector holds either one entry (time-invariant) or `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DlmSpec {
    pub m0: DVector<f64>,
    pub c0: DMatrix<f64>,
    pub f: Vec<DMatrix<f64>>,
    pub v: Vec<ObsVar>,
    pub g: Vec<DMatrix<f64>>,
    pub w: Vec<DMatrix<f64>>,
    pub offsets: Option<Vec<DVector<f64>>>,
}

#[inline]
fn at<T>(v: &[T], t: usize) -> &T {
    if v.len() == 1 {
        &v[0]
    } else {
        &v[t - 1]
    }
}

impl DlmSpec {
    pub fn state_dim(&self) -> usize {
        self.m0.len()
    }

    pub fn f_at(&self, t: usize) -> &DMatrix<f64> {
        at(&self.f, t)
    }

    pub fn g_at(&self, t: usize) -> &DMatrix<f64> {
        at(&self.g, t)
    }

    pub fn w_at(&self, t: usize) -> &DMatrix<f64> {
        at(&self.w, t)
    }

    pub fn v_at(&self, t: usize) -> &ObsVar {
        at(&self.v, t)
    }

    pub fn offset_at(&self, t: usize) -> Option<&DVector<f64>> {
        self.offsets.as_ref().map(|o| at(o, t))
    }

    fn check(&self, obs: &[DVector<f64>]) -> Result<()> {
        let n = self.state_dim();
        let big_t = obs.len();
        let len_ok = |len: usize| len == 1 || len == big_t;
        let bad = |what: &'static str, expected: usize, found: usize| {
            Err(Error::Config(ConfigError::DimensionMismatch {
                what,
                expected,
                found,
            }))
        };
        if self.c0.shape() != (n, n) {
            return bad("C0 rows", n, self.c0.nrows());
        }
        for (what, len) in [
            ("F time points", self.f.len()),
            ("V time points", self.v.len()),
            ("G time points", self.g.len()),
            ("W time points", self.w.len()),
        ] {
            if !len_ok(len) {
                return bad(what, big_t, len);
            }
        }
        if let Some(o) = &self.offsets {
            if !len_ok(o.len()) {
                return bad("offset time points", big_t, o.len());
            }
        }
        for t in 1..=big_t {
            let f = self.f_at(t);
            let k = obs[t - 1].len();
            if f.shape() != (k, n) {
                return bad("F columns", n, f.ncols());
            }
            if self.g_at(t).shape() != (n, n) || self.w_at(t).shape() != (n, n) {
                return bad("G/W dimension", n, self.g_at(t).nrows());
            }
            let vk = match self.v_at(t) {
                ObsVar::Diagonal(d) => d.len(),
                ObsVar::Full(m) => m.nrows(),
            };
            if vk != k {
                return bad("V dimension", k, vk);
            }
        }
        Ok(())
    }
}

#[inline]
fn symmetrize(c: &mut DMatrix<f64>) {
    let n = c.nrows();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
}

/// Filtered moments `m_t, C_t` for `t = 0..=T` and one-step prior
/// moments `a_t, R_t` for `t = 1..=T` (stored at `t-1`).
#[derive(Debug, Clone)]
pub struct FilterOutput {
    pub m: Vec<DVector<f64>>,
    pub c: Vec<DMatrix<f64>>,
    pub a: Vec<DVector<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
}

/// Forward Kalman filter.
pub fn kalman_filter(spec: &DlmSpec, obs: &[DVector<f64>]) -> Result<FilterOutput> {
    spec.check(obs)?;
    let big_t = obs.len();
    let mut out = FilterOutput {
        m: Vec::with_capacity(big_t + 1),
        c: Vec::with_capacity(big_t + 1),
        a: Vec::with_capacity(big_t),
        r: Vec::with_capacity(big_t),
        g: Vec::with_capacity(big_t),
    };
    let mut c0 = spec.c0.clone();
    symmetrize(&mut c0);
    out.m.push(spec.m0.clone());
    out.c.push(c0);
    for t in 1..=big_t {
        let g = spec.g_at(t);
        let a = g * &out.m[t - 1];
        let mut r = g * &out.c[t - 1] * g.transpose() + spec.w_at(t);
        symmetrize(&mut r);
        let (m, c) = update(spec, t, &obs[t - 1], a.clone(), r.clone())?;
        out.a.push(a);
        out.r.push(r);
        out.g.push(g.clone());
        out.m.push(m);
        out.c.push(c);
    }
    Ok(out)
}

fn update(
    spec: &DlmSpec,
    t: usize,
    y: &DVector<f64>,
    a: DVector<f64>,
    r: DMatrix<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = spec.f_at(t);
    let offset = spec.offset_at(t);
    let observed: Vec<usize> = (0..y.len()).filter(|&j| y[j].is_finite()).collect();
    if observed.is_empty() {
        return Ok((a, r));
    }
    match spec.v_at(t) {
        ObsVar::Diagonal(vd) => {
            let mut m = a;
            let mut c = r;
            for &j in &observed {
                let frow = f.row(j);
                let cf = &c * frow.transpose();
                let q = (frow * &cf)[(0, 0)] + vd[j];
                let mut fc = (frow * &m)[(0, 0)];
                if let Some(o) = offset {
                    fc += o[j];
                }
                let e = y[j] - fc;
                if !q.is_finite() || q < 0.0 {
                    return Err(Error::Numerical {
                        t,
                        what: format!("non-positive innovation variance {q}"),
                    });
                }
                if q == 0.0 {
                    // The observation carries no new information.
                    continue;
                }
                m += &cf * (e / q);
                c -= &cf * cf.transpose() / q;
                symmetrize(&mut c);
            }
            Ok((m, c))
        }
        ObsVar::Full(vm) => {
            let k = observed.len();
            let n = a.len();
            let fo = DMatrix::from_fn(k, n, |i, j| f[(observed[i], j)]);
            let vo = DMatrix::from_fn(k, k, |i, j| vm[(observed[i], observed[j])]);
            let mut e = DVector::from_fn(k, |i, _| y[observed[i]]);
            e -= &fo * &a;
            if let Some(o) = offset {
                for i in 0..k {
                    e[i] -= o[observed[i]];
                }
            }
            let rf = &r * fo.transpose();
            let mut q = &fo * &rf + &vo;
            symmetrize(&mut q);
            let chol = q.cholesky().ok_or_else(|| Error::Numerical {
                t,
                what: "innovation covariance is not positive definite".into(),
            })?;
            let gain = chol.solve(&rf.transpose()).transpose();
            let m = a + &gain * e;
            let ikf = DMatrix::identity(n, n) - &gain * &fo;
            let mut c = &ikf * &r * ikf.transpose() + &gain * vo * gain.transpose();
            symmetrize(&mut c);
            Ok((m, c))
        }
    }
}

/// `C_t G' R_{t+1}^{-1}`, using a pseudo-inverse when `R_{t+1}` is singular.
fn smoother_gain(c: &DMatrix<f64>, g: &DMatrix<f64>, r: &DMatrix<f64>) -> DMatrix<f64> {
    let cg = c * g.transpose();
    if let Some(ch) = r.clone().cholesky() {
        return ch.solve(&cg.transpose()).transpose();
    }
    let pinv = r
        .clone()
        .pseudo_inverse(1e-12 * r.amax().max(f64::MIN_POSITIVE))
        .unwrap_or_else(|_| DMatrix::zeros(r.nrows(), r.ncols()));
    cg * pinv
}

/// Smoothed means and covariances for `t = 0..=T`.
#[derive(Debug, Clone)]
pub struct SmoothedMoments {
    pub mean: Vec<DVector<f64>>,
    pub cov: Vec<DMatrix<f64>>,
}

pub fn kalman_smooth_moments(spec: &DlmSpec, obs: &[DVector<f64>]) -> Result<SmoothedMoments> {
    let f = kalman_filter(spec, obs)?;
    Ok(smooth(&f))
}

/// Rauch-Tung-Striebel pass over a filter output.
pub fn smooth(f: &FilterOutput) -> SmoothedMoments {
    let big_t = f.a.len();
    let mut mean = f.m.clone();
    let mut cov = f.c.clone();
    for t in (0..big_t).rev() {
        let b = smoother_gain(&f.c[t], &f.g[t], &f.r[t]);
        mean[t] = &f.m[t] + &b * (&mean[t + 1] - &f.a[t]);
        let mut s = &f.c[t] + &b * (&cov[t + 1] - &f.r[t]) * b.transpose();
        symmetrize(&mut s);
        cov[t] = s;
    }
    SmoothedMoments { mean, cov }
}

/// `C - B G C`, set to zero when it is rounding noise relative to `C`
/// (a deterministic backward step, as with zero evolution variance).
fn backward_cov(c: &DMatrix<f64>, b: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let mut h = c - b * g * c;
    symmetrize(&mut h);
    if h.amax() <= 1e-12 * c.amax() {
        h.fill(0.0);
    }
    h
}

/// Precomputed backward-sampling recursion; each call to
/// [`BackwardSampler::draw`] yields an independent trajectory.
#[derive(Debug, Clone)]
pub struct BackwardSampler {
    m: Vec<DVector<f64>>,
    a: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
}

impl FilterOutput {
    pub fn backward_sampler(&self) -> BackwardSampler {
        let big_t = self.a.len();
        let mut gains = Vec::with_capacity(big_t);
        let mut factors = Vec::with_capacity(big_t + 1);
        for t in 0..big_t {
            let b = smoother_gain(&self.c[t], &self.g[t], &self.r[t]);
            let h = backward_cov(&self.c[t], &b, &self.g[t]);
            factors.push(dist::psd_factor(&h));
            gains.push(b);
        }
        factors.push(dist::psd_factor(&self.c[big_t]));
        BackwardSampler {
            m: self.m.clone(),
            a: self.a.clone(),
            gains,
            factors,
        }
    }
}

impl BackwardSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<DVector<f64>> {
        let big_t = self.a.len();
        let n = self.m[0].len();
        let mut out = vec![DVector::zeros(n); big_t + 1];
        let z = DVector::from_fn(n, |_, _| dist::std_normal(rng));
        out[big_t] = &self.m[big_t] + &self.factors[big_t] * z;
        for t in (0..big_t).rev() {
            let z = DVector::from_fn(n, |_, _| dist::std_normal(rng));
            let h = &self.m[t] + &self.gains[t] * (&out[t + 1] - &self.a[t]);
            out[t] = h + &self.factors[t] * z;
        }
        out
    }
}

/// One FFBS draw of `state_{0:T}`.
pub fn ffbs_sample<R: Rng + ?Sized>(
    spec: &DlmSpec,
    obs: &[DVector<f64>],
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let f = kalman_filter(spec, obs)?;
    Ok(ffbs_from_filter(&f, rng))
}

/// Backward sampling for a single draw without precomputing every factor.
pub fn ffbs_from_filter<R: Rng + ?Sized>(f: &FilterOutput, rng: &mut R) -> Vec<DVector<f64>> {
    let big_t = f.a.len();
    let n = f.m[0].len();
    let mut out = vec![DVector::zeros(n); big_t + 1];
    out[big_t] = dist::mvn(rng, &f.m[big_t], &f.c[big_t]);
    for t in (0..big_t).rev() {
        let b = smoother_gain(&f.c[t], &f.g[t], &f.r[t]);
        let h = &f.m[t] + &b * (&out[t + 1] - &f.a[t]);
        let hc = backward_cov(&f.c[t], &b, &f.g[t]);
        out[t] = dist::mvn(rng, &h, &hc);
    }
    out
}

/// A variance trajectory drawn under the discount model.
#[derive(Debug, Clone, PartialEq)]
pub struct VolatilityPath {
    /// Variances for `t = 1..=T` (index `t-1`).
    pub variances: Vec<f64>,
    pub discount: f64,
    pub n0: f64,
    pub s0: f64,
}

/// Filtered degrees of freedom `n_t` and sums `d_t` for `t = 0..=T`, with
/// `d_0 = n0 s0`. Non-finite residuals are treated as missing.
pub fn discount_filter(residuals: &[f64], lambda: f64, n0: f64, s0: f64) -> (Vec<f64>, Vec<f64>) {
    let mut n = Vec::with_capacity(residuals.len() + 1);
    let mut d = Vec::with_capacity(residuals.len() + 1);
    n.push(n0);
    d.push(n0 * s0);
    for (t, &e) in residuals.iter().enumerate() {
        let (np, dp) = (lambda * n[t], lambda * d[t]);
        if e.is_finite() {
            n.push(np + 1.0);
            d.push(dp + e * e);
        } else {
            n.push(np);
            d.push(dp);
        }
    }
    (n, d)
}

fn check_discount(lambda: f64, n0: f64, s0: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(ConfigError::DiscountOutOfRange {
            name: "lambda",
            value: lambda,
        }
        .into());
    }
    for (name, v) in [("n0", n0), ("s0", s0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(ConfigError::NonPositivePrior {
                name: name.into(),
                value: v,
            }
            .into());
        }
    }
    Ok(())
}

/// Draws `v_{1:T}` from the retrospective posterior of the discount
/// (beta-gamma) variance model given residuals `e_t ~ N(0, v_t)`.
pub fn discount_variance_ffbs<R: Rng + ?Sized>(
    residuals: &[f64],
    lambda: f64,
    n0: f64,
    s0: f64,
    rng: &mut R,
) -> Result<VolatilityPath> {
    check_discount(lambda, n0, s0)?;
    let big_t = residuals.len();
    let (n, d) = discount_filter(residuals, lambda, n0, s0);
    let mut prec = vec![0.0; big_t];
    if big_t > 0 {
        let last = dist::gamma(rng, 0.5 * n[big_t], 0.5 * d[big_t]);
        if lambda == 1.0 {
            prec.fill(last);
        } else {
            prec[big_t - 1] = last;
            for t in (1..big_t).rev() {
                let eta = dist::gamma(rng, 0.5 * (1.0 - lambda) * n[t], 0.5 * d[t]);
                prec[t - 1] = lambda * prec[t] + eta;
            }
        }
    }
    let variances = prec
        .iter()
        .map(|&p| 1.0 / p.max(f64::MIN_POSITIVE))
        .collect();
    Ok(VolatilityPath {
        variances,
        discount: lambda,
        n0,
        s0,
    })
}
