//! Eigen-decomposition of the latent TVAR process into quasi-periodic and
//! first-order components, and their transfer to the observed channels.
//!
//! At each `t` the companion matrix `G_t` is diagonalised as `E Λ E⁻¹` with
//! eigenvectors `(λ^{p-1}, ..., λ, 1)'`. Writing `a = E⁻¹ z_t` for the
//! companion state `z_t = (x_t, ..., x_{t-p+1})'`, the component attached to
//! root `λ_j` is `λ_j^{p-1} a_j`. Conjugate pairs combine into one real
//! series `2 Re(λ^{p-1} a)`; real roots give real series directly.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::sampler::companion_matrix;

use crate::error::{Error, Result};
use crate::model::{LatentStateSet, PosteriorDraws};
use crate::summaries::IntervalSummary;

/// Roots closer than this are treated as repeated.
pub const DEGENERACY_TOL: f64 = 1e-8;
/// Imaginary parts below this (relative to the modulus) count as real.
const REAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuasiPeriodic {
    /// Cycles per time step, in `(0, 0.5)`.
    pub frequency: f64,
    pub modulus: f64,
    /// Amplitude `2 |λ^{p-1} a|` of the underlying damped sinusoid.
    pub amplitude: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RealComponent {
    pub root: f64,
    pub modulus: f64,
    pub value: f64,
}

/// Components of `x_t` at one time point. Quasi-periodic components are
/// sorted by increasing frequency, real ones by decreasing modulus.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComponentsAt {
    pub quasi: Vec<QuasiPeriodic>,
    pub real: Vec<RealComponent>,
}

impl ComponentsAt {
    /// `(p̃_t, p̂_t)`.
    pub fn counts(&self) -> (usize, usize) {
        (self.quasi.len(), self.real.len())
    }

    pub fn total(&self) -> f64 {
        self.quasi.iter().map(|c| c.value).sum::<f64>() + self.real.iter().map(|c| c.value).sum::<f64>()
    }
}

/// Latent-level decomposition for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSet {
    pub p: usize,
    pub times: Vec<ComponentsAt>,
}

impl ComponentSet {
    pub fn n_time(&self) -> usize {
        self.times.len()
    }

    /// Components at `t` (1-based).
    pub fn at(&self, t: usize) -> &ComponentsAt {
        &self.times[t - 1]
    }
}

/// Roots of `z^p - δ_1 z^{p-1} - ... - δ_p`, i.e. eigenvalues of the
/// companion matrix, polished by Newton steps on the polynomial.
pub fn companion_roots(delta: &[f64]) -> Vec<Complex<f64>> {
    let p = delta.len();
    let g = companion_matrix(delta);
    let mut roots: Vec<Complex<f64>> = g.complex_eigenvalues().iter().copied().collect();
    let poly = |z: Complex<f64>| {
        let mut v = Complex::new(1.0, 0.0);
        let mut dv = Complex::new(0.0, 0.0);
        for d in delta {
            dv = dv * z + v;
            v = v * z - d;
        }
        (v, dv)
    };
    for r in roots.iter_mut() {
        for _ in 0..2 {
            let (v, dv) = poly(*r);
            if dv.norm() > 0.0 {
                let step = v / dv;
                if step.norm() < 1e-6 * r.norm().max(1.0) {
                    *r -= step;
                }
            }
        }
        if r.im.abs() <= REAL_TOL * r.norm().max(1.0) {
            r.im = 0.0;
        }
    }
    debug_assert_eq!(roots.len(), p);
    roots
}

/// Decomposes one companion state `z = (x_t, ..., x_{t-p+1})` under the
/// roots of `delta`. `t` is only used for error reporting.
pub fn decompose_at(delta: &[f64], z: &[f64], t: usize) -> Result<ComponentsAt> {
    let p = delta.len();
    if p == 1 {
        return Ok(ComponentsAt {
            quasi: vec![],
            real: vec![RealComponent {
                root: delta[0],
                modulus: delta[0].abs(),
                value: z[0],
            }],
        });
    }
    let roots = companion_roots(delta);
    for i in 0..p {
        for j in 0..i {
            if (roots[i] - roots[j]).norm() < DEGENERACY_TOL * roots[i].norm().max(1.0) {
                return Err(Error::DegenerateDecomposition { t });
            }
        }
    }
    // Column j of E is (λ_j^{p-1}, ..., λ_j, 1)'.
    let e = DMatrix::from_fn(p, p, |row, col| roots[col].powu((p - 1 - row) as u32));
    let zc = DVector::from_iterator(p, z.iter().map(|&v| Complex::new(v, 0.0)));
    let lu = e.clone().lu();
    let mut a = lu.solve(&zc).ok_or(Error::DegenerateDecomposition { t })?;
    // One round of iterative refinement.
    let resid = &zc - &e * &a;
    if let Some(da) = lu.solve(&resid) {
        a += da;
    }
    let mut out = ComponentsAt::default();
    for (j, root) in roots.iter().enumerate() {
        let c = e[(0, j)] * a[j];
        if root.im > 0.0 {
            out.quasi.push(QuasiPeriodic {
                frequency: root.im.atan2(root.re) / std::f64::consts::TAU,
                modulus: root.norm(),
                amplitude: 2.0 * c.norm(),
                value: 2.0 * c.re,
            });
        } else if root.im == 0.0 {
            out.real.push(RealComponent {
                root: root.re,
                modulus: root.re.abs(),
                value: c.re,
            });
        }
    }
    out.quasi.sort_by(|a, b| a.frequency.total_cmp(&b.frequency));
    out.real.sort_by(|a, b| b.modulus.total_cmp(&a.modulus));
    Ok(out)
}

/// Latent-level decomposition of `x_{1:T}` under `δ_{1:T}`.
///
/// `x` holds `x_{-p+1..=T}` and `delta` is row-major `(T+1) x p` starting at
/// `t = 0`.
pub fn eigen_components(x: &[f64], delta: &[f64], p: usize) -> Result<ComponentSet> {
    let big_t = x.len() - p;
    let mut times = Vec::with_capacity(big_t);
    let mut z = vec![0.0; p];
    for t in 1..=big_t {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = x[t + p - 1 - j];
        }
        times.push(decompose_at(&delta[t * p..(t + 1) * p], &z, t)?);
    }
    Ok(ComponentSet { p, times })
}

pub fn decompose_state(state: &LatentStateSet) -> Result<ComponentSet> {
    eigen_components(&state.x, &state.delta, state.dims.p)
}

/// Channel-level components at one time point: one entry per latent
/// component slot, in the same order as [`ComponentsAt`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelComponentsAt {
    pub quasi: Vec<f64>,
    pub real: Vec<f64>,
}

impl ChannelComponentsAt {
    pub fn total(&self) -> f64 {
        self.quasi.iter().sum::<f64>() + self.real.iter().sum::<f64>()
    }
}

/// `ỹ_{igt} = Σ_k b_{ikt} x̃_{g,t-k}` and likewise for real components, for
/// channel `i` (0-based) and `t = r..=T`. Entry `t - r` is `None` where the
/// component counts change inside the lag window, since slots then do not
/// line up across lags.
pub fn channel_components(
    set: &ComponentSet,
    state: &LatentStateSet,
    i: usize,
) -> Vec<Option<ChannelComponentsAt>> {
    let r = state.dims.r;
    let big_t = set.n_time();
    (r.max(1)..=big_t)
        .map(|t| {
            let counts = set.at(t).counts();
            if (0..r).any(|k| set.at(t - k).counts() != counts) {
                return None;
            }
            let mut out = ChannelComponentsAt {
                quasi: vec![0.0; counts.0],
                real: vec![0.0; counts.1],
            };
            for k in 0..r {
                let b = state.loading(i, k, t);
                if b == 0.0 {
                    continue;
                }
                let lagged = set.at(t - k);
                for (o, c) in out.quasi.iter_mut().zip(&lagged.quasi) {
                    *o += b * c.value;
                }
                for (o, c) in out.real.iter_mut().zip(&lagged.real) {
                    *o += b * c.value;
                }
            }
            Some(out)
        })
        .collect()
}

/// Posterior summary of one component slot at one time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSummary {
    /// Number of draws with this slot present at this time.
    pub n: usize,
    pub frequency: Option<IntervalSummary>,
    pub modulus: IntervalSummary,
    pub value: IntervalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosteriorAt {
    /// Most frequent `(p̃_t, p̂_t)` among usable draws.
    pub modal_counts: (usize, usize),
    pub quasi: Vec<SlotSummary>,
    pub real: Vec<SlotSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosterior {
    pub level: f64,
    /// Draws skipped because their decomposition was degenerate somewhere.
    pub skipped: usize,
    pub used: usize,
    /// Entry `t - 1` for `t = 1..=T`.
    pub times: Vec<ComponentPosteriorAt>,
}

/// Decomposes every draw and summarises frequency, modulus and value per
/// component slot with pointwise means and central `level` intervals.
/// Slots are matched across draws by their frequency order.
pub fn component_posterior(draws: &PosteriorDraws, level: f64) -> Result<ComponentPosterior> {
    let sets: Vec<Option<ComponentSet>> = draws
        .draws
        .par_iter()
        .map(|d| decompose_state(&d.state).ok())
        .collect();
    let skipped = sets.iter().filter(|s| s.is_none()).count();
    let sets: Vec<ComponentSet> = sets.into_iter().flatten().collect();
    if sets.is_empty() {
        return Err(Error::Domain("no draw could be decomposed".into()));
    }
    let big_t = sets[0].n_time();
    let times = (1..=big_t)
        .into_par_iter()
        .map(|t| {
            let mut tally = std::collections::BTreeMap::<(usize, usize), usize>::new();
            for s in &sets {
                *tally.entry(s.at(t).counts()).or_default() += 1;
            }
            let modal_counts = tally
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(k, _)| *k)
                .unwrap_or_default();
            let max_q = sets.iter().map(|s| s.at(t).quasi.len()).max().unwrap_or(0);
            let max_r = sets.iter().map(|s| s.at(t).real.len()).max().unwrap_or(0);
            let quasi = (0..max_q)
                .map(|g| {
                    let items: Vec<&QuasiPeriodic> = sets.iter().filter_map(|s| s.at(t).quasi.get(g)).collect();
                    SlotSummary {
                        n: items.len(),
                        frequency: Some(IntervalSummary::of(items.iter().map(|c| c.frequency), level)),
                        modulus: IntervalSummary::of(items.iter().map(|c| c.modulus), level),
                        value: IntervalSummary::of(items.iter().map(|c| c.value), level),
                    }
                })
                .collect();
            let real = (0..max_r)
                .map(|h| {
                    let items: Vec<&RealComponent> = sets.iter().filter_map(|s| s.at(t).real.get(h)).collect();
                    SlotSummary {
                        n: items.len(),
                        frequency: None,
                        modulus: IntervalSummary::of(items.iter().map(|c| c.modulus), level),
                        value: IntervalSummary::of(items.iter().map(|c| c.value), level),
                    }
                })
                .collect();
            ComponentPosteriorAt {
                modal_counts,
                quasi,
                real,
            }
        })
        .collect();
    Ok(ComponentPosterior {
        level,
        skipped,
        used: sets.len(),
        times,
    })
}

/// Largest relative reconstruction error `|Σ components - x_t|` over `t`,
/// scaled by the largest entry of the companion state.
pub fn reconstruction_error(set: &ComponentSet, x: &[f64]) -> f64 {
    let p = set.p;
    let mut worst: f64 = 0.0;
    for t in 1..=set.n_time() {
        let scale = (0..p)
            .map(|j| x[t + p - 1 - j].abs())
            .fold(f64::MIN_POSITIVE, f64::max);
        worst = worst.max((set.at(t).total() - x[t + p - 1]).abs() / scale);
    }
    worst
}
