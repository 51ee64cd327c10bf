//! Oracle checks of the sampler steps, threshold updates and derived
//! quantities against closed forms, dense Gaussian conditioning and grid
//! quadrature.

mod common;

use ltfm::decomposition::{channel_components, decompose_state};
use ltfm::model::{LatentStateSet, ObservationMatrix, TvVarState};
use ltfm::sampler::{initial_state, y0_conditional, Context, Sampler, SweepPlan};
use ltfm::simulate::{ar_coefficients_from_roots, DeltaSpec, SimulationSpec, VarianceSpec};
use ltfm::stats::{effective_sample_size, mean, variance};
use ltfm::summaries::compute_dic;
use ltfm::threshold::{apply_threshold, sample_lt_point, sample_threshold, sparsity_probability, threshold_value, PointObservation};
use ltfm::{default_priors, ModelConfig, PriorSpec, Variant};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{config, constants, fit, psi_prior, simulate, with_sweeps};

/// Posterior mean and covariance of `theta ~ N(mu, sigma)` given
/// `y = H theta + noise`, `noise ~ N(0, diag(r))`.
fn condition(mu: &DVector<f64>, sigma: &DMatrix<f64>, h: &DMatrix<f64>, y: &DVector<f64>, r: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let s = h * sigma * h.transpose() + DMatrix::from_diagonal(&DVector::from_row_slice(r));
    let k = sigma * h.transpose() * s.clone().try_inverse().unwrap();
    let mean = mu + &k * (y - h * mu);
    let cov = sigma - &k * h * sigma;
    (mean, cov)
}

fn data(rows: &[Vec<f64>]) -> ObservationMatrix {
    ObservationMatrix::from_rows(rows).unwrap()
}

fn toy(cfg: &ModelConfig, prior: &PriorSpec, y: &ObservationMatrix) -> (LatentStateSet, ltfm::model::ResolvedPrior) {
    initial_state(cfg, prior, y)
}

fn run_plan(mut s: Sampler, plan: SweepPlan, sweeps: usize, mut record: impl FnMut(&LatentStateSet)) {
    s.plan = plan;
    for _ in 0..sweeps {
        s.sweep().unwrap();
        record(s.state());
    }
}

#[test]
fn latent_factor_step_matches_dense_conditioning() {
    let mut cfg = with_sweeps(config(2, 1, 1, 1, Variant::M), 0, 1_000_000, 21);
    cfg.threshold_k = 3.0;
    let prior = default_priors(&cfg);
    let y = data(&[vec![0.4, 0.9], vec![-0.3, 0.2], vec![1.1, 1.4], vec![0.6, -0.2]]);
    let (mut st, mut res) = toy(&cfg, &prior, &y);
    res.x0_variance = 2.0;
    let big_t = 4;
    st.delta = vec![0.7; big_t + 1];
    st.w = vec![1.0, 0.5, 2.0, 1.0];
    st.sigma2 = vec![0.8, 0.8, 0.8, 0.8, 1.0, 0.6, 1.5, 0.9];
    st.loadings.traj_mut(0).copy_from_slice(&[0.9, 0.9, 0.2, -0.7, 0.5]);
    st.loadings.threshold[0] = 0.3;
    let b: Vec<f64> = (1..=big_t).map(|t| st.loading(1, 0, t)).collect();
    assert_eq!(b[1], 0.0, "one loading is thresholded out");

    // theta = (x_0, ..., x_4)
    let n = big_t + 1;
    let mut a = DMatrix::zeros(n, n);
    for t in 0..n {
        for s in 0..=t {
            a[(t, s)] = 0.7f64.powi((t - s) as i32);
        }
    }
    let mut dvar = vec![2.0];
    dvar.extend(&st.w);
    let sigma = &a * DMatrix::from_diagonal(&DVector::from_vec(dvar)) * a.transpose();
    let mut h = DMatrix::zeros(2 * big_t, n);
    let mut yv = DVector::zeros(2 * big_t);
    let mut r = vec![0.0; 2 * big_t];
    for t in 1..=big_t {
        h[(2 * (t - 1), t)] = 1.0;
        h[(2 * (t - 1) + 1, t)] = b[t - 1];
        yv[2 * (t - 1)] = y.get(0, t);
        yv[2 * (t - 1) + 1] = y.get(1, t);
        r[2 * (t - 1)] = st.sigma2_at(0, t);
        r[2 * (t - 1) + 1] = st.sigma2_at(1, t);
    }
    let (pm, pc) = condition(&DVector::zeros(n), &sigma, &h, &yv, &r);

    let sampler = Sampler::with_state(cfg, prior, res, y, st);
    let plan = SweepPlan { x: true, ..SweepPlan::none() };
    let n_draws = 30_000;
    let mut sums = vec![0.0; n];
    run_plan(sampler, plan, n_draws, |s| {
        for (t, acc) in sums.iter_mut().enumerate() {
            *acc += s.x_at(t as isize);
        }
    });
    for t in 0..n {
        let se = (pc[(t, t)] / n_draws as f64).sqrt();
        let z = (sums[t] / n_draws as f64 - pm[t]) / se;
        assert!(z.abs() < 4.0, "x_{t}: z = {z}");
    }
}

#[test]
fn tvar_step_matches_dense_conditioning() {
    let cfg = with_sweeps(config(2, 1, 1, 1, Variant::M), 0, 1_000_000, 22);
    let mut prior = default_priors(&cfg);
    prior.delta0.mean = vec![0.2];
    prior.delta0.cov = vec![0.5];
    let y = data(&[vec![0.4, 0.9], vec![-0.3, 0.2], vec![1.1, 1.4]]);
    let (mut st, res) = toy(&cfg, &prior, &y);
    st.x = vec![0.8, 1.2, -0.4, 0.9];
    st.w = vec![0.5, 1.0, 0.7];
    st.psi = vec![0.05];
    let big_t = 3;
    let n = big_t + 1;
    let sigma = DMatrix::from_fn(n, n, |s, t| 0.5 + 0.05 * s.min(t) as f64);
    let mut h = DMatrix::zeros(big_t, n);
    let mut yv = DVector::zeros(big_t);
    for t in 1..=big_t {
        h[(t - 1, t)] = st.x_at(t as isize - 1);
        yv[t - 1] = st.x_at(t as isize);
    }
    let (pm, pc) = condition(&DVector::from_element(n, 0.2), &sigma, &h, &yv, &st.w);

    let sampler = Sampler::with_state(cfg, prior, res, y, st);
    let n_draws = 30_000;
    let mut sums = vec![0.0; n];
    run_plan(sampler, SweepPlan { delta: true, ..SweepPlan::none() }, n_draws, |s| {
        for (t, acc) in sums.iter_mut().enumerate() {
            *acc += s.delta_at(t)[0];
        }
    });
    for t in 0..n {
        let z = (sums[t] / n_draws as f64 - pm[t]) / (pc[(t, t)] / n_draws as f64).sqrt();
        assert!(z.abs() < 4.0, "delta_{t}: z = {z}");
    }
}

#[test]
fn zero_psi_gives_static_regression_posterior() {
    let cfg = with_sweeps(config(2, 2, 2, 1, Variant::M), 0, 1_000_000, 23);
    let prior = default_priors(&cfg);
    let rec = simulate(&cfg, &prior, &SimulationSpec::demo(&cfg, 60), 23);
    let mut st = rec.state.clone();
    st.psi = vec![0.0; 4];
    let (_, res) = initial_state(&cfg, &prior, &rec.data);

    // delta ~ N(0, I); x_t = delta' (x_{t-1}, x_{t-2}) + N(0, w_t).
    let mut prec = DMatrix::<f64>::identity(2, 2);
    let mut rhs = DVector::<f64>::zeros(2);
    for t in 1..=60 {
        let z = DVector::from_vec(vec![st.x_at(t - 1), st.x_at(t - 2)]);
        prec += &z * z.transpose() / st.w_at(t as usize);
        rhs += &z * st.x_at(t) / st.w_at(t as usize);
    }
    let cov = prec.try_inverse().unwrap();
    let m = &cov * rhs;

    let sampler = Sampler::with_state(cfg, prior, res, rec.data, st);
    let n_draws = 20_000;
    let mut draws = [Vec::new(), Vec::new()];
    run_plan(sampler, SweepPlan { delta: true, ..SweepPlan::none() }, n_draws, |s| {
        let d0 = s.delta_at(0).to_vec();
        for t in 1..=60 {
            for j in 0..2 {
                let dev = (s.delta_at(t)[j] - d0[j]).abs();
                assert!(dev < 1e-10, "t={t} j={j} dev={dev:e}");
            }
        }
        draws[0].push(d0[0]);
        draws[1].push(d0[1]);
    });
    for j in 0..2 {
        let z = (mean(&draws[j]) - m[j]) / (cov[(j, j)] / n_draws as f64).sqrt();
        assert!(z.abs() < 4.0, "delta[{j}] z = {z}");
        assert!((variance(&draws[j]) / cov[(j, j)] - 1.0).abs() < 0.05);
    }
}

#[test]
fn anchor_only_loadings_make_x_depend_on_channel_one_alone() {
    let cfg = with_sweeps(config(3, 2, 2, 1, Variant::M), 0, 100, 24);
    let prior = default_priors(&cfg);
    let rec = simulate(&cfg, &prior, &SimulationSpec::demo(&cfg, 40), 24);
    let mut st = rec.state.clone();
    for j in 0..st.loadings.n_proc {
        st.loadings.threshold[j] = 1e9;
    }
    let (_, res) = initial_state(&cfg, &prior, &rec.data);
    let mut altered: Vec<Vec<f64>> = (1..=40).map(|t| rec.data.row(t).to_vec()).collect();
    for (t, row) in altered.iter_mut().enumerate() {
        row[1] += 5.0 * (t as f64).sin();
        row[2] -= 3.0;
    }
    let other = data(&altered);
    let plan = SweepPlan { x: true, ..SweepPlan::none() };
    let collect = |d: ObservationMatrix| {
        let mut out = Vec::new();
        run_plan(Sampler::with_state(cfg.clone(), prior.clone(), res.clone(), d, st.clone()), plan.clone(), 20, |s| {
            out.push(s.x.clone())
        });
        out
    };
    assert_eq!(collect(rec.data.clone()), collect(other));
}

#[test]
fn unit_sigma_discount_keeps_paths_constant() {
    let mut cfg = with_sweeps(config(3, 2, 2, 1, Variant::M), 20, 30, 25);
    cfg.lambda_sigma = 1.0;
    cfg.lambda_w = 1.0;
    let mut prior = default_priors(&cfg);
    psi_prior(&mut prior, 2, 100.0, 1e4);
    let rec = simulate(&cfg, &prior, &SimulationSpec::demo(&cfg, 50), 25);
    let draws = fit(&cfg, &prior, &rec.data);
    for d in &draws.draws {
        for i in 0..3 {
            let first = d.state.sigma2_at(i, 1);
            assert!((1..=50).all(|t| d.state.sigma2_at(i, t) == first));
        }
        assert!(d.state.w.iter().all(|&w| w == d.state.w[0]));
    }
}

#[test]
fn y0_conditional_is_the_normal_update_on_the_first_time_point() {
    let cfg = config(2, 1, 1, 1, Variant::MPlus);
    let prior = default_priors(&cfg);
    // Only t = 1 enters the conditional; the second row is never read.
    let y = data(&[vec![1.3, -0.4], vec![9.0, 9.0]]);
    let (mut st, mut res) = initial_state(&cfg, &prior, &y);
    res.y0_variance = vec![2.0, 0.5];
    st.x = vec![0.1, 0.7, 0.0];
    st.sigma2 = vec![0.3, 0.3, 0.6, 0.6];
    st.loadings.traj_mut(0).fill(0.8);
    st.loadings.threshold[0] = 0.0;
    let alpha = [0.5, -0.2, 0.4, 0.3];
    let tv = st.tvvar.as_mut().unwrap();
    for (j, &a) in alpha.iter().enumerate() {
        tv.alpha.traj_mut(j).fill(a);
        tv.alpha.threshold[j] = 0.0;
    }
    let ctx = Context { config: &cfg, prior: &prior, resolved: &res, data: &y };
    let (m, c) = y0_conditional(&ctx, &st);

    let a = DMatrix::from_row_slice(2, 2, &alpha);
    let resid = DVector::from_vec(vec![1.3 - 0.7, -0.4 - 0.8 * 0.7]);
    let sinv = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / 0.3, 1.0 / 0.6]));
    let prec = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0])) + a.transpose() * &sinv * &a;
    let cov = prec.try_inverse().unwrap();
    let mean = &cov * a.transpose() * sinv * resid;
    assert!((m - mean).amax() < 1e-12);
    assert!((c - cov).amax() < 1e-12);
}

#[test]
fn huge_spillover_thresholds_reduce_m_plus_to_m() {
    let cfg = config(3, 2, 2, 1, Variant::MPlus);
    let prior = default_priors(&cfg);
    let rec = simulate(&cfg, &prior, &SimulationSpec::demo(&cfg, 80), 26);
    let mut st = rec.state.clone();
    let tv = st.tvvar.as_mut().unwrap();
    for j in 0..tv.alpha.n_proc {
        tv.alpha.traj_mut(j).fill(0.4);
        tv.alpha.threshold[j] = 1e9;
    }
    let mut m_state = st.clone();
    m_state.tvvar = None;
    assert_eq!(st.conditional_loglik(&rec.data).to_bits(), m_state.conditional_loglik(&rec.data).to_bits());
    let _: Option<TvVarState> = st.tvvar;
}

#[test]
fn unthresholded_loadings_match_the_dlm_smoother() {
    let cfg = with_sweeps(config(2, 1, 1, 1, Variant::M), 0, 1_000_000, 27);
    let prior = default_priors(&cfg);
    let big_t = 25;
    let x: Vec<f64> = (0..=big_t).map(|t| 1.5 * (t as f64 * 0.9).sin() + 0.5).collect();
    let rows: Vec<Vec<f64>> = (1..=big_t)
        .map(|t| vec![x[t], 0.6 * x[t] + 0.3 * ((t * 7 % 5) as f64 - 2.0)])
        .collect();
    let y = data(&rows);
    let (mut st, res) = initial_state(&cfg, &prior, &y);
    st.x = x.clone();
    st.sigma2 = [vec![0.2; big_t], vec![0.5; big_t]].concat();
    let (mu, phi, v) = (0.4, 0.8, 0.3);
    st.loadings.mu[0] = mu;
    st.loadings.phi[0] = phi;
    st.loadings.v[0] = v;
    st.loadings.threshold[0] = 0.0;

    // gamma_t = beta_t - mu is a zero-mean stationary AR(1).
    let u2 = v * v / (1.0 - phi * phi);
    let n = big_t + 1;
    let sigma = DMatrix::from_fn(n, n, |s, t| u2 * phi.powi((s as i32 - t as i32).abs()));
    let mut h = DMatrix::zeros(big_t, n);
    let mut yv = DVector::zeros(big_t);
    for t in 1..=big_t {
        h[(t - 1, t)] = x[t];
        yv[t - 1] = y.get(1, t) - mu * x[t];
    }
    let (pm, pc) = condition(&DVector::zeros(n), &sigma, &h, &yv, &vec![0.5; big_t]);

    let sampler = Sampler::with_state(cfg, prior, res, y, st);
    let plan = SweepPlan { loadings: true, ..SweepPlan::none() };
    let sweeps = 40_000;
    let mut chains = vec![Vec::with_capacity(sweeps); n];
    run_plan(sampler, plan, sweeps, |s| {
        for (t, c) in chains.iter_mut().enumerate() {
            c.push(s.loadings.beta_at(0, t));
        }
    });
    for t in 0..n {
        let c = &chains[t][1000..];
        let se = (variance(c) / effective_sample_size(c)).sqrt();
        let z = (mean(c) - mu - pm[t]) / se;
        assert!(z.abs() < 3.0, "beta_{t}: z = {z}");
        assert!(pc[(t, t)] > 0.0);
    }
}

fn ecdf_sup_error(samples: &mut [f64], grid: &[f64], cdf: &[f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    grid.iter()
        .zip(cdf)
        .map(|(&g, &c)| (samples.partition_point(|&s| s <= g) as f64 / n - c).abs())
        .fold(0.0, f64::max)
}

/// Trapezoid-rule CDF of an unnormalized log density on a grid.
fn grid_cdf(grid: &[f64], logf: impl Fn(f64) -> f64) -> Vec<f64> {
    let f: Vec<f64> = grid.iter().map(|&g| logf(g).exp()).collect();
    let mut cdf = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        cdf[k] = cdf[k - 1] + 0.5 * (f[k] + f[k - 1]) * (grid[k] - grid[k - 1]);
    }
    let total = cdf[grid.len() - 1];
    cdf.iter_mut().for_each(|c| *c /= total);
    cdf
}

#[test]
fn threshold_chain_matches_grid_posterior() {
    let beta = [0.2, 0.5, 0.9, -0.4];
    let x = [1.0, -1.2, 0.8, 1.5];
    let y = [0.1, -0.9, 0.8, -0.2];
    let var = 0.3;
    let upper = 1.2;
    let loglik = |d: f64| -> f64 {
        (0..4)
            .map(|t| {
                let e = y[t] - threshold_value(beta[t], d) * x[t];
                -0.5 * e * e / var
            })
            .sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut d = 0.6;
    let mut samples = Vec::with_capacity(200_000);
    for _ in 0..200_000 {
        let cur = loglik(d);
        d = sample_threshold(&mut rng, d, upper, |p| loglik(p) - cur).0;
        samples.push(d);
    }
    let grid: Vec<f64> = (0..=24_000).map(|k| upper * k as f64 / 24_000.0).collect();
    let cdf = grid_cdf(&grid, loglik);
    let err = ecdf_sup_error(&mut samples, &grid, &cdf);
    assert!(err < 0.02, "sup error {err}");
}

#[test]
fn point_update_matches_grid_posterior() {
    let (m, v, d) = (0.3, 0.5, 0.4);
    let (reg, target, var) = (1.3, 0.6, 0.2);
    let logpost = |b: f64| {
        let e = target - threshold_value(b, d) * reg;
        -0.5 * (b - m) * (b - m) / v - 0.5 * e * e / var
    };
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut beta = [0.0];
    let mut samples = Vec::with_capacity(200_000);
    for _ in 0..200_000 {
        let obs = PointObservation { regressors: &[reg], target, var };
        sample_lt_point(&mut rng, &mut beta, &[m], &[v], &[d], Some(obs));
        samples.push(beta[0]);
    }
    let grid: Vec<f64> = (0..=40_000).map(|k| -5.0 + 10.0 * k as f64 / 40_000.0).collect();
    let cdf = grid_cdf(&grid, logpost);
    let err = ecdf_sup_error(&mut samples, &grid, &cdf);
    assert!(err < 0.02, "sup error {err}");
}

#[test]
fn channel_components_follow_the_loadings() {
    let cfg = config(3, 4, 3, 2, Variant::M);
    let prior = default_priors(&cfg);
    let spec = SimulationSpec {
        loadings: Some(constants(&[0.0, 0.0, 0.0, 0.7, -0.3, 0.5])),
        ..SimulationSpec::demo(&cfg, 120)
    };
    let rec = simulate(&cfg, &prior, &spec, 33);
    let set = decompose_state(&rec.state).unwrap();
    let r = 3;
    let anchor = channel_components(&set, &rec.state, 0);
    let zero = channel_components(&set, &rec.state, 1);
    let loaded = channel_components(&set, &rec.state, 2);
    for (n, t) in (r..=120).enumerate() {
        let a = anchor[n].as_ref().expect("constant delta keeps counts");
        let lagged = set.at(t - 1);
        for (g, c) in lagged.quasi.iter().enumerate() {
            assert_eq!(a.quasi[g], c.value);
        }
        let z = zero[n].as_ref().unwrap();
        assert!(z.quasi.iter().chain(&z.real).all(|&v| v == 0.0));
        let l = loaded[n].as_ref().unwrap();
        let fitted = rec.state.factor_term(2, t);
        assert!((l.total() - fitted).abs() <= 1e-8 * fitted.abs().max(1.0));
    }
}

#[test]
fn constant_delta_has_one_stable_pair_across_time() {
    let delta = ar_coefficients_from_roots(&[(0.95, 0.05)], &[]);
    let cfg = config(2, 2, 1, 1, Variant::M);
    let spec = SimulationSpec {
        delta: Some(DeltaSpec::Constant(delta)),
        psi: Some(vec![0.0; 4]),
        w: Some(VarianceSpec::Constant(1.0)),
        ..SimulationSpec::demo(&cfg, 200)
    };
    let rec = simulate(&cfg, &default_priors(&cfg), &spec, 34);
    let set = decompose_state(&rec.state).unwrap();
    for c in &set.times {
        assert_eq!(c.counts(), (1, 0));
        assert!((c.quasi[0].modulus - 0.95).abs() < 1e-12);
        assert!((c.quasi[0].frequency - 0.05).abs() < 1e-12);
    }
}

#[test]
fn dic_is_stable_under_thinning() {
    let cfg = with_sweeps(config(4, 2, 2, 1, Variant::M), 300, 600, 35);
    let mut prior = default_priors(&cfg);
    psi_prior(&mut prior, 2, 100.0, 1e4);
    let rec = simulate(&cfg, &prior, &SimulationSpec::demo(&cfg, 200), 35);
    let draws = fit(&cfg, &prior, &rec.data);
    let full = compute_dic(&draws, &rec.data).unwrap().dic;
    let half = compute_dic(&draws.thinned(2), &rec.data).unwrap().dic;
    assert!(((full - half) / full).abs() < 0.005, "{full} vs {half}");
}

#[test]
fn sparsity_probability_tends_to_one_near_zero() {
    assert!(sparsity_probability(1e-6).unwrap() > 0.999_99);
}

proptest! {
    #[test]
    fn sparsity_probability_decreases_in_k(a in 0.1f64..10.0, b in 0.1f64..10.0) {
        prop_assume!((a - b).abs() > 1e-9);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(sparsity_probability(lo).unwrap() > sparsity_probability(hi).unwrap());
    }

    #[test]
    fn thresholded_values_vanish_when_inactive(beta in prop::collection::vec(-3.0f64..3.0, 1..40), d in 0.0f64..2.0) {
        let tr = apply_threshold(&beta, d);
        for t in 0..beta.len() {
            prop_assert_eq!(tr.b[t] * f64::from(u8::from(!tr.s[t])), 0.0);
            prop_assert_eq!(tr.s[t], beta[t].abs() >= d);
        }
    }

    #[test]
    fn simulated_variances_are_positive(seed in 0u64..10_000) {
        let cfg = config(3, 2, 2, 1, Variant::M);
        let mut prior = default_priors(&cfg);
        psi_prior(&mut prior, 2, 100.0, 1e4);
        prior.x0_variance = Some(1.0);
        let spec = SimulationSpec { max_attempts: Some(50), ..SimulationSpec::from_prior(60) };
        if let Ok(rec) = ltfm::simulate::simulate_dataset(&cfg, &prior, &spec, &mut ChaCha8Rng::seed_from_u64(seed)) {
            prop_assert!(rec.state.w.iter().all(|&w| w > 0.0 && w.is_finite()));
            prop_assert!(rec.state.sigma2.iter().all(|&s| s > 0.0 && s.is_finite()));
        }
    }
}
