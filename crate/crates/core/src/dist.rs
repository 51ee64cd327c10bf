//! Sampling and density helpers on top of `rand_distr` and `statrs`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::erf::{erfc, erfc_inv};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[inline]
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw with shape-rate parameters.
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> f64 {
    rand_distr::Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}

pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    rand_distr::Beta::new(a, b)
        .expect("beta parameters must be positive")
        .sample(rng)
}

#[inline]
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

/// Standard normal CDF.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail `1 - Phi(x)`, accurate for large `x`.
#[inline]
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile.
pub fn norm_ppf(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// `log(Phi(b) - Phi(a))` for `a < b`, computed on the side of the mean
/// that avoids cancellation.
pub fn ln_norm_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (norm_sf(a) - norm_sf(b)).ln()
    } else {
        (norm_cdf(b) - norm_cdf(a)).ln()
    }
}

/// Draw from `N(mean, sd^2)` truncated to `(lo, hi)` by inversion.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let a = (lo - mean) / sd;
    let b = (hi - mean) / sd;
    let u: f64 = rng.random();
    let z = if a > 0.0 {
        // Work with upper tails to keep precision far right of the mean.
        let (sa, sb) = (norm_sf(a), norm_sf(b));
        let q = sa - u * (sa - sb);
        -norm_ppf(q)
    } else {
        let (ca, cb) = (norm_cdf(a), norm_cdf(b));
        norm_ppf(ca + u * (cb - ca))
    };
    (mean + sd * z.clamp(a, b)).clamp(lo, hi)
}

/// Log density of the truncated normal on `(lo, hi)`.
pub fn truncated_normal_logpdf(x: f64, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    if x <= lo || x >= hi {
        return f64::NEG_INFINITY;
    }
    normal_logpdf(x, mean, sd * sd) - ln_norm_interval((lo - mean) / sd, (hi - mean) / sd)
}

pub fn beta_logpdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

pub fn gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
}

/// Symmetric square-root factor `L` with `L L' = cov`. Falls back to a
/// clamped eigen-decomposition for positive semidefinite input.
pub fn psd_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        l.column_mut(j).scale_mut(s);
    }
    l
}

/// Draw from `N(mean, cov)`, allowing singular `cov`.
pub fn mvn<R: Rng + ?Sized>(rng: &mut R, mean: &DVector<f64>, cov: &DMatrix<f64>) -> DVector<f64> {
    let l = psd_factor(cov);
    let z = DVector::from_fn(mean.len(), |_, _| std_normal(rng));
    mean + l * z
}

/// Wishart draw `W(dof, scale)` with `E[U] = dof * scale` (Bartlett).
pub fn wishart<R: Rng + ?Sized>(rng: &mut R, dof: f64, scale: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = scale.nrows();
    if dof <= p as f64 - 1.0 {
        return Err(Error::Domain(format!("wishart dof {dof} <= p - 1")));
    }
    let l = scale
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical {
            t: 0,
            what: "wishart scale is not positive definite".into(),
        })?
        .l();
    let mut a = DMatrix::<f64>::zeros(p, p);
    for i in 0..p {
        let chi2 = 2.0 * gamma(rng, 0.5 * (dof - i as f64), 1.0);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = std_normal(rng);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    Ok((&w + w.transpose()) * 0.5)
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    Some((&inv + inv.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normal_helpers_agree() {
        for &x in &[-6.0, -1.3, 0.0, 0.4, 2.5, 7.0] {
            assert!((norm_cdf(x) + norm_sf(x) - 1.0).abs() < 1e-15);
        }
        for &x in &[-6.0, -1.3, 0.0, 0.4, 2.5] {
            assert!((norm_ppf(norm_cdf(x)) - x).abs() < 1e-6 * (1.0 + x.abs()));
        }
        assert!((norm_cdf(1.959963984540054) - 0.975).abs() < 1e-10);
    }

    #[test]
    fn truncated_normal_stays_in_bounds_and_matches_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mu, sd, lo, hi) = (0.9, 0.3, -1.0, 1.0);
        let n = 200_000;
        let mut s = 0.0;
        for _ in 0..n {
            let x = truncated_normal(&mut rng, mu, sd, lo, hi);
            assert!(x > lo && x < hi);
            s += x;
        }
        let a = (lo - mu) / sd;
        let b = (hi - mu) / sd;
        let z = norm_cdf(b) - norm_cdf(a);
        let exact = mu + sd * (norm_pdf(a) - norm_pdf(b)) / z;
        assert!((s / n as f64 - exact).abs() < 2e-3);
        // Far tail uses the upper-tail branch.
        let x = truncated_normal(&mut rng, 0.0, 1.0, 9.0, 10.0);
        assert!((9.0..10.0).contains(&x));
    }

    #[test]
    fn wishart_mean_is_dof_times_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scale = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.2]);
        let dof = 7.0;
        let n = 40_000;
        let mut acc = DMatrix::zeros(2, 2);
        for _ in 0..n {
            acc += wishart(&mut rng, dof, &scale).unwrap();
        }
        acc /= n as f64;
        let expect = &scale * dof;
        assert!((acc - expect).amax() < 0.03, "wishart mean off");
    }

    #[test]
    fn psd_factor_handles_singular_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&cov);
        assert!((&l * l.transpose() - cov).amax() < 1e-12);
    }

    #[test]
    fn densities_integrate_to_one() {
        let n = 20_000;
        let h = 1.0 / n as f64;
        let s: f64 = (0..n).map(|i| beta_logpdf((i as f64 + 0.5) * h, 20.0, 1.5).exp() * h).sum();
        assert!((s - 1.0).abs() < 1e-4);
        let h = 0.001;
        let s: f64 = (0..200_000)
            .map(|i| gamma_logpdf((i as f64 + 0.5) * h, 3.0, 2.0).exp() * h)
            .sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
