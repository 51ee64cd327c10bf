//! Kalman filtering, smoothing and forward-filtering backward-sampling on a
//! local-level model.

use ltfm::dlm::{kalman_filter, smooth, ffbs_from_filter, DlmSpec, ObsVar};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> ltfm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let big_t = 60;
    let mut level = 0.0;
    let mut truth = Vec::with_capacity(big_t);
    let mut obs = Vec::with_capacity(big_t);
    for _ in 0..big_t {
        level += 0.3 * noise.sample(&mut rng);
        truth.push(level);
        obs.push(DVector::from_element(1, level + noise.sample(&mut rng)));
    }

    let spec = DlmSpec {
        m0: DVector::zeros(1),
        c0: DMatrix::from_element(1, 1, 10.0),
        f: vec![DMatrix::identity(1, 1)],
        v: vec![ObsVar::Diagonal(vec![1.0])],
        g: vec![DMatrix::identity(1, 1)],
        w: vec![DMatrix::from_element(1, 1, 0.09)],
        offsets: None,
    };
    let filtered = kalman_filter(&spec, &obs)?;
    let smoothed = smooth(&filtered);

    let n_paths = 500;
    let mut draw_mean = vec![0.0; big_t + 1];
    for _ in 0..n_paths {
        for (acc, s) in draw_mean.iter_mut().zip(ffbs_from_filter(&filtered, &mut rng)) {
            *acc += s[0] / n_paths as f64;
        }
    }

    println!("{:>3} {:>8} {:>9} {:>8} {:>10}", "t", "truth", "smoothed", "sd", "ffbs mean");
    for t in (1..=big_t).step_by(6) {
        println!(
            "{t:>3} {:>8.3} {:>9.3} {:>8.3} {:>10.3}",
            truth[t - 1],
            smoothed.mean[t][0],
            smoothed.cov[t][(0, 0)].sqrt(),
            draw_mean[t]
        );
    }
    Ok(())
}
