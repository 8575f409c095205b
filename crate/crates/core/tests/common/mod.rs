#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use stratkit::data::{ExperimentData, Rows};
use stratkit::rng;

pub fn chi2_critical(df: usize, alpha: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(1.0 - alpha)
}

/// Pearson statistic of observed counts against equal expected counts.
pub fn chi2_uniform(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random dataset with both arms of size at least 2, Gaussian covariate,
/// outcome `y` and a binary take-up column correlated with treatment.
pub fn random_data(seed: u64, n: usize, eta: f64) -> ExperimentData {
    let mut g = rng::seeded(seed);
    loop {
        let a: Vec<u8> = (0..n).map(|_| u8::from(g.random::<f64>() < eta)).collect();
        let treated = a.iter().filter(|&&v| v == 1).count();
        if treated < 2 || n - treated < 2 {
            continue;
        }
        let x: Vec<f64> = (0..n).map(|_| normal(&mut g)).collect();
        let mut r = Vec::with_capacity(2 * n);
        for i in 0..n {
            let y = 1.0 + x[i] + f64::from(a[i]) * 0.5 + normal(&mut g);
            let p = if a[i] == 1 { 0.8 } else { 0.3 };
            let d = f64::from(u8::from(g.random::<f64>() < p));
            r.push(y);
            r.push(d);
        }
        return ExperimentData::new(eta, Rows::column(x), a, Rows::from_flat(2, r).unwrap()).unwrap();
    }
}

/// Same units keeping only response column `col`.
pub fn response_column(data: &ExperimentData, col: usize) -> ExperimentData {
    data.with_responses(Rows::column(data.r().coordinate(col))).unwrap()
}
