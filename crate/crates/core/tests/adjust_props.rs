mod common;

use common::{normal, random_data, response_column};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use stratkit::adjust::{adjusted_ate, adjusted_late, logit_fit, Basis, BasisSpec, LOGIT_CAP};
use stratkit::data::{ExperimentData, Rows};
use stratkit::moments::{expit, solve_ate, solve_late};
use stratkit::rng;

#[test]
fn logistic_recovers_coefficients_at_scale() {
    let n = 100_000;
    let truth = [-0.5, 1.2, -0.4];
    let mut g = rng::seeded(1);
    let xs: Vec<f64> = (0..n).map(|_| normal(&mut g)).collect();
    let design = DMatrix::from_fn(n, 3, |i, j| xs[i].powi(j as i32));
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let p = expit(truth[0] + truth[1] * xs[i] + truth[2] * xs[i] * xs[i]);
            f64::from(u8::from(g.random::<f64>() < p))
        })
        .collect();
    let all: Vec<usize> = (0..n).collect();
    let fit = logit_fit(&design, &d, &all).unwrap();
    assert!(fit.converged && !fit.capped);
    // Standard errors from the inverse Fisher information at the estimate.
    let beta = DVector::from_vec(fit.coefficients.clone());
    let p = (&design * &beta).map(expit);
    let mut weighted = design.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= p[i] * (1.0 - p[i]);
    }
    let info = design.transpose() * weighted;
    let cov = info.try_inverse().unwrap();
    for j in 0..3 {
        let se = cov[(j, j)].sqrt();
        assert!((fit.coefficients[j] - truth[j]).abs() <= 3.0 * se, "coef {j}: {} vs {}", fit.coefficients[j], truth[j]);
    }
}

#[test]
fn adjusted_ate_ignores_common_shift() {
    for seed in 0..10 {
        let data = response_column(&random_data(seed, 80, 0.5), 0);
        let shifted = data
            .with_responses(Rows::column(data.r().coordinate(0).iter().map(|y| y + 17.5).collect()))
            .unwrap();
        for basis in [Basis::Intercept, Basis::Quad, Basis::QuadKink] {
            let a = adjusted_ate(&data, BasisSpec::new(basis)).unwrap().theta;
            let b = adjusted_ate(&shifted, BasisSpec::new(basis)).unwrap().theta;
            assert!((a - b).abs() < 1e-9, "{basis:?}: {a} vs {b}");
        }
    }
}

#[test]
fn intercept_basis_balanced_is_difference_in_means() {
    let mut g = rng::seeded(2);
    let n = 30;
    let a: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 0)).collect();
    let y: Vec<f64> = (0..n).map(|_| normal(&mut g)).collect();
    let data = ExperimentData::new(0.5, Rows::column(vec![0.0; n]), a.clone(), Rows::column(y.clone())).unwrap();
    let mean = |arm: u8| {
        let v: Vec<f64> = (0..n).filter(|&i| a[i] == arm).map(|i| y[i]).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let adj = adjusted_ate(&data, BasisSpec::new(Basis::Intercept)).unwrap();
    assert!((adj.theta - (mean(1) - mean(0))).abs() < 1e-12);
}

#[test]
fn perfect_compliance_late_matches_display() {
    let n = 20;
    let mut g = rng::seeded(3);
    let a: Vec<u8> = (0..n).map(|i| u8::from(i % 2 == 1)).collect();
    let x: Vec<f64> = (0..n).map(|_| normal(&mut g)).collect();
    let y: Vec<f64> = (0..n).map(|i| 1.0 + x[i] + f64::from(a[i]) + normal(&mut g)).collect();
    let resp: Vec<f64> = (0..n).flat_map(|i| [y[i], f64::from(a[i])]).collect();
    let data = ExperimentData::new(0.5, Rows::column(x), a.clone(), Rows::from_flat(2, resp).unwrap()).unwrap();
    let got = adjusted_late(&data, BasisSpec::new(Basis::Intercept)).unwrap();
    assert_eq!(got.capped_fits, 2);

    // Independent evaluation of the display: intercept-only least squares
    // gives arm means; take-up is constant within each arm, so the logistic
    // fits sit at the cap.
    let ybar = |arm: u8| (0..n).filter(|&i| a[i] == arm).map(|i| y[i]).sum::<f64>() / (n / 2) as f64;
    let (m1, m0) = (ybar(1), ybar(0));
    let (p1, p0) = (expit(LOGIT_CAP), expit(-LOGIT_CAP));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        let (ai, di) = (f64::from(a[i]), f64::from(a[i]));
        num += 2.0 * ai * (y[i] - m1) - 2.0 * (1.0 - ai) * (y[i] - m0) + m1 - m0;
        den += 2.0 * ai * (di - p1) - 2.0 * (1.0 - ai) * (di - p0) + p1 - p0;
    }
    assert!((den / n as f64 - 1.0).abs() < 1e-12);
    assert!((got.theta - num / den).abs() < 1e-12);
    let ate = adjusted_ate(&response_column(&data, 0), BasisSpec::new(Basis::Intercept)).unwrap();
    assert!((got.theta - ate.theta).abs() < 1e-11);
}

#[test]
fn empty_basis_reduces_to_plain_estimators() {
    for seed in 0..20 {
        let data = random_data(seed, 60, 0.5);
        let late = adjusted_late(&data, BasisSpec::new(Basis::Empty)).unwrap().theta;
        assert!((late - solve_late(&data).unwrap()).abs() < 1e-10);
        let y = response_column(&data, 0);
        let ate = adjusted_ate(&y, BasisSpec::new(Basis::Empty)).unwrap().theta;
        assert!((ate - solve_ate(&y)).abs() < 1e-12);
    }
}
