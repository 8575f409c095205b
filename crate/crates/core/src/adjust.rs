//! Regression-adjusted (augmented) estimators.
//!
//! First stages `mu_a(x)` are fit separately on each arm by least squares
//! (outcomes) or logistic regression (take-up), on a small polynomial basis
//! in one covariate, and plugged into the augmented moment
//!
//! `A (Y - mu_1(X)) / eta - (1 - A)(Y - mu_0(X)) / (1 - eta) + mu_1(X) - mu_0(X)`.
//!
//! Fits use the same sample they predict on (no cross-fitting).

use nalgebra::{DMatrix, DVector};

use crate::data::ExperimentData;
use crate::error::{Error, Result};
use crate::moments::expit;
use crate::stats::median;

/// Regressor set built from one scalar covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// No regressors: every first stage predicts 0.
    Empty,
    /// `(1)`.
    Intercept,
    /// `(1, x, x^2)`.
    Quad,
    /// `(1, x, x^2, x 1{x > t})`, `t` the full-sample median of `x`.
    QuadKink,
}

impl Basis {
    pub fn parse(s: &str) -> Result<Option<Self>> {
        match s {
            "none" => Ok(None),
            "quad" => Ok(Some(Basis::Quad)),
            "quad-kink" | "quad_kink" => Ok(Some(Basis::QuadKink)),
            "intercept" => Ok(Some(Basis::Intercept)),
            other => Err(Error::InvalidArgument(format!(
                "unknown basis '{other}' (expected none, quad or quad-kink)"
            ))),
        }
    }

    pub fn columns(self) -> usize {
        match self {
            Basis::Empty => 0,
            Basis::Intercept => 1,
            Basis::Quad => 3,
            Basis::QuadKink => 4,
        }
    }
}

/// A basis applied to covariate column `coordinate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub basis: Basis,
    pub coordinate: usize,
}

impl BasisSpec {
    pub fn new(basis: Basis) -> Self {
        Self { basis, coordinate: 0 }
    }

    /// `n x p` design matrix over all units.
    pub fn design(&self, data: &ExperimentData) -> Result<DMatrix<f64>> {
        if self.coordinate >= data.x().width() {
            return Err(Error::InvalidArgument(format!(
                "basis covariate {} out of range",
                self.coordinate
            )));
        }
        let x = data.x().coordinate(self.coordinate);
        let kink = match self.basis {
            Basis::QuadKink => median(&x)?,
            _ => 0.0,
        };
        let p = self.basis.columns();
        Ok(DMatrix::from_fn(x.len(), p, |i, j| {
            let v = x[i];
            match j {
                0 => 1.0,
                1 => v,
                2 => v * v,
                _ => {
                    if v > kink {
                        v
                    } else {
                        0.0
                    }
                }
            }
        }))
    }
}

fn subset_rows(design: &DMatrix<f64>, subset: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(subset.len(), design.ncols(), |r, c| design[(subset[r], c)])
}

/// Minimum-norm least squares of `y` on the design rows in `subset`.
///
/// Singular values below `1e-10` times the largest are treated as zero.
pub fn ols_fit(design: &DMatrix<f64>, y: &[f64], subset: &[usize]) -> Result<Vec<f64>> {
    if subset.is_empty() {
        return Err(Error::EmptyInput);
    }
    if design.ncols() == 0 {
        return Ok(Vec::new());
    }
    let xs = subset_rows(design, subset);
    let ys = DVector::from_iterator(subset.len(), subset.iter().map(|&i| y[i]));
    let svd = xs.svd(true, true);
    let eps = 1e-10 * svd.singular_values.max();
    let beta = svd
        .solve(&ys, eps)
        .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
    Ok(beta.iter().copied().collect())
}

/// Bound on `|coefficient|` and on the linear predictor of logistic fits.
pub const LOGIT_CAP: f64 = 30.0;
const LOGIT_MAX_ITER: usize = 100;
const LOGIT_SCORE_TOL: f64 = 1e-8;

/// Logistic regression fit and its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitFit {
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Coefficients hit [`LOGIT_CAP`] (separation) or the outcome was constant.
    pub capped: bool,
}

fn log_likelihood(xs: &DMatrix<f64>, d: &DVector<f64>, beta: &DVector<f64>) -> f64 {
    let eta = xs * beta;
    eta.iter()
        .zip(d.iter())
        .map(|(&e, &di)| {
            let e = e.clamp(-LOGIT_CAP, LOGIT_CAP);
            di * e - e.exp().ln_1p()
        })
        .sum()
}

/// Bernoulli maximum likelihood with an expit link, by iteratively
/// reweighted least squares.
///
/// Stops when the largest score component is at most `1e-8` or after 100
/// iterations. Coefficients are capped at `+-30`; a constant outcome returns
/// an intercept-only fit at the cap. Both cases set `capped` rather than
/// failing.
pub fn logit_fit(design: &DMatrix<f64>, d: &[f64], subset: &[usize]) -> Result<LogitFit> {
    if subset.is_empty() {
        return Err(Error::EmptyInput);
    }
    let p = design.ncols();
    if p == 0 {
        return Ok(LogitFit {
            coefficients: Vec::new(),
            iterations: 0,
            converged: true,
            capped: false,
        });
    }
    if let Some(&i) = subset.iter().find(|&&i| d[i] != 0.0 && d[i] != 1.0) {
        return Err(Error::InvalidArgument(format!(
            "row {}: logistic outcome must be 0 or 1, got {}",
            i + 1,
            d[i]
        )));
    }
    let first = d[subset[0]];
    if subset.iter().all(|&i| d[i] == first) {
        let mut coefficients = vec![0.0; p];
        coefficients[0] = if first == 1.0 { LOGIT_CAP } else { -LOGIT_CAP };
        return Ok(LogitFit {
            coefficients,
            iterations: 0,
            converged: false,
            capped: true,
        });
    }

    let xs = subset_rows(design, subset);
    let ds = DVector::from_iterator(subset.len(), subset.iter().map(|&i| d[i]));
    let mut beta = DVector::<f64>::zeros(p);
    let mut ll = log_likelihood(&xs, &ds, &beta);
    let mut capped = false;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LOGIT_MAX_ITER {
        let probs = (&xs * &beta).map(|e| expit(e.clamp(-LOGIT_CAP, LOGIT_CAP)));
        let score = xs.tr_mul(&(&ds - &probs));
        if score.amax() <= LOGIT_SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let w = probs.map(|q| q * (1.0 - q));
        let mut weighted = xs.clone();
        for (mut row, wi) in weighted.row_iter_mut().zip(w.iter()) {
            row *= *wi;
        }
        let hessian = xs.tr_mul(&weighted);
        let svd = hessian.svd(true, true);
        let eps = 1e-10 * svd.singular_values.max();
        let Ok(step) = svd.solve(&score, eps) else {
            break;
        };
        // step-halving keeps the likelihood monotone
        let mut t = 1.0;
        let mut next = &beta + &step;
        let mut next_ll = log_likelihood(&xs, &ds, &next);
        while next_ll < ll - 1e-12 && t > 1e-6 {
            t *= 0.5;
            next = &beta + &step * t;
            next_ll = log_likelihood(&xs, &ds, &next);
        }
        if next.amax() > LOGIT_CAP {
            next.apply(|b| *b = b.clamp(-LOGIT_CAP, LOGIT_CAP));
            capped = true;
            next_ll = log_likelihood(&xs, &ds, &next);
        }
        let moved = (&next - &beta).amax();
        beta = next;
        ll = next_ll;
        if capped && moved < 1e-12 {
            break;
        }
    }
    Ok(LogitFit {
        coefficients: beta.iter().copied().collect(),
        iterations,
        converged,
        capped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Link {
    Identity,
    Logistic,
}

/// Fitted arm-specific conditional mean `mu_a(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageFit {
    pub link: Link,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub capped: bool,
}

impl FirstStageFit {
    pub fn ols(design: &DMatrix<f64>, y: &[f64], subset: &[usize]) -> Result<Self> {
        Ok(Self {
            link: Link::Identity,
            coefficients: ols_fit(design, y, subset)?,
            iterations: 1,
            converged: true,
            capped: false,
        })
    }

    pub fn logit(design: &DMatrix<f64>, d: &[f64], subset: &[usize]) -> Result<Self> {
        let fit = logit_fit(design, d, subset)?;
        Ok(Self {
            link: Link::Logistic,
            coefficients: fit.coefficients,
            iterations: fit.iterations,
            converged: fit.converged,
            capped: fit.capped,
        })
    }

    /// Predictions for every design row. An empty basis predicts 0 under
    /// either link.
    pub fn predict(&self, design: &DMatrix<f64>) -> Vec<f64> {
        if self.coefficients.is_empty() {
            return vec![0.0; design.nrows()];
        }
        let beta = DVector::from_column_slice(&self.coefficients);
        let lin = design * beta;
        match self.link {
            Link::Identity => lin.iter().copied().collect(),
            Link::Logistic => lin.iter().map(|&e| expit(e.clamp(-LOGIT_CAP, LOGIT_CAP))).collect(),
        }
    }
}

/// Output of an adjusted estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedEstimate {
    pub theta: f64,
    /// Influence-function variance estimate valid under i.i.d. assignment.
    pub vhat_iid: f64,
    /// Number of first-stage fits that hit the logistic cap.
    pub capped_fits: usize,
}

fn arms(data: &ExperimentData) -> Result<[Vec<usize>; 2]> {
    let mut out = [Vec::new(), Vec::new()];
    for (i, &a) in data.treatment().iter().enumerate() {
        out[a as usize].push(i);
    }
    for arm in 0..2u8 {
        if out[arm as usize].is_empty() {
            return Err(Error::EmptyArm(arm));
        }
    }
    Ok(out)
}

/// Per-unit augmented terms for response column `w` given predictions.
fn augmented_terms(data: &ExperimentData, w: &[f64], mu1: &[f64], mu0: &[f64]) -> Vec<f64> {
    let eta = data.eta();
    data.treatment()
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let ipw = if a == 1 {
                (w[i] - mu1[i]) / eta
            } else {
                -(w[i] - mu0[i]) / (1.0 - eta)
            };
            ipw + mu1[i] - mu0[i]
        })
        .collect()
}

/// Augmented ATE with least-squares first stages.
pub fn adjusted_ate(data: &ExperimentData, basis: BasisSpec) -> Result<AdjustedEstimate> {
    let [control, treated] = arms(data)?;
    let design = basis.design(data)?;
    let y = data.r().coordinate(0);
    let mu1 = FirstStageFit::ols(&design, &y, &treated)?.predict(&design);
    let mu0 = FirstStageFit::ols(&design, &y, &control)?.predict(&design);
    let terms = augmented_terms(data, &y, &mu1, &mu0);
    let n = terms.len() as f64;
    let theta = terms.iter().sum::<f64>() / n;
    let vhat_iid = terms.iter().map(|t| (t - theta) * (t - theta)).sum::<f64>() / n;
    Ok(AdjustedEstimate {
        theta,
        vhat_iid,
        capped_fits: 0,
    })
}

/// Augmented LATE: ratio of the augmented outcome contrast (least-squares
/// first stages) to the augmented take-up contrast (logistic first stages).
pub fn adjusted_late(data: &ExperimentData, basis: BasisSpec) -> Result<AdjustedEstimate> {
    adjusted_late_with(data, basis, 1e-12)
}

pub fn adjusted_late_with(data: &ExperimentData, basis: BasisSpec, first_stage_tol: f64) -> Result<AdjustedEstimate> {
    if data.r().width() < 2 {
        return Err(Error::InvalidArgument("LATE needs responses (y, d)".into()));
    }
    let [control, treated] = arms(data)?;
    let design = basis.design(data)?;
    let y = data.r().coordinate(0);
    let d = data.r().coordinate(1);
    let mu1_y = FirstStageFit::ols(&design, &y, &treated)?.predict(&design);
    let mu0_y = FirstStageFit::ols(&design, &y, &control)?.predict(&design);
    let fit1_d = FirstStageFit::logit(&design, &d, &treated)?;
    let fit0_d = FirstStageFit::logit(&design, &d, &control)?;
    let capped_fits = usize::from(fit1_d.capped) + usize::from(fit0_d.capped);
    let mu1_d = fit1_d.predict(&design);
    let mu0_d = fit0_d.predict(&design);
    let num_terms = augmented_terms(data, &y, &mu1_y, &mu0_y);
    let den_terms = augmented_terms(data, &d, &mu1_d, &mu0_d);
    let n = num_terms.len() as f64;
    let num = num_terms.iter().sum::<f64>() / n;
    let den = den_terms.iter().sum::<f64>() / n;
    if den.abs() < first_stage_tol {
        return Err(Error::ZeroFirstStage(den));
    }
    let theta = num / den;
    let vhat_iid = num_terms
        .iter()
        .zip(&den_terms)
        .map(|(ny, nd)| {
            let psi = (ny - theta * nd) / den;
            psi * psi
        })
        .sum::<f64>()
        / n;
    Ok(AdjustedEstimate {
        theta,
        vhat_iid,
        capped_fits,
    })
}
