//! Moment conditions `E[m(X, A, R, theta)] = 0` and their sample-analog
//! estimators.
//!
//! Each built-in parameter has a dedicated direct solver and an analytic
//! Jacobian estimator `M_hat = (1/n) sum d m / d theta`. [`solve_generic`]
//! handles user-supplied moments.

use nalgebra::{DMatrix, DVector};

use crate::data::{Estimate, ExperimentData};
use crate::error::{Error, Result};
use crate::stats::weighted_quantile;

/// A moment function together with its estimator machinery.
pub trait MomentModel: Send + Sync {
    fn name(&self) -> &str;

    /// Parameter dimension `d_theta`.
    fn dim(&self) -> usize;

    /// Writes `m(x, a, r, theta)` into `out` (length `dim()`).
    fn eval(&self, eta: f64, x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]);

    /// Dedicated solver for the sample moment equation.
    fn solve(&self, _data: &ExperimentData) -> Result<Vec<f64>> {
        Err(Error::NoDedicatedSolver(self.name().to_string()))
    }

    /// `M_hat` at `theta`, row-major `dim x dim` (rows index moment
    /// components, columns index parameters). Defaults to central
    /// differences of the sample moment.
    fn jacobian_hat(&self, data: &ExperimentData, theta: &[f64]) -> Result<Vec<f64>> {
        Ok(numeric_jacobian(self, data, theta))
    }

    /// Scalar summary `h(theta)`, for vector parameters.
    fn transform(&self, _theta: &[f64]) -> Option<f64> {
        None
    }
}

/// Sample moment `(1/n) sum_i m(X_i, A_i, R_i, theta)`.
pub fn sample_moment<M: MomentModel + ?Sized>(model: &M, data: &ExperimentData, theta: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let mut acc = vec![0.0; d];
    let mut buf = vec![0.0; d];
    for i in 0..data.n() {
        let (x, a, r) = data.unit(i);
        model.eval(data.eta(), x, a, r, theta, &mut buf);
        for (s, v) in acc.iter_mut().zip(&buf) {
            *s += v;
        }
    }
    let n = data.n() as f64;
    acc.iter_mut().for_each(|s| *s /= n);
    acc
}

/// Per-unit moment values for a scalar parameter.
pub fn unit_moments<M: MomentModel + ?Sized>(model: &M, data: &ExperimentData, theta: &[f64]) -> Vec<f64> {
    let mut buf = vec![0.0; model.dim()];
    (0..data.n())
        .map(|i| {
            let (x, a, r) = data.unit(i);
            model.eval(data.eta(), x, a, r, theta, &mut buf);
            buf[0]
        })
        .collect()
}

fn numeric_jacobian<M: MomentModel + ?Sized>(model: &M, data: &ExperimentData, theta: &[f64]) -> Vec<f64> {
    let d = model.dim();
    let mut jac = vec![0.0; d * d];
    let mut probe = theta.to_vec();
    for j in 0..d {
        let h = 1e-6 * theta[j].abs().max(1.0);
        probe[j] = theta[j] + h;
        let up = sample_moment(model, data, &probe);
        probe[j] = theta[j] - h;
        let down = sample_moment(model, data, &probe);
        probe[j] = theta[j];
        for i in 0..d {
            jac[i * d + j] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    jac
}

/// Solves with the model's dedicated solver and attaches `h(theta)`.
pub fn estimate<M: MomentModel + ?Sized>(model: &M, data: &ExperimentData) -> Result<Estimate> {
    let theta = model.solve(data)?;
    let transformed = model.transform(&theta);
    Ok(Estimate::point(theta, transformed, model.name()))
}

/// Horvitz-Thompson contrast of response column `col`:
/// `(1/(eta n)) sum W A - (1/((1-eta) n)) sum W (1-A)`.
pub fn ht_contrast(data: &ExperimentData, col: usize) -> f64 {
    let (mut t, mut c) = (0.0, 0.0);
    for i in 0..data.n() {
        let (_, a, r) = data.unit(i);
        if a == 1 {
            t += r[col];
        } else {
            c += r[col];
        }
    }
    let n = data.n() as f64;
    t / (data.eta() * n) - c / ((1.0 - data.eta()) * n)
}

#[inline]
fn ipw(eta: f64, a: u8, w: f64) -> f64 {
    if a == 1 {
        w / eta
    } else {
        -w / (1.0 - eta)
    }
}

#[inline]
pub fn expit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// ATE moment `YA/eta - Y(1-A)/(1-eta) - theta`.
pub fn m_ate(a: u8, y: f64, theta: f64, eta: f64) -> f64 {
    ipw(eta, a, y) - theta
}

/// Average treatment effect; response column 0 is the outcome.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ate;

impl MomentModel for Ate {
    fn name(&self) -> &str {
        "ate"
    }

    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, eta: f64, _x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = m_ate(a, r[0], theta[0], eta);
    }

    fn solve(&self, data: &ExperimentData) -> Result<Vec<f64>> {
        Ok(vec![solve_ate(data)])
    }

    fn jacobian_hat(&self, _data: &ExperimentData, _theta: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-1.0])
    }
}

/// Horvitz-Thompson difference in means.
pub fn solve_ate(data: &ExperimentData) -> f64 {
    ht_contrast(data, 0)
}

/// How the QTE solver normalizes each arm's empirical CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QteNormalization {
    /// Divide by the realized arm size. This is the exact minimizer of the
    /// sample indicator moment, because `eta` cancels from it.
    #[default]
    RealizedArm,
    /// Divide by the design arm size `eta_a n` (Horvitz-Thompson CDF),
    /// capped at the arm maximum.
    DesignEta,
}

/// Quantile treatment effect: `theta = (q_1(tau), q_0(tau))`,
/// `h(s, t) = s - t`.
#[derive(Debug, Clone, Copy)]
pub struct Qte {
    pub tau: f64,
    pub normalization: QteNormalization,
}

impl Qte {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            normalization: QteNormalization::default(),
        }
    }
}

impl MomentModel for Qte {
    fn name(&self) -> &str {
        "qte"
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, eta: f64, _x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]) {
        let y = r[0];
        if a == 1 {
            out[0] = (self.tau - f64::from(u8::from(y <= theta[0]))) / eta;
            out[1] = 0.0;
        } else {
            out[0] = 0.0;
            out[1] = (self.tau - f64::from(u8::from(y <= theta[1]))) / (1.0 - eta);
        }
    }

    fn solve(&self, data: &ExperimentData) -> Result<Vec<f64>> {
        let (q1, q0) = solve_qte_with(data, self.tau, self.normalization)?;
        Ok(vec![q1, q0])
    }

    fn jacobian_hat(&self, _data: &ExperimentData, _theta: &[f64]) -> Result<Vec<f64>> {
        Err(Error::NonScalarParameter(
            "qte (indicator moment has no sample derivative)".into(),
        ))
    }

    fn transform(&self, theta: &[f64]) -> Option<f64> {
        Some(theta[0] - theta[1])
    }
}

/// Arm-wise `tau`-quantiles `(q_1, q_0)` with the realized-arm convention.
pub fn solve_qte(data: &ExperimentData, tau: f64) -> Result<(f64, f64)> {
    solve_qte_with(data, tau, QteNormalization::RealizedArm)
}

pub fn solve_qte_with(data: &ExperimentData, tau: f64, normalization: QteNormalization) -> Result<(f64, f64)> {
    let arm_values = |arm: u8| -> Vec<f64> {
        (0..data.n())
            .filter(|&i| data.treatment()[i] == arm)
            .map(|i| data.r().row(i)[0])
            .collect()
    };
    let mut out = [0.0; 2];
    for (slot, arm) in [(0, 1u8), (1, 0u8)] {
        let values = arm_values(arm);
        if values.is_empty() {
            return Err(Error::EmptyArm(arm));
        }
        out[slot] = match normalization {
            QteNormalization::RealizedArm => weighted_quantile(&values, tau)?,
            QteNormalization::DesignEta => {
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(Error::InvalidArgument(format!("quantile level {tau} outside (0, 1)")));
                }
                let mut sorted = values;
                sorted.sort_by(f64::total_cmp);
                let denom = data.arm_eta(arm) * data.n() as f64;
                let rank = (1..=sorted.len())
                    .find(|&j| j as f64 / denom >= tau)
                    .unwrap_or(sorted.len());
                sorted[rank - 1]
            }
        };
    }
    Ok((out[0], out[1]))
}

/// Wald-type LATE; response columns are `(y, d)`.
#[derive(Debug, Clone, Copy)]
pub struct Late {
    /// `|HT_D|` below this is treated as a zero first stage.
    pub first_stage_tol: f64,
}

impl Default for Late {
    fn default() -> Self {
        Self {
            first_stage_tol: 1e-12,
        }
    }
}

impl MomentModel for Late {
    fn name(&self) -> &str {
        "late"
    }

    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, eta: f64, _x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]) {
        out[0] = ipw(eta, a, r[0]) - theta[0] * ipw(eta, a, r[1]);
    }

    fn solve(&self, data: &ExperimentData) -> Result<Vec<f64>> {
        Ok(vec![solve_late_with(data, self.first_stage_tol)?])
    }

    fn jacobian_hat(&self, data: &ExperimentData, _theta: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![-ht_contrast(data, 1)])
    }
}

pub fn solve_late(data: &ExperimentData) -> Result<f64> {
    solve_late_with(data, Late::default().first_stage_tol)
}

pub fn solve_late_with(data: &ExperimentData, tol: f64) -> Result<f64> {
    if data.r().width() < 2 {
        return Err(Error::InvalidArgument("LATE needs responses (y, d)".into()));
    }
    let first = ht_contrast(data, 1);
    if first.abs() < tol {
        return Err(Error::ZeroFirstStage(first));
    }
    Ok(ht_contrast(data, 0) / first)
}

/// Covariate weight `omega(x)` for the weighted ATE.
pub type WeightFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Weighted ATE with known weight function `omega(x)`.
pub struct Wate {
    weight: WeightFn,
}

impl Wate {
    pub fn new(weight: WeightFn) -> Self {
        Self { weight }
    }

    /// Weight read from covariate column `j`.
    pub fn from_coordinate(j: usize) -> Self {
        Self::new(Box::new(move |x: &[f64]| x[j]))
    }

    fn weights(&self, data: &ExperimentData) -> Vec<f64> {
        data.x().iter().map(|x| (self.weight)(x)).collect()
    }
}

impl MomentModel for Wate {
    fn name(&self) -> &str {
        "wate"
    }

    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, eta: f64, x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]) {
        let w = (self.weight)(x);
        out[0] = w * ipw(eta, a, r[0]) - w * theta[0];
    }

    fn solve(&self, data: &ExperimentData) -> Result<Vec<f64>> {
        Ok(vec![solve_wate(data, &self.weights(data))?])
    }

    fn jacobian_hat(&self, data: &ExperimentData, _theta: &[f64]) -> Result<Vec<f64>> {
        let w = self.weights(data);
        Ok(vec![-w.iter().sum::<f64>() / data.n() as f64])
    }
}

/// `sum w_i (Y_i A_i/eta - Y_i (1-A_i)/(1-eta)) / sum w_i`.
pub fn solve_wate(data: &ExperimentData, weights: &[f64]) -> Result<f64> {
    if weights.len() != data.n() {
        return Err(Error::LengthMismatch {
            field: "weights",
            expected: data.n(),
            found: weights.len(),
        });
    }
    if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
        return Err(Error::NonFiniteValue {
            row: i + 1,
            field: "weights",
        });
    }
    let mass: f64 = weights.iter().sum();
    if mass == 0.0 {
        return Err(Error::ZeroWeightMass);
    }
    let num: f64 = (0..data.n())
        .map(|i| {
            let (_, a, r) = data.unit(i);
            weights[i] * ipw(data.eta(), a, r[0])
        })
        .sum();
    Ok(num / mass)
}

/// Log-odds ratio for a binary outcome: `theta = (logit p_0, logit p_1 -
/// logit p_0)`, `h(s, t) = t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LogOdds;

impl MomentModel for LogOdds {
    fn name(&self) -> &str {
        "logodds"
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, _eta: f64, _x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]) {
        let resid = r[0] - expit(theta[0] + theta[1] * f64::from(a));
        if a == 1 {
            out[0] = 0.0;
            out[1] = resid;
        } else {
            out[0] = resid;
            out[1] = 0.0;
        }
    }

    fn solve(&self, data: &ExperimentData) -> Result<Vec<f64>> {
        let (s, t) = solve_logodds(data)?;
        Ok(vec![s, t])
    }

    fn jacobian_hat(&self, data: &ExperimentData, theta: &[f64]) -> Result<Vec<f64>> {
        let n = data.n() as f64;
        let p0 = expit(theta[0]);
        let p1 = expit(theta[0] + theta[1]);
        let n1 = data.arm_size(1) as f64;
        let n0 = n - n1;
        let c0 = -(n0 / n) * p0 * (1.0 - p0);
        let c1 = -(n1 / n) * p1 * (1.0 - p1);
        Ok(vec![c0, 0.0, c1, c1])
    }

    fn transform(&self, theta: &[f64]) -> Option<f64> {
        Some(theta[1])
    }
}

pub fn solve_logodds(data: &ExperimentData) -> Result<(f64, f64)> {
    let mut sum = [0.0; 2];
    let mut count = [0usize; 2];
    for i in 0..data.n() {
        let (_, a, r) = data.unit(i);
        let y = r[0];
        if y != 0.0 && y != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "row {}: log-odds needs a binary outcome, got {y}",
                i + 1
            )));
        }
        sum[a as usize] += y;
        count[a as usize] += 1;
    }
    let mut p = [0.0; 2];
    for arm in 0..2u8 {
        let c = count[arm as usize];
        if c == 0 {
            return Err(Error::EmptyArm(arm));
        }
        p[arm as usize] = sum[arm as usize] / c as f64;
        if p[arm as usize] == 0.0 || p[arm as usize] == 1.0 {
            return Err(Error::DegenerateArm {
                arm,
                mean: p[arm as usize],
            });
        }
    }
    let base = logit(p[0]);
    Ok((base, logit(p[1]) - base))
}

/// A moment given as a closure, for parameters without a dedicated solver.
pub struct FnMoment<F> {
    name: String,
    dim: usize,
    f: F,
}

impl<F> FnMoment<F>
where
    F: Fn(f64, &[f64], u8, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    /// `f(eta, x, a, r, theta, out)`.
    pub fn new(name: impl Into<String>, dim: usize, f: F) -> Self {
        Self {
            name: name.into(),
            dim,
            f,
        }
    }
}

impl<F> MomentModel for FnMoment<F>
where
    F: Fn(f64, &[f64], u8, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, eta: f64, x: &[f64], a: u8, r: &[f64], theta: &[f64], out: &mut [f64]) {
        (self.f)(eta, x, a, r, theta, out)
    }
}

/// How [`solve_generic`] reached its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Damped Newton reached the residual tolerance.
    Newton,
    /// Bisection located a sign change of a scalar monotone moment to
    /// bracket-width tolerance. For step-function moments (quantiles) the
    /// residual at the returned point can exceed the Newton tolerance.
    Bisection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenericSolution {
    pub theta: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub method: SolveMethod,
}

const GENERIC_TOL: f64 = 1e-10;
const GENERIC_MAX_ITER: usize = 100;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Zero of the sample moment by damped Newton with a differenced Jacobian,
/// falling back to bracketing and bisection for scalar parameters.
pub fn solve_generic<M: MomentModel + ?Sized>(
    model: &M,
    data: &ExperimentData,
    init: &[f64],
) -> Result<GenericSolution> {
    let d = model.dim();
    if init.len() != d {
        return Err(Error::LengthMismatch {
            field: "initial theta",
            expected: d,
            found: init.len(),
        });
    }
    if d == 0 || d > 3 {
        return Err(Error::InvalidArgument(format!(
            "generic solver supports 1 to 3 parameters, got {d}"
        )));
    }
    let newton = newton(model, data, init);
    match newton {
        Ok(sol) => Ok(sol),
        Err(err) if d == 1 => bisect(model, data, init[0]).or(Err(err)),
        Err(err) => Err(err),
    }
}

fn newton<M: MomentModel + ?Sized>(model: &M, data: &ExperimentData, init: &[f64]) -> Result<GenericSolution> {
    let d = model.dim();
    let mut theta = init.to_vec();
    let mut f = sample_moment(model, data, &theta);
    let mut res = norm(&f);
    for iter in 0..GENERIC_MAX_ITER {
        if res <= GENERIC_TOL {
            return Ok(GenericSolution {
                theta,
                residual: res,
                iterations: iter,
                method: SolveMethod::Newton,
            });
        }
        if !res.is_finite() {
            break;
        }
        let jac = DMatrix::from_row_slice(d, d, &numeric_jacobian(model, data, &theta));
        let rhs = -DVector::from_column_slice(&f);
        let step = match jac.clone().lu().solve(&rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => match jac.svd(true, true).solve(&rhs, 1e-14) {
                Ok(s) if s.iter().any(|v| *v != 0.0) => s,
                _ => break,
            },
        };
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = theta.iter().zip(step.iter()).map(|(th, s)| th + t * s).collect();
            let f_trial = sample_moment(model, data, &trial);
            let r_trial = norm(&f_trial);
            if r_trial < res {
                theta = trial;
                f = f_trial;
                res = r_trial;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    if res <= GENERIC_TOL {
        return Ok(GenericSolution {
            theta,
            residual: res,
            iterations: GENERIC_MAX_ITER,
            method: SolveMethod::Newton,
        });
    }
    Err(Error::NoConvergence {
        iterations: GENERIC_MAX_ITER,
        residual: res,
    })
}

fn bisect<M: MomentModel + ?Sized>(model: &M, data: &ExperimentData, init: f64) -> Result<GenericSolution> {
    let eval = |t: f64| sample_moment(model, data, &[t])[0];
    let f0 = eval(init);
    if f0 == 0.0 {
        return Ok(GenericSolution {
            theta: vec![init],
            residual: 0.0,
            iterations: 0,
            method: SolveMethod::Bisection,
        });
    }
    // Search outward for a point where the sign flips.
    let mut step = init.abs().max(1.0);
    let mut bracket = None;
    let mut iterations = 0;
    for _ in 0..64 {
        iterations += 1;
        for cand in [init + step, init - step] {
            let fc = eval(cand);
            if fc.is_finite() && (fc == 0.0 || fc.signum() != f0.signum()) {
                bracket = Some(cand);
                break;
            }
        }
        if bracket.is_some() {
            break;
        }
        step *= 2.0;
    }
    let Some(other) = bracket else {
        return Err(Error::NoConvergence {
            iterations,
            residual: f0.abs(),
        });
    };
    // `keep` has the sign of f0; `flip` has the opposite sign or zero.
    let (mut keep, mut flip) = (init, other);
    let mut f_flip = eval(flip);
    for _ in 0..200 {
        iterations += 1;
        if f_flip.abs() <= GENERIC_TOL || (flip - keep).abs() <= 1e-13 * keep.abs().max(flip.abs()).max(1.0) {
            break;
        }
        let mid = 0.5 * (keep + flip);
        let fm = eval(mid);
        if fm == 0.0 || fm.signum() != f0.signum() {
            flip = mid;
            f_flip = fm;
        } else {
            keep = mid;
        }
    }
    Ok(GenericSolution {
        theta: vec![flip],
        residual: f_flip.abs(),
        iterations,
        method: SolveMethod::Bisection,
    })
}

/// Builds the named built-in model. `wate` reads its weight from covariate
/// column `weight_coordinate`; `qte` uses `tau`.
pub fn builtin(name: &str, tau: Option<f64>, weight_coordinate: Option<usize>) -> Result<Box<dyn MomentModel>> {
    Ok(match name {
        "ate" => Box::new(Ate),
        "late" => Box::new(Late::default()),
        "logodds" => Box::new(LogOdds),
        "qte" => {
            let tau = tau.ok_or_else(|| Error::InvalidArgument("qte needs tau".into()))?;
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidArgument(format!("tau = {tau} outside (0, 1)")));
            }
            Box::new(Qte::new(tau))
        }
        "wate" => {
            let j = weight_coordinate
                .ok_or_else(|| Error::InvalidArgument("wate needs a weight column".into()))?;
            Box::new(Wate::from_coordinate(j))
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown parameter '{other}' (expected ate, qte, late, wate or logodds)"
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{validate, Rows};

    fn data(y: &[f64], a: &[i64]) -> ExperimentData {
        validate(
            0.5,
            Rows::column(vec![0.0; y.len()]),
            a,
            Rows::column(y.to_vec()),
        )
        .unwrap()
    }

    fn late_data(y: &[f64], d: &[f64], a: &[i64]) -> ExperimentData {
        let rows: Vec<Vec<f64>> = y.iter().zip(d).map(|(&y, &d)| vec![y, d]).collect();
        validate(0.5, Rows::column(vec![0.0; y.len()]), a, Rows::from_rows(&rows).unwrap()).unwrap()
    }

    #[test]
    fn ate_moment_values() {
        assert_eq!(m_ate(1, 3.0, 0.0, 0.5), 6.0);
        assert_eq!(m_ate(0, 0.0, 0.0, 0.5), 0.0);
    }

    #[test]
    fn ate_hand_example() {
        let d = data(&[3.0, 1.0, 2.0, 0.0], &[1, 0, 1, 0]);
        let theta = solve_ate(&d);
        assert!((theta - 2.0).abs() <= 1e-12);
        assert!(sample_moment(&Ate, &d, &[theta])[0].abs() <= 1e-12);
        assert_eq!(solve_ate(&data(&[4.0; 4], &[1, 0, 0, 1])), 0.0);
    }

    #[test]
    fn ate_shift_of_treated_responses() {
        let base = data(&[3.0, 1.0, 2.0, 0.0, 5.0, 7.0], &[1, 0, 1, 0, 1, 1]);
        let shifted = data(&[3.5, 1.0, 2.5, 0.0, 5.5, 7.5], &[1, 0, 1, 0, 1, 1]);
        let expected = 0.5 * 4.0 / (0.5 * 6.0);
        assert!((solve_ate(&shifted) - solve_ate(&base) - expected).abs() < 1e-12);
    }

    #[test]
    fn qte_hand_example() {
        let d = data(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 0, 1, 0, 1]);
        let (q1, q0) = solve_qte(&d, 0.5).unwrap();
        assert_eq!((q1, q0), (3.0, 2.0));
        let est = estimate(&Qte::new(0.5), &d).unwrap();
        assert_eq!(est.transformed, Some(1.0));
        let same = data(&[2.0, 2.0], &[1, 0]);
        assert_eq!(solve_qte(&same, 0.5).unwrap(), (2.0, 2.0));
        assert_eq!(solve_qte(&data(&[1.0, 2.0], &[1, 1]), 0.5).unwrap_err(), Error::EmptyArm(0));
    }

    #[test]
    fn qte_sample_moment_within_one_over_n() {
        let y = [0.3, 1.7, -0.2, 4.4, 2.5, 0.9, 3.3, -1.0, 0.1];
        let a = [1, 0, 1, 1, 0, 0, 1, 0, 1];
        let d = data(&y, &a);
        for tau in [0.1, 0.33, 0.5, 0.8] {
            let q = Qte::new(tau);
            let theta = q.solve(&d).unwrap();
            let m = sample_moment(&q, &d, &theta);
            assert!(m.iter().all(|v| v.abs() <= 1.0 / (0.5 * 9.0)), "{m:?}");
        }
    }

    #[test]
    fn qte_design_eta_variant() {
        // arm 1 has 3 of n = 8 units; design arm size is 4
        let d = data(&[1.0, 9.0, 2.0, 8.0, 3.0, 7.0, 6.0, 5.0], &[1, 0, 1, 0, 1, 0, 0, 0]);
        let (q1, _) = solve_qte_with(&d, 0.5, QteNormalization::DesignEta).unwrap();
        assert_eq!(q1, 2.0);
        let (q1, _) = solve_qte_with(&d, 0.9, QteNormalization::DesignEta).unwrap();
        assert_eq!(q1, 3.0);
        let (r1, _) = solve_qte(&d, 0.5).unwrap();
        assert_eq!(r1, 2.0);
    }

    #[test]
    fn late_hand_example() {
        let d = late_data(&[3.0, 1.0, 2.0, 0.0], &[1.0, 0.0, 1.0, 1.0], &[1, 0, 1, 0]);
        assert!((ht_contrast(&d, 0) - 2.0).abs() <= 1e-12);
        assert!((ht_contrast(&d, 1) - 0.5).abs() <= 1e-12);
        let theta = solve_late(&d).unwrap();
        assert!((theta - 4.0).abs() <= 1e-12);
        assert_eq!(Late::default().jacobian_hat(&d, &[theta]).unwrap(), vec![-0.5]);
    }

    #[test]
    fn late_perfect_compliance_is_ate() {
        let a = [1, 0, 1, 0, 0, 1];
        let y = [3.0, 1.0, 2.0, 0.0, 4.0, 1.5];
        let d: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let ld = late_data(&y, &d, &a);
        assert!((solve_late(&ld).unwrap() - solve_ate(&data(&y, &a))).abs() < 1e-12);
    }

    #[test]
    fn late_constant_take_up_fails() {
        let d = late_data(&[3.0, 1.0, 2.0, 0.0], &[1.0; 4], &[1, 0, 1, 0]);
        assert!(matches!(solve_late(&d).unwrap_err(), Error::ZeroFirstStage(_)));
    }

    #[test]
    fn wate_hand_example() {
        let d = data(&[3.0, 1.0, 2.0, 0.0], &[1, 0, 1, 0]);
        let theta = solve_wate(&d, &[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert!((theta - 2.0).abs() <= 1e-12);
        assert_eq!(solve_wate(&d, &[1.0; 4]).unwrap(), solve_ate(&d));
        assert_eq!(solve_wate(&d, &[0.0; 4]).unwrap_err(), Error::ZeroWeightMass);
    }

    #[test]
    fn logodds_hand_example() {
        let d = data(&[1.0, 1.0, 1.0, 0.0, 1.0, 0.0], &[1, 1, 1, 1, 0, 0]);
        let (s, t) = solve_logodds(&d).unwrap();
        assert!(s.abs() <= 1e-12);
        assert!((t - 3f64.ln()).abs() <= 1e-12);
        let m = sample_moment(&LogOdds, &d, &[s, t]);
        assert!(norm(&m) <= 1e-12);
        let deg = data(&[1.0, 0.0, 1.0, 1.0], &[1, 1, 0, 0]);
        assert!(matches!(solve_logodds(&deg).unwrap_err(), Error::DegenerateArm { arm: 0, .. }));
        let eq = data(&[1.0, 0.0, 1.0, 0.0], &[1, 1, 0, 0]);
        assert_eq!(solve_logodds(&eq).unwrap().1, 0.0);
    }

    #[test]
    fn generic_matches_closed_forms() {
        let d = late_data(
            &[3.0, 1.0, 2.0, 0.0, 2.5, -1.0],
            &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            &[1, 0, 1, 0, 1, 0],
        );
        let ate = solve_generic(&Ate, &d, &[0.0]).unwrap();
        assert!((ate.theta[0] - solve_ate(&d)).abs() <= 1e-10);
        let late = solve_generic(&Late::default(), &d, &[0.0]).unwrap();
        assert!((late.theta[0] - solve_late(&d).unwrap()).abs() <= 1e-8);
    }

    #[test]
    fn generic_reports_missing_root() {
        let d = data(&[1.0, 2.0], &[1, 0]);
        let no_root = FnMoment::new("no-root", 1, |_, _, _, _, th: &[f64], out: &mut [f64]| {
            out[0] = th[0] * th[0] + 1.0;
        });
        assert!(matches!(
            solve_generic(&no_root, &d, &[0.3]).unwrap_err(),
            Error::NoConvergence { .. }
        ));
    }

    #[test]
    fn generic_bisects_step_moment() {
        let d = data(&[1.0, 2.0, 3.0, 4.0, 5.0], &[1, 0, 1, 0, 1]);
        let treated_quantile = FnMoment::new("q1", 1, |eta, _, a, r: &[f64], th: &[f64], out: &mut [f64]| {
            out[0] = if a == 1 { (0.5 - f64::from(u8::from(r[0] <= th[0]))) / eta } else { 0.0 };
        });
        let sol = solve_generic(&treated_quantile, &d, &[0.0]).unwrap();
        assert_eq!(sol.method, SolveMethod::Bisection);
        assert!((sol.theta[0] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn builtin_names() {
        for name in ["ate", "late", "logodds"] {
            assert_eq!(builtin(name, None, None).unwrap().name(), name);
        }
        assert!(builtin("qte", None, None).is_err());
        assert!(builtin("wate", None, None).is_err());
        assert!(builtin("median", None, None).is_err());
    }
}
