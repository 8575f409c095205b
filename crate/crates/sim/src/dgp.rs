//! Outcome models 1-3 and the compliance layer used for the LATE.
//!
//! `X ~ N(0, 1)` and `Y(a) = mu_a(X) + sigma_a(X) e` with one `e ~ N(0, 1)`
//! per unit, shared by both arms. For the LATE, take-up follows
//! `D(0) = 1{0.5 + alpha(X) > e1}`, `D(1) = max(D(0), 1{1 + alpha(X) > e2})`
//! with `e1, e2 ~ N(0, 4)` and `alpha(x) = x + (x^2 - 1) / 3`, and the
//! observed outcome in arm `a` is `Y(D(a))`.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use stratkit::data::{PotentialData, Rows};
use stratkit::error::{Error, Result};
use stratkit::moments::{Ate, Late, MomentModel};
use stratkit::rng;
use stratkit::variance::{quasi_mc_oracle, ConditionalSampler, OracleMethod, OracleVariances, ORACLE_CHUNK};

const ALPHA0: f64 = 0.5;
const ALPHA1: f64 = 1.0;
const TAKE_UP_SD: f64 = 2.0;
/// Model 1's stated noise scale.
pub const MODEL1_SIGMA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Ate,
    Late,
}

impl Param {
    pub fn as_str(self) -> &'static str {
        match self {
            Param::Ate => "ate",
            Param::Late => "late",
        }
    }

    /// The unadjusted moment model for this parameter.
    pub fn moment_model(self) -> Box<dyn MomentModel> {
        match self {
            Param::Ate => Box::new(Ate),
            Param::Late => Box::new(Late::default()),
        }
    }
}

/// One simulation design point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgpSpec {
    pub model: u8,
    pub param: Param,
    pub n: usize,
    /// Replaces Model 1's `sigma_a(X) = 2`; not allowed for other models.
    pub sigma_override: Option<f64>,
    pub seed: u64,
}

impl DgpSpec {
    pub fn new(model: u8, param: Param, n: usize) -> Result<Self> {
        let spec = Self {
            model,
            param,
            n,
            sigma_override: None,
            seed: 0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_sigma(mut self, sigma: f64) -> Result<Self> {
        self.sigma_override = Some(sigma);
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.model) {
            return Err(Error::InvalidArgument(format!("model must be 1, 2 or 3, got {}", self.model)));
        }
        if let Some(s) = self.sigma_override {
            if self.model != 1 {
                return Err(Error::InvalidArgument(format!(
                    "sigma_override applies to model 1 only, got model {}",
                    self.model
                )));
            }
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidArgument(format!("sigma_override {s} must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Conditional mean `mu_a(x)`.
    pub fn mu(&self, a: u8, x: f64) -> f64 {
        let q = (x * x - 1.0) / 3.0;
        match (self.model, a) {
            (1, 0) => x + q,
            (1, _) => 0.2 + x + q,
            (2, 0) => -(x.sin() + x) + q,
            (2, _) => 0.2 + x.sin() + x + q,
            (_, 0) => 0.0,
            (_, _) => 0.2 + 3.0 * (x * x - 1.0),
        }
    }

    /// Conditional standard deviation `sigma_a(x)`.
    pub fn sigma(&self, a: u8, x: f64) -> f64 {
        match self.model {
            1 => self.sigma_override.unwrap_or(MODEL1_SIGMA),
            _ => (1.0 + f64::from(a)) * x * x,
        }
    }

    /// Treatment effect `mu_1(x) - mu_0(x)`.
    pub fn effect(&self, x: f64) -> f64 {
        self.mu(1, x) - self.mu(0, x)
    }

    /// Probability that a unit with covariate `x` is a complier.
    pub fn complier_probability(x: f64) -> f64 {
        let std = Normal::standard();
        let al = alpha(x);
        (1.0 - std.cdf((ALPHA0 + al) / TAKE_UP_SD)) * std.cdf((ALPHA1 + al) / TAKE_UP_SD)
    }

    fn outcome(&self, d: u8, x: f64, e: f64) -> f64 {
        self.mu(d, x) + self.sigma(d, x) * e
    }

    fn draw_unit_ate(&self, x: f64, rng: &mut ChaCha8Rng, r1: &mut [f64], r0: &mut [f64]) {
        let e: f64 = rng.sample(StandardNormal);
        r1[0] = self.outcome(1, x, e);
        r0[0] = self.outcome(0, x, e);
    }

    fn draw_unit_late(&self, x: f64, rng: &mut ChaCha8Rng, r1: &mut [f64], r0: &mut [f64]) {
        let e: f64 = rng.sample(StandardNormal);
        let e1 = TAKE_UP_SD * rng.sample::<f64, _>(StandardNormal);
        let e2 = TAKE_UP_SD * rng.sample::<f64, _>(StandardNormal);
        let al = alpha(x);
        let d0 = u8::from(ALPHA0 + al > e1);
        let d1 = if d0 == 1 { 1 } else { u8::from(ALPHA1 + al > e2) };
        r1[0] = self.outcome(d1, x, e);
        r1[1] = f64::from(d1);
        r0[0] = self.outcome(d0, x, e);
        r0[1] = f64::from(d0);
    }
}

fn alpha(x: f64) -> f64 {
    x + (x * x - 1.0) / 3.0
}

impl ConditionalSampler for DgpSpec {
    fn covariate_dim(&self) -> usize {
        1
    }

    fn response_dim(&self) -> usize {
        match self.param {
            Param::Ate => 1,
            Param::Late => 2,
        }
    }

    fn covariates_from_uniform(&self, u: &[f64], x: &mut [f64]) {
        x[0] = Normal::standard().inverse_cdf(u[0]);
    }

    fn sample_responses(&self, x: &[f64], rng: &mut ChaCha8Rng, r1: &mut [f64], r0: &mut [f64]) {
        match self.param {
            Param::Ate => self.draw_unit_ate(x[0], rng, r1, r0),
            Param::Late => self.draw_unit_late(x[0], rng, r1, r0),
        }
    }
}

fn draw_with(spec: &DgpSpec, rng: &mut ChaCha8Rng, param: Param) -> PotentialData {
    let width = match param {
        Param::Ate => 1,
        Param::Late => 2,
    };
    let mut x = Vec::with_capacity(spec.n);
    let mut r1 = vec![0.0; spec.n * width];
    let mut r0 = vec![0.0; spec.n * width];
    for i in 0..spec.n {
        let xi: f64 = rng.sample(StandardNormal);
        let (s1, s0) = (&mut r1[i * width..(i + 1) * width], &mut r0[i * width..(i + 1) * width]);
        match param {
            Param::Ate => spec.draw_unit_ate(xi, rng, s1, s0),
            Param::Late => spec.draw_unit_late(xi, rng, s1, s0),
        }
        x.push(xi);
    }
    PotentialData::new(
        Rows::column(x),
        Rows::from_flat(width, r1).expect("width divides buffer"),
        Rows::from_flat(width, r0).expect("width divides buffer"),
    )
    .expect("equal lengths by construction")
}

/// `n` i.i.d. units with responses `Y(1), Y(0)`.
pub fn draw_potential_ate(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> PotentialData {
    draw_with(spec, rng, Param::Ate)
}

/// `n` i.i.d. units with responses `(Y(D(a)), D(a))` for each arm.
pub fn draw_potential_late(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> PotentialData {
    draw_with(spec, rng, Param::Late)
}

/// Draws for `spec.param`.
pub fn draw_potential(spec: &DgpSpec, rng: &mut ChaCha8Rng) -> PotentialData {
    draw_with(spec, rng, spec.param)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthMethod {
    Exact,
    /// Stratified Monte Carlo over `X` with the complier probability
    /// integrated analytically.
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrueTheta {
    pub value: f64,
    /// Standard error of `value`; zero when exact.
    pub se: f64,
    pub method: TruthMethod,
}

pub const TRUTH_DRAWS: usize = 10_000_000;
pub const TRUTH_SEED: u64 = 20_240_501;
const TRUTH_ROLE: u64 = 0x0074_7275_7468;

static LATE_TRUTH: [OnceLock<TrueTheta>; 3] = [const { OnceLock::new() }; 3];

/// The estimand for `spec`.
///
/// The ATE is 0.2 in every model, and so is the LATE in Model 1 where the
/// effect is constant. The LATE in Models 2 and 3 is
/// `E[p_c(X) tau(X)] / E[p_c(X)]`, evaluated once per process by
/// [`late_truth_mc`] with [`TRUTH_DRAWS`] draws.
pub fn true_theta(spec: &DgpSpec) -> TrueTheta {
    let exact = TrueTheta {
        value: 0.2,
        se: 0.0,
        method: TruthMethod::Exact,
    };
    match (spec.param, spec.model) {
        (Param::Ate, _) | (Param::Late, 1) => exact,
        (Param::Late, m) => *LATE_TRUTH[usize::from(m) - 1].get_or_init(|| late_truth_mc(m, TRUTH_DRAWS, TRUTH_SEED)),
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct TruthSums {
    w: f64,
    wt: f64,
    dwt2: f64,
    dwt_dw: f64,
    dw2: f64,
}

/// Monte Carlo LATE for `model`.
///
/// Uniforms are stratified one draw per stratum; the standard error uses
/// collapsed pairs of adjacent strata and is therefore conservative.
pub fn late_truth_mc(model: u8, draws: usize, seed: u64) -> TrueTheta {
    let spec = DgpSpec::new(model, Param::Late, 0).expect("built-in model");
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let nd = draws as f64;
    let std = Normal::standard();
    let partials: Vec<TruthSums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let start = c * ORACLE_CHUNK;
            let count = ORACLE_CHUNK.min(draws - start);
            let mut rng = rng::stream(seed, TRUTH_ROLE, c as u64);
            let mut acc = TruthSums::default();
            let mut prev: Option<(f64, f64)> = None;
            for j in 0..count {
                let v: f64 = rng.random();
                let u = ((start + j) as f64 + v) / nd;
                let x = std.inverse_cdf(u.max(f64::MIN_POSITIVE));
                let w = DgpSpec::complier_probability(x);
                let wt = w * spec.effect(x);
                acc.w += w;
                acc.wt += wt;
                match prev.take() {
                    None => prev = Some((w, wt)),
                    Some((w0, wt0)) => {
                        let (dw, dwt) = (w - w0, wt - wt0);
                        acc.dw2 += dw * dw;
                        acc.dwt_dw += dwt * dw;
                        acc.dwt2 += dwt * dwt;
                    }
                }
            }
            acc
        })
        .collect();
    let mut s = TruthSums::default();
    for p in &partials {
        s.w += p.w;
        s.wt += p.wt;
        s.dwt2 += p.dwt2;
        s.dwt_dw += p.dwt_dw;
        s.dw2 += p.dw2;
    }
    let value = s.wt / s.w;
    let pair_ss = s.dwt2 - 2.0 * value * s.dwt_dw + value * value * s.dw2;
    TrueTheta {
        value,
        se: pair_ss.max(0.0).sqrt() / s.w,
        method: TruthMethod::MonteCarlo { draws, seed },
    }
}

/// Analytic `V` and `V*` for the ATE in Models 1-3 at treated fraction
/// `eta`, from Gaussian moments of `X`.
pub fn oracle_closed_form(spec: &DgpSpec, eta: f64) -> Result<OracleVariances> {
    spec.validate()?;
    if spec.param != Param::Ate {
        return Err(Error::InvalidArgument("closed-form oracle covers the ATE only".into()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::EtaOutOfRange(eta));
    }
    // E[(sin X + X)^2] with E[sin^2 X] = (1 - e^-2)/2, E[X sin X] = e^-1/2.
    let v_s = (1.0 - (-2.0f64).exp()) / 2.0 + 2.0 * (-0.5f64).exp() + 1.0;
    let q2 = 2.0 / 9.0;
    // (E[mu1^2], E[mu0^2], E[mu1 mu0], E[sigma1^2], E[sigma0^2], Var(mu1 - mu0))
    let (m11, m00, m10, s1, s0, var_tau) = match spec.model {
        1 => {
            let s = spec.sigma(0, 0.0).powi(2);
            (0.04 + 1.0 + q2, 1.0 + q2, 1.0 + q2, s, s, 0.0)
        }
        2 => (0.04 + v_s + q2, v_s + q2, q2 - v_s, 12.0, 3.0, 4.0 * v_s),
        _ => (0.04 + 18.0, 0.0, 0.0, 12.0, 3.0, 18.0),
    };
    let v_star = s1 / eta + s0 / (1.0 - eta) + var_tau;
    let gap = eta * (1.0 - eta) * (m11 / (eta * eta) + m00 / ((1.0 - eta) * (1.0 - eta)) + 2.0 * m10 / (eta * (1.0 - eta)));
    Ok(OracleVariances::new(v_star + gap, v_star, OracleMethod::ClosedForm))
}

/// Default number of covariate draws for the simulated oracle.
pub const ORACLE_DRAWS: usize = 10_000_000;

/// Simulated `V` and `V*` for any built-in spec at its true parameter.
pub fn oracle_quasi_mc(spec: &DgpSpec, eta: f64, draws: usize, seed: u64) -> Result<OracleVariances> {
    spec.validate()?;
    let model = spec.param.moment_model();
    quasi_mc_oracle(spec, model.as_ref(), eta, true_theta(spec).value, draws, seed)
}

/// Closed form where available (ATE), otherwise the simulated oracle with
/// [`ORACLE_DRAWS`] draws.
pub fn oracle_variances(spec: &DgpSpec, eta: f64) -> Result<OracleVariances> {
    match spec.param {
        Param::Ate => oracle_closed_form(spec, eta),
        Param::Late => oracle_quasi_mc(spec, eta, ORACLE_DRAWS, TRUTH_SEED),
    }
}
