//! Variance estimation for scalar parameters under fine stratification.
//!
//! [`vhat_fine`] is the plug-in estimator `V_hat = M_hat^-2 (Sigma1_hat +
//! Sigma2_hat)`. `Sigma2_hat` needs products of moment values of units that
//! share a covariate neighbourhood: within a block when an arm has at least
//! two units per block, otherwise across adjacent pairs of blocks.
//!
//! [`quasi_mc_oracle`] computes the population variances `V` (i.i.d.
//! assignment) and `V*` (fine stratification) for any DGP that can draw
//! responses conditionally on covariates.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::ExperimentData;
use crate::design::BlockPartition;
use crate::error::{Error, Result};
use crate::moments::{unit_moments, MomentModel};
use crate::rng;

/// Which construction produced a same-arm product term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProductVariant {
    Within,
    Between,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VarianceWarning {
    /// The between-block products had an odd number of blocks; the last
    /// block (0-based index) was left out of those products only.
    OddBlockCountDropped { block: usize },
}

/// Every intermediate of the plug-in variance estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBreakdown {
    pub m_hat: f64,
    pub mu1: f64,
    pub mu0: f64,
    pub sigma1: f64,
    pub varsigma11: f64,
    pub varsigma00: f64,
    pub varsigma01: f64,
    pub sigma2: f64,
    pub vhat: f64,
    pub variant11: ProductVariant,
    pub variant00: ProductVariant,
    pub warnings: Vec<VarianceWarning>,
}

impl VarianceBreakdown {
    /// Column names for serialized breakdowns, in [`Self::values`] order.
    pub const COLUMNS: [&'static str; 9] = [
        "m_hat",
        "mu1",
        "mu0",
        "sigma1",
        "varsigma11",
        "varsigma00",
        "varsigma01",
        "sigma2",
        "vhat",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.m_hat,
            self.mu1,
            self.mu0,
            self.sigma1,
            self.varsigma11,
            self.varsigma00,
            self.varsigma01,
            self.sigma2,
            self.vhat,
        ]
    }
}

/// Plug-in variance estimate for a scalar parameter estimated from a finely
/// stratified experiment.
///
/// Blocks must be in covariate order (as produced by
/// [`crate::design::block_sorted`]) for the between-block products to pair
/// neighbours.
pub fn vhat_fine<M: MomentModel + ?Sized>(
    data: &ExperimentData,
    partition: &BlockPartition,
    model: &M,
    theta: &[f64],
) -> Result<VarianceBreakdown> {
    if model.dim() != 1 {
        return Err(Error::NonScalarParameter(model.name().to_string()));
    }
    if partition.n() != data.n() {
        return Err(Error::LengthMismatch {
            field: "partition",
            expected: data.n(),
            found: partition.n(),
        });
    }
    let a = data.treatment();
    let k = partition.k();
    let l = partition.treated_per_block(a).ok_or_else(|| {
        Error::InvalidArgument("blocks do not all have the same treated count".into())
    })?;
    if l == 0 || l >= k {
        return Err(Error::InvalidArgument(format!(
            "every block needs both arms, found {l} treated of {k}"
        )));
    }
    let m_hat = model.jacobian_hat(data, theta)?[0];
    let m = unit_moments(model, data, theta);
    let n = data.n() as f64;
    let eta = data.eta();

    let (mut s1, mut s0) = (0.0, 0.0);
    for (mi, &ai) in m.iter().zip(a) {
        if ai == 1 {
            s1 += mi;
        } else {
            s0 += mi;
        }
    }
    let mu1 = s1 / (eta * n);
    let mu0 = s0 / ((1.0 - eta) * n);
    let sigma1 = m
        .iter()
        .zip(a)
        .map(|(mi, &ai)| {
            let c = if ai == 1 { mi - mu1 } else { mi - mu0 };
            c * c
        })
        .sum::<f64>()
        / n;

    // Per block: sum of m and sum of m^2 within each arm.
    let per_block: Vec<[(f64, f64); 2]> = partition
        .blocks()
        .iter()
        .map(|block| {
            let mut acc = [(0.0, 0.0); 2];
            for &i in block {
                let slot = &mut acc[a[i] as usize];
                slot.0 += m[i];
                slot.1 += m[i] * m[i];
            }
            acc
        })
        .collect();

    let scale = k as f64 / n;
    let varsigma01 = scale
        * per_block
            .iter()
            .map(|b| b[1].0 * b[0].0 / (l * (k - l)) as f64)
            .sum::<f64>();

    let mut warnings = Vec::new();
    let mut same_arm = |arm: usize, count: usize| -> (f64, ProductVariant) {
        if count > 1 {
            let pairs = (count * (count - 1) / 2) as f64;
            let v = scale
                * per_block
                    .iter()
                    .map(|b| 0.5 * (b[arm].0 * b[arm].0 - b[arm].1) / pairs)
                    .sum::<f64>();
            (v, ProductVariant::Within)
        } else {
            let blocks = per_block.len();
            if blocks % 2 == 1 {
                let w = VarianceWarning::OddBlockCountDropped { block: blocks - 1 };
                if !warnings.contains(&w) {
                    warnings.push(w);
                }
            }
            let npairs = blocks / 2;
            if npairs == 0 {
                return (f64::NAN, ProductVariant::Between);
            }
            // one unit of this arm per block, so the arm sum is that unit's m
            let total: f64 = per_block
                .chunks_exact(2)
                .map(|pair| pair[0][arm].0 * pair[1][arm].0)
                .sum();
            (total / npairs as f64, ProductVariant::Between)
        }
    };
    let (varsigma11, variant11) = same_arm(1, l);
    let (varsigma00, variant00) = same_arm(0, k - l);

    let sigma2 = -eta * (1.0 - eta) * (varsigma11 + varsigma00 - 2.0 * varsigma01 - (mu1 - mu0).powi(2));
    let vhat = (sigma1 + sigma2) / (m_hat * m_hat);
    Ok(VarianceBreakdown {
        m_hat,
        mu1,
        mu0,
        sigma1,
        varsigma11,
        varsigma00,
        varsigma01,
        sigma2,
        vhat,
        variant11,
        variant00,
        warnings,
    })
}

/// Two-sided standard normal critical value for coverage `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} outside (0, 1)")));
    }
    let std = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(std.inverse_cdf(0.5 + level / 2.0))
}

/// `theta +- z sqrt(vhat / n)`. A negative `vhat` is reported, not clamped.
pub fn confidence_interval(theta: f64, vhat: f64, n: usize, level: f64) -> Result<(f64, f64)> {
    if vhat < 0.0 {
        return Err(Error::NegativeVariance(vhat));
    }
    if !vhat.is_finite() {
        return Err(Error::InvalidArgument(format!("variance estimate {vhat} is not finite")));
    }
    let half = normal_critical_value(level)? * (vhat / n as f64).sqrt();
    Ok((theta - half, theta + half))
}

/// `n` times the unbiased sample variance of replicated estimates.
pub fn empirical_variance(estimates: &[f64], n: usize) -> Result<f64> {
    if estimates.len() < 2 {
        return Err(Error::TooFewReplications(estimates.len()));
    }
    let reps = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / reps;
    let ss: f64 = estimates.iter().map(|t| (t - mean) * (t - mean)).sum();
    Ok(n as f64 * ss / (reps - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ClosedForm,
    QuasiMc { draws: usize },
}

/// Population asymptotic variances of the sample-analog estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVariances {
    /// Under i.i.d. assignment.
    pub v: f64,
    /// Under fine stratification (the efficiency bound).
    pub v_star: f64,
    pub ratio: f64,
    pub method: OracleMethod,
}

impl OracleVariances {
    pub fn new(v: f64, v_star: f64, method: OracleMethod) -> Self {
        Self {
            v,
            v_star,
            ratio: v_star / v,
            method,
        }
    }
}

/// A DGP that can draw covariates, then potential responses given the
/// covariates. Repeated response draws for the same `x` must be independent.
pub trait ConditionalSampler: Sync {
    fn covariate_dim(&self) -> usize;
    fn response_dim(&self) -> usize;
    /// Maps a point of the open unit cube `(0, 1)^covariate_dim` to a
    /// covariate draw, so that uniform input gives the covariate law.
    fn covariates_from_uniform(&self, u: &[f64], x: &mut [f64]);
    /// Fills `r1` and `r0` with one draw of `(R(1), R(0))` given `x`.
    fn sample_responses(&self, x: &[f64], rng: &mut ChaCha8Rng, r1: &mut [f64], r0: &mut [f64]);
}

/// Draws per oracle chunk. Fixed so that the chunk schedule, and hence the
/// result, does not depend on the thread count.
pub const ORACLE_CHUNK: usize = 1 << 16;
/// Independent response draws per covariate draw.
pub const ORACLE_COPIES: usize = 4;
const ORACLE_ROLE: u64 = 0x6f72_6163_6c65;

#[derive(Debug, Clone, Copy, Default)]
struct OracleSums {
    s1: f64,
    s0: f64,
    q1: f64,
    q0: f64,
    c11: f64,
    c00: f64,
    c10: f64,
    jac: f64,
}

impl OracleSums {
    fn add(&mut self, o: &Self) {
        self.s1 += o.s1;
        self.s0 += o.s0;
        self.q1 += o.q1;
        self.q0 += o.q0;
        self.c11 += o.c11;
        self.c00 += o.c00;
        self.c10 += o.c10;
        self.jac += o.jac;
    }
}

/// Monte Carlo evaluation of `V` and `V*` at `theta0` for a scalar model.
///
/// The first covariate uniform is stratified within each chunk (one draw per
/// stratum of width `1 / ORACLE_CHUNK`); the others are i.i.d. For each
/// covariate draw, [`ORACLE_COPIES`] independent response pairs are drawn and
/// products across distinct copies estimate `E[E[m_a|X] E[m_b|X]]` without
/// bias, which gives the conditional-variance decomposition of `V*`. `M` is
/// estimated by central differences of the moment.
pub fn quasi_mc_oracle<S, M>(
    sampler: &S,
    model: &M,
    eta: f64,
    theta0: f64,
    draws: usize,
    seed: u64,
) -> Result<OracleVariances>
where
    S: ConditionalSampler + ?Sized,
    M: MomentModel + ?Sized,
{
    if model.dim() != 1 {
        return Err(Error::NonScalarParameter(model.name().to_string()));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::EtaOutOfRange(eta));
    }
    if draws < 2 {
        return Err(Error::InvalidArgument("oracle needs at least 2 draws".into()));
    }
    let chunks = draws.div_ceil(ORACLE_CHUNK);
    let h = 1e-4 * theta0.abs().max(1.0);
    let kc = ORACLE_COPIES as f64;
    let pairs = kc * (kc - 1.0);
    let partials: Vec<OracleSums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = ORACLE_CHUNK.min(draws - c * ORACLE_CHUNK);
            let mut rng = rng::stream(seed, ORACLE_ROLE, c as u64);
            let mut u = vec![0.0; sampler.covariate_dim()];
            let mut x = vec![0.0; sampler.covariate_dim()];
            let dr = sampler.response_dim();
            let (mut r1, mut r0) = (vec![0.0; dr], vec![0.0; dr]);
            let mut out = [0.0];
            let mut m = |x: &[f64], a: u8, r: &[f64], t: f64| {
                model.eval(eta, x, a, r, &[t], &mut out);
                out[0]
            };
            let mut acc = OracleSums::default();
            for j in 0..count {
                for (d, ud) in u.iter_mut().enumerate() {
                    let v: f64 = rng.random();
                    // (0, 1) open: shift off an exact zero.
                    let v = if v == 0.0 { 0.5 * f64::EPSILON } else { v };
                    *ud = if d == 0 { (j as f64 + v) / count as f64 } else { v };
                }
                sampler.covariates_from_uniform(&u, &mut x);
                let (mut t1, mut t0, mut sq1, mut sq0, mut x10, mut dj) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for _ in 0..ORACLE_COPIES {
                    sampler.sample_responses(&x, &mut rng, &mut r1, &mut r0);
                    let m1 = m(&x, 1, &r1, theta0);
                    let m0 = m(&x, 0, &r0, theta0);
                    t1 += m1;
                    t0 += m0;
                    sq1 += m1 * m1;
                    sq0 += m0 * m0;
                    x10 += m1 * m0;
                    let d1 = (m(&x, 1, &r1, theta0 + h) - m(&x, 1, &r1, theta0 - h)) / (2.0 * h);
                    let d0 = (m(&x, 0, &r0, theta0 + h) - m(&x, 0, &r0, theta0 - h)) / (2.0 * h);
                    dj += eta * d1 + (1.0 - eta) * d0;
                }
                acc.s1 += t1 / kc;
                acc.s0 += t0 / kc;
                acc.q1 += sq1 / kc;
                acc.q0 += sq0 / kc;
                acc.c11 += (t1 * t1 - sq1) / pairs;
                acc.c00 += (t0 * t0 - sq0) / pairs;
                acc.c10 += (t1 * t0 - x10) / pairs;
                acc.jac += dj / kc;
            }
            acc
        })
        .collect();
    let mut total = OracleSums::default();
    for p in &partials {
        total.add(p);
    }
    let nd = draws as f64;
    let (e1, e0) = (total.s1 / nd, total.s0 / nd);
    let (q1, q0) = (total.q1 / nd, total.q0 / nd);
    let (c11, c00, c10) = (total.c11 / nd, total.c00 / nd, total.c10 / nd);
    let jac = total.jac / nd;
    let mean = eta * e1 + (1.0 - eta) * e0;
    let meat_iid = eta * q1 + (1.0 - eta) * q0 - mean * mean;
    let within = eta * (q1 - c11) + (1.0 - eta) * (q0 - c00);
    let between = eta * eta * c11 + 2.0 * eta * (1.0 - eta) * c10 + (1.0 - eta).powi(2) * c00 - mean * mean;
    let m2 = jac * jac;
    Ok(OracleVariances::new(
        meat_iid / m2,
        (within + between) / m2,
        OracleMethod::QuasiMc { draws },
    ))
}
