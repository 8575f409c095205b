//! Monte Carlo grid over sample sizes, models, designs and estimators.
//!
//! Within a replication every (design, estimator) cell sees the same
//! potential-outcome draw. Random streams are keyed by
//! `(master_seed, role, replication)` where the role is derived from the
//! cell's labels, and per-replication outcomes are reduced in replication
//! order, so the result does not depend on the number of worker threads.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use stratkit::adjust::{adjusted_ate, adjusted_late, Basis, BasisSpec};
use stratkit::data::ExperimentData;
use stratkit::design::{assign_coarse, assign_complete, assign_fine, assign_iid, block_sorted, BlockPartition};
use stratkit::error::{Error, Result};
use stratkit::moments::{unit_moments, MomentModel};
use stratkit::rng;
use stratkit::variance::{confidence_interval, empirical_variance, vhat_fine};

use crate::dgp::{draw_potential, true_theta, DgpSpec, Param, TrueTheta, TruthMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DesignChoice {
    Iid,
    /// Blocks of 2 formed by sorting `X`, one treated per block.
    MatchedPairs,
    /// Blocks of `k` formed by sorting `X`, `l` treated per block.
    Fine { l: usize, k: usize },
    /// Exactly `eta n` treated units.
    Complete,
    /// Complete randomization within `strata` equal-probability bins of `X`.
    Coarse { strata: usize },
}

impl DesignChoice {
    pub fn label(&self) -> String {
        match self {
            DesignChoice::Iid => "iid".into(),
            DesignChoice::MatchedPairs => "matched_pairs".into(),
            DesignChoice::Fine { l, k } => format!("fine_{l}_{k}"),
            DesignChoice::Complete => "complete".into(),
            DesignChoice::Coarse { strata } => format!("coarse_{strata}"),
        }
    }

    fn block_shape(&self) -> Option<(usize, usize)> {
        match *self {
            DesignChoice::MatchedPairs => Some((1, 2)),
            DesignChoice::Fine { l, k } => Some((l, k)),
            _ => None,
        }
    }

    fn check(&self, eta: f64, n: usize) -> Result<()> {
        if let Some((l, k)) = self.block_shape() {
            if l == 0 || l >= k {
                return Err(Error::InvalidArgument(format!("fine design needs 0 < l < k, got l={l}, k={k}")));
            }
            if (l as f64 / k as f64 - eta).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "design {} treats {l}/{k} but eta is {eta}",
                    self.label()
                )));
            }
            if !n.is_multiple_of(k) {
                return Err(Error::NotDivisible { n, k });
            }
        }
        match *self {
            DesignChoice::Complete if (eta * n as f64).fract() != 0.0 => Err(Error::NonIntegralCount(eta * n as f64)),
            DesignChoice::Coarse { strata } if strata == 0 || strata > n => Err(Error::InvalidArgument(format!(
                "coarse design needs 1..=n strata, got {strata}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Unadjusted,
    /// Augmented estimator with first stages on `(1, X, X^2)`.
    AdjustedQuad,
    /// Augmented estimator with first stages on `(1, X, X^2, X 1{X > t})`.
    AdjustedQuadKink,
}

impl EstimatorChoice {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorChoice::Unadjusted => "unadjusted",
            EstimatorChoice::AdjustedQuad => "adjusted_quad",
            EstimatorChoice::AdjustedQuadKink => "adjusted_quad_kink",
        }
    }

    fn basis(&self) -> Option<Basis> {
        match self {
            EstimatorChoice::Unadjusted => None,
            EstimatorChoice::AdjustedQuad => Some(Basis::Quad),
            EstimatorChoice::AdjustedQuadKink => Some(Basis::QuadKink),
        }
    }
}

fn default_eta() -> f64 {
    0.5
}

fn default_level() -> f64 {
    0.95
}

/// Grid specification. Cells are the cross product of `designs` and
/// `estimators`; the (iid, unadjusted) baseline is always run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MCConfig {
    pub reps: usize,
    pub n_grid: Vec<usize>,
    pub params: Vec<Param>,
    pub models: Vec<u8>,
    pub designs: Vec<DesignChoice>,
    pub estimators: Vec<EstimatorChoice>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Applied to Model 1 only.
    #[serde(default)]
    pub sigma_override: Option<f64>,
    pub master_seed: u64,
    /// Confidence level for coverage.
    #[serde(default = "default_level")]
    pub level: f64,
}

impl MCConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 2 {
            return Err(Error::TooFewReplications(self.reps));
        }
        for (name, empty) in [
            ("n_grid", self.n_grid.is_empty()),
            ("params", self.params.is_empty()),
            ("models", self.models.is_empty()),
            ("designs", self.designs.is_empty()),
            ("estimators", self.estimators.is_empty()),
        ] {
            if empty {
                return Err(Error::InvalidArgument(format!("{name} must not be empty")));
            }
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::EtaOutOfRange(self.eta));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidArgument(format!("level {} outside (0, 1)", self.level)));
        }
        for &model in &self.models {
            self.spec(model, Param::Ate, 0)?;
        }
        for &n in &self.n_grid {
            if n < 4 {
                return Err(Error::InvalidArgument(format!("sample size {n} is below 4")));
            }
            for d in &self.designs {
                d.check(self.eta, n)?;
            }
        }
        Ok(())
    }

    fn spec(&self, model: u8, param: Param, n: usize) -> Result<DgpSpec> {
        let spec = DgpSpec::new(model, param, n)?.with_seed(self.master_seed);
        match (model, self.sigma_override) {
            (1, Some(s)) => spec.with_sigma(s),
            _ => Ok(spec),
        }
    }

    fn cells(&self) -> Vec<(DesignChoice, EstimatorChoice)> {
        let mut cells = vec![(DesignChoice::Iid, EstimatorChoice::Unadjusted)];
        for &d in &self.designs {
            for &e in &self.estimators {
                if !cells.contains(&(d, e)) {
                    cells.push((d, e));
                }
            }
        }
        cells
    }
}

/// Summary of one (n, param, model, design, estimator) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub n: usize,
    pub param: Param,
    pub model: u8,
    pub design: String,
    pub estimator: String,
    pub mse: f64,
    /// `mse` over the (iid, unadjusted) cell's `mse`.
    pub ratio: f64,
    pub bias: f64,
    /// `n` times the sample variance of the estimates.
    pub emp_var_n: f64,
    pub mean_vhat: f64,
    pub coverage: f64,
    pub fail_rate: f64,
    /// Replications whose logistic first stage hit the coefficient cap.
    pub separation_flags: usize,
    pub successes: usize,
}

/// Ground truth used for one (param, model) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthRecord {
    pub param: Param,
    pub model: u8,
    pub truth: TrueTheta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCResult {
    pub cells: Vec<CellResult>,
    pub truths: Vec<TruthRecord>,
}

/// CSV header of [`MCResult::to_csv`].
pub const CSV_COLUMNS: [&str; 12] = [
    "n",
    "param",
    "model",
    "design",
    "estimator",
    "mse",
    "ratio",
    "bias",
    "emp_var_n",
    "mean_vhat",
    "coverage",
    "fail_rate",
];

impl MCResult {
    fn row(c: &CellResult) -> [String; 12] {
        [
            c.n.to_string(),
            c.param.as_str().to_string(),
            c.model.to_string(),
            c.design.clone(),
            c.estimator.clone(),
            c.mse.to_string(),
            c.ratio.to_string(),
            c.bias.to_string(),
            c.emp_var_n.to_string(),
            c.mean_vhat.to_string(),
            c.coverage.to_string(),
            c.fail_rate.to_string(),
        ]
    }

    /// Full-precision CSV, one row per cell.
    pub fn to_csv(&self) -> String {
        let mut out = CSV_COLUMNS.join(",");
        out.push('\n');
        for c in &self.cells {
            out.push_str(&Self::row(c).join(","));
            out.push('\n');
        }
        out
    }

    /// Aligned markdown table with four decimals.
    pub fn to_markdown(&self) -> String {
        let rows: Vec<[String; 12]> = self
            .cells
            .iter()
            .map(|c| {
                let mut r = Self::row(c);
                for (slot, v) in r[5..].iter_mut().zip([
                    c.mse,
                    c.ratio,
                    c.bias,
                    c.emp_var_n,
                    c.mean_vhat,
                    c.coverage,
                    c.fail_rate,
                ]) {
                    *slot = format!("{v:.4}");
                }
                r
            })
            .collect();
        let mut widths: Vec<usize> = CSV_COLUMNS.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: &[String]| -> String {
            let mut s = String::from("|");
            for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
                if i < 5 {
                    let _ = write!(s, " {cell:<w$} |");
                } else {
                    let _ = write!(s, " {cell:>w$} |");
                }
            }
            s.push('\n');
            s
        };
        let header: Vec<String> = CSV_COLUMNS.iter().map(|h| h.to_string()).collect();
        let mut out = line(&header);
        out.push('|');
        for (i, w) in widths.iter().enumerate() {
            let dashes = "-".repeat(*w);
            if i < 5 {
                let _ = write!(out, " {dashes} |");
            } else {
                let _ = write!(out, "{dashes}:|", dashes = "-".repeat(w + 1));
            }
        }
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
        }
        out
    }

    pub fn cell(&self, n: usize, param: Param, model: u8, design: &str, estimator: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.n == n && c.param == param && c.model == model && c.design == design && c.estimator == estimator)
    }

    /// Largest failure rate over all cells.
    pub fn max_fail_rate(&self) -> f64 {
        self.cells.iter().map(|c| c.fail_rate).fold(0.0, f64::max)
    }
}

/// Stable 64-bit role identifier for a label (FNV-1a).
fn role(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    theta: f64,
    vhat: f64,
    covered: bool,
    capped: usize,
}

#[derive(Default)]
struct CellAccumulator {
    thetas: Vec<f64>,
    vhat_sum: f64,
    vhat_count: usize,
    covered: usize,
    failures: usize,
    capped: usize,
}

struct Assigned {
    a: Vec<u8>,
    partition: Option<BlockPartition>,
}

fn assign(design: DesignChoice, x: &stratkit::data::Rows, eta: f64, rng: &mut rand_chacha::ChaCha8Rng) -> Result<Assigned> {
    let n = x.len();
    Ok(match design {
        DesignChoice::Iid => Assigned {
            a: assign_iid(n, eta, rng),
            partition: None,
        },
        DesignChoice::Complete => Assigned {
            a: assign_complete(n, eta, rng)?,
            partition: None,
        },
        DesignChoice::Coarse { strata } => {
            let std = Normal::standard();
            let cuts: Vec<f64> = (1..strata).map(|j| std.inverse_cdf(j as f64 / strata as f64)).collect();
            let labels: Vec<usize> = x.iter().map(|r| cuts.partition_point(|&c| c < r[0])).collect();
            Assigned {
                a: assign_coarse(&labels, eta, rng)?,
                partition: None,
            }
        }
        DesignChoice::MatchedPairs | DesignChoice::Fine { .. } => {
            let (l, k) = design.block_shape().expect("fine design");
            let partition = block_sorted(x, 0, k)?;
            Assigned {
                a: assign_fine(&partition, l, rng),
                partition: Some(partition),
            }
        }
    })
}

/// Sandwich variance `mean(m^2) / M^2` valid under i.i.d. assignment.
fn vhat_iid(model: &dyn MomentModel, data: &ExperimentData, theta: f64) -> Result<f64> {
    let m = unit_moments(model, data, &[theta]);
    let jac = model.jacobian_hat(data, &[theta])?[0];
    let meat = m.iter().map(|v| v * v).sum::<f64>() / m.len() as f64;
    Ok(meat / (jac * jac))
}

fn run_estimator(
    estimator: EstimatorChoice,
    param: Param,
    data: &ExperimentData,
    partition: Option<&BlockPartition>,
    theta0: f64,
    level: f64,
) -> Result<Outcome> {
    let (theta, vhat, capped) = match estimator.basis() {
        None => {
            let model = param.moment_model();
            let theta = model.solve(data)?[0];
            let vhat = match partition {
                Some(p) => vhat_fine(data, p, model.as_ref(), &[theta])?.vhat,
                None => vhat_iid(model.as_ref(), data, theta)?,
            };
            (theta, vhat, 0)
        }
        Some(basis) => {
            let fit = match param {
                Param::Ate => adjusted_ate(data, BasisSpec::new(basis))?,
                Param::Late => adjusted_late(data, BasisSpec::new(basis))?,
            };
            (fit.theta, fit.vhat_iid, fit.capped_fits)
        }
    };
    if !theta.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite estimate {theta}")));
    }
    let covered = confidence_interval(theta, vhat, data.n(), level)
        .map(|(lo, hi)| lo <= theta0 && theta0 <= hi)
        .unwrap_or(false);
    Ok(Outcome {
        theta,
        vhat,
        covered,
        capped,
    })
}

/// One replication: all cells on a common potential-outcome draw.
fn replicate(
    config: &MCConfig,
    spec: &DgpSpec,
    cells: &[(DesignChoice, EstimatorChoice)],
    designs: &[DesignChoice],
    theta0: f64,
    rep: u64,
) -> Vec<Result<Outcome>> {
    let group = format!("n={}/{}/model={}", spec.n, spec.param.as_str(), spec.model);
    let mut rng = rng::stream(config.master_seed, role(&format!("potential/{group}")), rep);
    let potential = draw_potential(spec, &mut rng);
    let assigned: Vec<Result<(ExperimentData, Option<BlockPartition>)>> = designs
        .iter()
        .map(|&d| {
            let mut rng = rng::stream(config.master_seed, role(&format!("assign/{group}/{}", d.label())), rep);
            let Assigned { a, partition } = assign(d, &potential.x, config.eta, &mut rng)?;
            Ok((potential.reveal(&a, config.eta)?, partition))
        })
        .collect();
    cells
        .iter()
        .map(|(d, e)| {
            let idx = designs.iter().position(|x| x == d).expect("design listed");
            match &assigned[idx] {
                Ok((data, partition)) => run_estimator(*e, spec.param, data, partition.as_ref(), theta0, config.level),
                Err(err) => Err(err.clone()),
            }
        })
        .collect()
}

/// Runs the whole grid. Cell failures are counted, not propagated.
pub fn run_grid(config: &MCConfig) -> Result<MCResult> {
    config.validate()?;
    let cells = config.cells();
    let mut designs: Vec<DesignChoice> = Vec::new();
    for (d, _) in &cells {
        if !designs.contains(d) {
            designs.push(*d);
        }
    }
    let mut out = Vec::new();
    let mut truths: Vec<TruthRecord> = Vec::new();
    for &n in &config.n_grid {
        for &param in &config.params {
            for &model in &config.models {
                let spec = config.spec(model, param, n)?;
                let truth = true_theta(&spec);
                if !truths.iter().any(|t| t.param == param && t.model == model) {
                    truths.push(TruthRecord { param, model, truth });
                }
                let theta0 = truth.value;
                let per_rep: Vec<Vec<Result<Outcome>>> = (0..config.reps as u64)
                    .into_par_iter()
                    .map(|rep| replicate(config, &spec, &cells, &designs, theta0, rep))
                    .collect();
                let mut acc: Vec<CellAccumulator> = cells.iter().map(|_| CellAccumulator::default()).collect();
                for rep in &per_rep {
                    for (a, outcome) in acc.iter_mut().zip(rep) {
                        match outcome {
                            Ok(o) => {
                                a.thetas.push(o.theta);
                                if o.vhat.is_finite() {
                                    a.vhat_sum += o.vhat;
                                    a.vhat_count += 1;
                                }
                                a.covered += usize::from(o.covered);
                                a.capped += usize::from(o.capped > 0);
                            }
                            Err(_) => a.failures += 1,
                        }
                    }
                }
                let summaries: Vec<CellResult> = cells
                    .iter()
                    .zip(&acc)
                    .map(|((d, e), a)| summarize(config, spec, d, e, a, theta0))
                    .collect();
                let base = summaries[0].mse;
                out.extend(summaries.into_iter().map(|mut c| {
                    c.ratio = c.mse / base;
                    c
                }));
            }
        }
    }
    Ok(MCResult { cells: out, truths })
}

fn summarize(
    config: &MCConfig,
    spec: DgpSpec,
    design: &DesignChoice,
    estimator: &EstimatorChoice,
    a: &CellAccumulator,
    theta0: f64,
) -> CellResult {
    let ok = a.thetas.len();
    let okf = ok as f64;
    let mean = a.thetas.iter().sum::<f64>() / okf;
    let mse = a.thetas.iter().map(|t| (t - theta0) * (t - theta0)).sum::<f64>() / okf;
    CellResult {
        n: spec.n,
        param: spec.param,
        model: spec.model,
        design: design.label(),
        estimator: estimator.label().to_string(),
        mse,
        ratio: f64::NAN,
        bias: mean - theta0,
        emp_var_n: empirical_variance(&a.thetas, spec.n).unwrap_or(f64::NAN),
        mean_vhat: a.vhat_sum / a.vhat_count as f64,
        coverage: a.covered as f64 / okf,
        fail_rate: a.failures as f64 / config.reps as f64,
        separation_flags: a.capped,
        successes: ok,
    }
}

/// Describes how each truth was obtained, for audit output.
pub fn describe_truths(result: &MCResult) -> String {
    let mut s = String::new();
    for t in &result.truths {
        let how = match t.truth.method {
            TruthMethod::Exact => "exact".to_string(),
            TruthMethod::MonteCarlo { draws, seed } => format!("monte carlo, {draws} draws, seed {seed}"),
        };
        let _ = writeln!(
            s,
            "{} model {}: theta0 = {} (se {}, {how})",
            t.param.as_str(),
            t.model,
            t.truth.value,
            t.truth.se
        );
    }
    s
}
