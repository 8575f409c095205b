use stratkit::variance::OracleMethod;
use stratkit_sim::dgp::ORACLE_DRAWS;
use stratkit_sim::{oracle_closed_form, oracle_quasi_mc, oracle_variances, true_theta, DgpSpec, Param};

use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OracleChoice {
    /// Closed form where available, else quasi-Monte Carlo.
    Auto,
    ClosedForm,
    QuasiMc,
}

#[derive(Debug, Clone)]
pub struct OracleArgs {
    pub model: u8,
    pub param: Param,
    pub eta: f64,
    pub sigma: Option<f64>,
    pub method: OracleChoice,
    pub draws: Option<usize>,
    pub seed: u64,
}

/// CSV with one header and one value row.
pub fn cmd_oracle(args: &OracleArgs) -> Result<String> {
    let mut spec = DgpSpec::new(args.model, args.param, 0)?;
    if let Some(s) = args.sigma {
        spec = spec.with_sigma(s)?;
    }
    let draws = args.draws.unwrap_or(ORACLE_DRAWS);
    let o = match args.method {
        OracleChoice::Auto if args.draws.is_none() => oracle_variances(&spec, args.eta)?,
        OracleChoice::ClosedForm => oracle_closed_form(&spec, args.eta)?,
        OracleChoice::Auto | OracleChoice::QuasiMc => oracle_quasi_mc(&spec, args.eta, draws, args.seed)?,
    };
    let method = match o.method {
        OracleMethod::ClosedForm => "closed_form".to_string(),
        OracleMethod::QuasiMc { draws } => format!("quasi_mc_{draws}"),
    };
    let truth = true_theta(&spec);
    Ok(format!(
        "model,param,eta,theta0,v,v_star,ratio,method\n{},{},{},{},{},{},{},{}\n",
        args.model,
        args.param.as_str(),
        args.eta,
        truth.value,
        o.v,
        o.v_star,
        o.ratio,
        method
    ))
}
