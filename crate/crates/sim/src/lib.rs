//! Simulation models and the Monte Carlo harness for comparing designs and
//! estimators.

pub mod dgp;
pub mod harness;

pub use dgp::{
    draw_potential, draw_potential_ate, draw_potential_late, oracle_closed_form, oracle_quasi_mc, oracle_variances,
    true_theta, DgpSpec, Param, TrueTheta, TruthMethod,
};
pub use harness::{run_grid, CellResult, DesignChoice, EstimatorChoice, MCConfig, MCResult};
