//! Exact solvers for finite decentralized stochastic control problems in
//! which `K` controllers share their observations and actions with a delay
//! of `n` steps.
//!
//! The problem is recast as a centralized one solved by a fictitious
//! coordinator that sees only the shared data and hands every controller a
//! prescription mapping its private data to an action. Two information
//! states support a backward dynamic program: the belief [`coordinator`] over
//! the joint state, and the pair of a state belief and partially applied
//! past prescriptions in [`second_form`]. [`evaluate`] supplies exhaustive
//! ground truth and [`analysis`] holds structural probes.

pub mod analysis;
pub mod coordinator;
mod decompose;
pub mod error;
pub mod evaluate;
pub mod files;
pub mod histories;
pub mod instances;
mod layout;
pub mod model;
pub mod second_form;
pub mod verify;

pub use error::{Error, Result};
pub use histories::{Design, GammaProfile, PartialFunction, TableDesign};
pub use model::{load_problem, validate_problem, Model, ProblemSpec};

/// Formats a number with 12 significant digits, trimming trailing zeros.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-5..12).contains(&exp) {
        let s = format!("{v:.11e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{e}");
    }
    let decimals = (11 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}
