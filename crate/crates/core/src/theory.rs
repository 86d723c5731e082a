//! Numerical embodiment of the Gaussian binary task: closed-form probit
//! accuracies of linear modes, the in/out accuracy-gap functional, and the
//! ensemble-gap inequality checked across seeded trials.

mod gap;
mod normal;
mod sweep;

pub use gap::{
    acc_closed_form, accuracies, check_gap_inequality, ens_linear, gap, gap_direct, GapResult,
    LinearMode,
};
pub use normal::{erf, phi, phi_density, probit};
pub use sweep::{
    assumption_regime_sweep, assumption_regime_trial, fit_logistic_theta, SweepConfig, SweepReport,
    SweepTrial,
};
