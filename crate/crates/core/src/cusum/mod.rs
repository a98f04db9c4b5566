//! Quickest detection of intensity regime changes for Cox processes with
//! simultaneous jumps.
//!
//! The log-likelihood-ratio process in units of `log rho` is
//! `U(t) = sum_i N^i(t) - beta(rho) sum_i Lambda^i(t)` with
//! `beta(rho) = (rho - 1) / log rho`. The intensity-decrease detector alarms
//! when the reflected-at-the-maximum process `U~ = sup U - U` first exceeds
//! the threshold `m`; the increase detector reflects at the minimum
//! (`U^ = U - inf U`) and can only alarm at events. Average run lengths have
//! closed forms through the scale function `W` ([`scale`]).

pub mod detector;
pub mod scale;
pub mod two_sided;

pub use detector::{llr_increment, Alarm, CusumConfig, Detector, Direction};
pub use scale::{
    arl_decrease, arl_increase, beta_of_rho, calibrate_threshold, int_w, scale_w, scale_w_prime,
    scale_w_prime_right, tilde_g, tilde_h,
};
pub use two_sided::{run_two_sided, write_regimes_csv, Regime, RegimeReport, RegimeRow, TwoSidedConfig};
