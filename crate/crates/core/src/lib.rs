//! Marked-Hawkes modelling of limit-order-book trades-through and CUSUM
//! liquidity regime detection.
//!
//! Pipeline, end to end:
//!
//! 1. [`lob`] — parse (or synthesize) tick-level book snapshots and trade
//!    prints;
//! 2. [`trades_through`] — extract trade-through events (side, depth,
//!    volume) and turn them into point streams;
//! 3. [`hawkes`] — fit and simulate a marked bivariate Hawkes model of the
//!    two event streams;
//! 4. [`diagnostics`] — time-rescaling residuals with KS / Ljung–Box /
//!    Q-Q goodness-of-fit;
//! 5. [`cusum`] — reflected-LSPR detectors with closed-form average run
//!    lengths, threshold calibration and a two-sided streaming monitor;
//! 6. [`verify`] — ε-shift constructions and Monte-Carlo oracles backing
//!    the run-length formulas.

pub mod cusum;
pub mod diagnostics;
pub mod error;
pub mod hawkes;
pub mod lob;
pub mod trades_through;
pub mod verify;

pub use error::{Error, Result};
