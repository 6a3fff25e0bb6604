//! Clock-drift modelling and synchronization for time-bin QKD.
//!
//! The crate is organised bottom-up:
//!
//! * [`physics`]: pulse broadening in fiber, SPAD skew-normal jitter, dead-time rates.
//! * [`clock`]: the two-clock drift model, frequency updates and stability budgets.
//! * [`pdf`]: start–stop arrival-time densities under drift, folding, window leakage and
//!   drift-induced QBER.
//! * [`sim`]: Monte-Carlo timestamp generation, TDC histograms and the Poisson-per-bin
//!   histogram sampler.
//! * [`sync`]: circular-mean drift/delay estimation, Pearson offset recovery and the
//!   integration-time ramp controller.
//! * [`metrics`]: TDEV, summaries and moving averages of tracking traces.
//! * [`cli`]: configuration parsing and the experiment drivers behind the `tbsync` binary.
//!
//! All quantities are SI (seconds, hertz, metres) unless a name says otherwise.

pub mod cli;
pub mod clock;
pub mod error;
pub mod metrics;
pub mod numeric;
pub mod pdf;
pub mod physics;
pub mod sim;
pub mod sync;
pub mod units;

pub use error::{Error, Result};

/// One picosecond in seconds.
pub const PS: f64 = 1e-12;
/// One nanosecond in seconds.
pub const NS: f64 = 1e-9;
/// One microsecond in seconds.
pub const US: f64 = 1e-6;
