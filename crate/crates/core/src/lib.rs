//! Closed-loop simulation toolkit for attack-resilient path tracking of a
//! differential-drive wheeled mobile robot.
//!
//! The toolkit wires together a nonlinear plant, a two-layer Lyapunov tracking
//! controller, a redundant six-channel measurement system, a stealthy
//! false-data-injection attack generator, a residual-based monitor, a
//! simulated attack-localization oracle, Poisson-Binomial reliability pruning
//! and a channel-masked unscented Kalman filter. The [`scenario`] module runs
//! the full loop and produces CSV logs plus summary metrics; everything else
//! is usable standalone.

pub mod config;
pub mod controller;
pub mod error;
pub mod fdia;
pub mod measurement;
pub mod monitor;
pub mod oracle;
pub mod pruning;
pub mod robot;
pub mod scenario;
pub mod ukf;

pub use error::{Error, Result};
