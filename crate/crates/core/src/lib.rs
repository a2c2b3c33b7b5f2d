//! Fault detection and compensation for sampled linear systems whose input
//! gain switches between two known levels.
//!
//! The plant `ẋ = Ax + B z(t) (f(t) + u(t))`, `y = Cx` is read through
//! Gaussian noise every `τ` time units. The [`detector`] decides at each
//! reading which of the two levels `ζ0 > ζ1` was active over the last
//! interval, keeping a single state estimate (the One State algorithm), and
//! the [`plant`] loop feeds the decision back as the compensation
//! `u = f (1/ẑ − 1)`. [`analysis`] gives closed-form detection error and
//! error-decay probabilities for scalar outputs, and [`design`] picks the
//! sampling period from them.

pub mod analysis;
pub mod design;
pub mod detector;
pub mod linalg;
pub mod montecarlo;
pub mod plant;

use thiserror::Error;

pub use linalg::{InputSignal, LinalgError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{what} at t = {time} is not on the sampling grid of step {tau}")]
    OffGrid {
        what: &'static str,
        time: f64,
        tau: f64,
    },
    #[error("analysis needs a scalar output, the plant has {0} outputs")]
    ScalarOutputRequired(usize),
    #[error("state is no longer finite at step {0}")]
    Divergence(usize),
    #[error("{0} needs a constant input signal")]
    ConstantInputRequired(&'static str),
    #[error("{0} needs a periodic input signal")]
    PeriodicInputRequired(&'static str),
    #[error("step {k} is beyond the precomputed horizon of {horizon} steps")]
    BeyondHorizon { k: usize, horizon: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
