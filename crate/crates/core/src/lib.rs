//! Next-inspection forecasting of railway vertical alignment with a 1D
//! convolutional LSTM and an exogenous-factor embedding front end, plus the
//! synthetic degradation simulator, baselines and evaluation tooling around it.

pub mod error;
pub mod eval;
pub mod forecast;
pub mod cells;
pub mod embed;
pub mod nn;
pub mod par;
pub mod rng;
pub mod trackgen;

pub use error::{Error, Result};
