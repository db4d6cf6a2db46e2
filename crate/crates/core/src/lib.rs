//! Masked-diffusion training on the k-parity task.
//!
//! Exact Signal/Noise loss decomposition, the energy landscape of the hidden
//! features, optimal masking-rate schedules, full-batch training harnesses for
//! masked-diffusion and supervised objectives, and a tiny interval-restricted
//! masked-diffusion character model.

pub mod error;
pub mod landscape;
pub mod masking;
pub mod model;
pub mod objective;
pub mod optim;
pub mod parity;
pub mod report;
pub mod rng;
pub mod schedule;
pub mod textlab;
pub mod trainer;

pub use error::{MdError, Result};
