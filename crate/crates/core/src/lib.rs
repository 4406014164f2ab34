//! Deterministic federated multi-task learning laboratory: block-structured
//! parameter spaces, differentially private aggregation, trade-off-curve
//! privacy accounting, a federated simulator, and empirical checks of the
//! convergence bounds.

pub mod accountant;
pub mod csv_data;
pub mod dp;
pub mod error;
pub mod objective;
pub mod params;
pub mod rng;
pub mod sim;
pub mod synthetic;
pub mod tradeoff;
pub mod verifier;

pub use error::{CoreError, Result};
pub use params::{BlockLayout, ClientParams, GlobalParam, LocalView};
pub use rng::{Purpose, RngStream};
