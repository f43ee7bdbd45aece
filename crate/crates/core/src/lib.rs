//! Stochastic weekly mortality forecasting: principal-component
//! decomposition of logit rate panels, parametric seasonal trend fitting,
//! SARIMA residual models, Monte Carlo prediction intervals, and excess
//! mortality reporting.

pub mod cli;
pub mod error;
pub mod excess;
pub mod model_file;
pub mod opt;
pub mod panel;
pub mod pca;
pub mod residual;
pub mod series;
pub mod simulate;
pub mod svg;
pub mod synth;
pub mod transform;
pub mod trend;
pub mod week;

pub use error::{Error, Result};
