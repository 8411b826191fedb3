//! Gross-output production function estimation without a Markov
//! assumption on productivity.
//!
//! The crate provides the panel data model and residual algebra, a
//! two-step GMM engine with firm-clustered inference, the three-block
//! estimator (flexible inputs and demand system, then primary inputs via a
//! homothetic CES index), proxy-variable and share-regression benchmarks,
//! identification diagnostics, a simulator for four productivity processes
//! and a Monte Carlo harness.

pub mod basis;
pub mod benchmarks;
pub mod ces;
pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod gmm;
pub mod linalg;
pub mod mc;
pub mod optim;
pub mod panel;
pub mod par;
pub mod params;
pub mod proposed;
pub mod report;
pub mod residuals;
pub mod rng;

pub use error::{Error, Result};
pub use panel::{demean, load_panel, CenteredPanel, Panel, Schema};
pub use params::{ParamId, ParamVector};
