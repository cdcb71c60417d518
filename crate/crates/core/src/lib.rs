//! Minimum density power divergence estimation and DPD-based tests for
//! normal linear regression and generalized linear models with fixed
//! covariates.

pub mod data;
pub mod dpdtest;
pub mod error;
pub mod estimate;
pub mod influence;
pub mod linalg;
pub mod models;
mod optim;
pub mod quadform;
pub mod restrict;
pub mod simharness;

pub use dpdtest::{Hypothesis, TestOptions, TestReport, Tuning};
pub use error::{DpdError, Result};
pub use estimate::{FitOptions, MdpdeFit};
pub use models::{Dataset, Family, Model, ParamVector, ScaleRole};
pub use quadform::{QuadFormDist, SeriesControl, TailProbability};
pub use restrict::{HessianMode, LinearConstraint, RmdpdeFit};
pub use simharness::{Scenario, SimResult};
