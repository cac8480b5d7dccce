//! Model predictive control toolkit: plant models, state estimators,
//! predictive controllers and the embedded optimizers they rely on.

pub mod autodiff;
pub mod error;
pub mod linalg;
pub mod model;
pub mod optim;
pub mod estimator;
pub mod controller;
pub mod sim;

pub use error::{Error, Result};
