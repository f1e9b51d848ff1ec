//! One-layer in-context linear regression: data designs, closed-form optimal
//! predictors, linear attention and gated-convolution models, and training.

pub mod designs;
pub mod error;
pub mod numerics;
pub mod par;

pub use error::{Error, Result};
pub mod theory;
pub mod estimators;
pub mod models;
pub mod training;
