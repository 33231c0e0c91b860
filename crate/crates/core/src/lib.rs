pub mod catalog;
pub mod cli;
pub mod config;
pub mod conjugacy;
pub mod dichotomy;
pub mod envelope;
pub mod error;
pub mod flows;
pub mod linalg;
pub mod ode;
pub mod quadrature;
pub mod smoothness;

pub use error::{Error, Result};
