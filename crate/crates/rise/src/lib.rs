//! Univariate time-series imputation with recurrent input and state
//! estimation: a recurrent cell whose input and previous hidden state are
//! transformed to account for missing observations, with pluggable
//! instance transformations and scalar-value encoders.

pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod gru;
pub mod rise;
pub mod tensor;
pub mod train;

pub use error::{Result, RiseError};
