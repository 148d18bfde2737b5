//! Numerical toolkit for controlled stochastic Volterra equations lifted to
//! the Sobolev space `W^{1,2}[0, T]`.

pub mod bsde;
pub mod contract;
pub mod error;
pub mod lq;
pub mod markov;
pub mod rng;
pub mod sobolev;
pub mod stats;
pub mod volterra;

pub use error::{LabError, Result};
