//! Euler-like vector fields, tubular neighborhood embeddings and the
//! splitting theorems they yield for Poisson, Dirac, Lie algebroid and
//! generalized complex structures, on coordinate charts.

pub mod algebroid;
pub mod chart;
pub mod dirac;
pub mod error;
pub mod euler;
pub mod expr;
pub mod flow;
pub mod linalg;
pub mod normalform;
pub mod scenario;

pub use error::{Error, Result};
