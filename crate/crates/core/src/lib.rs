//! Joint community, topic and temporal modelling of social-media posts and
//! follow links, fitted by collapsed Gibbs sampling.

pub mod analysis;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
