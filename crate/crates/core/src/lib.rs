//! Meta-learning adversarial domain augmentation for single-source domain
//! generalization.

pub mod augment;
pub mod config;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod metaloop;
pub mod nets;
pub mod optim;
pub mod scalar;

pub use datamodel::*;
pub use error::{Error, ErrorKind, Result};
