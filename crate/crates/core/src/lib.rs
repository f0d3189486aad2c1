//! Synthesis, verification and analysis of genuine-multipartite-entanglement
//! witnesses supported on few-body marginals.

pub mod error;
pub mod measure;
pub mod robustness;
pub mod sdp;
pub mod states;
pub mod tensor;
pub mod witness;

pub use error::{Error, Result};
