//! Under-determined convolutive source separation with Gaussian spatial
//! covariance models.

pub mod audio;
pub mod config;
pub mod em;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod init;
pub mod linalg;
pub mod permutation;
pub mod pipeline;
pub mod roomsim;
pub mod separate;
pub mod sources;
pub mod spatial;
pub mod stft;
pub mod tensorfile;

pub use error::{Error, Result};
