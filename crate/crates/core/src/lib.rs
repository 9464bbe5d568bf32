//! Speaker-verification back-end toolkit.
//!
//! Everything downstream of embedding extraction: corpus handling and
//! synthetic data generation, embedding conditioning (centering, length
//! normalization, trial-based mean subtraction), LDA and support-vector
//! discriminant analysis (SVDA) projections, two-covariance PLDA training
//! and scoring, unsupervised speaker clustering of unlabeled in-domain
//! data, PAV score calibration, logistic-regression fusion, and detection
//! metrics (EER, min/act Cprimary with equalized and unequalized
//! averaging).
//!
//! The [`pipeline`] module wires these stages into reproducible,
//! config-driven experiments; the `spkver` binary exposes them as
//! subcommands.

pub mod calfuse;
pub mod cluster;
pub mod config;
pub mod corpus;
pub mod error;
pub mod lda;
pub mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod plda;
pub mod preprocess;
pub mod svda;

pub use error::{Error, Result};
