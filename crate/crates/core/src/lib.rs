//! Radiomics-based cardiovascular risk classification from multimodal retinal
//! images.
//!
//! The crate covers the whole experimental pipeline: first-order radiomic
//! feature extraction from grayscale scans, cohort assembly into the nine
//! attribute-group combinations, from-scratch classifiers (logistic
//! regression, LDA, SMO-trained SVMs, random forest), patient-grouped nested
//! cross-validation with two-stage backward elimination, DeLong comparison of
//! correlated ROC curves, and Shapley attribution of trained models.

pub mod attribution;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod models;
pub mod radiomics;
pub mod seed;
pub mod selection;

pub use error::{Error, Result};
