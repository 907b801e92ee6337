//! Language-guided domain transfer.
//!
//! Captions are cheap to come by in both source and target domains, and a
//! text classifier trained on source captions loses far less accuracy across
//! a domain shift than an image classifier does. This crate exploits that:
//! it trains a text classifier on source captions and labels, uses it to
//! pseudo-label target samples through their captions, and then trains a
//! vision/feature classifier jointly on labeled source data and
//! pseudo-labeled target data with equal per-domain batch composition. An
//! open-world mode flags low-confidence target samples as outliers and
//! scores with the harmonic mean of closed- and open-set accuracy.
//!
//! Model math is generic over the scalar type (`f32` or `f64`) through the
//! [`Scalar`] trait; the aliases below pin the common concrete choices.

pub mod corpus;
pub mod ego2exo;
pub mod error;
pub mod evalkit;
mod hash;
pub mod linalg;
pub mod openworld;
pub mod pipeline;
mod scalar;
pub mod textcls;
pub mod visioncls;
pub mod zeroshot;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// f64-backed aliases: the precision the CLI and the shipped pipelines use.
pub type Sample64 = corpus::Sample<f64>;
pub type DomainSplit64 = corpus::DomainSplit<f64>;
pub type TextClassifier64 = textcls::TextClassifierModel<f64>;
pub type VisionModel64 = visioncls::VisionModel<f64>;

/// f32-backed aliases for callers that want single precision end to end.
pub type Sample32 = corpus::Sample<f32>;
pub type DomainSplit32 = corpus::DomainSplit<f32>;
pub type TextClassifier32 = textcls::TextClassifierModel<f32>;
pub type VisionModel32 = visioncls::VisionModel<f32>;
