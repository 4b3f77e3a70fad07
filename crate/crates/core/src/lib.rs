//! Cross-modal augmentation for CTC sequence recognition.
//!
//! Building blocks:
//! - [`ctc`]: loss, gradient, prefix beam search, forced alignment
//! - [`metrics`]: edit alignment, WER, Acc-w, Top-K WER
//! - [`softdtw`]: cosine costs and differentiable DTW
//! - [`losses`]: alignment, real/pseudo triplet and semantic losses
//! - [`augment`]: edit-plan sampling and aligned feature splicing
//! - [`model`]: a small differentiable recognizer on a reverse-mode tape
//! - [`harness`]: synthetic data, training, evaluation and ablations

pub mod augment;
pub mod ctc;
pub mod error;
pub mod harness;
pub mod losses;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod softdtw;
pub mod types;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use types::{
    collapse_path, validate_logprob_matrix, AlignmentSegmentation, CtcPath, FeatureRole,
    FeatureSequence, GlossSequence, GlossVocabulary, LogProbMatrix, Segment, BLANK,
};
