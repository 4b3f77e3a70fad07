//! Decoding and corpus metrics for a trained model.

use rayon::prelude::*;

use crate::augment::VideoTextPair;
use crate::ctc::{beam_decode, forced_align, DecodeCandidate};
use crate::error::{domain, Result};
use crate::metrics::{corpus_report, MetricsReport, RankedSample};
use crate::model::{log_probs, ModelParams};
use crate::types::FeatureSequence;

use super::train::FRAMES_PER_STEP;

pub fn decode(params: &ModelParams, video: &FeatureSequence, beam_width: usize) -> Result<Vec<DecodeCandidate>> {
    beam_decode(&log_probs(params, video)?, beam_width)
}

/// Beam-decodes every pair in parallel and scores the ranked candidates.
pub fn evaluate(params: &ModelParams, pairs: &[VideoTextPair], beam_width: usize, k_max: usize) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return domain("evaluation set is empty");
    }
    let samples = pairs
        .par_iter()
        .map(|pair| {
            let candidates = decode(params, &pair.features, beam_width)?;
            Ok(RankedSample {
                reference: pair.label.clone(),
                candidates: candidates.into_iter().map(|c| c.sequence).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    corpus_report(&samples, k_max)
}

/// Mean per-pair fraction of frames whose forced-alignment owner matches the
/// stored segmentation.
pub fn alignment_accuracy(params: &ModelParams, pairs: &[VideoTextPair]) -> Result<f64> {
    if pairs.is_empty() {
        return domain("evaluation set is empty");
    }
    let per_pair = pairs
        .par_iter()
        .map(|pair| {
            let t = pair.features.len();
            let fa = forced_align(&log_probs(params, &pair.features)?, &pair.label)?;
            let predicted = fa.segmentation.upsample(FRAMES_PER_STEP, t).frame_owners(t);
            let truth = pair.segmentation.frame_owners(t);
            let hits = predicted.iter().zip(&truth).filter(|(a, b)| a == b).count();
            Ok(hits as f64 / t as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_pair.iter().sum::<f64>() / per_pair.len() as f64)
}
