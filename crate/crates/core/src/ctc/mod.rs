//! Connectionist temporal classification over a [`LogProbMatrix`]:
//! the forward-backward loss and its gradient, prefix beam search, and
//! Viterbi forced alignment.
//!
//! All recursions run over the blank-interleaved label lattice
//! `[blank, s1, blank, s2, ..., sL, blank]` in log space.

mod align;
mod beam;
mod loss;

pub use align::{forced_align, ForcedAlignment};
pub use beam::{beam_decode, DecodeCandidate, DEFAULT_BEAM_WIDTH};
pub use loss::{ctc_log_prob, ctc_loss_and_grad, CtcLoss};

use crate::error::{domain, Error, Result};
use crate::types::{GlossSequence, LogProbMatrix, BLANK};

/// Blank-interleaved label, length `2L + 1`.
pub(crate) fn expand(label: &GlossSequence) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * label.len() + 1);
    out.push(BLANK);
    for &g in label.as_slice() {
        out.push(g);
        out.push(BLANK);
    }
    out
}

/// Whether lattice state `s` may be entered directly from `s - 2`.
#[inline]
pub(crate) fn can_skip(ext: &[usize], s: usize) -> bool {
    s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2]
}

pub(crate) fn check_label(p: &LogProbMatrix, label: &GlossSequence) -> Result<()> {
    for &g in label.as_slice() {
        if g == BLANK {
            return domain("target label contains the blank symbol");
        }
        if g >= p.classes() {
            return domain(format!("label id {g} outside 0..{}", p.classes()));
        }
    }
    Ok(())
}

pub(crate) fn check_feasible(p: &LogProbMatrix, label: &GlossSequence) -> Result<()> {
    let required = label.min_ctc_steps();
    if required > p.steps() {
        return Err(Error::Infeasible {
            label_len: label.len(),
            required,
            steps: p.steps(),
        });
    }
    Ok(())
}
