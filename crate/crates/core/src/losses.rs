//! Training objectives.
//!
//! With real video/text features `f_v^r`, `f_l^r` and their pseudo
//! counterparts `f_v^p`, `f_l^p`, and `D` the soft-DTW distance over cosine
//! costs:
//!
//! - alignment: `L_A = CTC(real) + CTC(pseudo)`
//! - discriminative: `L_Dv = [D(f_v^r, f_l^r) - D(f_v^r, f_l^p) + α]+`,
//!   `L_Dl = [D(f_l^r, f_v^r) - D(f_l^r, f_v^p) + α]+`, `L_D = L_Dv + L_Dl`
//! - semantic: `L_S = D(f_v^r, f_l^r)`
//! - total: `L = λ L_A + (1 - λ)(L_D + L_S)`
//!
//! The plain functions evaluate values; [`build_objective`] records the same
//! composition on a [`Tape`] for training.

use serde::{Deserialize, Serialize};

use crate::ctc::ctc_loss_and_grad;
use crate::error::{domain, Result};
use crate::model::{Tape, Var};
use crate::softdtw::soft_dtw_distance;
use crate::types::{FeatureSequence, GlossSequence, LogProbMatrix};

pub const DEFAULT_LAMBDA: f64 = 0.9;
pub const DEFAULT_ALPHA: f64 = 1.0;

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return domain(format!("lambda must lie in [0, 1], got {lambda}"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return domain(format!("margin must be finite and >= 0, got {alpha}"));
    }
    Ok(())
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_align: f64,
    pub l_disc_v: f64,
    pub l_disc_l: f64,
    pub l_disc: f64,
    pub l_sem: f64,
    pub total: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl LossBreakdown {
    /// Component-wise mean over a batch. `lambda` and `alpha` are taken from the first item.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let Some(first) = items.first() else {
            return LossBreakdown::default();
        };
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            l_align: avg(|b| b.l_align),
            l_disc_v: avg(|b| b.l_disc_v),
            l_disc_l: avg(|b| b.l_disc_l),
            l_disc: avg(|b| b.l_disc),
            l_sem: avg(|b| b.l_sem),
            total: avg(|b| b.total),
            lambda: first.lambda,
            alpha: first.alpha,
        }
    }
}

/// `CTC(real)` plus, when present, `CTC(pseudo)`.
pub fn alignment_loss(
    real: (&LogProbMatrix, &GlossSequence),
    pseudo: Option<(&LogProbMatrix, &GlossSequence)>,
) -> Result<f64> {
    let mut l = ctc_loss_and_grad(real.0, real.1)?.loss;
    if let Some((p, s)) = pseudo {
        l += ctc_loss_and_grad(p, s)?.loss;
    }
    Ok(l)
}

/// Hinge on two precomputed distances.
pub fn triplet_hinge(d_pos: f64, d_neg: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((d_pos - d_neg + alpha).max(0.0))
}

pub fn triplet_dtw(
    anchor: &FeatureSequence,
    positive: &FeatureSequence,
    negative: &FeatureSequence,
    alpha: f64,
    gamma: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    let dp = soft_dtw_distance(anchor, positive, gamma)?;
    let dn = soft_dtw_distance(anchor, negative, gamma)?;
    triplet_hinge(dp, dn, alpha)
}

/// Returns `(L_D, L_Dv, L_Dl)`.
pub fn discriminative_loss(
    video_real: &FeatureSequence,
    text_real: &FeatureSequence,
    video_pseudo: &FeatureSequence,
    text_pseudo: &FeatureSequence,
    alpha: f64,
    gamma: f64,
) -> Result<(f64, f64, f64)> {
    let dv = triplet_dtw(video_real, text_real, text_pseudo, alpha, gamma)?;
    let dl = triplet_dtw(text_real, video_real, video_pseudo, alpha, gamma)?;
    Ok((dv + dl, dv, dl))
}

pub fn semantic_loss(video_real: &FeatureSequence, text_real: &FeatureSequence, gamma: f64) -> Result<f64> {
    soft_dtw_distance(video_real, text_real, gamma)
}

/// Loss term values entering the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossInputs {
    pub l_align: f64,
    pub l_disc_v: f64,
    pub l_disc_l: f64,
    pub l_sem: f64,
}

pub fn total_loss(inputs: LossInputs, lambda: f64, alpha: f64) -> Result<LossBreakdown> {
    check_lambda(lambda)?;
    let l_disc = inputs.l_disc_v + inputs.l_disc_l;
    Ok(LossBreakdown {
        l_align: inputs.l_align,
        l_disc_v: inputs.l_disc_v,
        l_disc_l: inputs.l_disc_l,
        l_disc,
        l_sem: inputs.l_sem,
        total: lambda * inputs.l_align + (1.0 - lambda) * (l_disc + inputs.l_sem),
        lambda,
        alpha,
    })
}

/// Soft-DTW distance between two feature nodes.
pub fn distance_on(tape: &mut Tape, a: Var, b: Var, gamma: f64) -> Result<Var> {
    let c = tape.cosine_cost(a, b)?;
    tape.soft_dtw(c, gamma)
}

/// `[D(anchor, pos) - D(anchor, neg) + α]+` on the tape.
pub fn triplet_on(tape: &mut Tape, anchor: Var, pos: Var, neg: Var, alpha: f64, gamma: f64) -> Result<Var> {
    check_alpha(alpha)?;
    let dp = distance_on(tape, anchor, pos, gamma)?;
    let dn = distance_on(tape, anchor, neg, gamma)?;
    let margin = tape.input(crate::matrix::Matrix::from_vec(1, 1, vec![alpha]));
    let diff = tape.weighted_sum(vec![(dp, 1.0), (dn, -1.0), (margin, 1.0)]);
    Ok(tape.hinge(diff))
}

/// Scalar loss nodes already recorded on a tape. Absent terms are excluded
/// from the graph entirely.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveTerms {
    pub ctc_real: Var,
    pub ctc_pseudo: Option<Var>,
    pub disc_v: Option<Var>,
    pub disc_l: Option<Var>,
    pub sem: Option<Var>,
}

/// Records `λ L_A + (1 - λ)(L_D + L_S)`. Terms whose weight is exactly zero
/// are left out so that `λ = 1` yields the CTC-only graph.
pub fn build_objective(tape: &mut Tape, terms: ObjectiveTerms, lambda: f64, alpha: f64) -> Result<(Var, LossBreakdown)> {
    check_lambda(lambda)?;
    let val = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.scalar_value(v));
    let inputs = LossInputs {
        l_align: tape.scalar_value(terms.ctc_real) + val(tape, terms.ctc_pseudo),
        l_disc_v: val(tape, terms.disc_v),
        l_disc_l: val(tape, terms.disc_l),
        l_sem: val(tape, terms.sem),
    };
    let breakdown = total_loss(inputs, lambda, alpha)?;

    let mut weighted = Vec::new();
    if lambda != 0.0 {
        weighted.push((terms.ctc_real, lambda));
        if let Some(p) = terms.ctc_pseudo {
            weighted.push((p, lambda));
        }
    }
    let rest = 1.0 - lambda;
    if rest != 0.0 {
        for v in [terms.disc_v, terms.disc_l, terms.sem].into_iter().flatten() {
            weighted.push((v, rest));
        }
    }
    if weighted.is_empty() {
        // λ = 0 with no distance terms: keep a zero-weighted CTC node so the
        // graph still has a scalar root
        weighted.push((terms.ctc_real, 0.0));
    }
    Ok((tape.weighted_sum(weighted), breakdown))
}
