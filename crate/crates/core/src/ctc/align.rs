use super::{can_skip, check_feasible, check_label, expand};
use crate::error::Result;
use crate::types::{AlignmentSegmentation, CtcPath, GlossSequence, LogProbMatrix, Segment};

#[derive(Debug, Clone, PartialEq)]
pub struct ForcedAlignment {
    /// Spans in output steps of `P`, tiling `[0, T_out)`.
    pub segmentation: AlignmentSegmentation,
    /// The best path itself.
    pub path: CtcPath,
    /// Log probability of the best path.
    pub log_prob: f64,
}

/// Viterbi best path among those collapsing to `label`.
///
/// Each gloss occurrence owns the steps where the path sits on it; blank
/// steps join the following occurrence and trailing blanks join the last.
pub fn forced_align(p: &LogProbMatrix, label: &GlossSequence) -> Result<ForcedAlignment> {
    check_label(p, label)?;
    check_feasible(p, label)?;
    let ext = expand(label);
    let (t_len, s_len) = (p.steps(), ext.len());

    let mut score = vec![f64::NEG_INFINITY; t_len * s_len];
    let mut back = vec![0usize; t_len * s_len];
    score[0] = p.get(0, ext[0]);
    if s_len > 1 {
        score[1] = p.get(0, ext[1]);
    }
    for t in 1..t_len {
        let (prev, cur) = score.split_at_mut(t * s_len);
        let prev = &prev[(t - 1) * s_len..];
        for s in 0..s_len {
            // ties keep the state, then step by one, then skip
            let mut best = (prev[s], s);
            if s >= 1 && prev[s - 1] > best.0 {
                best = (prev[s - 1], s - 1);
            }
            if can_skip(&ext, s) && prev[s - 2] > best.0 {
                best = (prev[s - 2], s - 2);
            }
            cur[s] = best.0 + p.get(t, ext[s]);
            back[t * s_len + s] = best.1;
        }
    }

    let last = (t_len - 1) * s_len;
    let mut state = s_len - 1;
    if s_len > 1 && score[last + s_len - 2] > score[last + s_len - 1] {
        state = s_len - 2;
    }
    let log_prob = score[last + state];

    let mut states = vec![0usize; t_len];
    for t in (0..t_len).rev() {
        states[t] = state;
        state = back[t * s_len + state];
    }

    let path = CtcPath(states.iter().map(|&s| ext[s]).collect());
    let n = label.len();
    let mut segments: Vec<Segment> = Vec::with_capacity(n);
    if n > 0 {
        for (t, &s) in states.iter().enumerate() {
            // blank state 2i precedes occurrence i; label state 2i+1 is occurrence i
            let owner = (s / 2).min(n - 1);
            match segments.get_mut(owner) {
                Some(seg) => seg.end = t + 1,
                None => segments.push(Segment {
                    gloss: label.as_slice()[owner],
                    start: t,
                    end: t + 1,
                }),
            }
        }
    }
    Ok(ForcedAlignment {
        segmentation: AlignmentSegmentation::new(segments),
        path,
        log_prob,
    })
}
