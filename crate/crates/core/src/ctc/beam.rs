use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::matrix::log_add;
use crate::types::{GlossSequence, LogProbMatrix, BLANK};

pub const DEFAULT_BEAM_WIDTH: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeCandidate {
    pub sequence: GlossSequence,
    /// Prefix probability mass accumulated by the beam, `ln p(s | P)` when
    /// nothing was pruned.
    pub log_prob: f64,
}

#[derive(Clone, Copy)]
struct Mass {
    blank: f64,
    non_blank: f64,
}

impl Mass {
    const ZERO: Mass = Mass {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    fn total(&self) -> f64 {
        log_add(self.blank, self.non_blank)
    }
}

fn prune(beam: HashMap<Vec<usize>, Mass>, width: usize) -> Vec<(Vec<usize>, Mass)> {
    let mut v: Vec<_> = beam.into_iter().collect();
    v.sort_by(|a, b| b.1.total().total_cmp(&a.1.total()).then_with(|| a.0.cmp(&b.0)));
    v.truncate(width);
    v
}

/// Prefix beam search without a language model or length normalization.
///
/// Each step keeps the `beam_width` collapsed prefixes with the largest
/// blank + non-blank mass. Returns at most `beam_width` candidates ordered by
/// non-increasing `log_prob` (ties broken by sequence order).
pub fn beam_decode(p: &LogProbMatrix, beam_width: usize) -> Result<Vec<DecodeCandidate>> {
    if beam_width < 1 {
        return domain("beam width must be at least 1");
    }
    let classes = p.classes();
    let mut beam: Vec<(Vec<usize>, Mass)> = vec![(
        Vec::new(),
        Mass {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];

    for t in 0..p.steps() {
        let mut next: HashMap<Vec<usize>, Mass> = HashMap::with_capacity(beam.len() * classes);
        let y_blank = p.get(t, BLANK);
        for (prefix, mass) in &beam {
            let entry = next.entry(prefix.clone()).or_insert(Mass::ZERO);
            entry.blank = log_add(entry.blank, mass.total() + y_blank);

            let last = prefix.last().copied();
            for c in 1..classes {
                let y = p.get(t, c);
                if y == f64::NEG_INFINITY {
                    continue;
                }
                let mut extended = prefix.clone();
                extended.push(c);
                if last == Some(c) {
                    // repeat without a blank stays on the same prefix
                    let same = next.entry(prefix.clone()).or_insert(Mass::ZERO);
                    same.non_blank = log_add(same.non_blank, mass.non_blank + y);
                    let ext = next.entry(extended).or_insert(Mass::ZERO);
                    ext.non_blank = log_add(ext.non_blank, mass.blank + y);
                } else {
                    let ext = next.entry(extended).or_insert(Mass::ZERO);
                    ext.non_blank = log_add(ext.non_blank, mass.total() + y);
                }
            }
        }
        beam = prune(next, beam_width);
    }

    Ok(beam
        .into_iter()
        .filter(|(_, m)| m.total() > f64::NEG_INFINITY)
        .map(|(s, m)| DecodeCandidate {
            sequence: GlossSequence(s),
            log_prob: m.total(),
        })
        .collect())
}
