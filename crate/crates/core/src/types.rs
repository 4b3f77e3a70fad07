//! Shared domain types: vocabulary, label sequences, feature sequences,
//! per-step log posteriors, CTC paths and frame segmentations.
//!
//! Label indices are `usize` with the CTC blank fixed at [`BLANK`] = 0; the
//! vocabulary glosses occupy `1..=N`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::matrix::{log_sum_exp, Matrix};

/// Index of the CTC blank symbol.
pub const BLANK: usize = 0;

/// Ordered set of gloss names. Gloss `i` in `glosses` has label id `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct GlossVocabulary {
    glosses: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, usize>,
}

impl GlossVocabulary {
    pub fn new(glosses: Vec<String>) -> Result<Self> {
        if glosses.is_empty() {
            return domain("vocabulary must contain at least one gloss");
        }
        let mut lookup = HashMap::with_capacity(glosses.len());
        for (i, g) in glosses.iter().enumerate() {
            if lookup.insert(g.clone(), i + 1).is_some() {
                return domain(format!("duplicate gloss {g:?}"));
            }
        }
        Ok(Self { glosses, lookup })
    }

    /// Number of glosses `N`, excluding blank.
    pub fn len(&self) -> usize {
        self.glosses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glosses.is_empty()
    }

    /// `N + 1`: glosses plus blank.
    pub fn num_classes(&self) -> usize {
        self.glosses.len() + 1
    }

    pub fn id(&self, gloss: &str) -> Option<usize> {
        self.lookup.get(gloss).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        if id == BLANK {
            return None;
        }
        self.glosses.get(id - 1).map(String::as_str)
    }

    pub fn glosses(&self) -> &[String] {
        &self.glosses
    }

    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<GlossSequence> {
        names
            .iter()
            .map(|n| {
                self.id(n.as_ref())
                    .ok_or_else(|| Error::InputDomain(format!("unknown gloss {:?}", n.as_ref())))
            })
            .collect::<Result<Vec<_>>>()
            .map(GlossSequence)
    }

    pub fn decode(&self, seq: &GlossSequence) -> Vec<String> {
        seq.0
            .iter()
            .map(|&i| self.name(i).unwrap_or("<unk>").to_string())
            .collect()
    }
}

impl TryFrom<Vec<String>> for GlossVocabulary {
    type Error = Error;

    fn try_from(v: Vec<String>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<GlossVocabulary> for Vec<String> {
    fn from(v: GlossVocabulary) -> Self {
        v.glosses
    }
}

/// Sequence of non-blank label ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct GlossSequence(pub Vec<usize>);

impl GlossSequence {
    /// Rejects blank entries. Use [`GlossSequence::check_vocab`] to bound ids.
    pub fn new(items: Vec<usize>) -> Result<Self> {
        if let Some(p) = items.iter().position(|&i| i == BLANK) {
            return domain(format!("blank at position {p} of a gloss sequence"));
        }
        Ok(Self(items))
    }

    pub fn check_vocab(&self, num_glosses: usize) -> Result<()> {
        match self.0.iter().find(|&&i| i == BLANK || i > num_glosses) {
            Some(i) => domain(format!("label id {i} outside 1..={num_glosses}")),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Minimum number of CTC steps that can emit this label: one per symbol
    /// plus one separating blank per adjacent repeat.
    pub fn min_ctc_steps(&self) -> usize {
        self.0.len() + self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }
}

impl From<Vec<usize>> for GlossSequence {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureRole {
    RawVideo,
    VisualFeature,
    SequentialFeature,
    TextFeature,
}

/// Time-major sequence of `d`-dimensional vectors (`T' x d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    frames: Matrix,
    role: FeatureRole,
}

impl FeatureSequence {
    pub fn new(frames: Matrix, role: FeatureRole) -> Result<Self> {
        if frames.rows() == 0 {
            return domain("feature sequence must have at least one frame");
        }
        if frames.cols() == 0 {
            return domain("feature dimension must be positive");
        }
        if !frames.is_finite() {
            return domain("feature sequence contains non-finite entries");
        }
        Ok(Self { frames, role })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], role: FeatureRole) -> Result<Self> {
        let m = Matrix::from_rows(rows)
            .ok_or_else(|| Error::InputDomain("frames have inconsistent dimensions".into()))?;
        Self::new(m, role)
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn role(&self) -> FeatureRole {
        self.role
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }
}

/// Per-step log posteriors over blank + glosses, stored time-major
/// (`T_out x (N+1)`, blank in column 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbMatrix(Matrix);

impl LogProbMatrix {
    /// Wraps without checking normalization; see [`validate_logprob_matrix`].
    pub fn new(m: Matrix) -> Result<Self> {
        if m.rows() == 0 || m.cols() < 2 {
            return domain(format!(
                "log-prob matrix needs >=1 step and >=2 classes, got {:?}",
                m.shape()
            ));
        }
        Ok(Self(m))
    }

    /// Log-normalizes each row of unnormalized scores.
    pub fn from_logits(logits: &Matrix) -> Result<Self> {
        let mut m = logits.clone();
        for t in 0..m.rows() {
            let row = m.row_mut(t);
            let z = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= z);
        }
        Self::new(m)
    }

    /// Takes per-step probabilities (rows need not be normalized exactly).
    pub fn from_probs(p: &Matrix) -> Result<Self> {
        Self::new(p.map(f64::ln))
    }

    pub fn uniform(steps: usize, classes: usize) -> Result<Self> {
        Self::new(Matrix::filled(steps, classes, -(classes as f64).ln()))
    }

    pub fn steps(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    #[inline]
    pub fn get(&self, t: usize, k: usize) -> f64 {
        self.0[(t, k)]
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Label with the highest log probability at each step (ties to the lower id).
    pub fn argmax_path(&self) -> CtcPath {
        CtcPath(
            self.0
                .row_iter()
                .map(|r| {
                    r.iter()
                        .enumerate()
                        .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                            if v > best.1 {
                                (k, v)
                            } else {
                                best
                            }
                        })
                        .0
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CtcPath(pub Vec<usize>);

/// The CTC collapse mapping: merge adjacent repeats, then drop blanks.
pub fn collapse_path(path: &CtcPath, num_classes: usize) -> Result<GlossSequence> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in &path.0 {
        if k >= num_classes {
            return domain(format!("path label {k} outside 0..{num_classes}"));
        }
        if prev != Some(k) && k != BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    Ok(GlossSequence(out))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonFinite { step: usize, class: usize, value: f64 },
    Mass { step: usize, mass: f64 },
}

/// Checks that every step's probabilities sum to 1 within `1e-6`.
///
/// `-inf` is a legal entry (probability zero); NaN and `+inf` are reported.
pub fn validate_logprob_matrix(m: &LogProbMatrix) -> std::result::Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    for (t, row) in m.matrix().row_iter().enumerate() {
        let mut bad = false;
        for (k, &v) in row.iter().enumerate() {
            if v.is_nan() || v == f64::INFINITY {
                out.push(Violation::NonFinite {
                    step: t,
                    class: k,
                    value: v,
                });
                bad = true;
            }
        }
        if bad {
            continue;
        }
        let mass = log_sum_exp(row).exp();
        if (mass - 1.0).abs() > 1e-6 {
            out.push(Violation::Mass { step: t, mass });
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// One gloss occurrence and its frame span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub gloss: usize,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

/// Contiguous frame spans, one per label position.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignmentSegmentation {
    pub segments: Vec<Segment>,
}

impl AlignmentSegmentation {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn labels(&self) -> GlossSequence {
        GlossSequence(self.segments.iter().map(|s| s.gloss).collect())
    }

    /// Checks ordering, non-overlap, bounds and label agreement.
    pub fn validate(&self, label: &GlossSequence, frames: usize) -> Result<()> {
        if self.labels() != *label {
            return domain("segment glosses differ from the label sequence");
        }
        let mut cursor = 0;
        for (i, s) in self.segments.iter().enumerate() {
            if s.is_empty() {
                return domain(format!("segment {i} is empty"));
            }
            if s.start < cursor {
                return domain(format!("segment {i} overlaps its predecessor"));
            }
            if s.end > frames {
                return domain(format!("segment {i} ends at {} beyond {frames} frames", s.end));
            }
            cursor = s.end;
        }
        Ok(())
    }

    /// True when segments tile `[0, frames)` with no gaps.
    pub fn is_total(&self, frames: usize) -> bool {
        let mut cursor = 0;
        for s in &self.segments {
            if s.start != cursor {
                return false;
            }
            cursor = s.end;
        }
        cursor == frames
    }

    /// Gloss-occurrence index owning each frame, `None` for uncovered frames.
    pub fn frame_owners(&self, frames: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; frames];
        for (i, s) in self.segments.iter().enumerate() {
            for slot in out.iter_mut().take(s.end.min(frames)).skip(s.start) {
                *slot = Some(i);
            }
        }
        out
    }

    /// Multiplies every boundary by `factor`, stretching the final segment to `frames`.
    pub fn upsample(&self, factor: usize, frames: usize) -> Self {
        let n = self.segments.len();
        let segments = self
            .segments
            .iter()
            .enumerate()
            .map(|(i, s)| Segment {
                gloss: s.gloss,
                start: (s.start * factor).min(frames),
                end: if i + 1 == n {
                    frames
                } else {
                    (s.end * factor).min(frames)
                },
            })
            .collect();
        Self { segments }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: usize = 1;
    const B: usize = 2;

    fn collapse(v: &[usize]) -> Vec<usize> {
        collapse_path(&CtcPath(v.to_vec()), 3).unwrap().0
    }

    #[test]
    fn collapse_examples() {
        assert_eq!(collapse(&[A, A, BLANK, B]), vec![A, B]);
        assert_eq!(collapse(&[BLANK, BLANK, BLANK]), Vec::<usize>::new());
        assert_eq!(collapse(&[A, BLANK, A]), vec![A, A]);
        assert!(collapse_path(&CtcPath(vec![A, 7]), 3).is_err());
    }

    #[test]
    fn collapse_preimage_enumeration() {
        // Every path of length <= 6 over {blank, A, B} collapses to a sequence
        // whose minimum step count fits, and each sequence's expansion maps back.
        for t in 1..=6usize {
            let total = 3usize.pow(t as u32);
            for code in 0..total {
                let mut c = code;
                let path: Vec<usize> = (0..t)
                    .map(|_| {
                        let k = c % 3;
                        c /= 3;
                        k
                    })
                    .collect();
                let s = collapse_path(&CtcPath(path), 3).unwrap();
                assert!(s.min_ctc_steps() <= t);
                // collapsed output re-embedded as a path is a fixed point when
                // it has no adjacent repeats
                if s.0.windows(2).all(|w| w[0] != w[1]) {
                    assert_eq!(collapse_path(&CtcPath(s.0.clone()), 3).unwrap(), s);
                }
            }
        }
    }

    #[test]
    fn validate_reports() {
        let u = LogProbMatrix::uniform(4, 3).unwrap();
        assert!(validate_logprob_matrix(&u).is_ok());

        let mut m = u.clone().into_matrix();
        for k in 0..3 {
            m[(2, k)] += 2f64.ln();
        }
        let errs = validate_logprob_matrix(&LogProbMatrix::new(m).unwrap()).unwrap_err();
        assert_eq!(errs.len(), 1);
        match errs[0] {
            Violation::Mass { step, mass } => {
                assert_eq!(step, 2);
                assert!((mass - 2.0).abs() < 1e-12);
            }
            ref v => panic!("unexpected {v:?}"),
        }

        let mut m = u.into_matrix();
        m[(1, 1)] = f64::NAN;
        let errs = validate_logprob_matrix(&LogProbMatrix::new(m).unwrap()).unwrap_err();
        assert!(matches!(errs[0], Violation::NonFinite { step: 1, class: 1, .. }));
    }

    #[test]
    fn vocabulary_roundtrip_and_errors() {
        let v = GlossVocabulary::new(vec!["A".into(), "B".into()]).unwrap();
        assert_eq!(v.num_classes(), 3);
        let s = v.encode(&["B", "A"]).unwrap();
        assert_eq!(s.0, vec![2, 1]);
        assert_eq!(v.decode(&s), vec!["B", "A"]);
        assert!(v.encode(&["C"]).is_err());
        assert!(GlossVocabulary::new(vec!["A".into(), "A".into()]).is_err());
        assert!(GlossVocabulary::new(vec![]).is_err());
        let json = serde_json::to_string(&v).unwrap();
        let back: GlossVocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back.id("B"), Some(2));
    }

    #[test]
    fn sequence_rejects_blank() {
        assert!(GlossSequence::new(vec![1, 0]).is_err());
        assert_eq!(GlossSequence(vec![1, 1, 2, 2, 2]).min_ctc_steps(), 8);
    }

    #[test]
    fn segmentation_checks() {
        let seg = AlignmentSegmentation::new(vec![
            Segment { gloss: A, start: 0, end: 2 },
            Segment { gloss: B, start: 2, end: 4 },
        ]);
        assert!(seg.validate(&GlossSequence(vec![A, B]), 4).is_ok());
        assert!(seg.is_total(4));
        assert!(seg.validate(&GlossSequence(vec![B, A]), 4).is_err());
        assert!(seg.validate(&GlossSequence(vec![A, B]), 3).is_err());
        let up = seg.upsample(4, 18);
        assert_eq!(up.segments[0].end, 8);
        assert_eq!(up.segments[1].end, 18);
        assert!(up.is_total(18));
    }

    #[test]
    fn feature_sequence_rejects_non_finite() {
        assert!(FeatureSequence::from_rows(&[[1.0, f64::NAN]], FeatureRole::RawVideo).is_err());
        assert!(FeatureSequence::from_rows::<[f64; 2]>(&[], FeatureRole::RawVideo).is_err());
    }
}
