//! Pseudo video-text pairs from substitution, deletion and insertion edits.
//!
//! Labels are edited symbolically, and the aligned frames are edited in
//! lockstep: a substituted gloss's span is swapped for a segment of the new
//! gloss cut from another video, a deleted gloss's span is removed, and an
//! inserted gloss brings a foreign segment spliced in at the boundary.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::matrix::Matrix;
use crate::metrics::edit_distance;
use crate::types::{AlignmentSegmentation, FeatureRole, FeatureSequence, GlossSequence, Segment};

/// Maximum number of whole-plan redraws when a plan reproduces the real label.
pub const MAX_PLAN_RETRIES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum EditOp {
    Substitute { position: usize, gloss: usize },
    Delete { position: usize },
    Insert { position: usize, gloss: usize },
}

/// Edits applied in order; positions refer to the sequence as it stands
/// when each edit is applied.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EditPlan {
    pub ops: Vec<EditOp>,
}

impl EditPlan {
    pub fn k(&self) -> usize {
        self.ops.len()
    }

    /// The label after every edit, checking positions as it goes.
    pub fn apply_to_label(&self, label: &GlossSequence) -> Result<GlossSequence> {
        let mut cur = label.0.clone();
        for (i, op) in self.ops.iter().enumerate() {
            match *op {
                EditOp::Substitute { position, gloss } => {
                    let slot = cur
                        .get_mut(position)
                        .ok_or_else(|| Error::InputDomain(format!("edit {i}: position {position} out of range")))?;
                    if *slot == gloss {
                        return domain(format!("edit {i}: substitution keeps gloss {gloss}"));
                    }
                    *slot = gloss;
                }
                EditOp::Delete { position } => {
                    if position >= cur.len() {
                        return domain(format!("edit {i}: position {position} out of range"));
                    }
                    cur.remove(position);
                }
                EditOp::Insert { position, gloss } => {
                    if position > cur.len() {
                        return domain(format!("edit {i}: position {position} out of range"));
                    }
                    cur.insert(position, gloss);
                }
            }
        }
        GlossSequence::new(cur)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub plan: EditPlan,
}

/// Frames, label and the segmentation tying them together.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTextPair {
    pub id: String,
    pub features: FeatureSequence,
    pub label: GlossSequence,
    pub segmentation: AlignmentSegmentation,
    pub is_pseudo: bool,
    pub provenance: Option<Provenance>,
}

impl VideoTextPair {
    pub fn real(id: impl Into<String>, features: FeatureSequence, label: GlossSequence, segmentation: AlignmentSegmentation) -> Self {
        Self {
            id: id.into(),
            features,
            label,
            segmentation,
            is_pseudo: false,
            provenance: None,
        }
    }

    /// Segmentation agrees with the label and tiles every frame.
    pub fn validate(&self) -> Result<()> {
        let t = self.features.len();
        self.segmentation.validate(&self.label, t)?;
        if !self.segmentation.is_total(t) {
            return domain(format!("pair {}: segmentation does not tile {t} frames", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BankSegment {
    pub source_id: String,
    pub frames: Matrix,
}

/// Frame segments per gloss, harvested from aligned real pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SegmentBank {
    by_gloss: BTreeMap<usize, Vec<BankSegment>>,
}

impl SegmentBank {
    pub fn glosses(&self) -> Vec<usize> {
        self.by_gloss.keys().copied().collect()
    }

    pub fn segments(&self, gloss: usize) -> &[BankSegment] {
        self.by_gloss.get(&gloss).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.by_gloss.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_gloss.is_empty()
    }

    /// Glosses with at least one segment cut from a video other than `source_id`.
    pub fn coverage_excluding(&self, source_id: &str) -> Vec<usize> {
        self.by_gloss
            .iter()
            .filter(|(_, segs)| segs.iter().any(|s| s.source_id != source_id))
            .map(|(&g, _)| g)
            .collect()
    }

    fn pick(&self, gloss: usize, exclude: &str, rng: &mut impl Rng) -> Result<&BankSegment> {
        let eligible: Vec<&BankSegment> = self.segments(gloss).iter().filter(|s| s.source_id != exclude).collect();
        if eligible.is_empty() {
            return domain(format!("segment bank has no segment of gloss {gloss} from another video"));
        }
        Ok(eligible[rng.random_range(0..eligible.len())])
    }
}

pub fn build_segment_bank(pairs: &[VideoTextPair]) -> Result<SegmentBank> {
    let mut bank = SegmentBank::default();
    for pair in pairs {
        if pair.is_pseudo {
            return domain(format!("pair {} is pseudo; the bank takes real pairs only", pair.id));
        }
        pair.validate()?;
        for seg in &pair.segmentation.segments {
            bank.by_gloss.entry(seg.gloss).or_default().push(BankSegment {
                source_id: pair.id.clone(),
                frames: pair.features.frames().slice_rows(seg.start, seg.len()),
            });
        }
    }
    Ok(bank)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Kind {
    Substitute,
    Delete,
    Insert,
}

/// Draws `k ~ U{1..K}` edits, each kind uniform over the three.
///
/// Deletion on a one-gloss sequence is redrawn as substitution or insertion.
/// Substituted and inserted glosses are uniform over `coverage`, excluding
/// the gloss being replaced.
pub fn sample_edit_plan(label: &GlossSequence, max_edits: usize, coverage: &[usize], rng: &mut impl Rng) -> Result<EditPlan> {
    if max_edits < 1 {
        return domain("maximum number of edits K must be at least 1");
    }
    if label.is_empty() {
        return domain("cannot edit an empty label");
    }
    if coverage.len() < 2 {
        return domain(format!("need at least 2 glosses to draw from, have {}", coverage.len()));
    }
    let k = rng.random_range(1..=max_edits);
    let mut cur = label.0.clone();
    let mut ops = Vec::with_capacity(k);
    for _ in 0..k {
        let mut kind = [Kind::Substitute, Kind::Delete, Kind::Insert][rng.random_range(0..3)];
        if kind == Kind::Delete && cur.len() == 1 {
            kind = [Kind::Substitute, Kind::Insert][rng.random_range(0..2)];
        }
        let op = match kind {
            Kind::Substitute => {
                let position = rng.random_range(0..cur.len());
                let choices: Vec<usize> = coverage.iter().copied().filter(|&g| g != cur[position]).collect();
                let gloss = choices[rng.random_range(0..choices.len())];
                cur[position] = gloss;
                EditOp::Substitute { position, gloss }
            }
            Kind::Delete => {
                let position = rng.random_range(0..cur.len());
                cur.remove(position);
                EditOp::Delete { position }
            }
            Kind::Insert => {
                let position = rng.random_range(0..=cur.len());
                let gloss = coverage[rng.random_range(0..coverage.len())];
                cur.insert(position, gloss);
                EditOp::Insert { position, gloss }
            }
        };
        ops.push(op);
    }
    Ok(EditPlan { ops })
}

/// Applies `plan` to a real pair's label and frames.
pub fn apply_plan(pair: &VideoTextPair, plan: &EditPlan, bank: &SegmentBank, rng: &mut impl Rng) -> Result<VideoTextPair> {
    if pair.is_pseudo {
        return domain("plans apply to real pairs only");
    }
    pair.validate()?;
    let label = plan.apply_to_label(&pair.label)?;

    let frames = pair.features.frames();
    let mut chunks: Vec<(usize, Matrix)> = pair
        .segmentation
        .segments
        .iter()
        .map(|s| (s.gloss, frames.slice_rows(s.start, s.len())))
        .collect();
    for op in &plan.ops {
        match *op {
            EditOp::Substitute { position, gloss } => {
                let seg = bank.pick(gloss, &pair.id, rng)?;
                chunks[position] = (gloss, seg.frames.clone());
            }
            EditOp::Delete { position } => {
                chunks.remove(position);
            }
            EditOp::Insert { position, gloss } => {
                let seg = bank.pick(gloss, &pair.id, rng)?;
                chunks.insert(position, (gloss, seg.frames.clone()));
            }
        }
    }

    let dim = frames.cols();
    let total: usize = chunks.iter().map(|c| c.1.rows()).sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut segments = Vec::with_capacity(chunks.len());
    let mut cursor = 0;
    for (gloss, m) in &chunks {
        if m.cols() != dim {
            return Err(Error::Shape(format!("bank segment has dimension {}, expected {dim}", m.cols())));
        }
        data.extend_from_slice(m.as_slice());
        segments.push(Segment {
            gloss: *gloss,
            start: cursor,
            end: cursor + m.rows(),
        });
        cursor += m.rows();
    }
    let features = FeatureSequence::new(Matrix::from_vec(total, dim, data), FeatureRole::RawVideo)?;
    let out = VideoTextPair {
        id: format!("{}~pseudo", pair.id),
        features,
        label,
        segmentation: AlignmentSegmentation::new(segments),
        is_pseudo: true,
        provenance: Some(Provenance {
            source_id: pair.id.clone(),
            plan: plan.clone(),
        }),
    };
    out.validate()?;
    Ok(out)
}

/// Samples and applies plans until the pseudo label differs from the real
/// one and `accept` approves the result, up to [`MAX_PLAN_RETRIES`] redraws.
pub fn generate_pseudo(
    pair: &VideoTextPair,
    max_edits: usize,
    bank: &SegmentBank,
    rng: &mut impl Rng,
    accept: impl Fn(&VideoTextPair) -> bool,
) -> Result<VideoTextPair> {
    let coverage = bank.coverage_excluding(&pair.id);
    for _ in 0..=MAX_PLAN_RETRIES {
        let plan = sample_edit_plan(&pair.label, max_edits, &coverage, rng)?;
        if plan.apply_to_label(&pair.label)? == pair.label {
            continue;
        }
        let pseudo = apply_plan(pair, &plan, bank, rng)?;
        debug_assert!(edit_distance(&pair.label, &pseudo.label) <= plan.k());
        if accept(&pseudo) {
            return Ok(pseudo);
        }
    }
    domain(format!(
        "no acceptable pseudo pair for {} after {} draws",
        pair.id,
        MAX_PLAN_RETRIES + 1
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    /// A pair whose frame at time t is `[gloss, t]`, segments of given lengths.
    fn pair(id: &str, glosses: &[usize], lens: &[usize]) -> VideoTextPair {
        let mut rows = Vec::new();
        let mut segs = Vec::new();
        for (&g, &l) in glosses.iter().zip(lens) {
            let start = rows.len();
            for _ in 0..l {
                rows.push(vec![g as f64, rows.len() as f64]);
            }
            segs.push(Segment { gloss: g, start, end: rows.len() });
        }
        VideoTextPair::real(
            id,
            FeatureSequence::from_rows(&rows, FeatureRole::RawVideo).unwrap(),
            GlossSequence(glosses.to_vec()),
            AlignmentSegmentation::new(segs),
        )
    }

    const TOMORROW: usize = 1;
    const MORNING: usize = 2;
    const RAINY: usize = 3;
    const SATURDAY: usize = 4;

    #[test]
    fn bank_examples() {
        let b = build_segment_bank(&[pair("p0", &[1, 2], &[3, 4])]).unwrap();
        assert_eq!(b.glosses(), vec![1, 2]);
        assert_eq!(b.segments(1).len(), 1);
        assert_eq!(b.segments(2)[0].frames.rows(), 4);

        let b = build_segment_bank(&[pair("p0", &[1, 2], &[3, 4]), pair("p1", &[3, 1], &[2, 2])]).unwrap();
        assert_eq!(b.segments(1).len(), 2);
        assert_eq!(b.coverage_excluding("p0"), vec![1, 3]);

        assert!(build_segment_bank(&[]).unwrap().is_empty());
    }

    #[test]
    fn bank_covers_label_union() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs: Vec<_> = (0..20)
            .map(|i| {
                let n = rng.random_range(1..5);
                let g: Vec<usize> = (0..n).map(|_| rng.random_range(1..12)).collect();
                pair(&format!("p{i}"), &g, &vec![2; n])
            })
            .collect();
        let union: BTreeSet<usize> = pairs.iter().flat_map(|p| p.label.0.clone()).collect();
        let bank = build_segment_bank(&pairs).unwrap();
        assert_eq!(bank.glosses().into_iter().collect::<BTreeSet<_>>(), union);
    }

    #[test]
    fn substitution_replaces_span() {
        let real = pair("weather", &[TOMORROW, MORNING, RAINY], &[5, 4, 6]);
        let donor = pair("donor", &[SATURDAY, RAINY], &[7, 3]);
        let bank = build_segment_bank(&[real.clone(), donor]).unwrap();
        let plan = EditPlan {
            ops: vec![EditOp::Substitute { position: 0, gloss: SATURDAY }],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = apply_plan(&real, &plan, &bank, &mut rng).unwrap();
        assert_eq!(p.label.0, vec![SATURDAY, MORNING, RAINY]);
        assert_eq!(p.features.len(), 7 + 4 + 6);
        assert_eq!(p.features.frames().row(0), &[SATURDAY as f64, 0.0]);
        // untouched spans are copied verbatim
        assert_eq!(p.features.frames().slice_rows(7, 10), real.features.frames().slice_rows(5, 10));
        assert!(p.is_pseudo);
        assert_eq!(p.provenance.as_ref().unwrap().source_id, "weather");
        p.validate().unwrap();
    }

    #[test]
    fn deletion_and_insertion_bookkeeping() {
        let real = pair("r", &[1, 2, 3], &[4, 5, 6]);
        let bank = build_segment_bank(&[real.clone(), pair("o", &[2, 4], &[3, 2])]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let del = apply_plan(&real, &EditPlan { ops: vec![EditOp::Delete { position: 1 }] }, &bank, &mut rng).unwrap();
        assert_eq!(del.label.0, vec![1, 3]);
        assert_eq!(del.features.len(), 15 - 5);

        let ins = apply_plan(&real, &EditPlan { ops: vec![EditOp::Insert { position: 3, gloss: 4 }] }, &bank, &mut rng)
            .unwrap();
        assert_eq!(ins.label.0, vec![1, 2, 3, 4]);
        assert_eq!(ins.segmentation.segments[3], Segment { gloss: 4, start: 15, end: 17 });

        // own segments are never reused
        let only_own = build_segment_bank(&[real.clone()]).unwrap();
        let sub = EditPlan { ops: vec![EditOp::Substitute { position: 0, gloss: 2 }] };
        assert!(apply_plan(&real, &sub, &only_own, &mut rng).is_err());
        // identity substitution is not a valid edit
        let same = EditPlan { ops: vec![EditOp::Substitute { position: 0, gloss: 1 }] };
        assert!(apply_plan(&real, &same, &bank, &mut rng).is_err());
    }

    #[test]
    fn plan_sampling_contract() {
        let label = GlossSequence(vec![1, 2, 3]);
        let cov = [1, 2, 3, 4, 5];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(sample_edit_plan(&label, 1, &cov, &mut rng).unwrap().k(), 1);
        assert!(sample_edit_plan(&label, 0, &cov, &mut rng).is_err());
        assert!(sample_edit_plan(&label, 3, &[1], &mut rng).is_err());
        assert!(sample_edit_plan(&GlossSequence(vec![]), 3, &cov, &mut rng).is_err());

        let a = sample_edit_plan(&label, 3, &cov, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_edit_plan(&label, 3, &cov, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        // single-gloss labels never lose their last gloss
        let one = GlossSequence(vec![2]);
        for _ in 0..500 {
            let p = sample_edit_plan(&one, 1, &cov, &mut rng).unwrap();
            assert!(!matches!(p.ops[0], EditOp::Delete { .. }));
        }
    }

    #[test]
    fn plan_size_is_uniform() {
        let label = GlossSequence(vec![1, 2, 3, 4]);
        let cov: Vec<usize> = (1..=10).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut counts = [0f64; 3];
        let n = 10_000;
        for _ in 0..n {
            counts[sample_edit_plan(&label, 3, &cov, &mut rng).unwrap().k() - 1] += 1.0;
        }
        let e = n as f64 / 3.0;
        let chi2: f64 = counts.iter().map(|c| (c - e) * (c - e) / e).sum();
        // two degrees of freedom: survival function is exp(-x/2)
        assert!((-chi2 / 2.0).exp() > 0.01, "chi2 = {chi2}");
    }

    #[test]
    fn generated_pairs_stay_within_k_edits() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pairs: Vec<_> = (0..10)
            .map(|i| {
                let n = rng.random_range(1..6);
                let g: Vec<usize> = (0..n).map(|_| rng.random_range(1..8)).collect();
                let lens: Vec<usize> = (0..n).map(|_| rng.random_range(1..5)).collect();
                pair(&format!("p{i}"), &g, &lens)
            })
            .collect();
        let bank = build_segment_bank(&pairs).unwrap();
        for i in 0..1000 {
            let real = &pairs[i % pairs.len()];
            let p = generate_pseudo(real, 3, &bank, &mut rng, |_| true).unwrap();
            let k = p.provenance.as_ref().unwrap().plan.k();
            assert!((1..=3).contains(&k));
            assert!(edit_distance(&real.label, &p.label) <= k);
            assert_ne!(p.label, real.label);
            p.validate().unwrap();
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let real = pair("r", &[1, 2, 3], &[4, 5, 6]);
        let bank = build_segment_bank(&[real.clone(), pair("a", &[2, 4, 1], &[3, 2, 2]), pair("b", &[3, 4], &[2, 2])])
            .unwrap();
        let a = generate_pseudo(&real, 3, &bank, &mut ChaCha8Rng::seed_from_u64(5), |_| true).unwrap();
        let b = generate_pseudo(&real, 3, &bank, &mut ChaCha8Rng::seed_from_u64(5), |_| true).unwrap();
        assert_eq!(a, b);
    }
}
