//! Synthetic sign-video corpus: each gloss owns a unit prototype vector and a
//! video is a run of noisy copies of its glosses' prototypes.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use crate::augment::VideoTextPair;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::MIN_FRAMES;
use crate::types::{AlignmentSegmentation, FeatureRole, FeatureSequence, GlossSequence, GlossVocabulary, Segment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub duration_min: usize,
    pub duration_max: usize,
    pub noise: f64,
    pub sentence_min: usize,
    pub sentence_max: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Fraction of ordered gloss bigrams kept out of training sentences;
    /// every test sentence contains at least one of them.
    pub holdout_fraction: f64,
    /// Mutually orthogonal prototypes (needs `vocab_size <= feature_dim`).
    pub orthogonal: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            vocab_size: 20,
            feature_dim: 16,
            duration_min: 6,
            duration_max: 10,
            noise: 0.5,
            sentence_min: 3,
            sentence_max: 8,
            train_size: 500,
            test_size: 100,
            holdout_fraction: 0.2,
            orthogonal: false,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 2 {
            return fail(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        if self.feature_dim < 1 {
            return fail("feature_dim must be at least 1".into());
        }
        if self.duration_min < 4 || self.duration_min > self.duration_max {
            return fail(format!(
                "duration range [{}, {}] must satisfy 4 <= min <= max",
                self.duration_min, self.duration_max
            ));
        }
        if self.sentence_min < 1 || self.sentence_min > self.sentence_max {
            return fail(format!(
                "sentence length range [{}, {}] must satisfy 1 <= min <= max",
                self.sentence_min, self.sentence_max
            ));
        }
        if self.sentence_min * self.duration_min < MIN_FRAMES {
            return fail(format!(
                "shortest sentence has {} frames, at least {MIN_FRAMES} required",
                self.sentence_min * self.duration_min
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return fail(format!("holdout_fraction must lie in [0, 1), got {}", self.holdout_fraction));
        }
        if self.orthogonal && self.vocab_size > self.feature_dim {
            return fail(format!(
                "{} orthogonal prototypes do not fit in {} dimensions",
                self.vocab_size, self.feature_dim
            ));
        }
        if self.train_size == 0 {
            return fail("train_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocabulary: GlossVocabulary,
    /// Row `g - 1` is the prototype of gloss `g`.
    pub prototypes: Matrix,
    pub train: Vec<VideoTextPair>,
    pub test: Vec<VideoTextPair>,
}

pub fn gloss_names(n: usize) -> Vec<String> {
    let width = (n.max(2) - 1).to_string().len().max(2);
    (0..n).map(|i| format!("G{i:0width$}")).collect()
}

fn unit_rows(n: usize, d: usize, orthogonal: bool, rng: &mut impl Rng) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    while rows.len() < n {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        if orthogonal {
            for r in &rows {
                let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-6 {
            continue;
        }
        rows.push(v.into_iter().map(|x| x / norm).collect());
    }
    Matrix::from_rows(&rows).expect("rows share a width")
}

fn bigrams(s: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    s.windows(2).map(|w| (w[0], w[1]))
}

/// Glosses uniform over the vocabulary with no immediate repeats.
fn sample_sentence(cfg: &SyntheticConfig, rng: &mut impl Rng) -> Vec<usize> {
    let len = rng.random_range(cfg.sentence_min..=cfg.sentence_max);
    let mut s: Vec<usize> = Vec::with_capacity(len);
    while s.len() < len {
        let g = rng.random_range(1..=cfg.vocab_size);
        if s.last() != Some(&g) {
            s.push(g);
        }
    }
    s
}

fn render(
    id: String,
    glosses: Vec<usize>,
    prototypes: &Matrix,
    cfg: &SyntheticConfig,
    rng: &mut impl Rng,
) -> Result<VideoTextPair> {
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut data = Vec::new();
    let mut segments = Vec::with_capacity(glosses.len());
    let mut t = 0;
    for &g in &glosses {
        let len = rng.random_range(cfg.duration_min..=cfg.duration_max);
        for _ in 0..len {
            data.extend(prototypes.row(g - 1).iter().map(|&p| p + noise.sample(rng)));
        }
        segments.push(Segment { gloss: g, start: t, end: t + len });
        t += len;
    }
    let frames = Matrix::from_vec(t, cfg.feature_dim, data);
    Ok(VideoTextPair::real(
        id,
        FeatureSequence::new(frames, FeatureRole::RawVideo)?,
        GlossSequence::new(glosses)?,
        AlignmentSegmentation::new(segments),
    ))
}

const MAX_SENTENCE_DRAWS: usize = 10_000;

pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let vocabulary = GlossVocabulary::new(gloss_names(cfg.vocab_size))?;
    let prototypes = unit_rows(
        cfg.vocab_size,
        cfg.feature_dim,
        cfg.orthogonal,
        &mut stream(cfg.seed, Purpose::Prototypes, 0, 0),
    );

    let mut all: Vec<(usize, usize)> = Vec::new();
    for a in 1..=cfg.vocab_size {
        for b in 1..=cfg.vocab_size {
            if a != b {
                all.push((a, b));
            }
        }
    }
    let mut rng = stream(cfg.seed, Purpose::Holdout, 0, 0);
    let n_hold = (cfg.holdout_fraction * all.len() as f64).round() as usize;
    let mut held = BTreeSet::new();
    while held.len() < n_hold {
        held.insert(all[rng.random_range(0..all.len())]);
    }
    let constrain_test = !held.is_empty() && cfg.sentence_max >= 2;

    let draw = |split: u64, i: usize, want_held: bool| -> Result<Vec<usize>> {
        let mut rng = stream(cfg.seed, Purpose::Sentence, split, i as u64);
        for _ in 0..MAX_SENTENCE_DRAWS {
            let s = sample_sentence(cfg, &mut rng);
            let hits = bigrams(&s).any(|b| held.contains(&b));
            if hits == want_held {
                return Ok(s);
            }
        }
        Err(Error::Config("could not draw a sentence satisfying the bigram hold-out".into()))
    };

    let mut train = Vec::with_capacity(cfg.train_size);
    for i in 0..cfg.train_size {
        let s = draw(0, i, false)?;
        let mut rng = stream(cfg.seed, Purpose::Render, 0, i as u64);
        train.push(render(format!("train-{i:05}"), s, &prototypes, cfg, &mut rng)?);
    }
    let mut test = Vec::with_capacity(cfg.test_size);
    for i in 0..cfg.test_size {
        let s = draw(1, i, constrain_test)?;
        let mut rng = stream(cfg.seed, Purpose::Render, 1, i as u64);
        test.push(render(format!("test-{i:05}"), s, &prototypes, cfg, &mut rng)?);
    }
    Ok(Dataset {
        vocabulary,
        prototypes,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            vocab_size: 6,
            feature_dim: 8,
            train_size: 30,
            test_size: 10,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation() {
        small().validate().unwrap();
        for bad in [
            SyntheticConfig { vocab_size: 1, ..small() },
            SyntheticConfig { duration_min: 3, ..small() },
            SyntheticConfig { duration_min: 6, duration_max: 5, ..small() },
            SyntheticConfig { sentence_min: 2, ..small() },
            SyntheticConfig { noise: -1.0, ..small() },
            SyntheticConfig { orthogonal: true, vocab_size: 9, ..small() },
        ] {
            assert!(matches!(generate_dataset(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn noiseless_frames_equal_prototypes() {
        let ds = generate_dataset(&SyntheticConfig { noise: 0.0, ..small() }).unwrap();
        for p in ds.train.iter().chain(&ds.test) {
            p.validate().unwrap();
            for seg in &p.segmentation.segments {
                for t in seg.start..seg.end {
                    assert_eq!(p.features.frames().row(t), ds.prototypes.row(seg.gloss - 1));
                }
            }
        }
    }

    #[test]
    fn segment_spans_sum_to_length() {
        let ds = generate_dataset(&small()).unwrap();
        for p in ds.train.iter().chain(&ds.test) {
            let total: usize = p.segmentation.segments.iter().map(Segment::len).sum();
            assert_eq!(total, p.features.len());
            assert!(p.features.len() >= MIN_FRAMES);
            assert!(p.label.as_slice().windows(2).all(|w| w[0] != w[1]));
        }
    }

    #[test]
    fn orthogonal_nearest_prototype_is_exact() {
        let cfg = SyntheticConfig { noise: 0.0, orthogonal: true, ..small() };
        let ds = generate_dataset(&cfg).unwrap();
        let gram = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        for i in 0..cfg.vocab_size {
            for j in 0..cfg.vocab_size {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((gram(ds.prototypes.row(i), ds.prototypes.row(j)) - expected).abs() < 1e-12);
            }
        }
        // nearest neighbour over prototypes by brute force
        for p in &ds.train {
            let owners = p.segmentation.frame_owners(p.features.len());
            for (t, owner) in owners.iter().enumerate() {
                let frame = p.features.frames().row(t);
                let best = (0..cfg.vocab_size)
                    .min_by(|&a, &b| {
                        let da: f64 = frame.iter().zip(ds.prototypes.row(a)).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = frame.iter().zip(ds.prototypes.row(b)).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                assert_eq!(Some(p.label.as_slice()[owner.unwrap()]), Some(best + 1));
            }
        }
    }

    #[test]
    fn test_sentences_use_held_out_bigrams() {
        let ds = generate_dataset(&small()).unwrap();
        let train_bigrams: BTreeSet<(usize, usize)> =
            ds.train.iter().flat_map(|p| bigrams(p.label.as_slice()).collect::<Vec<_>>()).collect();
        for p in &ds.test {
            assert!(bigrams(p.label.as_slice()).any(|b| !train_bigrams.contains(&b)));
        }
    }

    #[test]
    fn deterministic() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        let c = generate_dataset(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }
}
