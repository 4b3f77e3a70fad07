//! Two-phase training: joint CTC and semantic alignment first, then the same
//! objective plus pseudo pairs regenerated every epoch from forced alignments.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use crate::augment::{build_segment_bank, generate_pseudo, VideoTextPair};
use crate::ctc::{forced_align, DEFAULT_BEAM_WIDTH};
use crate::error::{domain, Error, Result};
use crate::losses::{build_objective, distance_on, triplet_on, LossBreakdown, ObjectiveTerms, DEFAULT_ALPHA, DEFAULT_LAMBDA};
use crate::matrix::Matrix;
use crate::model::network::{text_encode_on, video_forward, Bound};
use crate::model::{log_probs, output_steps, Checkpoint, ModelConfig, ModelParams, Tape, Var, MIN_FRAMES};
use crate::softdtw::DEFAULT_GAMMA;
use crate::types::{GlossSequence, GlossVocabulary};

/// Which loss terms are active once pseudo pairs exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Every term.
    #[default]
    Full,
    /// No term that reads the pseudo text: drops `L_Dv`.
    VideoOnly,
    /// No pseudo video: drops `CTC(pseudo)` and `L_Dl`.
    TextOnly,
    /// `CTC(real)` alone.
    Baseline,
}

impl Ablation {
    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::VideoOnly => "video-only",
            Ablation::TextOnly => "text-only",
            Ablation::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Maximum edits per pseudo pair (K).
    pub max_edits: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub beam_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Probability of discarding each frame independently.
    pub drop_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub ablation: Ablation,
    /// Epochs trained before the first forced alignment.
    pub phase_a_epochs: usize,
    pub conv_dim: usize,
    pub rnn_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            max_edits: 3,
            alpha: DEFAULT_ALPHA,
            gamma: DEFAULT_GAMMA,
            beam_width: DEFAULT_BEAM_WIDTH,
            learning_rate: 5e-3,
            batch_size: 3,
            epochs: 50,
            drop_rate: 0.2,
            adam: AdamConfig::default(),
            seed: 0,
            ablation: Ablation::Full,
            phase_a_epochs: 15,
            conv_dim: 32,
            rnn_hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let finite_nonneg = |x: f64| x >= 0.0 && x.is_finite();
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if self.max_edits < 1 {
            return fail("max_edits must be at least 1".into());
        }
        if !finite_nonneg(self.alpha) || !finite_nonneg(self.gamma) {
            return fail("alpha and gamma must be finite and >= 0".into());
        }
        if self.beam_width < 1 || self.batch_size < 1 || self.conv_dim < 1 || self.rnn_hidden < 1 {
            return fail("beam_width, batch_size, conv_dim and rnn_hidden must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return fail(format!("drop_rate must lie in [0, 1), got {}", self.drop_rate));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return fail("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    /// Whether pseudo pairs take part at all.
    pub fn uses_pseudo(&self) -> bool {
        self.ablation != Ablation::Baseline && self.lambda < 1.0
    }

    pub fn model_config(&self, input_dim: usize, num_glosses: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            conv_dim: self.conv_dim,
            rnn_hidden: self.rnn_hidden,
            num_glosses,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, lr: f64, cfg: AdamConfig) -> Self {
        let zeros = || params.tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
        Self {
            cfg,
            lr,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Matrix]) {
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (self.m[i].as_mut_slice(), self.v[i].as_mut_slice());
            for (k, (w, &g)) in params.tensors[i].as_mut_slice().iter_mut().zip(g.as_slice()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                *w -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

/// Frames and label for one sample, plus its pseudo counterpart if any.
#[derive(Debug, Clone, Copy)]
pub struct SampleInputs<'a> {
    pub real_frames: &'a Matrix,
    pub real_label: &'a GlossSequence,
    pub pseudo: Option<(&'a Matrix, &'a GlossSequence)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub root: Var,
    pub breakdown: LossBreakdown,
    pub ctc_real: f64,
}

fn video_features(tape: &mut Tape, p: &Bound, frames: &Matrix) -> Result<(Var, Var)> {
    let out = video_forward(tape, p, frames)?;
    Ok((out.features, out.log_probs))
}

/// Records the per-sample objective on `tape` under `cfg`'s ablation and
/// weights. Without a pseudo pair only `CTC(real)` and `L_S` appear.
pub fn sample_objective(
    tape: &mut Tape,
    p: &Bound,
    num_glosses: usize,
    cfg: &TrainConfig,
    input: SampleInputs<'_>,
) -> Result<SampleLoss> {
    let (fv_r, lp_r) = video_features(tape, p, input.real_frames)?;
    let ctc_real = tape.ctc(lp_r, input.real_label)?;
    let mut terms = ObjectiveTerms {
        ctc_real,
        ctc_pseudo: None,
        disc_v: None,
        disc_l: None,
        sem: None,
    };
    let ctc_value = tape.scalar_value(ctc_real);
    if !cfg.uses_pseudo() {
        let (root, breakdown) = build_objective(tape, terms, 1.0, cfg.alpha)?;
        return Ok(SampleLoss {
            root,
            breakdown,
            ctc_real: ctc_value,
        });
    }

    let fl_r = text_encode_on(tape, p, input.real_label, num_glosses)?;
    terms.sem = Some(distance_on(tape, fv_r, fl_r, cfg.gamma)?);
    if let Some((frames, label)) = input.pseudo {
        if matches!(cfg.ablation, Ablation::Full | Ablation::VideoOnly) {
            let (fv_p, lp_p) = video_features(tape, p, frames)?;
            terms.ctc_pseudo = Some(tape.ctc(lp_p, label)?);
            terms.disc_l = Some(triplet_on(tape, fl_r, fv_r, fv_p, cfg.alpha, cfg.gamma)?);
        }
        if matches!(cfg.ablation, Ablation::Full | Ablation::TextOnly) {
            let fl_p = text_encode_on(tape, p, label, num_glosses)?;
            terms.disc_v = Some(triplet_on(tape, fv_r, fl_r, fl_p, cfg.alpha, cfg.gamma)?);
        }
    }
    let (root, breakdown) = build_objective(tape, terms, cfg.lambda, cfg.alpha)?;
    Ok(SampleLoss {
        root,
        breakdown,
        ctc_real: ctc_value,
    })
}

/// Loss value and parameter gradients (zeros where unused) for one sample.
pub fn sample_gradients(params: &ModelParams, cfg: &TrainConfig, input: SampleInputs<'_>) -> Result<(SampleLoss, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let loss = sample_objective(&mut tape, &p, params.config.num_glosses, cfg, input)?;
    let grads = tape.backward(loss.root, params.len())?;
    let dense = params
        .tensors
        .iter()
        .enumerate()
        .map(|(i, t)| grads.get(i).cloned().unwrap_or_else(|| Matrix::zeros(t.rows(), t.cols())))
        .collect();
    Ok((loss, dense))
}

const MAX_DROP_DRAWS: usize = 20;

/// Discards each frame with probability `rate`, redrawing the mask until the
/// result keeps at least [`MIN_FRAMES`] frames and stays CTC-feasible. Falls
/// back to the intact video.
pub fn drop_frames(frames: &Matrix, label: &GlossSequence, rate: f64, rng: &mut impl Rng) -> Matrix {
    if rate == 0.0 {
        return frames.clone();
    }
    for _ in 0..MAX_DROP_DRAWS {
        let keep: Vec<usize> = (0..frames.rows()).filter(|_| rng.random::<f64>() >= rate).collect();
        if keep.len() >= MIN_FRAMES && output_steps(keep.len()) >= label.min_ctc_steps() {
            let mut data = Vec::with_capacity(keep.len() * frames.cols());
            for &t in &keep {
                data.extend_from_slice(frames.row(t));
            }
            return Matrix::from_vec(keep.len(), frames.cols(), data);
        }
    }
    frames.clone()
}

fn feasible(pair: &VideoTextPair) -> bool {
    let t = pair.features.len();
    t >= MIN_FRAMES && output_steps(t) >= pair.label.min_ctc_steps()
}

/// Output steps cover four input frames each.
pub const FRAMES_PER_STEP: usize = 4;

/// Replaces each pair's segmentation with the current model's forced
/// alignment, mapped back to frames.
pub fn align_pairs(params: &ModelParams, pairs: &[VideoTextPair]) -> Result<Vec<VideoTextPair>> {
    pairs
        .par_iter()
        .map(|pair| {
            let lp = log_probs(params, &pair.features)?;
            let fa = forced_align(&lp, &pair.label)?;
            let mut out = pair.clone();
            out.segmentation = fa.segmentation.upsample(FRAMES_PER_STEP, pair.features.len());
            Ok(out)
        })
        .collect()
}

/// One pseudo pair per input pair, `None` where no acceptable plan was
/// found. Each pair draws from its own stream keyed by `(seed, round, index)`.
pub fn pseudo_pairs(aligned: &[VideoTextPair], max_edits: usize, seed: u64, round: u64) -> Result<Vec<Option<VideoTextPair>>> {
    let bank = build_segment_bank(aligned)?;
    Ok(aligned
        .par_iter()
        .enumerate()
        .map(|(i, pair)| {
            let mut rng = stream(seed, Purpose::Edit, round, i as u64);
            generate_pseudo(pair, max_edits, &bank, &mut rng, feasible).ok()
        })
        .collect())
}

/// Aligns `data` with the current model and draws this epoch's pseudo pairs.
pub fn regenerate_pseudo(
    params: &ModelParams,
    data: &[VideoTextPair],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Option<VideoTextPair>>> {
    pseudo_pairs(&align_pairs(params, data)?, cfg.max_edits, cfg.seed, epoch as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub samples: usize,
    pub pseudo_samples: usize,
    pub ctc_real: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub pseudo_active: bool,
    pub pseudo_generated: usize,
    pub pseudo_failed: usize,
    pub ctc_real: f64,
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Final-epoch real CTC loss not below half its first-epoch value, or
    /// parameters left the finite range.
    pub non_convergent: bool,
}

fn check_data(data: &[VideoTextPair], vocab: &GlossVocabulary) -> Result<usize> {
    let Some(first) = data.first() else {
        return domain("training data is empty");
    };
    let dim = first.features.dim();
    for pair in data {
        if pair.features.dim() != dim {
            return Err(Error::Shape(format!(
                "pair {} has frame dimension {}, expected {dim}",
                pair.id,
                pair.features.dim()
            )));
        }
        pair.label.check_vocab(vocab.len())?;
        if pair.label.is_empty() || !feasible(pair) {
            return domain(format!(
                "pair {} ({} frames, {} glosses) cannot be trained with CTC",
                pair.id,
                pair.features.len(),
                pair.label.len()
            ));
        }
    }
    Ok(dim)
}

pub fn train(
    cfg: &TrainConfig,
    data: &[VideoTextPair],
    vocab: &GlossVocabulary,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = check_data(data, vocab)?;
    let model_cfg = cfg.model_config(dim, vocab.len());
    let mut params = ModelParams::init(model_cfg, stream(cfg.seed, Purpose::Init, 0, 0).random())?;
    let mut adam = Adam::new(&params, cfg.learning_rate, cfg.adam);
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut steps = Vec::new();
    let mut epochs = Vec::new();
    let mut diverged = false;
    'epochs: for epoch in 0..cfg.epochs {
        let pseudo_active = cfg.uses_pseudo() && epoch >= cfg.phase_a_epochs;
        let pseudo = if pseudo_active {
            regenerate_pseudo(&params, data, cfg, epoch)?
        } else {
            vec![None; data.len()]
        };
        let generated = pseudo.iter().filter(|p| p.is_some()).count();

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Purpose::Shuffle, epoch as u64, 0));

        let first_step = steps.len();
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Matrix> = params.tensors.iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect();
            let mut losses = Vec::with_capacity(batch.len());
            let mut ctc = 0.0;
            let mut with_pseudo = 0;
            for &i in batch {
                let pair = &data[i];
                let real = drop_frames(
                    pair.features.frames(),
                    &pair.label,
                    cfg.drop_rate,
                    &mut stream(cfg.seed, Purpose::DropReal, epoch as u64, i as u64),
                );
                let pseudo_frames = pseudo[i].as_ref().map(|p| {
                    let m = drop_frames(
                        p.features.frames(),
                        &p.label,
                        cfg.drop_rate,
                        &mut stream(cfg.seed, Purpose::DropPseudo, epoch as u64, i as u64),
                    );
                    (m, &p.label)
                });
                with_pseudo += usize::from(pseudo_frames.is_some());
                let input = SampleInputs {
                    real_frames: &real,
                    real_label: &pair.label,
                    pseudo: pseudo_frames.as_ref().map(|(m, l)| (m, *l)),
                };
                let (loss, grads) = sample_gradients(&params, cfg, input)?;
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g);
                }
                ctc += loss.ctc_real;
                losses.push(loss.breakdown);
            }
            let n = batch.len() as f64;
            for a in &mut acc {
                a.scale_assign(1.0 / n);
            }
            if !acc.iter().all(Matrix::is_finite) {
                diverged = true;
                break 'epochs;
            }
            adam.step(&mut params, &acc);
            steps.push(StepRecord {
                epoch,
                step: steps.len(),
                samples: batch.len(),
                pseudo_samples: with_pseudo,
                ctc_real: ctc / n,
                losses: LossBreakdown::mean(&losses),
            });
        }

        let epoch_steps = &steps[first_step..];
        let mean = LossBreakdown::mean(&epoch_steps.iter().map(|s| s.losses).collect::<Vec<_>>());
        epochs.push(EpochSummary {
            epoch,
            pseudo_active,
            pseudo_generated: generated,
            pseudo_failed: if pseudo_active { data.len() - generated } else { 0 },
            ctc_real: epoch_steps.iter().map(|s| s.ctc_real).sum::<f64>() / epoch_steps.len().max(1) as f64,
            losses: mean,
        });
        if let Some(dir) = checkpoint_dir {
            let meta = serde_json::json!({ "epoch": epoch, "train": cfg });
            Checkpoint::new(params.clone(), vocab.clone(), cfg.seed, meta).save(dir.join(format!("epoch-{epoch:03}.ckpt")))?;
        }
    }

    let non_convergent = diverged
        || !params.is_finite()
        || match (epochs.first(), epochs.last()) {
            (Some(a), Some(b)) => !(b.ctc_real < 0.5 * a.ctc_real),
            _ => true,
        };
    Ok(TrainOutcome {
        params,
        steps,
        epochs,
        non_convergent,
    })
}
