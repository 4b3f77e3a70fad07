//! The recognizer: per-frame embedding, a conv/pool temporal encoder that
//! quarters the sequence length, a bidirectional tanh recurrence, a
//! log-softmax classifier, and a gloss-sequence text encoder mapping into
//! the same feature space.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use crate::error::{domain, Error, Result};
use crate::matrix::Matrix;
use crate::types::{FeatureRole, FeatureSequence, GlossSequence, LogProbMatrix};

pub const KERNEL: usize = 5;
/// Shortest input that fills the temporal encoder's receptive field.
pub const MIN_FRAMES: usize = 16;

/// Output length of the temporal encoder for `frames` inputs.
pub fn output_steps(frames: usize) -> usize {
    frames / 2 / 2
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Input frame dimension.
    pub input_dim: usize,
    /// Width of the frame embedding and temporal convolutions.
    pub conv_dim: usize,
    /// Recurrent state size per direction; features are `2 * rnn_hidden` wide.
    pub rnn_hidden: usize,
    /// Number of glosses `N` (classes are `N + 1` with blank).
    pub num_glosses: usize,
}

impl ModelConfig {
    pub fn feature_dim(&self) -> usize {
        2 * self.rnn_hidden
    }

    pub fn num_classes(&self) -> usize {
        self.num_glosses + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.conv_dim == 0 || self.rnn_hidden == 0 || self.num_glosses == 0 {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, usize, usize)> {
        let (d, c, h, n) = (self.input_dim, self.conv_dim, self.rnn_hidden, self.num_glosses);
        vec![
            ("frame_embed.w", c, d),
            ("frame_embed.b", 1, c),
            ("conv1.w", c, KERNEL * c),
            ("conv1.b", 1, c),
            ("conv2.w", c, KERNEL * c),
            ("conv2.b", 1, c),
            ("seq_fwd.wx", h, c),
            ("seq_fwd.wh", h, h),
            ("seq_fwd.b", 1, h),
            ("seq_bwd.wx", h, c),
            ("seq_bwd.wh", h, h),
            ("seq_bwd.b", 1, h),
            ("classifier.w", n + 1, 2 * h),
            ("classifier.b", 1, n + 1),
            ("gloss_embed", n, c),
            ("text_fwd.wx", h, c),
            ("text_fwd.wh", h, h),
            ("text_fwd.b", 1, h),
            ("text_bwd.wx", h, c),
            ("text_bwd.wh", h, h),
            ("text_bwd.b", 1, h),
        ]
    }
}

// Storage indices into ModelParams::tensors, matching `layout`.
const EMBED_W: usize = 0;
const EMBED_B: usize = 1;
const CONV1_W: usize = 2;
const CONV1_B: usize = 3;
const CONV2_W: usize = 4;
const CONV2_B: usize = 5;
const SEQ_FWD: usize = 6;
const SEQ_BWD: usize = 9;
const CLS_W: usize = 12;
const CLS_B: usize = 13;
const GLOSS_EMBED: usize = 14;
const TEXT_FWD: usize = 15;
const TEXT_BWD: usize = 18;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: Vec<Matrix>,
}

/// Fan-in used for the initialization bound of each tensor.
fn fan_in(cfg: &ModelConfig, name: &str) -> usize {
    match name {
        "frame_embed.w" | "frame_embed.b" => cfg.input_dim,
        "conv1.w" | "conv1.b" | "conv2.w" | "conv2.b" => KERNEL * cfg.conv_dim,
        "classifier.w" | "classifier.b" => 2 * cfg.rnn_hidden,
        "gloss_embed" => 1,
        n if n.ends_with(".wx") => cfg.conv_dim,
        _ => cfg.rnn_hidden,
    }
}

impl ModelParams {
    /// Uniform in `±1/sqrt(fan_in)` from a seeded stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, r, c)| {
                let bound = 1.0 / (fan_in(&config, name) as f64).sqrt();
                Matrix::from_fn(r, c, |_, _| rng.random_range(-bound..bound))
            })
            .collect();
        Ok(Self { config, tensors })
    }

    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = config.layout().into_iter().map(|(_, r, c)| Matrix::zeros(r, c)).collect();
        Ok(Self { config, tensors })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }

    /// Registers every tensor as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        Bound(
            self.tensors
                .iter()
                .enumerate()
                .map(|(i, t)| tape.param(i, t.clone()))
                .collect(),
        )
    }
}

/// Parameter leaves of one forward pass.
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    fn at(&self, i: usize) -> Var {
        self.0[i]
    }
}

/// Frame embedding, then conv-pool-conv-pool. `T x d_in` to `T/4 x conv_dim`.
pub fn visual_encode_on(tape: &mut Tape, p: &Bound, video: Var) -> Result<Var> {
    let t = tape.value(video).rows();
    if t < MIN_FRAMES {
        return domain(format!("video has {t} frames, at least {MIN_FRAMES} required"));
    }
    let e = tape.affine(video, p.at(EMBED_W), Some(p.at(EMBED_B)));
    let e = tape.tanh(e);
    let c1 = tape.conv1d(e, p.at(CONV1_W), p.at(CONV1_B), KERNEL);
    let c1 = tape.tanh(c1);
    let p1 = tape.max_pool2(c1);
    let c2 = tape.conv1d(p1, p.at(CONV2_W), p.at(CONV2_B), KERNEL);
    let c2 = tape.tanh(c2);
    Ok(tape.max_pool2(c2))
}

/// Bidirectional tanh recurrence; output `T x 2H`, forward states first.
fn birnn(tape: &mut Tape, p: &Bound, x: Var, fwd: usize, bwd: usize) -> Var {
    let t = tape.value(x).rows();
    let f = run_direction(tape, p, x, fwd, (0..t).collect());
    let b = run_direction(tape, p, x, bwd, (0..t).rev().collect());
    tape.concat_cols(f, b)
}

fn run_direction(tape: &mut Tape, p: &Bound, x: Var, base: usize, order: Vec<usize>) -> Var {
    let (wx, wh, b) = (p.at(base), p.at(base + 1), p.at(base + 2));
    let projected = tape.affine(x, wx, Some(b));
    let mut states: Vec<Option<Var>> = vec![None; order.len()];
    let mut prev: Option<Var> = None;
    for &t in &order {
        let xt = tape.rows(projected, t, 1);
        let pre = match prev {
            Some(h) => {
                let rec = tape.affine(h, wh, None);
                tape.add(xt, rec)
            }
            None => xt,
        };
        let h = tape.tanh(pre);
        states[t] = Some(h);
        prev = Some(h);
    }
    let states = states.into_iter().map(|s| s.expect("every step visited")).collect();
    tape.stack_rows(states)
}

pub fn sequential_encode_on(tape: &mut Tape, p: &Bound, f: Var) -> Var {
    birnn(tape, p, f, SEQ_FWD, SEQ_BWD)
}

/// Affine map to `N + 1` classes followed by row-wise log-softmax.
pub fn classify_on(tape: &mut Tape, p: &Bound, fv: Var) -> Var {
    let logits = tape.affine(fv, p.at(CLS_W), Some(p.at(CLS_B)));
    tape.log_softmax(logits)
}

pub fn text_encode_on(tape: &mut Tape, p: &Bound, label: &GlossSequence, num_glosses: usize) -> Result<Var> {
    if label.is_empty() {
        return domain("cannot encode an empty gloss sequence");
    }
    label.check_vocab(num_glosses)?;
    let ids = label.as_slice().iter().map(|&g| g - 1).collect();
    let e = tape.gather(p.at(GLOSS_EMBED), ids);
    Ok(birnn(tape, p, e, TEXT_FWD, TEXT_BWD))
}

/// Video features `F_v` and log posteriors for one video.
#[derive(Debug, Clone, Copy)]
pub struct VideoOutputs {
    pub features: Var,
    pub log_probs: Var,
}

pub fn video_forward(tape: &mut Tape, p: &Bound, frames: &Matrix) -> Result<VideoOutputs> {
    let v = tape.input(frames.clone());
    let f = visual_encode_on(tape, p, v)?;
    let features = sequential_encode_on(tape, p, f);
    let log_probs = classify_on(tape, p, features);
    Ok(VideoOutputs { features, log_probs })
}

fn check_input(params: &ModelParams, video: &FeatureSequence) -> Result<()> {
    if video.dim() != params.config.input_dim {
        return Err(Error::Shape(format!(
            "video frames have dimension {}, model expects {}",
            video.dim(),
            params.config.input_dim
        )));
    }
    Ok(())
}

/// `T/4 x conv_dim` visual features.
pub fn visual_encode(params: &ModelParams, video: &FeatureSequence) -> Result<FeatureSequence> {
    check_input(params, video)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let v = tape.input(video.frames().clone());
    let f = visual_encode_on(&mut tape, &p, v)?;
    FeatureSequence::new(tape.value(f).clone(), FeatureRole::VisualFeature)
}

pub fn sequential_encode(params: &ModelParams, f: &FeatureSequence) -> Result<FeatureSequence> {
    if f.dim() != params.config.conv_dim {
        return Err(Error::Shape("visual features have the wrong width".into()));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let x = tape.input(f.frames().clone());
    let y = sequential_encode_on(&mut tape, &p, x);
    FeatureSequence::new(tape.value(y).clone(), FeatureRole::SequentialFeature)
}

pub fn classify(params: &ModelParams, fv: &FeatureSequence) -> Result<LogProbMatrix> {
    if fv.dim() != params.config.feature_dim() {
        return Err(Error::Shape("sequential features have the wrong width".into()));
    }
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let x = tape.input(fv.frames().clone());
    let y = classify_on(&mut tape, &p, x);
    LogProbMatrix::new(tape.value(y).clone())
}

pub fn text_encode(params: &ModelParams, label: &GlossSequence) -> Result<FeatureSequence> {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let y = text_encode_on(&mut tape, &p, label, params.config.num_glosses)?;
    FeatureSequence::new(tape.value(y).clone(), FeatureRole::TextFeature)
}

/// Full inference path from frames to log posteriors.
pub fn log_probs(params: &ModelParams, video: &FeatureSequence) -> Result<LogProbMatrix> {
    check_input(params, video)?;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let out = video_forward(&mut tape, &p, video.frames())?;
    LogProbMatrix::new(tape.value(out.log_probs).clone())
}
