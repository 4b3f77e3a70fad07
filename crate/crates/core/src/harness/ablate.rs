//! Sweeps one training setting and tabulates test metrics per value.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::evaluate;
use super::train::{train, Ablation, TrainConfig};
use crate::augment::VideoTextPair;
use crate::error::Result;
use crate::metrics::MetricsReport;
use crate::types::GlossVocabulary;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", content = "values", rename_all = "kebab-case")]
pub enum AblationGrid {
    Lambda(Vec<f64>),
    MaxEdits(Vec<usize>),
    Mode(Vec<Ablation>),
}

impl AblationGrid {
    pub fn len(&self) -> usize {
        match self {
            AblationGrid::Lambda(v) => v.len(),
            AblationGrid::MaxEdits(v) => v.len(),
            AblationGrid::Mode(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameter(&self) -> &'static str {
        match self {
            AblationGrid::Lambda(_) => "lambda",
            AblationGrid::MaxEdits(_) => "max_edits",
            AblationGrid::Mode(_) => "ablation",
        }
    }

    fn settings(&self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        match self {
            AblationGrid::Lambda(v) => v
                .iter()
                .map(|&lambda| (lambda.to_string(), TrainConfig { lambda, ..base.clone() }))
                .collect(),
            AblationGrid::MaxEdits(v) => v
                .iter()
                .map(|&max_edits| (max_edits.to_string(), TrainConfig { max_edits, ..base.clone() }))
                .collect(),
            AblationGrid::Mode(v) => v
                .iter()
                .map(|&ablation| (ablation.name().to_string(), TrainConfig { ablation, ..base.clone() }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub non_convergent: bool,
    pub final_ctc_real: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub parameter: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Fixed-width text rendering, one line per row.
    pub fn to_text(&self) -> String {
        let k_max = self.rows.first().map_or(0, |r| r.metrics.top_k_wer.0.len());
        let mut out = format!("{:>12} {:>8} {:>8} {:>5} {:>5} {:>5}", self.parameter, "WER", "Acc-w", "del", "ins", "sub");
        for k in 1..=k_max {
            let _ = write!(out, " {:>8}", format!("top{k}"));
        }
        out.push_str("  flag\n");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = write!(
                out,
                "{:>12} {:>8.4} {:>8.4} {:>5} {:>5} {:>5}",
                r.setting, m.wer, m.acc_w, m.n_del, m.n_ins, m.n_sub
            );
            for v in &m.top_k_wer.0 {
                let _ = write!(out, " {v:>8.4}");
            }
            out.push_str(if r.non_convergent { "  non-convergent\n" } else { "\n" });
        }
        out
    }
}

/// Trains and evaluates once per grid value; every other setting comes from `base`.
pub fn run_ablation(
    base: &TrainConfig,
    grid: &AblationGrid,
    train_set: &[VideoTextPair],
    test_set: &[VideoTextPair],
    vocab: &GlossVocabulary,
    k_max: usize,
) -> Result<AblationTable> {
    let settings = grid.settings(base);
    for (_, cfg) in &settings {
        cfg.validate()?;
    }
    let mut rows = Vec::with_capacity(settings.len());
    for (setting, cfg) in settings {
        let outcome = train(&cfg, train_set, vocab, None)?;
        let metrics = evaluate(&outcome.params, test_set, cfg.beam_width, k_max)?;
        rows.push(AblationRow {
            setting,
            non_convergent: outcome.non_convergent,
            final_ctc_real: outcome.epochs.last().map_or(f64::NAN, |e| e.ctc_real),
            metrics,
        });
    }
    Ok(AblationTable {
        parameter: grid.parameter().to_string(),
        rows,
    })
}
