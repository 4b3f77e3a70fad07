//! Finite-difference check of the full training objective on a tiny model.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rng::{stream, Purpose};
use super::train::{sample_gradients, Ablation, SampleInputs, TrainConfig};
use crate::error::{domain, Result};
use crate::matrix::Matrix;
use crate::model::{output_steps, ModelConfig, ModelParams};
use crate::types::GlossSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

const STEP: f64 = 1e-6;
/// Gradient magnitude below which errors are measured in absolute terms.
const FLOOR: f64 = 1e-4;

fn random_label(rng: &mut impl Rng, num_glosses: usize, steps: usize) -> GlossSequence {
    loop {
        let len = rng.random_range(1..=3);
        let s = GlossSequence((0..len).map(|_| rng.random_range(1..=num_glosses)).collect());
        if s.min_ctc_steps() <= steps {
            return s;
        }
    }
}

/// Compares analytic gradients of the full objective with central
/// differences at `probes` random coordinates per instance.
pub fn gradcheck(instances: usize, probes: usize, seed: u64, tolerance: f64) -> Result<GradcheckReport> {
    if instances == 0 || probes == 0 {
        return domain("gradcheck needs at least one instance and one probe");
    }
    let model = ModelConfig {
        input_dim: 3,
        conv_dim: 3,
        rnn_hidden: 2,
        num_glosses: 3,
    };
    let cfg = TrainConfig {
        lambda: 0.5,
        ablation: Ablation::Full,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut coordinates = 0;
    for i in 0..instances {
        let mut rng = stream(seed, Purpose::Gradcheck, i as u64, 0);
        let params = ModelParams::init(model.clone(), rng.random())?;
        let mut video = || {
            let t = rng.random_range(16..=20);
            Matrix::from_fn(t, model.input_dim, |_, _| rng.random_range(-1.0..1.0))
        };
        let (real, pseudo) = (video(), video());
        let real_label = random_label(&mut rng, model.num_glosses, output_steps(real.rows()));
        let pseudo_label = random_label(&mut rng, model.num_glosses, output_steps(pseudo.rows()));
        let input = SampleInputs {
            real_frames: &real,
            real_label: &real_label,
            pseudo: Some((&pseudo, &pseudo_label)),
        };
        let (_, grads) = sample_gradients(&params, &cfg, input)?;
        let value = |p: &ModelParams| -> Result<f64> { Ok(sample_gradients(p, &cfg, input)?.0.breakdown.total) };
        for _ in 0..probes {
            let ti = rng.random_range(0..params.len());
            let k = rng.random_range(0..params.tensors[ti].as_slice().len());
            let mut plus = params.clone();
            plus.tensors[ti].as_mut_slice()[k] += STEP;
            let mut minus = params.clone();
            minus.tensors[ti].as_mut_slice()[k] -= STEP;
            let fd = (value(&plus)? - value(&minus)?) / (2.0 * STEP);
            let an = grads[ti].as_slice()[k];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(FLOOR);
            worst = worst.max(rel);
            coordinates += 1;
        }
    }
    Ok(GradcheckReport {
        instances,
        coordinates,
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_objective_matches_finite_differences() {
        let r = gradcheck(4, 10, 7, 1e-3).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.coordinates, 40);
    }
}
