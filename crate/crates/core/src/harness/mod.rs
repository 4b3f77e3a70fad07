//! Synthetic data, training, evaluation and ablation runs.

pub mod ablate;
pub mod data;
pub mod eval;
pub mod gradcheck;
pub mod io;
pub mod rng;
pub mod train;

pub use ablate::{run_ablation, AblationGrid, AblationRow, AblationTable};
pub use data::{generate_dataset, Dataset, SyntheticConfig};
pub use eval::{alignment_accuracy, decode, evaluate};
pub use gradcheck::{gradcheck, GradcheckReport};
pub use train::{align_pairs, pseudo_pairs, train, Ablation, AdamConfig, EpochSummary, StepRecord, TrainConfig, TrainOutcome};
