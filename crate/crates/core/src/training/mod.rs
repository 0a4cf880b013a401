//! Datasets, the optimizer, supervised training and the quality-gated
//! self-training curriculum.

mod config;
mod curriculum;
mod data;
mod optim;
mod supervised;

pub use config::{parse_tau, TrainConfig};
pub use curriculum::{
    curriculum_csv, curriculum_round, run_semi_supervised, run_supervised, write_metrics, CurriculumState,
    RoundRecord, SemiSupervisedReport,
};
pub use data::{
    augment, augment_with, load_dataset, split_validation, synth_lowlight, write_dataset, Augmentation,
    LoadedDataset, Provenance, Sample,
};
pub use optim::{adam_step, lr_on_plateau, OptimState};
pub use supervised::{
    evaluate_set, input_baseline, metrics_csv, train_supervised, EpochMetrics, SetMetrics, Split, TrainReport,
};
