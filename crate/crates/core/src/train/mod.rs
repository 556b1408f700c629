//! CTC loss, learning-rate schedule, optimizer, augmentation, synthetic data
//! and the training loop.

mod augment;
mod ctc;
mod optim;
mod schedule;
mod synthetic;
mod trainer;

pub use augment::{spec_augment, SpecAugmentParams};
pub use ctc::{ctc_loss_value, min_ctc_frames};
pub use optim::{AdamW, AdamWParams};
pub use schedule::{lr, ScheduleParams};
pub use synthetic::{gen_synthetic, Example, SyntheticTask};
pub use trainer::{eval_set, evaluate, token_accuracy, train, LogRecord, TrainConfig, TrainLog};
