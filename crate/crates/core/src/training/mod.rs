//! Loss, backpropagation, Adadelta, learning-rate scheduling and the
//! training loop.

mod adadelta;
mod backward;
mod checkpoint;
mod fit;
mod loss;
mod schedule;

pub use adadelta::AdadeltaState;
pub use backward::{backward, backward_from_logits, Gradients};
pub use checkpoint::{load_checkpoint, load_model, model_container, save_checkpoint, save_model};
pub use fit::{
    evaluate, fit, CheckpointMonitor, EpochRecord, FitOutcome, History, LabeledSet, TrainConfig,
};
pub use loss::{accuracy, cross_entropy, one_hot};
pub use schedule::{reduce_lr_on_plateau, PlateauScheduler};
