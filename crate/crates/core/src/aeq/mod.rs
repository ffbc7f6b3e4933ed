//! Alpha edge quality: synthetic degradations, the edge-quality classifier
//! and the score `1 - mean p_low` over the alpha edge band.

mod degrade;
mod input;
mod model;
mod score;
mod train;

pub use degrade::{degrade, label_map, DegradationSpec, DegradeMode, Degraded, LABEL_BAND_KERNEL, LABEL_THRESHOLD};
pub use input::{build_input, AeqInput, AEQ_INPUT_CHANNELS, TRANSPARENT_PIXEL};
pub use model::{AeqClassifier, AeqConfig, AEQ_STRIDE};
pub use score::{aeq_from_probability, compute_aeq, evaluation_region, AeqReport};
pub use train::{
    batch_loss, draw_batch, eval_loss, fit_to, heldout_batches, loss_grad_check, sample_degradation, train_classifier, train_step,
    AeqSample, TrainConfig, TrainReport,
};

use thiserror::Error;

use crate::edge::EdgeError;
use crate::nn::NnError;
use crate::rgba::ImageError;

#[derive(Debug, Error)]
pub enum AeqError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Nn(#[from] NnError),
}
