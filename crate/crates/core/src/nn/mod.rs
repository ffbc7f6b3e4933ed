//! Small fp64 tensor library with reverse-mode autodiff, Adam/AdamW and a
//! binary checkpoint format.

mod checkpoint;
mod gradcheck;
mod graph;
pub mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    checkpoint_hash, decode_checkpoint, encode_checkpoint, load_checkpoint, record_text, save_checkpoint, text_record,
};
pub use gradcheck::{grad_check, grad_check_params, relative_error, GradCheckEntry, GradCheckReport};
pub use graph::{BatchStats, BnMode, Gradients, Graph, Var};
pub use layers::{apply_buffer_updates, BatchNorm2d, Conv2d, Init, Linear, BN_EPS, BN_MOMENTUM};
pub use optim::Adam;
pub use params::{kaiming_uniform, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("target class {class} out of range for {classes} classes")]
    InvalidTarget { class: usize, classes: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}
