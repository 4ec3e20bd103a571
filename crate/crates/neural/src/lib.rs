//! A small decoder-only transformer policy over token sequences.
//!
//! Gradients are derived by hand for the fixed architecture, so the whole
//! stack stays in double precision and can be checked against finite
//! differences. The model is pretrained by next-token prediction and then
//! aligned with the energy rank alignment loss (or DPO for contrast).

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod policy;
pub mod sample;
pub mod train;
pub mod vocab;

pub use config::ModelConfig;
pub use error::{NeuralError, Result};
pub use model::{sequence_logprob, Sequence};
pub use params::ParamStore;
pub use vocab::{Vocabulary, PAD, START, STOP};
pub use checkpoint::Checkpoint;
pub use policy::NeuralPolicy;
pub use train::{
    dpo_align_step, era_align_step, era_loss, pretrain_next_token, Adam, AdamConfig, PretrainConfig, TrainingReport,
};
