//! Orchestration for desk-scale energy rank alignment experiments: corpus
//! and preference dataset generation, pretraining, alignment runs and
//! metrics, shared by the `era` command line tool and the acceptance suite.

pub mod corpus;
pub mod error;

pub use corpus::{generate_corpus, Family};
pub use error::{PipelineError, Result};
pub mod text;
pub mod pretrain;
pub mod dataset;
pub mod align;
pub mod sample;
pub mod metrics;
pub mod config;
pub mod tabular;
