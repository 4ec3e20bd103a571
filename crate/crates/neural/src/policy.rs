//! The decoder as a conditional policy over raw token ids.
//!
//! An unprompted sequence is laid out as `<start> y <stop>`. A prompted one
//! is `<start> x <start> y <stop>`: the start token doubles as the prompt
//! separator. Only `y <stop>` is scored.

use era_core::Policy;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{NeuralError, Result};
use crate::model::{sequence_logprob, Sequence};
use crate::params::ParamStore;
use crate::sample::sample_sequence;
use crate::vocab::{Vocabulary, START, STOP};

/// Context the model conditions on before the first completion token.
pub fn context(prompt: &[u32]) -> Vec<u32> {
    let mut ids = Vec::with_capacity(prompt.len() + 2);
    ids.push(START);
    if !prompt.is_empty() {
        ids.extend_from_slice(prompt);
        ids.push(START);
    }
    ids
}

/// Full training/scoring sequence for a prompt and completion.
pub fn build_sequence(prompt: &[u32], completion: &[u32]) -> Result<Sequence> {
    if let Some(&r) = prompt.iter().chain(completion).find(|&&i| Vocabulary::is_reserved(i)) {
        return Err(NeuralError::InvalidArgument(format!("reserved id {r} inside prompt or completion")));
    }
    let mut ids = context(prompt);
    let start = ids.len();
    ids.extend_from_slice(completion);
    ids.push(STOP);
    Sequence::new(ids, start)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy {
    pub vocab: Vocabulary,
    pub params: ParamStore,
    /// Sampling temperature used by [`Policy::sample`].
    pub temperature: f64,
}

impl NeuralPolicy {
    pub fn new(vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        if vocab.len() != params.vocab_size {
            return Err(NeuralError::InvalidArgument(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                params.vocab_size
            )));
        }
        Ok(NeuralPolicy { vocab, params, temperature: 1.0 })
    }

    pub fn init(vocab: Vocabulary, config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ParamStore::init(config, vocab.len(), &mut ChaCha8Rng::seed_from_u64(seed))?;
        Self::new(vocab, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Sample a completion at an explicit temperature.
    pub fn sample_with(&self, prompt: &[u32], rng: &mut dyn RngCore, temperature: f64) -> Result<Vec<u32>> {
        if prompt.len() + 3 > self.params.config.max_len {
            return Err(NeuralError::InvalidArgument(format!("prompt of {} tokens leaves no room", prompt.len())));
        }
        sample_sequence(&self.params, &context(prompt), rng, temperature)
    }
}

impl Policy for NeuralPolicy {
    fn log_prob(&self, prompt: &[u32], completion: &[u32]) -> era_core::Result<f64> {
        Ok(sequence_logprob(&self.params, &build_sequence(prompt, completion)?)?)
    }

    fn sample(&self, prompt: &[u32], rng: &mut dyn RngCore) -> era_core::Result<Vec<u32>> {
        Ok(self.sample_with(prompt, rng, self.temperature)?)
    }
}
