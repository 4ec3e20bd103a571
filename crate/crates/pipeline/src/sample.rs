//! Drawing molecules from a policy.

use era_neural::NeuralPolicy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::text::{decode_smiles, PromptSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSamples {
    pub prompt: String,
    pub samples: Vec<String>,
}

/// `n` decoded completions per prompt, drawn in prompt order from one
/// generator seeded by `seed`.
pub fn sample_smiles(
    policy: &NeuralPolicy,
    prompts: &PromptSet,
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<PromptSamples>> {
    let encoded = prompts.encode(&policy.vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(prompts.len());
    for (prompt, ids) in prompts.prompts().iter().zip(&encoded) {
        let samples = (0..n)
            .map(|_| Ok(decode_smiles(&policy.vocab, &policy.sample_with(ids, &mut rng, temperature)?)))
            .collect::<Result<Vec<_>>>()?;
        out.push(PromptSamples { prompt: prompt.clone(), samples });
    }
    Ok(out)
}
