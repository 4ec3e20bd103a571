//! Preference datasets sampled from a frozen reference policy.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use era_chem::{parse_smiles, EnergyEvaluator, Fingerprint};
use era_core::PreferenceRecord;
use era_neural::NeuralPolicy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{PipelineError, Result};
use crate::text::{decode_smiles, PromptSet};

/// Draw `k` completions per prompt from `reference` and emit every
/// unordered pair with energies and reference log-probabilities, giving
/// `prompts.len() * k * (k - 1) / 2` records in a seed-determined order.
pub fn gen_preference_dataset(
    reference: &NeuralPolicy,
    prompts: &PromptSet,
    energy: &EnergyEvaluator,
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<PreferenceRecord>> {
    if k < 2 {
        return Err(PipelineError::config(format!("k must be at least 2 to form pairs, got {k}")));
    }
    if energy.spec().needs_prompt() && prompts.prompts().iter().any(String::is_empty) {
        return Err(PipelineError::config("this energy compares against the prompt, but a prompt is empty"));
    }
    let encoded = prompts.encode(&reference.vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(prompts.len() * k * (k - 1) / 2);
    for (prompt_smiles, prompt) in prompts.prompts().iter().zip(&encoded) {
        let prompt_fp = if energy.spec().needs_prompt() {
            Some(Fingerprint::of(&parse_smiles(prompt_smiles).expect("prompt sets hold valid molecules")))
        } else {
            None
        };
        let mut drawn = Vec::with_capacity(k);
        for _ in 0..k {
            let completion = reference.sample_with(prompt, &mut rng, temperature)?;
            let smiles = decode_smiles(&reference.vocab, &completion);
            let u = energy.evaluate_with_fingerprint(&smiles, prompt_fp.as_ref())?;
            let logp = era_core::Policy::log_prob(reference, prompt, &completion)?;
            drawn.push((completion, u, logp));
        }
        for i in 0..k {
            for j in i + 1..k {
                out.push(PreferenceRecord {
                    prompt: prompt.clone(),
                    completion_a: drawn[i].0.clone(),
                    completion_b: drawn[j].0.clone(),
                    energy_a: drawn[i].1,
                    energy_b: drawn[j].1,
                    ref_logp_a: drawn[i].2,
                    ref_logp_b: drawn[j].2,
                });
            }
        }
    }
    Ok(out)
}

/// One JSON record per line.
pub fn write_jsonl(path: impl AsRef<Path>, records: &[PreferenceRecord]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| PipelineError::io(format!("writing {}", path.display()), e);
    let mut w = BufWriter::new(fs::File::create(path).map_err(io)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<PreferenceRecord>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PreferenceRecord = serde_json::from_str(&line)
            .map_err(|e| PipelineError::config(format!("{} line {}: {e}", path.display(), n + 1)))?;
        rec.validate().map_err(|e| PipelineError::config(format!("{} line {}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Fail when any record holds a token id the policy cannot emit.
pub fn check_vocabulary(records: &[PreferenceRecord], policy: &NeuralPolicy) -> Result<()> {
    let v = policy.vocab.len() as u32;
    for (i, r) in records.iter().enumerate() {
        let ids = r.prompt.iter().chain(&r.completion_a).chain(&r.completion_b);
        if let Some(bad) = ids.copied().find(|&t| t >= v || era_neural::Vocabulary::is_reserved(t)) {
            return Err(PipelineError::config(format!(
                "record {i} uses token id {bad}, which the checkpoint vocabulary of {v} tokens does not emit"
            )));
        }
    }
    Ok(())
}
