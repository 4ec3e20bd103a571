//! Next-token pretraining on a SMILES corpus and prompted fine-tuning on
//! single-token perturbations.

use era_chem::{parse_smiles, tokenize_smiles};
use era_neural::policy::build_sequence;
use era_neural::train::pretrain_with_observer;
use era_neural::{ModelConfig, NeuralPolicy, PretrainConfig, Sequence, TrainingReport, Vocabulary};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PipelineError, Result};
use crate::text::{build_vocabulary, encode_smiles};

/// Retries allowed when searching for a valid perturbation of one prompt.
pub const MAX_PERTURBATION_RETRIES: usize = 100;

fn check_lengths(config: &ModelConfig, seqs: &[Sequence]) -> Result<()> {
    if let Some(s) = seqs.iter().find(|s| s.ids.len() > config.max_len) {
        return Err(PipelineError::config(format!(
            "a training sequence has {} tokens but max_len is {}",
            s.ids.len(),
            config.max_len
        )));
    }
    Ok(())
}

/// Fresh policy over the corpus vocabulary, trained by next-token
/// prediction. Initialization and batching both derive from `cfg.seed`.
pub fn pretrain_policy(
    corpus: &[String],
    model: ModelConfig,
    cfg: &PretrainConfig,
    observer: impl FnMut(usize, f64),
) -> Result<(NeuralPolicy, TrainingReport)> {
    if corpus.is_empty() {
        return Err(PipelineError::config("empty training corpus"));
    }
    let vocab = build_vocabulary(corpus)?;
    let mut policy = NeuralPolicy::init(vocab, model, cfg.seed)?;
    let seqs = corpus
        .iter()
        .map(|s| Ok(build_sequence(&[], &encode_smiles(&policy.vocab, s)?)?))
        .collect::<Result<Vec<_>>>()?;
    check_lengths(&model, &seqs)?;
    let report = pretrain_with_observer(&mut policy.params, &seqs, cfg, observer)?;
    Ok((policy, report))
}

/// Replace one random token of `prompt` with a different vocabulary token,
/// retrying until the result parses. `None` after
/// [`MAX_PERTURBATION_RETRIES`] failures.
pub fn perturb_once(prompt: &str, vocab: &Vocabulary, rng: &mut impl Rng) -> Result<Option<String>> {
    let tokens = tokenize_smiles(prompt).map_err(|e| PipelineError::config(format!("{prompt:?}: {e}")))?;
    if tokens.is_empty() {
        return Ok(None);
    }
    let content: Vec<&str> =
        vocab.tokens().iter().enumerate().filter(|(i, _)| !Vocabulary::is_reserved(*i as u32)).map(|(_, t)| t.as_str()).collect();
    for _ in 0..MAX_PERTURBATION_RETRIES {
        let pos = rng.gen_range(0..tokens.len());
        let replacement = *content.choose(rng).expect("vocabulary has content tokens");
        if replacement == tokens[pos] {
            continue;
        }
        let candidate: String =
            tokens.iter().enumerate().map(|(i, t)| if i == pos { replacement } else { *t }).collect();
        if parse_smiles(&candidate).is_ok() {
            return Ok(Some(candidate));
        }
    }
    Ok(None)
}

/// Prompt/response pairs for prompted fine-tuning, one per prompt that
/// admits a valid perturbation. Returns the pairs and the number skipped.
pub fn perturbation_pairs(prompts: &[String], vocab: &Vocabulary, seed: u64) -> Result<(Vec<(String, String)>, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(prompts.len());
    let mut skipped = 0;
    for p in prompts {
        match perturb_once(p, vocab, &mut rng)? {
            Some(y) => pairs.push((p.clone(), y)),
            None => skipped += 1,
        }
    }
    Ok((pairs, skipped))
}

/// Supervised fine-tuning of `policy` on `(prompt, response)` pairs.
pub fn finetune_prompted(
    policy: &mut NeuralPolicy,
    pairs: &[(String, String)],
    cfg: &PretrainConfig,
    observer: impl FnMut(usize, f64),
) -> Result<TrainingReport> {
    if pairs.is_empty() {
        return Err(PipelineError::config("no fine-tuning pairs"));
    }
    let seqs = pairs
        .iter()
        .map(|(x, y)| Ok(build_sequence(&encode_smiles(&policy.vocab, x)?, &encode_smiles(&policy.vocab, y)?)?))
        .collect::<Result<Vec<_>>>()?;
    check_lengths(policy.config(), &seqs)?;
    Ok(pretrain_with_observer(&mut policy.params, &seqs, cfg, observer)?)
}
