//! Optimizer, next-token pretraining and preference alignment steps.

use era_core::{
    dpo_pairwise_grad, dpo_pairwise_loss, era_pair_grad, era_pairwise_kl, AlignmentParams, DpoParams, PolicyScores,
    PreferenceRecord, Winner,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};
use crate::model::{LogprobPass, Sequence};
use crate::params::ParamStore;
use crate::policy::build_sequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its global norm exceeds this value.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.max_grad_norm.is_none_or(|n| n > 0.0);
        if ok {
            Ok(())
        } else {
            Err(NeuralError::InvalidArgument(format!("bad optimizer settings {self:?}")))
        }
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: ParamStore,
    v: ParamStore,
    t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Adam { config, m: params.zeros_like(), v: params.zeros_like(), t: 0 })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Apply one update. Non-finite gradients abort without touching `params`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        if !grads.all_finite() {
            return Err(NeuralError::Training { step: self.t as usize, message: "non-finite gradient".into() });
        }
        let c = self.config;
        let norm = grads.tensors().iter().map(|t| t.iter().map(|g| g * g).sum::<f64>()).sum::<f64>().sqrt();
        let clip = match c.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let tensors = params.tensors_mut().into_iter().zip(self.m.tensors_mut()).zip(self.v.tensors_mut());
        for (((p, m), v), g) in tensors.zip(grads.tensors()) {
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
            });
        }
        Ok(())
    }
}

/// Mean next-token cross entropy per scored token, adding its gradient to `grads`.
pub fn cross_entropy_with_grad(params: &ParamStore, batch: &[Sequence], grads: &mut ParamStore) -> Result<f64> {
    let tokens: usize = batch.iter().map(Sequence::completion_len).sum();
    if tokens == 0 {
        return Err(NeuralError::InvalidArgument("empty batch".into()));
    }
    let coef = -1.0 / tokens as f64;
    let mut total = 0.0;
    for seq in batch {
        let pass = LogprobPass::new(params, seq)?;
        pass.backward(params, coef, grads);
        total += pass.logprob;
    }
    Ok(-total / tokens as f64)
}

pub fn cross_entropy(params: &ParamStore, batch: &[Sequence]) -> Result<f64> {
    let tokens: usize = batch.iter().map(Sequence::completion_len).sum();
    if tokens == 0 {
        return Err(NeuralError::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for seq in batch {
        total += crate::model::sequence_logprob(params, seq)?;
    }
    Ok(-total / tokens as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 20, batch_size: 16, adam: AdamConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Cross entropy over the whole corpus before the first update.
    pub initial_loss: f64,
    /// Token-weighted mean of the per-batch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
}

/// Minimize next-token cross entropy over `corpus` with minibatch Adam.
/// Batches are reshuffled every epoch from a generator seeded by `cfg.seed`.
pub fn pretrain_next_token(params: &mut ParamStore, corpus: &[Sequence], cfg: &PretrainConfig) -> Result<TrainingReport> {
    pretrain_with_observer(params, corpus, cfg, |_, _| {})
}

/// As [`pretrain_next_token`], calling `observer(epoch, loss)` after each epoch.
pub fn pretrain_with_observer(
    params: &mut ParamStore,
    corpus: &[Sequence],
    cfg: &PretrainConfig,
    mut observer: impl FnMut(usize, f64),
) -> Result<TrainingReport> {
    if corpus.is_empty() {
        return Err(NeuralError::InvalidArgument("empty corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(NeuralError::InvalidArgument("batch size must be positive".into()));
    }
    let initial_loss = cross_entropy(params, corpus)?;
    let mut adam = Adam::new(params, cfg.adam)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut weighted, mut tokens) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| corpus[i].clone()));
            let mut grads = params.zeros_like();
            let loss = cross_entropy_with_grad(params, &batch, &mut grads)?;
            if !loss.is_finite() {
                return Err(NeuralError::Training { step: adam.steps() as usize, message: format!("loss {loss}") });
            }
            adam.step(params, &grads)?;
            let n: usize = batch.iter().map(Sequence::completion_len).sum();
            weighted += loss * n as f64;
            tokens += n;
        }
        let epoch_loss = weighted / tokens as f64;
        observer(epoch, epoch_loss);
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainingReport { initial_loss, epoch_losses, steps: adam.steps() as usize })
}

/// Tag a training failure with the optimizer step it happened at.
fn at_step(e: NeuralError, adam: &Adam) -> NeuralError {
    match e {
        NeuralError::Training { message, .. } => NeuralError::Training { step: adam.steps() as usize, message },
        other => other,
    }
}

fn passes(params: &ParamStore, rec: &PreferenceRecord) -> Result<(LogprobPass, LogprobPass)> {
    let a = LogprobPass::new(params, &build_sequence(&rec.prompt, &rec.completion_a)?)?;
    let b = LogprobPass::new(params, &build_sequence(&rec.prompt, &rec.completion_b)?)?;
    if !(a.logprob.is_finite() && b.logprob.is_finite()) {
        return Err(NeuralError::Training { step: 0, message: "non-finite log-probability".into() });
    }
    Ok((a, b))
}

/// Mean pairwise ERA loss over `records`, adding its gradient to `grads`.
pub fn era_loss_with_grad(
    params: &ParamStore,
    records: &[PreferenceRecord],
    align: &AlignmentParams,
    grads: &mut ParamStore,
) -> Result<f64> {
    if records.is_empty() {
        return Err(NeuralError::InvalidArgument("empty preference batch".into()));
    }
    let n = records.len() as f64;
    let mut total = 0.0;
    for rec in records {
        let (a, b) = passes(params, rec)?;
        let scores = PolicyScores::new(a.logprob, b.logprob);
        total += era_pairwise_kl(rec, &scores, align)?;
        let (ga, gb) = era_pair_grad(rec, &scores, align)?;
        a.backward(params, ga / n, grads);
        b.backward(params, gb / n, grads);
    }
    Ok(total / n)
}

pub fn era_loss(params: &ParamStore, records: &[PreferenceRecord], align: &AlignmentParams) -> Result<f64> {
    if records.is_empty() {
        return Err(NeuralError::InvalidArgument("empty preference batch".into()));
    }
    let mut total = 0.0;
    for rec in records {
        let (a, b) = passes(params, rec)?;
        total += era_pairwise_kl(rec, &PolicyScores::new(a.logprob, b.logprob), align)?;
    }
    Ok(total / records.len() as f64)
}

/// One Adam step on the mean ERA loss. Returns the loss before the step.
pub fn era_align_step(
    params: &mut ParamStore,
    adam: &mut Adam,
    records: &[PreferenceRecord],
    align: &AlignmentParams,
) -> Result<f64> {
    let mut grads = params.zeros_like();
    let loss = era_loss_with_grad(params, records, align, &mut grads).map_err(|e| at_step(e, adam))?;
    if !loss.is_finite() {
        return Err(NeuralError::Training { step: adam.steps() as usize, message: format!("loss {loss}") });
    }
    adam.step(params, &grads)?;
    Ok(loss)
}

/// Mean DPO loss over records with a strict energy ordering, adding its
/// gradient to `grads`. Ties carry no preference and are skipped; a batch
/// of ties has loss 0.
pub fn dpo_loss_with_grad(
    params: &ParamStore,
    records: &[PreferenceRecord],
    dpo: &DpoParams,
    grads: &mut ParamStore,
) -> Result<f64> {
    let ordered: Vec<(&PreferenceRecord, Winner)> =
        records.iter().filter_map(|r| Winner::lower_energy(r).map(|w| (r, w))).collect();
    if ordered.is_empty() {
        return Ok(0.0);
    }
    let n = ordered.len() as f64;
    let mut total = 0.0;
    for (rec, winner) in ordered {
        let (a, b) = passes(params, rec)?;
        let scores = PolicyScores::new(a.logprob, b.logprob);
        total += dpo_pairwise_loss(rec, &scores, dpo, winner)?;
        let (ga, gb) = dpo_pairwise_grad(rec, &scores, dpo, winner)?;
        a.backward(params, ga / n, grads);
        b.backward(params, gb / n, grads);
    }
    Ok(total / n)
}

/// One Adam step on the mean DPO loss. Returns the loss before the step.
pub fn dpo_align_step(
    params: &mut ParamStore,
    adam: &mut Adam,
    records: &[PreferenceRecord],
    dpo: &DpoParams,
) -> Result<f64> {
    let mut grads = params.zeros_like();
    let loss = dpo_loss_with_grad(params, records, dpo, &mut grads).map_err(|e| at_step(e, adam))?;
    if !loss.is_finite() {
        return Err(NeuralError::Training { step: adam.steps() as usize, message: format!("loss {loss}") });
    }
    adam.step(params, &grads)?;
    Ok(loss)
}
