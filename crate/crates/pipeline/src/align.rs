//! Alignment runs: ERA (or DPO for contrast) over a preference dataset,
//! starting from the reference weights.

use era_core::{AlignmentParams, DpoParams, PreferenceRecord};
use era_neural::train::{dpo_align_step, dpo_loss_with_grad, era_align_step, era_loss, Adam};
use era_neural::{AdamConfig, NeuralPolicy};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::check_vocabulary;
use crate::error::{PipelineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    #[default]
    Era,
    Dpo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub mode: AlignMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub gamma: f64,
    /// DPO temperature, used only in DPO mode.
    pub dpo_temperature: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            mode: AlignMode::Era,
            epochs: 3,
            batch_size: 32,
            learning_rate: 1e-5,
            beta: 1.0,
            gamma: 0.0,
            dpo_temperature: DpoParams::default().temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    /// Minibatch loss before the update.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignLog {
    pub config: AlignConfig,
    pub seed: u64,
    pub records: usize,
    /// Loss over the whole dataset before training.
    pub start_loss: f64,
    /// Loss over the whole dataset after training (or at the last good step).
    pub end_loss: f64,
    pub steps: Vec<StepLog>,
    pub failure: Option<String>,
}

/// Result of a run. On divergence `policy` holds the parameters of the last
/// step whose loss was finite and `log.failure` says why training stopped.
#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub policy: NeuralPolicy,
    pub log: AlignLog,
}

impl AlignOutcome {
    pub fn failed(&self) -> bool {
        self.log.failure.is_some()
    }
}

fn dpo_params(cfg: &AlignConfig) -> Result<DpoParams> {
    if cfg.dpo_temperature.is_finite() && cfg.dpo_temperature > 0.0 {
        Ok(DpoParams { temperature: cfg.dpo_temperature })
    } else {
        Err(PipelineError::config(format!("dpo temperature must be positive, got {}", cfg.dpo_temperature)))
    }
}

fn dataset_loss(policy: &NeuralPolicy, records: &[PreferenceRecord], cfg: &AlignConfig) -> Result<f64> {
    match cfg.mode {
        AlignMode::Era => Ok(era_loss(&policy.params, records, &AlignmentParams::new(cfg.beta, cfg.gamma)?)?),
        AlignMode::Dpo => {
            let mut scratch = policy.params.zeros_like();
            Ok(dpo_loss_with_grad(&policy.params, records, &dpo_params(cfg)?, &mut scratch)?)
        }
    }
}

/// Train a copy of `reference` on `records`. Minibatches are reshuffled
/// each epoch from `seed`; zero epochs return the reference unchanged.
pub fn run_align(
    reference: &NeuralPolicy,
    records: &[PreferenceRecord],
    cfg: &AlignConfig,
    seed: u64,
) -> Result<AlignOutcome> {
    if records.is_empty() {
        return Err(PipelineError::config("empty preference dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(PipelineError::config("batch size must be positive"));
    }
    check_vocabulary(records, reference)?;
    let align = AlignmentParams::new(cfg.beta, cfg.gamma)?;
    let dpo = dpo_params(cfg)?;
    let mut policy = reference.clone();
    let mut adam = Adam::new(&policy.params, AdamConfig::with_learning_rate(cfg.learning_rate))?;
    let start_loss = dataset_loss(&policy, records, cfg)?;
    let mut log = AlignLog {
        config: *cfg,
        seed,
        records: records.len(),
        start_loss,
        end_loss: start_loss,
        steps: Vec::new(),
        failure: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    // parameters at which the most recent minibatch loss was finite
    let mut last_good = policy.params.clone();
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| records[i].clone()));
            let before = policy.params.clone();
            let step = match cfg.mode {
                AlignMode::Era => era_align_step(&mut policy.params, &mut adam, &batch, &align),
                AlignMode::Dpo => dpo_align_step(&mut policy.params, &mut adam, &batch, &dpo),
            };
            let failure = match step {
                Ok(loss) if policy.params.all_finite() => {
                    log.steps.push(StepLog { epoch, step: log.steps.len(), loss });
                    last_good = before;
                    None
                }
                Ok(_) => Some(format!("parameters became non-finite at step {}", log.steps.len())),
                Err(era_neural::NeuralError::Training { step, message }) => {
                    Some(format!("step {step}: {message}"))
                }
                Err(e) => return Err(e.into()),
            };
            if let Some(reason) = failure {
                policy.params = last_good.clone();
                log.failure = Some(reason);
                break 'epochs;
            }
        }
    }
    log.end_loss = match (dataset_loss(&policy, records, cfg), log.failure.is_some()) {
        (Ok(v), true) => v,
        (Err(_), true) => f64::NAN,
        (Ok(v), false) if v.is_finite() => v,
        (Ok(_) | Err(PipelineError::Training(_)), false) => {
            // the last step left finite parameters that no longer score
            log.failure = Some(format!("loss became non-finite after step {}", log.steps.len()));
            policy.params = last_good;
            dataset_loss(&policy, records, cfg).unwrap_or(f64::NAN)
        }
        (Err(e), false) => return Err(e),
    };
    Ok(AlignOutcome { policy, log })
}
