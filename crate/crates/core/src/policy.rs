use rand::RngCore;

use crate::align::{PolicyScores, PreferenceRecord};
use crate::error::Result;

/// A conditional distribution `pi(y | x)` over token sequences.
pub trait Policy {
    /// `log pi(completion | prompt)`.
    fn log_prob(&self, prompt: &[u32], completion: &[u32]) -> Result<f64>;

    fn sample(&self, prompt: &[u32], rng: &mut dyn RngCore) -> Result<Vec<u32>>;

    fn score_pair(&self, record: &PreferenceRecord) -> Result<PolicyScores> {
        Ok(PolicyScores {
            logp_a: self.log_prob(&record.prompt, &record.completion_a)?,
            logp_b: self.log_prob(&record.prompt, &record.completion_b)?,
        })
    }
}

/// Energy `U(x, y)`, the negative reward. Lower is preferred.
pub trait EnergyModel {
    fn energy(&self, prompt: &[u32], completion: &[u32]) -> f64;
}

impl<F> EnergyModel for F
where
    F: Fn(&[u32], &[u32]) -> f64,
{
    fn energy(&self, prompt: &[u32], completion: &[u32]) -> f64 {
        self(prompt, completion)
    }
}
