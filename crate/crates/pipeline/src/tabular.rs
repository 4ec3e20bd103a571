//! Batch check of tabular fits against the exact optimum on random
//! instances drawn from the documented grid.

use std::time::Instant;

use era_core::tabular::{OptimizerConfig, TabularInstance, TabularResult};
use era_core::AlignmentParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub const BETAS: [f64; 3] = [0.5, 1.0, 5.0];
pub const GAMMAS: [f64; 3] = [0.0, 0.1, 1.0];
pub const MAX_PROMPTS: usize = 4;
pub const MAX_OUTCOMES: usize = 32;
pub const MAX_ENERGY: f64 = 5.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceReport {
    pub num_prompts: usize,
    pub num_outcomes: usize,
    pub beta: f64,
    pub gamma: f64,
    #[serde(flatten)]
    pub result: TabularResult,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularReport {
    pub seed: u64,
    pub instances: usize,
    pub converged: usize,
    pub max_tv: f64,
    pub seconds: f64,
    pub runs: Vec<InstanceReport>,
}

/// Draws one instance: 1 to 4 prompts, 2 to 32 outcomes, energies in
/// `[0, 5)` and a grid point for `beta` and `gamma`.
pub fn random_instance(rng: &mut impl Rng) -> Result<TabularInstance> {
    let nx = rng.gen_range(1..=MAX_PROMPTS);
    let ny = rng.gen_range(2..=MAX_OUTCOMES);
    let beta = BETAS[rng.gen_range(0..BETAS.len())];
    let gamma = GAMMAS[rng.gen_range(0..GAMMAS.len())];
    Ok(TabularInstance::random(rng, nx, ny, MAX_ENERGY, AlignmentParams::new(beta, gamma)?))
}

pub fn verify_tabular(instances: usize, seed: u64) -> Result<TabularReport> {
    if instances == 0 {
        return Err(PipelineError::config("instances must be at least 1"));
    }
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opt = OptimizerConfig::default();
    let mut runs = Vec::with_capacity(instances);
    for _ in 0..instances {
        let inst = random_instance(&mut rng)?;
        let fit = inst.solve(&opt)?;
        runs.push(InstanceReport {
            num_prompts: inst.prompts.len(),
            num_outcomes: inst.outcomes.len(),
            beta: inst.beta,
            gamma: inst.gamma,
            result: fit.result(),
        });
    }
    Ok(TabularReport {
        seed,
        instances,
        converged: runs.iter().filter(|r| r.result.converged).count(),
        max_tv: runs.iter().map(|r| r.result.tv_distance).fold(0.0, f64::max),
        seconds: start.elapsed().as_secs_f64(),
        runs,
    })
}
