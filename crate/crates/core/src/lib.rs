//! Energy rank alignment (ERA).
//!
//! Pure functions for aligning a policy to an explicit energy function:
//! Bradley-Terry preference probabilities, the pairwise KL loss, its
//! gradient, the importance-weighted on-policy variant, a DPO baseline and
//! the closed-form Gibbs-Boltzmann and PPO minimizers. The [`tabular`] module
//! contains exact finite-space policies used as oracles for all of the above.

pub mod align;
pub mod error;
pub mod params;
pub mod policy;
pub mod prob;
pub mod tabular;

pub use align::{
    dpo_pairwise_grad, dpo_pairwise_loss, era_grad_scale, era_loss_batch, era_pair_grad,
    era_pairwise_kl, gibbs_unnormalized_logdensity, importance_weighted_kl,
    ppo_unnormalized_logdensity, preference_prob_target, preference_prob_theta, DpoParams,
    PolicyScores, PreferenceRecord, Winner, DEFAULT_LOG_WEIGHT_CAP,
};
pub use error::{AlignError, Result};
pub use params::AlignmentParams;
pub use policy::{EnergyModel, Policy};
pub use prob::{log_sigmoid, sigmoid, PreferenceProb};
