//! Pairwise preference probabilities and losses.
//!
//! Conventions: a [`PreferenceRecord`] holds two completions `a` and `b` of
//! one prompt. All probabilities are "a is preferred to b". The target
//! preference is
//!
//! ```text
//! p_target = sigmoid(beta' (U_b - U_a) + gamma' (log pi_ref(a) - log pi_ref(b)))
//! ```
//!
//! and the model preference is `p_theta = sigmoid(log pi(a) - log pi(b))`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, AlignError, Result};
use crate::params::AlignmentParams;
use crate::policy::Policy;
use crate::prob::{log_sigmoid, sigmoid, PreferenceProb};

/// Log-weight bound for [`importance_weighted_kl`].
pub const DEFAULT_LOG_WEIGHT_CAP: f64 = 30.0;

/// One training atom: a prompt, two completions, their energies and their
/// log-probabilities under the frozen reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub prompt: Vec<u32>,
    pub completion_a: Vec<u32>,
    pub completion_b: Vec<u32>,
    pub energy_a: f64,
    pub energy_b: f64,
    pub ref_logp_a: f64,
    pub ref_logp_b: f64,
}

impl PreferenceRecord {
    /// Record with empty token sequences, for callers that only need the
    /// scalar part.
    pub fn from_scalars(energy_a: f64, energy_b: f64, ref_logp_a: f64, ref_logp_b: f64) -> Self {
        Self {
            prompt: Vec::new(),
            completion_a: Vec::new(),
            completion_b: Vec::new(),
            energy_a,
            energy_b,
            ref_logp_a,
            ref_logp_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("energy_a", self.energy_a)?;
        ensure_finite("energy_b", self.energy_b)?;
        ensure_finite("ref_logp_a", self.ref_logp_a)?;
        ensure_finite("ref_logp_b", self.ref_logp_b)?;
        if self.ref_logp_a > 0.0 || self.ref_logp_b > 0.0 {
            return Err(AlignError::InvalidArgument(format!(
                "reference log-probabilities must be <= 0, got ({}, {})",
                self.ref_logp_a, self.ref_logp_b
            )));
        }
        Ok(())
    }

    /// The same pair with `a` and `b` exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            prompt: self.prompt.clone(),
            completion_a: self.completion_b.clone(),
            completion_b: self.completion_a.clone(),
            energy_a: self.energy_b,
            energy_b: self.energy_a,
            ref_logp_a: self.ref_logp_b,
            ref_logp_b: self.ref_logp_a,
        }
    }
}

/// Log-probabilities of the two completions under the trained policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyScores {
    pub logp_a: f64,
    pub logp_b: f64,
}

impl PolicyScores {
    pub fn new(logp_a: f64, logp_b: f64) -> Self {
        Self { logp_a, logp_b }
    }

    fn validate(&self) -> Result<()> {
        ensure_finite("logp_a", self.logp_a)?;
        ensure_finite("logp_b", self.logp_b)
    }
}

/// `p_theta(a > b) = sigmoid(logp_a - logp_b)`.
pub fn preference_prob_theta(scores: &PolicyScores) -> Result<PreferenceProb> {
    scores.validate()?;
    PreferenceProb::from_logit(scores.logp_a - scores.logp_b)
}

fn target_logit(rec: &PreferenceRecord, params: &AlignmentParams) -> f64 {
    params.beta_prime() * (rec.energy_b - rec.energy_a)
        + params.gamma_prime() * (rec.ref_logp_a - rec.ref_logp_b)
}

/// Target preference `p_gamma(a > b)` of the regularized Gibbs-Boltzmann
/// optimum.
pub fn preference_prob_target(rec: &PreferenceRecord, params: &AlignmentParams) -> Result<PreferenceProb> {
    rec.validate()?;
    PreferenceProb::from_logit(target_logit(rec, params))
}

fn bernoulli_kl(target: &PreferenceProb, model: &PreferenceProb) -> f64 {
    let kl = target.value() * (target.ln() - model.ln())
        + target.ln_complement().exp() * (target.ln_complement() - model.ln_complement());
    // rounding can leave a value of order -1e-17 when the two coincide
    kl.max(0.0)
}

/// KL divergence between the target and model Bernoulli preference
/// distributions on one pair. Non-negative, zero iff `p_theta == p_target`.
pub fn era_pairwise_kl(rec: &PreferenceRecord, scores: &PolicyScores, params: &AlignmentParams) -> Result<f64> {
    let target = preference_prob_target(rec, params)?;
    let model = preference_prob_theta(scores)?;
    Ok(bernoulli_kl(&target, &model))
}

/// Derivatives of [`era_pairwise_kl`] with respect to `logp_a` and `logp_b`.
///
/// The loss depends on the scores only through `z = logp_a - logp_b` and
/// `dKL/dz = p_theta - p_target`, which equals [`era_grad_scale`] times
/// `dp_theta/dz`.
pub fn era_pair_grad(rec: &PreferenceRecord, scores: &PolicyScores, params: &AlignmentParams) -> Result<(f64, f64)> {
    rec.validate()?;
    scores.validate()?;
    let d = sigmoid(scores.logp_a - scores.logp_b) - sigmoid(target_logit(rec, params));
    Ok((d, -d))
}

/// Mean pairwise KL over a batch, scoring each pair with `policy`.
pub fn era_loss_batch<P: Policy + ?Sized>(
    records: &[PreferenceRecord],
    policy: &P,
    params: &AlignmentParams,
) -> Result<f64> {
    if records.is_empty() {
        return Err(AlignError::InvalidArgument("empty preference batch".into()));
    }
    let mut total = 0.0;
    for rec in records {
        let scores = policy.score_pair(rec)?;
        total += era_pairwise_kl(rec, &scores, params)?;
    }
    Ok(total / records.len() as f64)
}

/// Per-pair gradient prefactor `(1 - p*)/(1 - p_theta) - p*/p_theta`.
///
/// Positive when the model over-prefers `a`, negative when it under-prefers.
pub fn era_grad_scale(p_target: &PreferenceProb, p_theta: &PreferenceProb) -> Result<f64> {
    let values = [p_target.ln(), p_target.ln_complement(), p_theta.ln(), p_theta.ln_complement()];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AlignError::InvalidArgument("preference probability on the boundary of [0, 1]".into()));
    }
    Ok((p_target.ln_complement() - p_theta.ln_complement()).exp() - (p_target.ln() - p_theta.ln()).exp())
}

/// On-policy loss term: the pairwise KL reweighted by
/// `pi_theta(a) pi_theta(b) / (pi_ref(a) pi_ref(b))`.
///
/// Fails with [`AlignError::DegenerateImportanceWeight`] when the log-weight
/// exceeds `log_weight_cap` (see [`DEFAULT_LOG_WEIGHT_CAP`]).
pub fn importance_weighted_kl(
    rec: &PreferenceRecord,
    scores: &PolicyScores,
    params: &AlignmentParams,
    log_weight_cap: f64,
) -> Result<f64> {
    let kl = era_pairwise_kl(rec, scores, params)?;
    let log_weight = scores.logp_a + scores.logp_b - rec.ref_logp_a - rec.ref_logp_b;
    if log_weight > log_weight_cap {
        return Err(AlignError::DegenerateImportanceWeight { log_weight, cap: log_weight_cap });
    }
    Ok(log_weight.exp() * kl)
}

/// Which completion of a record is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
}

impl Winner {
    /// Lower energy wins; `None` on a tie.
    pub fn lower_energy(rec: &PreferenceRecord) -> Option<Self> {
        if rec.energy_a < rec.energy_b {
            Some(Winner::A)
        } else if rec.energy_b < rec.energy_a {
            Some(Winner::B)
        } else {
            None
        }
    }
}

/// Temperature of the DPO baseline.
///
/// The implicit-reward margin is multiplied by `temperature` inside the
/// sigmoid, i.e. it stands for the `gamma / beta` ratio of the regularized
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoParams {
    pub temperature: f64,
}

impl Default for DpoParams {
    fn default() -> Self {
        Self { temperature: 0.1 }
    }
}

fn dpo_margin(rec: &PreferenceRecord, scores: &PolicyScores, winner: Winner) -> f64 {
    let reward_a = scores.logp_a - rec.ref_logp_a;
    let reward_b = scores.logp_b - rec.ref_logp_b;
    match winner {
        Winner::A => reward_a - reward_b,
        Winner::B => reward_b - reward_a,
    }
}

fn check_dpo(rec: &PreferenceRecord, scores: &PolicyScores, dpo: &DpoParams) -> Result<()> {
    rec.validate()?;
    scores.validate()?;
    if !(dpo.temperature.is_finite() && dpo.temperature > 0.0) {
        return Err(AlignError::InvalidArgument(format!(
            "dpo temperature must be positive, got {}",
            dpo.temperature
        )));
    }
    Ok(())
}

/// Bradley-Terry negative log-likelihood of the implicit reward margin:
/// `-log sigmoid(t * [(logp_w - ref_w) - (logp_l - ref_l)])`.
pub fn dpo_pairwise_loss(
    rec: &PreferenceRecord,
    scores: &PolicyScores,
    dpo: &DpoParams,
    winner: Winner,
) -> Result<f64> {
    check_dpo(rec, scores, dpo)?;
    Ok(-log_sigmoid(dpo.temperature * dpo_margin(rec, scores, winner)))
}

/// Derivatives of [`dpo_pairwise_loss`] with respect to `(logp_a, logp_b)`.
pub fn dpo_pairwise_grad(
    rec: &PreferenceRecord,
    scores: &PolicyScores,
    dpo: &DpoParams,
    winner: Winner,
) -> Result<(f64, f64)> {
    check_dpo(rec, scores, dpo)?;
    let t = dpo.temperature;
    let d_margin = -t * sigmoid(-t * dpo_margin(rec, scores, winner));
    Ok(match winner {
        Winner::A => (d_margin, -d_margin),
        Winner::B => (-d_margin, d_margin),
    })
}

/// `-beta' U + gamma' log pi_ref`: log of the unnormalized optimal policy.
pub fn gibbs_unnormalized_logdensity(energy: f64, ref_logp: f64, params: &AlignmentParams) -> Result<f64> {
    ensure_finite("energy", energy)?;
    ensure_finite("ref_logp", ref_logp)?;
    Ok(-params.beta_prime() * energy + params.gamma_prime() * ref_logp)
}

/// `-(beta / gamma) U + log pi_ref`: log of the unnormalized minimizer of the
/// KL-regularized reward objective. Undefined at `gamma = 0`.
pub fn ppo_unnormalized_logdensity(energy: f64, ref_logp: f64, params: &AlignmentParams) -> Result<f64> {
    ensure_finite("energy", energy)?;
    ensure_finite("ref_logp", ref_logp)?;
    if params.gamma() == 0.0 {
        return Err(AlignError::InvalidArgument(
            "the regularized-reward minimizer needs gamma > 0; it has no gamma -> 0 limit".into(),
        ));
    }
    Ok(-(params.beta() / params.gamma()) * energy + ref_logp)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn params(beta: f64, gamma: f64) -> AlignmentParams {
        AlignmentParams::new(beta, gamma).unwrap()
    }

    // Plain-probability Bernoulli KL, independent of the log-space path.
    fn kl_oracle(pt: f64, pm: f64) -> f64 {
        pt * (pt / pm).ln() + (1.0 - pt) * ((1.0 - pt) / (1.0 - pm)).ln()
    }

    /// Record whose target preference is `pt` (beta = 1, gamma = 0) and whose
    /// scores give `pm`.
    fn pair_with(pt: f64, pm: f64) -> (PreferenceRecord, PolicyScores) {
        let rec = PreferenceRecord::from_scalars(0.0, (pt / (1.0 - pt)).ln(), -1.0, -1.0);
        let scores = PolicyScores::new((pm / (1.0 - pm)).ln() - 2.0, -2.0);
        (rec, scores)
    }

    #[test]
    fn theta_preference_examples() {
        let p = preference_prob_theta(&PolicyScores::new(-1.3, -1.3)).unwrap();
        assert_eq!(p.value(), 0.5);
        let ln3 = 3f64.ln();
        let p = preference_prob_theta(&PolicyScores::new(-1.0 + ln3, -1.0)).unwrap();
        assert!((p.value() - 0.75).abs() < 1e-15);
        let p = preference_prob_theta(&PolicyScores::new(-1.0 - ln3, -1.0)).unwrap();
        assert!((p.value() - 0.25).abs() < 1e-15);
        assert!(preference_prob_theta(&PolicyScores::new(f64::NAN, -1.0)).is_err());
    }

    #[test]
    fn target_preference_examples() {
        let rec = PreferenceRecord::from_scalars(2.0, 2.0, -0.7, -0.7);
        assert_eq!(preference_prob_target(&rec, &params(3.0, 0.4)).unwrap().value(), 0.5);

        let rec = PreferenceRecord::from_scalars(0.0, 4f64.ln(), -1.0, -1.0);
        let p = preference_prob_target(&rec, &params(1.0, 0.0)).unwrap();
        assert!((p.value() - 0.8).abs() < 1e-15);
        let p = preference_prob_target(&rec, &params(1.0, 1.0)).unwrap();
        assert!((p.value() - 2.0 / 3.0).abs() < 1e-15);

        let bad = PreferenceRecord::from_scalars(f64::INFINITY, 0.0, -1.0, -1.0);
        assert!(preference_prob_target(&bad, &params(1.0, 0.0)).is_err());
        let bad = PreferenceRecord::from_scalars(0.0, 0.0, 0.5, -1.0);
        assert!(preference_prob_target(&bad, &params(1.0, 0.0)).is_err());
    }

    #[test]
    fn pairwise_kl_examples() {
        let (rec, scores) = pair_with(0.6, 0.6);
        assert!(era_pairwise_kl(&rec, &scores, &params(1.0, 0.0)).unwrap() < 1e-15);

        let expected = kl_oracle(0.75, 0.5);
        assert!((expected - 0.130812).abs() < 1e-6);
        let (rec, scores) = pair_with(0.75, 0.5);
        let kl = era_pairwise_kl(&rec, &scores, &params(1.0, 0.0)).unwrap();
        assert!((kl - expected).abs() < 1e-14);

        let expected = kl_oracle(0.5, 0.75);
        assert!((expected - 0.143841).abs() < 1e-6);
        let (rec, scores) = pair_with(0.5, 0.75);
        let kl = era_pairwise_kl(&rec, &scores, &params(1.0, 0.0)).unwrap();
        assert!((kl - expected).abs() < 1e-14);
    }

    struct TablePolicy(Vec<(Vec<u32>, f64)>);

    impl Policy for TablePolicy {
        fn log_prob(&self, _prompt: &[u32], completion: &[u32]) -> Result<f64> {
            self.0
                .iter()
                .find(|(c, _)| c.as_slice() == completion)
                .map(|(_, lp)| *lp)
                .ok_or_else(|| AlignError::Policy("unknown completion".into()))
        }

        fn sample(&self, _prompt: &[u32], _rng: &mut dyn rand::RngCore) -> Result<Vec<u32>> {
            Ok(self.0[0].0.clone())
        }
    }

    #[test]
    fn batch_loss_is_the_mean() {
        let ln3 = 3f64.ln();
        let policy = TablePolicy(vec![(vec![1], -1.0), (vec![2], -1.0), (vec![3], -1.0 + ln3)]);
        let p = params(1.0, 0.0);
        // p_target = 0.75 against p_theta = 0.5
        let mut r1 = PreferenceRecord::from_scalars(0.0, ln3, -1.0, -1.0);
        r1.completion_a = vec![1];
        r1.completion_b = vec![2];
        // p_target = 0.5 against p_theta = 0.75
        let mut r2 = PreferenceRecord::from_scalars(0.5, 0.5, -1.0, -1.0);
        r2.completion_a = vec![3];
        r2.completion_b = vec![2];

        let single = era_loss_batch(std::slice::from_ref(&r1), &policy, &p).unwrap();
        let direct = era_pairwise_kl(&r1, &policy.score_pair(&r1).unwrap(), &p).unwrap();
        assert_eq!(single, direct);

        let mean = era_loss_batch(&[r1.clone(), r2], &policy, &p).unwrap();
        let expected = 0.5 * (kl_oracle(0.75, 0.5) + kl_oracle(0.5, 0.75));
        assert!((expected - 0.137326).abs() < 1e-6);
        assert!((mean - expected).abs() < 1e-14);

        assert!(era_loss_batch(&[], &policy, &p).is_err());

        // a policy that already matches every target gives zero loss
        let mut matched = r1;
        matched.completion_a = vec![3];
        assert!(era_loss_batch(&[matched], &policy, &p).unwrap() < 1e-15);
    }

    #[test]
    fn grad_scale_examples() {
        let half = PreferenceProb::from_value(0.5).unwrap();
        let three_q = PreferenceProb::from_value(0.75).unwrap();
        assert_eq!(era_grad_scale(&half, &half).unwrap(), 0.0);
        // (1 - .75)/(1 - .5) - .75/.5
        assert!((era_grad_scale(&three_q, &half).unwrap() - (-1.0)).abs() < 1e-14);
        // (1 - .5)/(1 - .75) - .5/.75
        assert!((era_grad_scale(&half, &three_q).unwrap() - (2.0 - 2.0 / 3.0)).abs() < 1e-14);
    }

    #[test]
    fn pair_grad_matches_chain_rule_through_grad_scale() {
        let p = params(1.7, 0.3);
        let rec = PreferenceRecord::from_scalars(0.3, 1.1, -2.0, -0.4);
        let scores = PolicyScores::new(-1.2, -3.3);
        let (ga, gb) = era_pair_grad(&rec, &scores, &p).unwrap();
        let pt = preference_prob_target(&rec, &p).unwrap();
        let pm = preference_prob_theta(&scores).unwrap();
        let scale = era_grad_scale(&pt, &pm).unwrap();
        let dsigma = pm.value() * (1.0 - pm.value());
        assert!((ga - scale * dsigma).abs() < 1e-14);
        assert_eq!(ga, -gb);

        let h = 1e-5;
        let f = |a: f64| era_pairwise_kl(&rec, &PolicyScores::new(a, scores.logp_b), &p).unwrap();
        let fd = (f(scores.logp_a + h) - f(scores.logp_a - h)) / (2.0 * h);
        assert!((fd - ga).abs() < 1e-9);
    }

    #[test]
    fn importance_weighting() {
        let p = params(1.0, 0.0);
        let (rec, _) = pair_with(0.75, 0.5);
        // identical policies: unit weight
        let same = PolicyScores::new(rec.ref_logp_a, rec.ref_logp_b);
        assert_eq!(
            importance_weighted_kl(&rec, &same, &p, DEFAULT_LOG_WEIGHT_CAP).unwrap(),
            era_pairwise_kl(&rec, &same, &p).unwrap()
        );

        // log-weight ln 2 on a pair with p_theta = 0.5, p_target = 0.75
        let scores = PolicyScores::new(rec.ref_logp_a + LN2 / 2.0, rec.ref_logp_b + LN2 / 2.0);
        let v = importance_weighted_kl(&rec, &scores, &p, DEFAULT_LOG_WEIGHT_CAP).unwrap();
        assert!((v - 2.0 * kl_oracle(0.75, 0.5)).abs() < 1e-13);
        assert!((v - 0.261624).abs() < 1e-6);

        // matched preferences: zero regardless of weight
        let (rec, scores) = pair_with(0.3, 0.3);
        let shifted = PolicyScores::new(scores.logp_a + 5.0, scores.logp_b + 5.0);
        assert!(importance_weighted_kl(&rec, &shifted, &p, DEFAULT_LOG_WEIGHT_CAP).unwrap() < 1e-12);

        let huge = PolicyScores::new(rec.ref_logp_a + 20.0, rec.ref_logp_b + 20.0);
        assert!(matches!(
            importance_weighted_kl(&rec, &huge, &p, DEFAULT_LOG_WEIGHT_CAP),
            Err(AlignError::DegenerateImportanceWeight { .. })
        ));
    }

    #[test]
    fn dpo_examples() {
        let dpo = DpoParams { temperature: 1.0 };
        let rec = PreferenceRecord::from_scalars(0.0, 1.0, -1.0, -1.0);
        let zero = PolicyScores::new(-1.0, -1.0);
        let l = dpo_pairwise_loss(&rec, &zero, &dpo, Winner::A).unwrap();
        assert!((l - LN2).abs() < 1e-15);

        let ln3 = 3f64.ln();
        let s = PolicyScores::new(-1.0 + ln3, -1.0);
        let l = dpo_pairwise_loss(&rec, &s, &dpo, Winner::A).unwrap();
        assert!((l + 0.75f64.ln()).abs() < 1e-15);
        assert!((l - 0.287682).abs() < 1e-6);

        let mut last = f64::INFINITY;
        for m in [0.0, 1.0, 5.0, 20.0, 100.0, 800.0] {
            let s = PolicyScores::new(-1.0 + m, -1.0);
            let l = dpo_pairwise_loss(&rec, &s, &dpo, Winner::A).unwrap();
            assert!(l < last && l >= 0.0);
            last = l;
        }
        assert!(last < 1e-300);
        assert_eq!(DpoParams::default().temperature, 0.1);
        assert!(dpo_pairwise_loss(&rec, &PolicyScores::new(f64::NAN, 0.0), &dpo, Winner::A).is_err());
    }

    #[test]
    fn dpo_grad_matches_finite_differences() {
        let dpo = DpoParams { temperature: 0.3 };
        let rec = PreferenceRecord::from_scalars(0.2, 1.0, -1.5, -0.4);
        let s = PolicyScores::new(-2.0, -0.9);
        for winner in [Winner::A, Winner::B] {
            let (ga, gb) = dpo_pairwise_grad(&rec, &s, &dpo, winner).unwrap();
            let h = 1e-5;
            let f = |a: f64, b: f64| dpo_pairwise_loss(&rec, &PolicyScores::new(a, b), &dpo, winner).unwrap();
            let fa = (f(s.logp_a + h, s.logp_b) - f(s.logp_a - h, s.logp_b)) / (2.0 * h);
            let fb = (f(s.logp_a, s.logp_b + h) - f(s.logp_a, s.logp_b - h)) / (2.0 * h);
            assert!((fa - ga).abs() < 1e-9 && (fb - gb).abs() < 1e-9);
        }
    }

    #[test]
    fn winner_by_energy() {
        assert_eq!(Winner::lower_energy(&PreferenceRecord::from_scalars(1.0, 2.0, -1.0, -1.0)), Some(Winner::A));
        assert_eq!(Winner::lower_energy(&PreferenceRecord::from_scalars(3.0, 2.0, -1.0, -1.0)), Some(Winner::B));
        assert_eq!(Winner::lower_energy(&PreferenceRecord::from_scalars(2.0, 2.0, -1.0, -1.0)), None);
    }

    #[test]
    fn gibbs_logdensity_examples() {
        assert_eq!(gibbs_unnormalized_logdensity(0.0, -0.3, &params(1.0, 0.0)).unwrap(), 0.0);
        for (u, b) in [(0.7, 2.0), (-3.0, 0.5), (12.5, 1.0)] {
            assert_eq!(gibbs_unnormalized_logdensity(u, -2.2, &params(b, 0.0)).unwrap(), -b * u);
        }
        let v = gibbs_unnormalized_logdensity(4f64.ln(), 0.5f64.ln(), &params(1.0, 1.0)).unwrap();
        assert!((v + 1.5 * LN2).abs() < 1e-15);
    }

    #[test]
    fn ppo_logdensity_examples() {
        assert_eq!(ppo_unnormalized_logdensity(0.0, -0.3, &params(2.0, 0.5)).unwrap(), -0.3);
        let v = ppo_unnormalized_logdensity(LN2, 0.5f64.ln(), &params(1.0, 1.0)).unwrap();
        assert!((v + 2.0 * LN2).abs() < 1e-15);
        assert!(ppo_unnormalized_logdensity(1.0, -1.0, &params(1.0, 0.0)).is_err());
    }
}
