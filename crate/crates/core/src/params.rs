use serde::{Deserialize, Serialize};

use crate::error::{AlignError, Result};

/// Inverse temperature `beta` and regularization strength `gamma`.
///
/// Every closed form in this crate uses the rescaled pair
/// `beta' = beta / (1 + gamma)` and `gamma' = gamma / (1 + gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct AlignmentParams {
    beta: f64,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    beta: f64,
    gamma: f64,
}

impl TryFrom<RawParams> for AlignmentParams {
    type Error = AlignError;

    fn try_from(raw: RawParams) -> Result<Self> {
        Self::new(raw.beta, raw.gamma)
    }
}

impl From<AlignmentParams> for RawParams {
    fn from(p: AlignmentParams) -> Self {
        RawParams { beta: p.beta, gamma: p.gamma }
    }
}

impl AlignmentParams {
    pub fn new(beta: f64, gamma: f64) -> Result<Self> {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(AlignError::InvalidArgument(format!("beta must be positive and finite, got {beta}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(AlignError::InvalidArgument(format!(
                "gamma must be non-negative and finite, got {gamma}"
            )));
        }
        Ok(Self { beta, gamma })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn beta_prime(&self) -> f64 {
        self.beta / (1.0 + self.gamma)
    }

    pub fn gamma_prime(&self) -> f64 {
        self.gamma / (1.0 + self.gamma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_parameters() {
        let p = AlignmentParams::new(1.0, 1.0).unwrap();
        assert_eq!(p.beta_prime(), 0.5);
        assert_eq!(p.gamma_prime(), 0.5);

        let p = AlignmentParams::new(3.0, 0.0).unwrap();
        assert_eq!(p.beta_prime(), 3.0);
        assert_eq!(p.gamma_prime(), 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(AlignmentParams::new(0.0, 0.0).is_err());
        assert!(AlignmentParams::new(-1.0, 0.0).is_err());
        assert!(AlignmentParams::new(1.0, -0.1).is_err());
        assert!(AlignmentParams::new(f64::NAN, 0.0).is_err());
        assert!(AlignmentParams::new(1.0, f64::INFINITY).is_err());
    }

    #[test]
    fn gamma_prime_below_one_and_beta_prime_bounded() {
        for gamma in [0.0, 0.1, 1.0, 10.0, 1e6] {
            let p = AlignmentParams::new(2.5, gamma).unwrap();
            assert!((0.0..1.0).contains(&p.gamma_prime()));
            assert!(p.beta_prime() <= p.beta());
        }
    }

    #[test]
    fn deserialization_validates() {
        let ok: AlignmentParams = serde_json::from_str(r#"{"beta":1.0,"gamma":0.1}"#).unwrap();
        assert_eq!(ok.gamma(), 0.1);
        assert!(serde_json::from_str::<AlignmentParams>(r#"{"beta":0.0,"gamma":0.1}"#).is_err());
    }
}
