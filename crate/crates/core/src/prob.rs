use crate::error::{AlignError, Result};

/// Logistic function `1 / (1 + e^-x)`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Probability that the first completion of a pair is preferred.
///
/// Held as the pair `(log p, log(1 - p))` so that values extremely close to
/// 0 or 1 keep their precision; [`PreferenceProb::value`] exponentiates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferenceProb {
    log_p: f64,
    log_q: f64,
}

impl PreferenceProb {
    /// `sigmoid(logit)`.
    pub fn from_logit(logit: f64) -> Result<Self> {
        if !logit.is_finite() {
            return Err(AlignError::InvalidArgument(format!("preference logit must be finite, got {logit}")));
        }
        Ok(Self { log_p: log_sigmoid(logit), log_q: log_sigmoid(-logit) })
    }

    pub fn from_value(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(AlignError::InvalidArgument(format!(
                "preference probability must lie strictly inside (0, 1), got {p}"
            )));
        }
        Ok(Self { log_p: p.ln(), log_q: (-p).ln_1p() })
    }

    pub fn value(&self) -> f64 {
        self.log_p.exp()
    }

    pub fn ln(&self) -> f64 {
        self.log_p
    }

    /// `log(1 - p)`.
    pub fn ln_complement(&self) -> f64 {
        self.log_q
    }

    /// Probability of the reversed preference.
    pub fn complement(&self) -> Self {
        Self { log_p: self.log_q, log_q: self.log_p }
    }
}
