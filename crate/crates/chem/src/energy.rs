//! Energy functions over generated SMILES.
//!
//! Lower energy means more preferred. Every string, including garbage, maps
//! to a finite energy: chemically invalid sequences, and molecules whose
//! property cannot be computed, receive a fixed penalty.

use serde::{Deserialize, Serialize};

use crate::error::{ChemError, Result};
use crate::fingerprint::Fingerprint;
use crate::mol::MolGraph;
use crate::properties::{Property, PropertyContext};
use crate::smiles::parse_smiles;

fn default_identity_penalty() -> f64 {
    3.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnergyKind {
    /// (f - mu)^2 / (2 sigma^2)
    Harmonic { property: Property, mu: f64, sigma: f64 },
    /// min(-log f, clamp)
    #[serde(rename = "neglog")]
    NegLog {
        property: Property,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        clamp: Option<f64>,
    },
    /// Sum of beta_i * U_i
    Composite { terms: Vec<WeightedTerm> },
    /// Weighted similarity to the prompt plus a weighted property term. A
    /// sample identical to the prompt (similarity 1) takes `identity_penalty`
    /// as its similarity energy.
    Prompted {
        similarity: Box<WeightedTerm>,
        property: Box<WeightedTerm>,
        #[serde(default = "default_identity_penalty")]
        identity_penalty: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub beta: f64,
    pub energy: EnergySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySpec {
    #[serde(flatten)]
    pub kind: EnergyKind,
    /// Overrides the property-specific penalty for invalid sequences.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_energy: Option<f64>,
}

impl From<EnergyKind> for EnergySpec {
    fn from(kind: EnergyKind) -> Self {
        EnergySpec { kind, invalid_energy: None }
    }
}

fn positive(value: f64, what: &str) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ChemError::InvalidArgument(format!("{what} must be positive and finite, got {value}")))
    }
}

impl EnergySpec {
    pub fn harmonic(property: Property, mu: f64, sigma: f64) -> Self {
        EnergyKind::Harmonic { property, mu, sigma }.into()
    }

    pub fn neglog(property: Property) -> Self {
        EnergyKind::NegLog { property, clamp: None }.into()
    }

    pub fn composite(terms: impl IntoIterator<Item = (f64, EnergySpec)>) -> Self {
        EnergyKind::Composite { terms: terms.into_iter().map(|(beta, energy)| WeightedTerm { beta, energy }).collect() }
            .into()
    }

    /// Prompted energy with a negative-log Tanimoto similarity term.
    pub fn prompted(similarity_beta: f64, property_beta: f64, property: EnergySpec) -> Self {
        EnergyKind::Prompted {
            similarity: Box::new(WeightedTerm { beta: similarity_beta, energy: EnergySpec::neglog(Property::Tanimoto) }),
            property: Box::new(WeightedTerm { beta: property_beta, energy: property }),
            identity_penalty: default_identity_penalty(),
        }
        .into()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(e) = self.invalid_energy {
            if !e.is_finite() {
                return Err(ChemError::InvalidArgument(format!("invalid_energy must be finite, got {e}")));
            }
        }
        match &self.kind {
            EnergyKind::Harmonic { mu, sigma, .. } => {
                if !mu.is_finite() {
                    return Err(ChemError::InvalidArgument(format!("mu must be finite, got {mu}")));
                }
                positive(*sigma, "sigma")
            }
            EnergyKind::NegLog { property, clamp } => {
                let c = clamp.or(property.default_neglog_clamp()).ok_or_else(|| {
                    ChemError::InvalidArgument(format!("neglog over {property} needs an explicit clamp"))
                })?;
                positive(c, "clamp")
            }
            EnergyKind::Composite { terms } => {
                if terms.is_empty() {
                    return Err(ChemError::InvalidArgument("composite energy has no terms".into()));
                }
                for t in terms {
                    positive(t.beta, "composite weight")?;
                    t.energy.validate()?;
                }
                Ok(())
            }
            EnergyKind::Prompted { similarity, property, identity_penalty } => {
                positive(similarity.beta, "similarity weight")?;
                positive(property.beta, "property weight")?;
                if !identity_penalty.is_finite() {
                    return Err(ChemError::InvalidArgument("identity_penalty must be finite".into()));
                }
                if !matches!(similarity.energy.kind, EnergyKind::NegLog { property: Property::Tanimoto, .. }) {
                    return Err(ChemError::InvalidArgument("prompted similarity term must be neglog Tanimoto".into()));
                }
                similarity.energy.validate()?;
                property.energy.validate()
            }
        }
    }

    pub fn needs_prompt(&self) -> bool {
        match &self.kind {
            EnergyKind::Harmonic { property, .. } | EnergyKind::NegLog { property, .. } => property.needs_prompt(),
            EnergyKind::Composite { terms } => terms.iter().any(|t| t.energy.needs_prompt()),
            EnergyKind::Prompted { .. } => true,
        }
    }

    /// Energy of a sequence that failed to parse or whose property is unavailable.
    pub fn invalid_value(&self) -> f64 {
        if let Some(e) = self.invalid_energy {
            return e;
        }
        match &self.kind {
            EnergyKind::Harmonic { property, .. } | EnergyKind::NegLog { property, .. } => property.invalid_energy(),
            EnergyKind::Composite { terms } => terms.iter().map(|t| t.beta * t.energy.invalid_value()).sum(),
            EnergyKind::Prompted { similarity, property, .. } => {
                similarity.beta * similarity.energy.invalid_value() + property.beta * property.energy.invalid_value()
            }
        }
    }

    fn on_valid(&self, ctx: &PropertyContext, smiles: &str, mol: &MolGraph, prompt: Option<&Fingerprint>) -> Result<f64> {
        let fallback = |r: Result<f64>| match r {
            Ok(v) => Ok(v),
            Err(ChemError::InvalidArgument(m)) => Err(ChemError::InvalidArgument(m)),
            Err(_) => Ok(self.invalid_value()),
        };
        match &self.kind {
            EnergyKind::Harmonic { property, mu, sigma } => {
                fallback(ctx.evaluate(*property, smiles, mol, prompt).map(|f| (f - mu).powi(2) / (2.0 * sigma * sigma)))
            }
            EnergyKind::NegLog { property, clamp } => {
                let c = clamp.or(property.default_neglog_clamp()).expect("validated");
                fallback(ctx.evaluate(*property, smiles, mol, prompt).map(|f| if f > 0.0 { (-f.ln()).min(c) } else { c }))
            }
            EnergyKind::Composite { terms } => {
                let mut total = 0.0;
                for t in terms {
                    total += t.beta * t.energy.on_valid(ctx, smiles, mol, prompt)?;
                }
                Ok(total)
            }
            EnergyKind::Prompted { similarity, property, identity_penalty } => {
                let prompt = prompt.ok_or_else(|| ChemError::InvalidArgument("prompted energy needs a prompt".into()))?;
                let sim = ctx.evaluate(Property::Tanimoto, smiles, mol, Some(prompt))?;
                let u_sim = if sim >= 1.0 {
                    *identity_penalty
                } else {
                    similarity.energy.on_valid(ctx, smiles, mol, Some(prompt))?
                };
                let u_prop = property.energy.on_valid(ctx, smiles, mol, Some(prompt))?;
                Ok(similarity.beta * u_sim + property.beta * u_prop)
            }
        }
    }
}

/// A validated spec bound to its property context.
#[derive(Debug, Clone)]
pub struct EnergyEvaluator {
    spec: EnergySpec,
    ctx: PropertyContext,
}

impl EnergyEvaluator {
    pub fn new(spec: EnergySpec, ctx: PropertyContext) -> Result<Self> {
        spec.validate()?;
        Ok(EnergyEvaluator { spec, ctx })
    }

    pub fn spec(&self) -> &EnergySpec {
        &self.spec
    }

    pub fn context(&self) -> &PropertyContext {
        &self.ctx
    }

    /// Energy of `generated`, optionally relative to a prompt molecule.
    /// Errors only when the spec needs a prompt and none (or an invalid one)
    /// is given; any generated string yields a finite value.
    pub fn evaluate(&self, generated: &str, prompt: Option<&str>) -> Result<f64> {
        let prompt_fp = match prompt {
            Some(p) if self.spec.needs_prompt() => {
                let mol = parse_smiles(p)
                    .map_err(|e| ChemError::InvalidArgument(format!("prompt {p:?} is not a valid molecule: {e}")))?;
                Some(Fingerprint::of(&mol))
            }
            None if self.spec.needs_prompt() => {
                return Err(ChemError::InvalidArgument("this energy needs a prompt molecule".into()))
            }
            _ => None,
        };
        self.evaluate_with_fingerprint(generated, prompt_fp.as_ref())
    }

    /// As [`evaluate`](Self::evaluate) with the prompt already fingerprinted.
    pub fn evaluate_with_fingerprint(&self, generated: &str, prompt: Option<&Fingerprint>) -> Result<f64> {
        if self.spec.needs_prompt() && prompt.is_none() {
            return Err(ChemError::InvalidArgument("this energy needs a prompt molecule".into()));
        }
        let value = match parse_smiles(generated) {
            Ok(mol) => self.spec.on_valid(&self.ctx, generated, &mol, prompt)?,
            Err(_) => self.spec.invalid_value(),
        };
        if value.is_finite() {
            Ok(value)
        } else {
            Ok(self.spec.invalid_value())
        }
    }
}

/// Evaluate with the bundled atom-contribution table and no external properties.
pub fn evaluate_energy(spec: &EnergySpec, generated: &str, prompt: Option<&str>) -> Result<f64> {
    EnergyEvaluator::new(spec.clone(), PropertyContext::default())?.evaluate(generated, prompt)
}
