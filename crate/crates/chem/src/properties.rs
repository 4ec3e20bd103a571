//! Molecular properties used as alignment targets.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crippen::CrippenTable;
use crate::error::{ChemError, Result};
use crate::fingerprint::{tanimoto, Fingerprint};
use crate::mol::MolGraph;
use crate::rings::ring_count;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    #[serde(alias = "log_p")]
    Logp,
    #[serde(alias = "molar_refractivity")]
    Mr,
    RingCount,
    /// Looked up from an external table; not computed natively.
    Qed,
    /// Similarity to the prompt molecule.
    Tanimoto,
}

impl Property {
    pub const ALL: [Property; 5] = [Property::Logp, Property::Mr, Property::RingCount, Property::Qed, Property::Tanimoto];

    /// Energy assigned to chemically invalid sequences.
    pub fn invalid_energy(self) -> f64 {
        match self {
            Property::Tanimoto => 10.0,
            Property::Qed => 4.5,
            Property::Logp => 300.0,
            Property::Mr => 400.0,
            Property::RingCount => 70.0,
        }
    }

    /// Clamp applied to `-log f` when f reaches zero.
    pub fn default_neglog_clamp(self) -> Option<f64> {
        match self {
            Property::Qed => Some(4.5),
            Property::Tanimoto => Some(10.0),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::Logp => "logp",
            Property::Mr => "mr",
            Property::RingCount => "ring_count",
            Property::Qed => "qed",
            Property::Tanimoto => "tanimoto",
        }
    }

    pub fn needs_prompt(self) -> bool {
        self == Property::Tanimoto
    }
}

impl std::fmt::Display for Property {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Property {
    type Err = ChemError;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ChemError::InvalidArgument(format!("unknown property {s:?}")))
    }
}

#[derive(Debug, Deserialize)]
struct ExternalRow {
    smiles: String,
    property_name: String,
    value: f64,
}

/// Precomputed property values keyed by the exact SMILES string.
#[derive(Debug, Clone, Default)]
pub struct ExternalProperties {
    values: HashMap<(String, String), f64>,
}

impl ExternalProperties {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Reads a CSV with header `smiles,property_name,value`.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["smiles", "property_name", "value"] {
            return Err(ChemError::Data(format!("expected header smiles,property_name,value, got {headers:?}")));
        }
        let mut values = HashMap::new();
        for row in rdr.deserialize::<ExternalRow>() {
            let row = row?;
            if !row.value.is_finite() {
                return Err(ChemError::Data(format!("non-finite value for {:?}", row.smiles)));
            }
            values.insert((row.smiles, row.property_name), row.value);
        }
        Ok(ExternalProperties { values })
    }

    pub fn insert(&mut self, smiles: impl Into<String>, property: impl Into<String>, value: f64) {
        self.values.insert((smiles.into(), property.into()), value);
    }

    pub fn get(&self, smiles: &str, property: &str) -> Option<f64> {
        self.values.get(&(smiles.to_string(), property.to_string())).copied()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Everything needed to compute properties of a parsed molecule.
#[derive(Debug, Clone)]
pub struct PropertyContext {
    pub crippen: CrippenTable,
    pub external: ExternalProperties,
}

impl Default for PropertyContext {
    fn default() -> Self {
        PropertyContext { crippen: CrippenTable::builtin().clone(), external: ExternalProperties::default() }
    }
}

impl PropertyContext {
    pub fn with_external(external: ExternalProperties) -> Self {
        PropertyContext { external, ..Default::default() }
    }

    /// Property value of a valid molecule. `prompt_fp` is required for
    /// Tanimoto similarity.
    pub fn evaluate(
        &self,
        property: Property,
        smiles: &str,
        mol: &MolGraph,
        prompt_fp: Option<&Fingerprint>,
    ) -> Result<f64> {
        match property {
            Property::Logp => Ok(self.crippen.evaluate(mol)?.logp),
            Property::Mr => Ok(self.crippen.evaluate(mol)?.mr),
            Property::RingCount => Ok(ring_count(mol) as f64),
            Property::Qed => self.external.get(smiles, "qed").ok_or_else(|| ChemError::MissingProperty {
                property: "qed".into(),
                smiles: smiles.into(),
            }),
            Property::Tanimoto => {
                let p = prompt_fp
                    .ok_or_else(|| ChemError::InvalidArgument("Tanimoto similarity needs a prompt molecule".into()))?;
                tanimoto(&Fingerprint::of(mol), p)
            }
        }
    }
}
