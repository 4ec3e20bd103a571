//! Molecular substrate for energy rank alignment.
//!
//! Atom-wise SMILES tokenization, a validity-checking SMILES parser,
//! Wildman-Crippen LogP and molar refractivity, ring counts, circular
//! fingerprints with Tanimoto similarity, and the energy functions that turn
//! those properties into alignment targets.

pub mod crippen;
pub mod element;
pub mod energy;
pub mod error;
pub mod fingerprint;
pub mod mol;
pub mod properties;
pub mod rings;
pub mod smarts;
pub mod smiles;
pub mod tokenize;

pub use crippen::{crippen_logp, crippen_mr, CrippenTable, CrippenValues};
pub use element::Element;
pub use energy::{evaluate_energy, EnergyEvaluator, EnergyKind, EnergySpec, WeightedTerm};
pub use error::{ChemError, Result};
pub use fingerprint::{tanimoto, Fingerprint};
pub use mol::{Atom, Bond, BondOrder, MolGraph};
pub use properties::{ExternalProperties, Property, PropertyContext};
pub use rings::ring_count;
pub use smiles::{parse_smiles, Invalidity, InvalidityReason};
pub use tokenize::{tokenize_smiles, TokenizeError};
