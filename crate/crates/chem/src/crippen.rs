//! Wildman-Crippen atom-contribution LogP and molar refractivity.
//!
//! Every atom, hydrogens included, is assigned the first atom type whose
//! pattern matches it, and the per-type contributions are summed. The table
//! ships as `data/crippen.csv` and can be replaced at runtime.

use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::error::{ChemError, Result};
use crate::mol::MolGraph;
use crate::smarts::{ExplicitGraph, SmartsPattern};

const BUILTIN: &str = include_str!("../data/crippen.csv");

#[derive(Debug, Clone)]
pub struct CrippenRule {
    pub atom_type: String,
    pub pattern: SmartsPattern,
    pub logp: f64,
    pub mr: f64,
}

#[derive(Debug, Deserialize)]
struct Row {
    atom_type: String,
    pattern: String,
    logp_contrib: f64,
    mr_contrib: f64,
}

#[derive(Debug, Clone)]
pub struct CrippenTable {
    version: u32,
    rules: Vec<CrippenRule>,
}

/// Per-molecule sums.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrippenValues {
    pub logp: f64,
    pub mr: f64,
}

impl CrippenTable {
    /// The bundled table, parsed once.
    pub fn builtin() -> &'static CrippenTable {
        static TABLE: OnceLock<CrippenTable> = OnceLock::new();
        TABLE.get_or_init(|| CrippenTable::from_reader(BUILTIN.as_bytes()).expect("bundled Crippen table is valid"))
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    /// Reads `atom_type,pattern,logp_contrib,mr_contrib` rows. Lines starting
    /// with `#` are comments; one of them must read `# version: N`.
    pub fn from_reader(mut reader: impl Read) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let version = text
            .lines()
            .filter_map(|l| l.strip_prefix('#'))
            .find_map(|l| l.trim().strip_prefix("version:"))
            .ok_or_else(|| ChemError::Data("Crippen table has no version line".into()))?
            .trim()
            .parse()
            .map_err(|_| ChemError::Data("Crippen table version is not an integer".into()))?;
        let mut csv = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut rules = Vec::new();
        for row in csv.deserialize::<Row>() {
            let row = row?;
            rules.push(CrippenRule {
                pattern: SmartsPattern::parse(&row.pattern)?,
                atom_type: row.atom_type,
                logp: row.logp_contrib,
                mr: row.mr_contrib,
            });
        }
        if rules.is_empty() {
            return Err(ChemError::Data("Crippen table has no rows".into()));
        }
        Ok(CrippenTable { version, rules })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn rules(&self) -> &[CrippenRule] {
        &self.rules
    }

    /// Rule index for each atom of the hydrogen-expanded graph.
    pub fn classify(&self, mol: &MolGraph) -> Result<Vec<usize>> {
        let graph = ExplicitGraph::from_mol(mol);
        (0..graph.len())
            .map(|node| {
                self.rules.iter().position(|r| r.pattern.matches_at(&graph, node)).ok_or_else(|| {
                    let z = graph.atomic_number(node);
                    ChemError::UnclassifiedAtom {
                        atom: node,
                        element: crate::Element::from_atomic_number(z).map_or(z.to_string(), |e| e.to_string()),
                    }
                })
            })
            .collect()
    }

    pub fn evaluate(&self, mol: &MolGraph) -> Result<CrippenValues> {
        let types = self.classify(mol)?;
        let mut out = CrippenValues { logp: 0.0, mr: 0.0 };
        for t in types {
            out.logp += self.rules[t].logp;
            out.mr += self.rules[t].mr;
        }
        Ok(out)
    }
}

pub fn crippen_logp(mol: &MolGraph) -> Result<f64> {
    Ok(CrippenTable::builtin().evaluate(mol)?.logp)
}

pub fn crippen_mr(mol: &MolGraph) -> Result<f64> {
    Ok(CrippenTable::builtin().evaluate(mol)?.mr)
}
