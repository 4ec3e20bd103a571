//! Parameterized molecule families standing in for a large training corpus.
//!
//! Linear alkanes are enumerated. The other families are sampled: acyclic
//! skeletons are random carbon trees written depth-first, and ring systems
//! are drawn from a table of one- to three-ring scaffolds with optional
//! substituents.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Longest linear alkane the enumeration emits.
pub const MAX_ALKANE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `C`, `CC`, `CCC`, ... in order of length.
    Alkanes,
    /// Random acyclic carbon skeletons of 4 to 10 atoms.
    Branched,
    /// Acyclic skeletons carrying one or two hydroxyl groups.
    Alcohols,
    /// Single and fused ring systems with one to three rings.
    Rings,
    /// Two thirds ring systems, one third acyclic molecules.
    Mixed,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Alkanes, Family::Branched, Family::Alcohols, Family::Rings, Family::Mixed];

    pub fn name(self) -> &'static str {
        match self {
            Family::Alkanes => "alkanes",
            Family::Branched => "branched",
            Family::Alcohols => "alcohols",
            Family::Rings => "rings",
            Family::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| PipelineError::config(format!("unknown corpus family {s:?}")))
    }
}

/// Ring scaffolds grouped by ring count. `*` marks a substitution site,
/// written right after the atom it decorates.
const SCAFFOLDS: [&[&str]; 3] = [
    &[
        "C1C*C1",
        "C1CC*C1",
        "C1CC*CC1",
        "C1CC*CCC1",
        "C1CCC*CCC1",
        "C1=CC*CCC1",
        "c1cc*ccc1",
        "c1cc*cnc1",
        "C1CC*OC1",
        "C1CN*CC1",
        "C1CC*OCC1",
        "c1cc*[nH]c1",
        "c1cc*oc1",
        "c1cc*sc1",
    ],
    &[
        "c1ccc2cc*ccc2c1",
        "C1CCC2CC*CCC2C1",
        "c1ccc2C*CCc2c1",
        "c1ccc2CC*CCc2c1",
        "c1ccc(cc1)-c1cc*ccc1",
        "c1ccc2[nH]cc*c2c1",
        "C1CCC(CC1)C1CC*CCC1",
        "c1ccc(cc1)C1CC*CC1",
        "c1ccc2occ*c2c1",
        "C1CC2CC*C1C2",
    ],
    &[
        "c1ccc2cc3cc*ccc3cc2c1",
        "c1ccc2c(c1)ccc1cc*ccc12",
        "c1ccc2c(c1)Cc1cc*ccc12",
        "C1CCC2C(C1)CCC1CC*CCC12",
        "c1ccc(cc1)-c1ccc(cc1)-c1cc*ccc1",
        "c1ccc(cc1)Cc1ccc2cc*ccc2c1",
        "C1CCC(CC1)C1CCC(CC1)C1CC*CC1",
    ],
];

const SUBSTITUENTS: [&str; 8] = ["C", "CC", "O", "N", "F", "Cl", "OC", "C(=O)O"];
const PREFIXES: [&str; 6] = ["C", "CC", "O", "CC(C)", "N", "OC"];

/// Generate `size` molecules of `family`. Linear alkanes are deterministic;
/// every other family is drawn from a generator seeded by `seed`.
pub fn generate_corpus(family: Family, size: usize, seed: u64) -> Result<Vec<String>> {
    if size == 0 {
        return Err(PipelineError::config("corpus size must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = match family {
        Family::Alkanes => {
            if size > MAX_ALKANE {
                return Err(PipelineError::config(format!(
                    "the alkanes family enumerates at most {MAX_ALKANE} molecules"
                )));
            }
            (1..=size).map(|n| "C".repeat(n)).collect()
        }
        _ => (0..size).map(|_| sample_member(family, &mut rng)).collect(),
    };
    Ok(out)
}

fn sample_member(family: Family, rng: &mut ChaCha8Rng) -> String {
    match family {
        Family::Alkanes => "C".repeat(rng.gen_range(1..=12)),
        Family::Branched => branched(rng, 0),
        Family::Alcohols => {
            let hydroxyls = rng.gen_range(1..=2);
            branched(rng, hydroxyls)
        }
        Family::Rings => ring_system(rng),
        Family::Mixed => {
            if rng.gen_bool(2.0 / 3.0) {
                ring_system(rng)
            } else {
                let acyclic = [Family::Alkanes, Family::Branched, Family::Alcohols];
                sample_member(*acyclic.choose(rng).expect("non-empty"), rng)
            }
        }
    }
}

/// Random tree of carbons with `hydroxyls` oxygen leaves, written as SMILES.
fn branched(rng: &mut ChaCha8Rng, hydroxyls: usize) -> String {
    let carbons = if hydroxyls == 0 { rng.gen_range(4..=10) } else { rng.gen_range(1..=8) };
    let mut symbols = vec!["C"];
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut degree = vec![0usize];
    let mut attach = |symbol: &'static str, rng: &mut ChaCha8Rng, symbols: &mut Vec<&str>| {
        let open: Vec<usize> = (0..symbols.len()).filter(|&i| symbols[i] == "C" && degree[i] < 4).collect();
        let parent = *open.choose(rng).expect("a carbon with a free valence");
        let id = symbols.len();
        symbols.push(symbol);
        children.push(Vec::new());
        degree.push(1);
        degree[parent] += 1;
        children[parent].push(id);
    };
    for _ in 1..carbons {
        attach("C", rng, &mut symbols);
    }
    for _ in 0..hydroxyls {
        attach("O", rng, &mut symbols);
    }
    let mut out = String::new();
    write_tree(0, &symbols, &children, &mut out);
    out
}

fn write_tree(node: usize, symbols: &[&str], children: &[Vec<usize>], out: &mut String) {
    out.push_str(symbols[node]);
    if let Some((last, rest)) = children[node].split_last() {
        for &c in rest {
            out.push('(');
            write_tree(c, symbols, children, out);
            out.push(')');
        }
        write_tree(*last, symbols, children, out);
    }
}

fn ring_system(rng: &mut ChaCha8Rng) -> String {
    let scaffold = SCAFFOLDS[rng.gen_range(0..3)].choose(rng).expect("non-empty");
    let site = if rng.gen_bool(0.5) { format!("({})", SUBSTITUENTS.choose(rng).expect("non-empty")) } else { String::new() };
    let prefix = if rng.gen_bool(0.4) { *PREFIXES.choose(rng).expect("non-empty") } else { "" };
    format!("{prefix}{}", scaffold.replace('*', &site))
}

#[cfg(test)]
mod tests {
    use super::*;
    use era_chem::{parse_smiles, ring_count};

    #[test]
    fn alkanes_enumerate_in_order() {
        assert_eq!(generate_corpus(Family::Alkanes, 3, 0).unwrap(), ["C", "CC", "CCC"]);
        assert!(generate_corpus(Family::Alkanes, MAX_ALKANE + 1, 0).is_err());
        assert!(generate_corpus(Family::Mixed, 0, 0).is_err());
        assert!("cyclic".parse::<Family>().is_err());
    }

    #[test]
    fn every_scaffold_and_decoration_is_valid() {
        for (rings, group) in SCAFFOLDS.iter().enumerate() {
            for s in group.iter() {
                for site in std::iter::once(String::new()).chain(SUBSTITUENTS.iter().map(|x| format!("({x})"))) {
                    for prefix in std::iter::once("").chain(PREFIXES) {
                        let smi = format!("{prefix}{}", s.replace('*', &site));
                        let mol = parse_smiles(&smi).unwrap_or_else(|e| panic!("{smi}: {e}"));
                        assert_eq!(ring_count(&mol), rings + 1, "{smi}");
                    }
                }
            }
        }
    }

    #[test]
    fn families_are_valid_and_seeded() {
        for family in Family::ALL {
            let n = if family == Family::Alkanes { MAX_ALKANE } else { 300 };
            let a = generate_corpus(family, n, 5).unwrap();
            for smi in &a {
                let mol = parse_smiles(smi).unwrap_or_else(|e| panic!("{family}: {smi}: {e}"));
                let rings = ring_count(&mol);
                match family {
                    Family::Rings => assert!(rings >= 1, "{smi}"),
                    Family::Alkanes | Family::Branched | Family::Alcohols => assert_eq!(rings, 0, "{smi}"),
                    Family::Mixed => assert!(rings <= 3),
                }
            }
            assert_eq!(a, generate_corpus(family, n, 5).unwrap());
        }
        assert_ne!(generate_corpus(Family::Rings, 50, 1).unwrap(), generate_corpus(Family::Rings, 50, 2).unwrap());
    }
}
