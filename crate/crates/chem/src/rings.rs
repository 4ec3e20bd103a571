//! Ring counting.

use crate::mol::MolGraph;

/// Number of independent rings: bonds minus atoms plus connected components.
pub fn ring_count(mol: &MolGraph) -> usize {
    (mol.bonds().len() + mol.num_components()).saturating_sub(mol.num_atoms())
}
