//! Hashed circular fingerprints and Tanimoto similarity.
//!
//! Each atom starts from an invariant of (element, heavy degree, charge,
//! aromatic flag). Two rounds of neighbourhood hashing follow, with
//! neighbours sorted so the result does not depend on atom order. Every
//! environment identifier from radius 0 to 2 sets one bit.

use crate::error::{ChemError, Result};
use crate::mol::MolGraph;

pub const DEFAULT_BITS: usize = 2048;
pub const DEFAULT_RADIUS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    len: usize,
}

fn mix(mut h: u64, v: u64) -> u64 {
    // FNV-1a over the eight bytes of v
    for byte in v.to_le_bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn finish(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

impl Fingerprint {
    pub fn empty(len: usize) -> Self {
        Fingerprint { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bits(len: usize, bits: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut fp = Self::empty(len);
        for b in bits {
            if b >= len {
                return Err(ChemError::InvalidArgument(format!("bit {b} out of range for length {len}")));
            }
            fp.set(b);
        }
        Ok(fp)
    }

    /// Default 2048-bit, radius-2 fingerprint.
    pub fn of(mol: &MolGraph) -> Self {
        Self::circular(mol, DEFAULT_BITS, DEFAULT_RADIUS)
    }

    pub fn circular(mol: &MolGraph, len: usize, radius: usize) -> Self {
        assert!(len > 0, "fingerprint length must be positive");
        let mut fp = Self::empty(len);
        let mut ids: Vec<u64> = mol
            .atoms()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let mut h = mix(FNV_OFFSET, a.element.atomic_number() as u64);
                h = mix(h, mol.degree(i) as u64);
                h = mix(h, a.charge as i64 as u64);
                finish(mix(h, a.aromatic as u64))
            })
            .collect();
        for &id in &ids {
            fp.set((id % len as u64) as usize);
        }
        let mut env = Vec::new();
        for round in 1..=radius {
            let next: Vec<u64> = (0..ids.len())
                .map(|i| {
                    env.clear();
                    env.extend(mol.neighbors(i).map(|(j, order)| (order.code(), ids[j])));
                    env.sort_unstable();
                    let mut h = mix(mix(FNV_OFFSET, round as u64), ids[i]);
                    for &(code, id) in &env {
                        h = mix(mix(h, code), id);
                    }
                    finish(h)
                })
                .collect();
            ids = next;
            for &id in &ids {
                fp.set((id % len as u64) as usize);
            }
        }
        fp
    }

    fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.count_ones() == 0
    }

    pub fn contains(&self, bit: usize) -> bool {
        bit < self.len && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

/// |a ∧ b| / |a ∨ b|, taken as 1 when both are empty.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64> {
    if a.len != b.len {
        return Err(ChemError::InvalidArgument(format!("fingerprint lengths differ: {} vs {}", a.len, b.len)));
    }
    let (mut both, mut either) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        both += (x & y).count_ones();
        either += (x | y).count_ones();
    }
    Ok(if either == 0 { 1.0 } else { both as f64 / either as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse_smiles;

    #[test]
    fn set_arithmetic() {
        let a = Fingerprint::from_bits(16, [1, 2, 3]).unwrap();
        let b = Fingerprint::from_bits(16, [2, 3, 4]).unwrap();
        let c = Fingerprint::from_bits(16, [7, 8]).unwrap();
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
        assert_eq!(tanimoto(&Fingerprint::empty(16), &Fingerprint::empty(16)).unwrap(), 1.0);
        assert!(tanimoto(&a, &Fingerprint::empty(32)).is_err());
        assert!(Fingerprint::from_bits(16, [16]).is_err());
    }

    #[test]
    fn atom_order_does_not_matter() {
        let pairs = [("CCO", "OCC"), ("Oc1ccccc1C", "Cc1ccccc1O"), ("CC(=O)N", "NC(C)=O"), ("C1CC1Cl", "ClC1CC1")];
        for (x, y) in pairs {
            assert_eq!(Fingerprint::of(&parse_smiles(x).unwrap()), Fingerprint::of(&parse_smiles(y).unwrap()), "{x} {y}");
        }
    }

    #[test]
    fn similar_molecules_score_higher() {
        let fp = |s| Fingerprint::of(&parse_smiles(s).unwrap());
        let near = tanimoto(&fp("CCCCO"), &fp("CCCCCO")).unwrap();
        let far = tanimoto(&fp("CCCCO"), &fp("c1ccccc1")).unwrap();
        assert!(near > far && near < 1.0);
    }
}
