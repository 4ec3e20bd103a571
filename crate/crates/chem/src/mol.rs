//! Molecular graphs produced by the SMILES parser.

use crate::element::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Contribution to an atom's valence. Aromatic bonds count as one; the
    /// extra half is accounted for per atom by the parser.
    pub fn valence(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub charge: i8,
    /// Hydrogens attached to this atom, implicit or written in brackets.
    pub hydrogens: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }
}

/// Heavy-atom graph with hydrogens folded into per-atom counts.
#[derive(Debug, Clone, PartialEq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    adjacency: Vec<Vec<usize>>,
}

impl MolGraph {
    pub(crate) fn new(atoms: Vec<Atom>, bonds: Vec<Bond>) -> Self {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            adjacency[b.a].push(i);
            adjacency[b.b].push(i);
        }
        MolGraph { atoms, bonds, adjacency }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Indices of bonds incident to `atom`.
    pub fn bonds_of(&self, atom: usize) -> &[usize] {
        &self.adjacency[atom]
    }

    pub fn neighbors(&self, atom: usize) -> impl Iterator<Item = (usize, BondOrder)> + '_ {
        self.adjacency[atom].iter().map(move |&bi| {
            let b = &self.bonds[bi];
            (b.other(atom), b.order)
        })
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a].iter().map(|&i| &self.bonds[i]).find(|bond| bond.other(a) == b)
    }

    /// Number of connected components (fragments separated by `.`).
    pub fn num_components(&self) -> usize {
        let mut seen = vec![false; self.atoms.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            count += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(a) = stack.pop() {
                for (n, _) in self.neighbors(a) {
                    if !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        count
    }

    /// Marks atoms that lie on at least one cycle, i.e. touch a non-bridge bond.
    pub fn ring_atoms(&self) -> Vec<bool> {
        let n = self.atoms.len();
        let mut order = vec![usize::MAX; n];
        let mut low = vec![0usize; n];
        let mut in_ring = vec![false; n];
        let mut counter = 0;
        // Iterative bridge finding; frames are (atom, parent bond, next adjacency slot).
        for root in 0..n {
            if order[root] != usize::MAX {
                continue;
            }
            let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
            order[root] = counter;
            low[root] = counter;
            counter += 1;
            while let Some(frame) = stack.last_mut() {
                let (v, parent_bond, slot) = *frame;
                if slot < self.adjacency[v].len() {
                    frame.2 += 1;
                    let bi = self.adjacency[v][slot];
                    if bi == parent_bond {
                        continue;
                    }
                    let w = self.bonds[bi].other(v);
                    if order[w] == usize::MAX {
                        order[w] = counter;
                        low[w] = counter;
                        counter += 1;
                        stack.push((w, bi, 0));
                    } else {
                        low[v] = low[v].min(order[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[v]);
                        if low[v] <= order[p] {
                            // v's tree edge to p is not a bridge
                            in_ring[v] = true;
                            in_ring[p] = true;
                        }
                    }
                }
            }
        }
        in_ring
    }
}
