//! SMILES parsing with validity checks.
//!
//! A string is valid when it tokenizes, every ring closure is paired,
//! parentheses balance, each atom is a supported element within its allowed
//! valence, and every aromatic atom sits on a ring. Aromatic systems are not
//! kekulized: an aromatic bond counts as one unit of valence and pi-donor
//! atoms (b, c, n, p) add one more when their valence has room for it.

use std::collections::HashMap;

use thiserror::Error;

use crate::element::Element;
use crate::mol::{Atom, Bond, BondOrder, MolGraph};
use crate::tokenize::{tokenize_smiles, TokenizeError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InvalidityReason {
    #[error("empty string")]
    Empty,
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("unsupported token {0:?}")]
    UnsupportedToken(String),
    #[error("unknown element {0:?}")]
    UnknownElement(String),
    #[error("malformed bracket atom {0:?}")]
    MalformedBracket(String),
    #[error("ring closure {0} is never closed")]
    UnpairedRingClosure(u16),
    #[error("ring closure bond symbols disagree")]
    ConflictingRingBond,
    #[error("ring closure bonds an atom to itself")]
    SelfBond,
    #[error("atoms are already bonded")]
    DuplicateBond,
    #[error("unbalanced parentheses")]
    UnbalancedParentheses,
    #[error("empty branch")]
    EmptyBranch,
    #[error("bond symbol without an atom on both sides")]
    DanglingBond,
    #[error("{element} with charge {charge} cannot have valence {valence}")]
    Valence { element: Element, charge: i8, valence: u8 },
    #[error("aromatic atom outside a ring")]
    AromaticOutsideRing,
}

/// Why a string failed to parse, and at which byte offset when known.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason}{}", position.map(|p| format!(" at {p}")).unwrap_or_default())]
pub struct Invalidity {
    pub reason: InvalidityReason,
    pub position: Option<usize>,
}

impl Invalidity {
    fn at(reason: InvalidityReason, position: usize) -> Self {
        Invalidity { reason, position: Some(position) }
    }
}

struct PendingAtom {
    atom: Atom,
    /// Bracket atoms carry explicit hydrogen counts; organic-subset atoms get
    /// implicit hydrogens once all bonds are known.
    bracket: bool,
    position: usize,
}

#[derive(Clone, Copy)]
enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondSymbol {
    fn order(self) -> BondOrder {
        match self {
            BondSymbol::Single => BondOrder::Single,
            BondSymbol::Double => BondOrder::Double,
            BondSymbol::Triple => BondOrder::Triple,
            BondSymbol::Aromatic => BondOrder::Aromatic,
        }
    }
}

struct Builder {
    atoms: Vec<PendingAtom>,
    bonds: Vec<Bond>,
}

impl Builder {
    fn add_bond(&mut self, a: usize, b: usize, symbol: Option<BondSymbol>, pos: usize) -> Result<(), Invalidity> {
        if a == b {
            return Err(Invalidity::at(InvalidityReason::SelfBond, pos));
        }
        if self.bonds.iter().any(|bd| (bd.a == a && bd.b == b) || (bd.a == b && bd.b == a)) {
            return Err(Invalidity::at(InvalidityReason::DuplicateBond, pos));
        }
        let order = match symbol {
            Some(s) => s.order(),
            None if self.atoms[a].atom.aromatic && self.atoms[b].atom.aromatic => BondOrder::Aromatic,
            None => BondOrder::Single,
        };
        self.bonds.push(Bond { a, b, order });
        Ok(())
    }
}

/// Parse a SMILES string into a molecular graph.
pub fn parse_smiles(text: &str) -> Result<MolGraph, Invalidity> {
    if text.is_empty() {
        return Err(Invalidity { reason: InvalidityReason::Empty, position: None });
    }
    let tokens = tokenize_smiles(text).map_err(|e| {
        let p = e.position();
        Invalidity::at(InvalidityReason::Tokenize(e), p)
    })?;

    let mut b = Builder { atoms: Vec::new(), bonds: Vec::new() };
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondSymbol, usize)> = None;
    // Stack of branch points; the flag records whether the branch has an atom yet.
    let mut branches: Vec<(Option<usize>, bool, usize)> = Vec::new();
    let mut rings: HashMap<u16, (usize, Option<BondSymbol>, usize)> = HashMap::new();

    let mut pos = 0;
    for tok in tokens {
        let here = pos;
        pos += tok.len();
        let first = tok.as_bytes()[0];
        match first {
            b'[' => {
                let atom = parse_bracket(tok).map_err(|r| Invalidity::at(r, here))?;
                push_atom(&mut b, &mut prev, &mut pending, &mut branches, PendingAtom { atom, bracket: true, position: here })?;
            }
            b'(' => {
                if prev.is_none() {
                    return Err(Invalidity::at(InvalidityReason::UnbalancedParentheses, here));
                }
                if pending.is_some() {
                    return Err(Invalidity::at(InvalidityReason::DanglingBond, here));
                }
                if let Some(top) = branches.last() {
                    if !top.1 {
                        return Err(Invalidity::at(InvalidityReason::EmptyBranch, here));
                    }
                }
                branches.push((prev, false, here));
            }
            b')' => {
                if pending.is_some() {
                    return Err(Invalidity::at(InvalidityReason::DanglingBond, here));
                }
                match branches.pop() {
                    Some((_, false, _)) => return Err(Invalidity::at(InvalidityReason::EmptyBranch, here)),
                    Some((root, true, _)) => prev = root,
                    None => return Err(Invalidity::at(InvalidityReason::UnbalancedParentheses, here)),
                }
            }
            b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                if pending.is_some() || prev.is_none() {
                    return Err(Invalidity::at(InvalidityReason::DanglingBond, here));
                }
                let sym = match first {
                    b'=' => BondSymbol::Double,
                    b'#' => BondSymbol::Triple,
                    b':' => BondSymbol::Aromatic,
                    _ => BondSymbol::Single,
                };
                pending = Some((sym, here));
            }
            b'.' => {
                if pending.is_some() || prev.is_none() || branches.last().is_some_and(|t| !t.1) {
                    return Err(Invalidity::at(InvalidityReason::DanglingBond, here));
                }
                if !branches.is_empty() {
                    return Err(Invalidity::at(InvalidityReason::UnsupportedToken(".".into()), here));
                }
                prev = None;
            }
            b'0'..=b'9' | b'%' => {
                let Some(atom) = prev else {
                    return Err(Invalidity::at(InvalidityReason::DanglingBond, here));
                };
                let digits = tok.trim_start_matches('%');
                let label: u16 = digits.parse().expect("tokenizer yields digits");
                let sym = pending.take().map(|(s, _)| s);
                match rings.remove(&label) {
                    Some((open_atom, open_sym, _)) => {
                        let symbol = match (open_sym, sym) {
                            (Some(a), Some(c)) if a.order() != c.order() => {
                                return Err(Invalidity::at(InvalidityReason::ConflictingRingBond, here))
                            }
                            (Some(a), _) => Some(a),
                            (None, c) => c,
                        };
                        b.add_bond(open_atom, atom, symbol, here)?;
                    }
                    None => {
                        rings.insert(label, (atom, sym, here));
                    }
                }
            }
            _ => {
                let (element, aromatic) = organic_atom(tok).ok_or_else(|| {
                    Invalidity::at(InvalidityReason::UnsupportedToken(tok.to_string()), here)
                })?;
                let atom = Atom { element, aromatic, charge: 0, hydrogens: 0 };
                push_atom(&mut b, &mut prev, &mut pending, &mut branches, PendingAtom { atom, bracket: false, position: here })?;
            }
        }
    }

    if let Some((_, p)) = pending {
        return Err(Invalidity::at(InvalidityReason::DanglingBond, p));
    }
    if let Some(&(_, _, p)) = branches.last() {
        return Err(Invalidity::at(InvalidityReason::UnbalancedParentheses, p));
    }
    if let Some((&label, &(_, _, p))) = rings.iter().min_by_key(|(_, v)| v.2) {
        return Err(Invalidity::at(InvalidityReason::UnpairedRingClosure(label), p));
    }

    finish(b)
}

fn push_atom(
    b: &mut Builder,
    prev: &mut Option<usize>,
    pending: &mut Option<(BondSymbol, usize)>,
    branches: &mut [(Option<usize>, bool, usize)],
    atom: PendingAtom,
) -> Result<(), Invalidity> {
    let pos = atom.position;
    let idx = b.atoms.len();
    b.atoms.push(atom);
    let sym = pending.take().map(|(s, _)| s);
    if let Some(p) = *prev {
        b.add_bond(p, idx, sym, pos)?;
    }
    if let Some(top) = branches.last_mut() {
        top.1 = true;
    }
    *prev = Some(idx);
    Ok(())
}

fn organic_atom(tok: &str) -> Option<(Element, bool)> {
    let aromatic = tok.as_bytes()[0].is_ascii_lowercase();
    let element = if aromatic {
        let mut upper = tok.to_string();
        upper[..1].make_ascii_uppercase();
        Element::from_symbol(&upper)?
    } else {
        Element::from_symbol(tok)?
    };
    if !element.in_organic_subset() || (aromatic && !element.can_be_aromatic()) {
        return None;
    }
    Some((element, aromatic))
}

fn parse_bracket(tok: &str) -> Result<Atom, InvalidityReason> {
    let malformed = || InvalidityReason::MalformedBracket(tok.to_string());
    let body = &tok[1..tok.len() - 1];
    let bytes = body.as_bytes();
    let mut i = 0;
    // isotope
    while i < bytes.len() && bytes[i].is_ascii_digit() {
        i += 1;
    }
    // element symbol
    let (element, aromatic) = if i < bytes.len() && bytes[i].is_ascii_uppercase() {
        let two = (i + 1 < bytes.len() && bytes[i + 1].is_ascii_lowercase())
            .then(|| Element::from_symbol(&body[i..i + 2]))
            .flatten();
        match two {
            Some(e) => {
                i += 2;
                (e, false)
            }
            None => {
                let one = Element::from_symbol(&body[i..i + 1]);
                let e = one.ok_or_else(|| InvalidityReason::UnknownElement(body[i..].chars().take(2).collect()))?;
                if i + 1 < bytes.len() && bytes[i + 1].is_ascii_lowercase() {
                    return Err(InvalidityReason::UnknownElement(body[i..i + 2].to_string()));
                }
                i += 1;
                (e, false)
            }
        }
    } else if i < bytes.len() && bytes[i].is_ascii_lowercase() {
        let e = if body[i..].starts_with("se") {
            i += 2;
            Element::Se
        } else {
            let mut up = body[i..i + 1].to_string();
            up.make_ascii_uppercase();
            i += 1;
            Element::from_symbol(&up).ok_or_else(malformed)?
        };
        if !e.can_be_aromatic() {
            return Err(malformed());
        }
        (e, true)
    } else {
        return Err(malformed());
    };
    // chirality
    while i < bytes.len() && (bytes[i] == b'@' || (i > 0 && bytes[i - 1] == b'@' && bytes[i].is_ascii_uppercase() && bytes[i] != b'H')) {
        i += 1;
    }
    // hydrogens
    let mut hydrogens = 0u8;
    if i < bytes.len() && bytes[i] == b'H' {
        i += 1;
        hydrogens = 1;
        if i < bytes.len() && bytes[i].is_ascii_digit() {
            hydrogens = bytes[i] - b'0';
            i += 1;
        }
    }
    // charge
    let mut charge: i8 = 0;
    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
        let sign: i8 = if bytes[i] == b'+' { 1 } else { -1 };
        let c = bytes[i];
        i += 1;
        let mut mag = 1i8;
        if i < bytes.len() && bytes[i].is_ascii_digit() {
            mag = (bytes[i] - b'0') as i8;
            i += 1;
        } else {
            while i < bytes.len() && bytes[i] == c {
                mag += 1;
                i += 1;
            }
        }
        charge = sign * mag;
    }
    // atom class
    if i < bytes.len() && bytes[i] == b':' {
        i += 1;
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err(malformed());
        }
    }
    if i != bytes.len() {
        return Err(malformed());
    }
    if element == Element::H && hydrogens > 0 {
        return Err(malformed());
    }
    Ok(Atom { element, aromatic, charge, hydrogens })
}

fn finish(b: Builder) -> Result<MolGraph, Invalidity> {
    let mut bond_sum = vec![0u8; b.atoms.len()];
    for bond in &b.bonds {
        bond_sum[bond.a] = bond_sum[bond.a].saturating_add(bond.order.valence());
        bond_sum[bond.b] = bond_sum[bond.b].saturating_add(bond.order.valence());
    }
    let mut atoms = Vec::with_capacity(b.atoms.len());
    let mut positions = Vec::with_capacity(b.atoms.len());
    for (idx, pa) in b.atoms.into_iter().enumerate() {
        let mut atom = pa.atom;
        let allowed = atom.element.allowed_valences(atom.charge);
        let s = bond_sum[idx];
        let pi_options: &[u8] = if atom.aromatic && atom.element.aromatic_pi_donor() { &[1, 0] } else { &[0] };
        let invalid = |valence: u8| {
            Invalidity::at(InvalidityReason::Valence { element: atom.element, charge: atom.charge, valence }, pa.position)
        };
        if pa.bracket {
            let used = s.saturating_add(atom.hydrogens);
            let max = allowed.iter().copied().max();
            if max.is_none_or(|m| used > m) {
                return Err(invalid(used));
            }
        } else {
            let mut h = None;
            'search: for &pi in pi_options {
                for &v in allowed {
                    if v >= s + pi {
                        h = Some(v - s - pi);
                        break 'search;
                    }
                }
            }
            atom.hydrogens = h.ok_or_else(|| invalid(s))?;
        }
        atoms.push(atom);
        positions.push(pa.position);
    }
    let graph = MolGraph::new(atoms, b.bonds);
    let in_ring = graph.ring_atoms();
    for (i, atom) in graph.atoms().iter().enumerate() {
        if atom.aromatic && !in_ring[i] {
            return Err(Invalidity::at(InvalidityReason::AromaticOutsideRing, positions[i]));
        }
    }
    Ok(graph)
}
