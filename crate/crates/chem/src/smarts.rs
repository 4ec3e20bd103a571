//! A SMARTS subset sufficient for atom typing tables.
//!
//! Supported: atomic numbers (`#n`), element symbols (uppercase aliphatic,
//! lowercase aromatic), `a`, `A`, `*`, total hydrogen count `H<n>`, total
//! connectivity `X<n>`, charges, the operators `!`, `&`, `,` and `;`, bonds
//! `- = # : ~` and branches. Ring closures and recursive SMARTS are not.
//! Matching runs on a graph with every hydrogen as its own node.

use crate::element::Element;
use crate::error::{ChemError, Result};
use crate::mol::{BondOrder, MolGraph};

#[derive(Debug, Clone, Copy)]
struct NodeView {
    z: u8,
    aromatic: bool,
    charge: i8,
    total_h: u8,
    connectivity: u8,
}

/// Molecule with hydrogens expanded into nodes. Heavy atoms keep their
/// indices from the source graph; hydrogens follow.
#[derive(Debug, Clone)]
pub struct ExplicitGraph {
    nodes: Vec<NodeView>,
    adj: Vec<Vec<(usize, BondOrder)>>,
}

impl ExplicitGraph {
    pub fn from_mol(mol: &MolGraph) -> Self {
        let n = mol.num_atoms();
        let mut nodes = Vec::with_capacity(n * 2);
        let mut adj: Vec<Vec<(usize, BondOrder)>> = Vec::with_capacity(n * 2);
        for (i, atom) in mol.atoms().iter().enumerate() {
            let h_neighbors = mol.neighbors(i).filter(|(j, _)| mol.atoms()[*j].element == Element::H).count();
            nodes.push(NodeView {
                z: atom.element.atomic_number(),
                aromatic: atom.aromatic,
                charge: atom.charge,
                total_h: atom.hydrogens + h_neighbors as u8,
                connectivity: (mol.degree(i) + atom.hydrogens as usize) as u8,
            });
            adj.push(mol.neighbors(i).collect());
        }
        for i in 0..n {
            for _ in 0..mol.atoms()[i].hydrogens {
                let h = nodes.len();
                nodes.push(NodeView { z: 1, aromatic: false, charge: 0, total_h: 0, connectivity: 1 });
                adj.push(vec![(i, BondOrder::Single)]);
                adj[i].push((h, BondOrder::Single));
            }
        }
        ExplicitGraph { nodes, adj }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn atomic_number(&self, node: usize) -> u8 {
        self.nodes[node].z
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Prim {
    AtomicNum(u8),
    Aromatic(bool),
    HCount(u8),
    Connectivity(u8),
    Charge(i8),
    Any,
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Prim(Prim),
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    fn eval(&self, n: &NodeView) -> bool {
        match self {
            Expr::Prim(p) => match *p {
                Prim::AtomicNum(z) => n.z == z,
                Prim::Aromatic(a) => n.aromatic == a,
                Prim::HCount(h) => n.total_h == h,
                Prim::Connectivity(x) => n.connectivity == x,
                Prim::Charge(c) => n.charge == c,
                Prim::Any => true,
            },
            Expr::Not(e) => !e.eval(n),
            Expr::And(es) => es.iter().all(|e| e.eval(n)),
            Expr::Or(es) => es.iter().any(|e| e.eval(n)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BondQuery {
    /// Unwritten bond: single or aromatic.
    Default,
    Single,
    Double,
    Triple,
    Aromatic,
    Any,
}

impl BondQuery {
    fn accepts(self, order: BondOrder) -> bool {
        match self {
            BondQuery::Default => matches!(order, BondOrder::Single | BondOrder::Aromatic),
            BondQuery::Single => order == BondOrder::Single,
            BondQuery::Double => order == BondOrder::Double,
            BondQuery::Triple => order == BondOrder::Triple,
            BondQuery::Aromatic => order == BondOrder::Aromatic,
            BondQuery::Any => true,
        }
    }
}

/// A tree-shaped pattern. Atom 0 is the root; every other atom has a parent
/// with a smaller index.
#[derive(Debug, Clone)]
pub struct SmartsPattern {
    source: String,
    atoms: Vec<Expr>,
    parents: Vec<Option<(usize, BondQuery)>>,
}

impl SmartsPattern {
    pub fn parse(source: &str) -> Result<Self> {
        Parser { src: source, bytes: source.as_bytes(), pos: 0 }.pattern()
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Whether the pattern matches with its first atom mapped onto `root`.
    pub fn matches_at(&self, graph: &ExplicitGraph, root: usize) -> bool {
        if !self.atoms[0].eval(&graph.nodes[root]) {
            return false;
        }
        let mut mapping = Vec::with_capacity(self.atoms.len());
        mapping.push(root);
        self.extend(graph, &mut mapping)
    }

    fn extend(&self, graph: &ExplicitGraph, mapping: &mut Vec<usize>) -> bool {
        let i = mapping.len();
        if i == self.atoms.len() {
            return true;
        }
        let (parent, bond) = self.parents[i].expect("non-root atoms have parents");
        for &(nb, order) in &graph.adj[mapping[parent]] {
            if mapping.contains(&nb) || !bond.accepts(order) || !self.atoms[i].eval(&graph.nodes[nb]) {
                continue;
            }
            mapping.push(nb);
            if self.extend(graph, mapping) {
                return true;
            }
            mapping.pop();
        }
        false
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> ChemError {
        ChemError::Pattern { pattern: self.src.to_string(), message: format!("{message} at {}", self.pos) }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.pos;
        while self.peek().is_some_and(|b| b.is_ascii_digit()) {
            self.pos += 1;
        }
        (self.pos > start).then(|| self.src[start..self.pos].parse().expect("digits"))
    }

    fn pattern(mut self) -> Result<SmartsPattern> {
        let mut atoms = Vec::new();
        let mut parents = Vec::new();
        let mut prev: Option<usize> = None;
        let mut stack = Vec::new();
        let mut bond: Option<BondQuery> = None;
        while let Some(b) = self.peek() {
            match b {
                b'(' => {
                    stack.push(prev.ok_or_else(|| self.err("branch before any atom"))?);
                    self.pos += 1;
                }
                b')' => {
                    prev = Some(stack.pop().ok_or_else(|| self.err("unbalanced ')'"))?);
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'~' => {
                    if bond.is_some() || prev.is_none() {
                        return Err(self.err("misplaced bond"));
                    }
                    bond = Some(match b {
                        b'-' => BondQuery::Single,
                        b'=' => BondQuery::Double,
                        b'#' => BondQuery::Triple,
                        b':' => BondQuery::Aromatic,
                        _ => BondQuery::Any,
                    });
                    self.pos += 1;
                }
                _ => {
                    let expr = if b == b'[' {
                        self.pos += 1;
                        let e = self.low_and()?;
                        if self.peek() != Some(b']') {
                            return Err(self.err("expected ']'"));
                        }
                        self.pos += 1;
                        e
                    } else {
                        self.bare_atom()?
                    };
                    parents.push(prev.map(|p| (p, bond.take().unwrap_or(BondQuery::Default))));
                    atoms.push(expr);
                    prev = Some(atoms.len() - 1);
                }
            }
        }
        if !stack.is_empty() || bond.is_some() || atoms.is_empty() {
            return Err(self.err("incomplete pattern"));
        }
        Ok(SmartsPattern { source: self.src.to_string(), atoms, parents })
    }

    fn bare_atom(&mut self) -> Result<Expr> {
        let rest = &self.src[self.pos..];
        for (sym, len) in [("Cl", 2), ("Br", 2)] {
            if rest.starts_with(sym) {
                self.pos += len;
                return Ok(element_expr(Element::from_symbol(sym).unwrap(), false));
            }
        }
        let b = self.peek().unwrap();
        self.pos += 1;
        Ok(match b {
            b'*' => Expr::Prim(Prim::Any),
            b'a' => Expr::Prim(Prim::Aromatic(true)),
            b'A' => Expr::Prim(Prim::Aromatic(false)),
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => {
                element_expr(Element::from_symbol(&(b as char).to_string()).unwrap(), false)
            }
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                element_expr(Element::from_symbol(&(b.to_ascii_uppercase() as char).to_string()).unwrap(), true)
            }
            _ => {
                self.pos -= 1;
                return Err(self.err("unsupported atom"));
            }
        })
    }

    fn low_and(&mut self) -> Result<Expr> {
        let mut terms = vec![self.or()?];
        while self.peek() == Some(b';') {
            self.pos += 1;
            terms.push(self.or()?);
        }
        Ok(collapse(terms, Expr::And))
    }

    fn or(&mut self) -> Result<Expr> {
        let mut terms = vec![self.high_and()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            terms.push(self.high_and()?);
        }
        Ok(collapse(terms, Expr::Or))
    }

    fn high_and(&mut self) -> Result<Expr> {
        let mut terms = vec![self.unary()?];
        loop {
            match self.peek() {
                Some(b'&') => {
                    self.pos += 1;
                    terms.push(self.unary()?);
                }
                Some(b';' | b',' | b']') | None => break,
                Some(_) => terms.push(self.unary()?),
            }
        }
        Ok(collapse(terms, Expr::And))
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(b'!') {
            self.pos += 1;
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.primitive()
    }

    fn primitive(&mut self) -> Result<Expr> {
        let b = self.peek().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        let prim = match b {
            b'#' => Prim::AtomicNum(self.number().ok_or_else(|| self.err("expected atomic number"))? as u8),
            b'H' => Prim::HCount(self.number().unwrap_or(1) as u8),
            b'X' => Prim::Connectivity(self.number().unwrap_or(1) as u8),
            b'a' => Prim::Aromatic(true),
            b'A' => Prim::Aromatic(false),
            b'*' => Prim::Any,
            b'+' | b'-' => {
                let sign: i8 = if b == b'+' { 1 } else { -1 };
                let magnitude = match self.number() {
                    Some(n) => n as i8,
                    None => {
                        let mut m = 1;
                        while self.peek() == Some(b) {
                            self.pos += 1;
                            m += 1;
                        }
                        m
                    }
                };
                Prim::Charge(sign * magnitude)
            }
            b'A'..=b'Z' => {
                let two = self
                    .peek()
                    .filter(u8::is_ascii_lowercase)
                    .and_then(|c| Element::from_symbol(&format!("{}{}", b as char, c as char)));
                let e = match two {
                    Some(e) => {
                        self.pos += 1;
                        e
                    }
                    None => Element::from_symbol(&(b as char).to_string()).ok_or_else(|| self.err("unknown element"))?,
                };
                return Ok(element_expr(e, false));
            }
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                let e = Element::from_symbol(&(b.to_ascii_uppercase() as char).to_string()).unwrap();
                return Ok(element_expr(e, true));
            }
            _ => {
                self.pos -= 1;
                return Err(self.err("unsupported primitive"));
            }
        };
        Ok(Expr::Prim(prim))
    }
}

fn element_expr(e: Element, aromatic: bool) -> Expr {
    Expr::And(vec![Expr::Prim(Prim::AtomicNum(e.atomic_number())), Expr::Prim(Prim::Aromatic(aromatic))])
}

fn collapse(mut terms: Vec<Expr>, wrap: fn(Vec<Expr>) -> Expr) -> Expr {
    if terms.len() == 1 {
        terms.pop().unwrap()
    } else {
        wrap(terms)
    }
}
