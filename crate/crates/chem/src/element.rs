//! Supported elements and their valence rules.

use serde::{Deserialize, Serialize};

/// Elements the parser accepts. Every one of them has a Crippen atom type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Element {
    H,
    Li,
    B,
    C,
    N,
    O,
    F,
    Na,
    Si,
    P,
    S,
    Cl,
    K,
    Se,
    Br,
    I,
}

const ALL: [Element; 16] = [
    Element::H,
    Element::Li,
    Element::B,
    Element::C,
    Element::N,
    Element::O,
    Element::F,
    Element::Na,
    Element::Si,
    Element::P,
    Element::S,
    Element::Cl,
    Element::K,
    Element::Se,
    Element::Br,
    Element::I,
];

impl Element {
    pub fn atomic_number(self) -> u8 {
        match self {
            Element::H => 1,
            Element::Li => 3,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Na => 11,
            Element::Si => 14,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::K => 19,
            Element::Se => 34,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    pub fn from_atomic_number(z: u8) -> Option<Element> {
        ALL.into_iter().find(|e| e.atomic_number() == z)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::Li => "Li",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Na => "Na",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::K => "K",
            Element::Se => "Se",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    pub fn from_symbol(symbol: &str) -> Option<Element> {
        ALL.into_iter().find(|e| e.symbol() == symbol)
    }

    /// Elements that may be written without brackets.
    pub fn in_organic_subset(self) -> bool {
        matches!(
            self,
            Element::B
                | Element::C
                | Element::N
                | Element::O
                | Element::P
                | Element::S
                | Element::F
                | Element::Cl
                | Element::Br
                | Element::I
        )
    }

    /// Elements allowed as lowercase aromatic atoms.
    pub fn can_be_aromatic(self) -> bool {
        matches!(self, Element::B | Element::C | Element::N | Element::O | Element::P | Element::S | Element::Se)
    }

    /// Aromatic atoms of these elements contribute one electron to a ring
    /// double bond when their valence allows it (pyridine-like).
    pub(crate) fn aromatic_pi_donor(self) -> bool {
        matches!(self, Element::B | Element::C | Element::N | Element::P)
    }

    fn neutral_valences(self) -> &'static [u8] {
        match self {
            Element::H | Element::Li | Element::Na | Element::K => &[1],
            Element::F | Element::Cl | Element::Br | Element::I => &[1],
            Element::B => &[3],
            Element::C | Element::Si => &[4],
            Element::N => &[3],
            Element::O => &[2],
            Element::P => &[3, 5],
            Element::S | Element::Se => &[2, 4, 6],
        }
    }

    /// Allowed total valences (bond orders plus hydrogens) for a given formal
    /// charge. Charged main-group atoms take the valences of the
    /// isoelectronic neutral element; charged alkali metals are bare ions.
    pub fn allowed_valences(self, charge: i8) -> &'static [u8] {
        if charge == 0 {
            return self.neutral_valences();
        }
        if matches!(self, Element::Li | Element::Na | Element::K) {
            return if charge == 1 { &[0] } else { &[] };
        }
        if self == Element::H {
            return if charge.abs() == 1 { &[0] } else { &[] };
        }
        // Only shift within the same row of the table.
        let shifted = self.atomic_number() as i16 - charge as i16;
        let (valences, row): (&'static [u8], u8) = match shifted {
            5 => (&[3], 2),
            6 => (&[4], 2),
            7 => (&[3], 2),
            8 => (&[2], 2),
            9 => (&[1], 2),
            10 => (&[0], 2),
            14 => (&[4], 3),
            15 => (&[3, 5], 3),
            16 => (&[2, 4, 6], 3),
            17 => (&[1], 3),
            18 => (&[0], 3),
            33 => (&[3, 5], 4),
            34 => (&[2, 4, 6], 4),
            35 => (&[1], 4),
            36 => (&[0], 4),
            52 => (&[2, 4, 6], 5),
            53 => (&[1], 5),
            54 => (&[0], 5),
            _ => return &[],
        };
        if row == period(self) {
            valences
        } else {
            &[]
        }
    }
}

fn period(e: Element) -> u8 {
    match e.atomic_number() {
        1..=2 => 1,
        3..=10 => 2,
        11..=18 => 3,
        19..=36 => 4,
        _ => 5,
    }
}

impl std::fmt::Display for Element {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}
