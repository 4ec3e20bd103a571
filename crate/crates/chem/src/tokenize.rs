//! Atom-wise SMILES tokenization.
//!
//! Bracket atoms are single tokens, as are the two-letter organic symbols
//! `Cl` and `Br` and two-digit ring closures written `%NN`. Everything else
//! is one character per token. Concatenating the tokens gives back the input.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizeError {
    #[error("unterminated bracket atom starting at {position}")]
    UnterminatedBracket { position: usize },
    #[error("unexpected character {ch:?} at {position}")]
    UnexpectedChar { ch: char, position: usize },
    #[error("ring closure '%' at {position} needs two digits")]
    MalformedRingClosure { position: usize },
}

impl TokenizeError {
    pub fn position(&self) -> usize {
        match *self {
            TokenizeError::UnterminatedBracket { position }
            | TokenizeError::UnexpectedChar { position, .. }
            | TokenizeError::MalformedRingClosure { position } => position,
        }
    }
}

const SINGLE: &str = "BCNOSPFIbcnops()[]=#-+\\/:~@?>*$.0123456789";

/// Split `text` into atom-level tokens.
pub fn tokenize_smiles(text: &str) -> Result<Vec<&str>, TokenizeError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::with_capacity(text.len());
    let mut i = 0;
    while i < bytes.len() {
        let len = match bytes[i] {
            b'[' => match bytes[i + 1..].iter().position(|&b| b == b']') {
                Some(close) if !bytes[i + 1..i + 1 + close].contains(&b'[') => close + 2,
                _ => return Err(TokenizeError::UnterminatedBracket { position: i }),
            },
            b'C' if bytes.get(i + 1) == Some(&b'l') => 2,
            b'B' if bytes.get(i + 1) == Some(&b'r') => 2,
            b'%' => {
                if bytes.len() >= i + 3 && bytes[i + 1].is_ascii_digit() && bytes[i + 2].is_ascii_digit() {
                    3
                } else {
                    return Err(TokenizeError::MalformedRingClosure { position: i });
                }
            }
            b']' => return Err(TokenizeError::UnexpectedChar { ch: ']', position: i }),
            b if b.is_ascii() && SINGLE.as_bytes().contains(&b) => 1,
            _ => {
                let ch = text[i..].chars().next().unwrap_or('\u{fffd}');
                return Err(TokenizeError::UnexpectedChar { ch, position: i });
            }
        };
        tokens.push(&text[i..i + len]);
        i += len;
    }
    Ok(tokens)
}
