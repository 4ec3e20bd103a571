//! Token vocabulary with reserved start, stop and padding ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{NeuralError, Result};

pub const START: u32 = 0;
pub const STOP: u32 = 1;
pub const PAD: u32 = 2;

const RESERVED: [&str; 3] = ["<start>", "<stop>", "<pad>"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Reserved tokens first, then the distinct corpus tokens in sorted order.
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen: Vec<&str> = tokens.into_iter().collect();
        seen.sort_unstable();
        seen.dedup();
        let all = RESERVED.iter().copied().chain(seen.into_iter().filter(|t| !RESERVED.contains(t)));
        Self::try_from(all.map(str::to_string).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<u32>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| NeuralError::InvalidArgument(format!("token {:?} not in vocabulary", t.as_ref())))
            })
            .collect()
    }

    /// Concatenate the non-reserved tokens.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter().filter(|&&i| i > PAD).filter_map(|&i| self.token(i)).collect()
    }

    pub fn is_reserved(id: u32) -> bool {
        id <= PAD
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = NeuralError;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 {
            return Err(NeuralError::InvalidArgument(format!("vocabulary needs at least 4 tokens, got {}", tokens.len())));
        }
        if tokens[..3] != RESERVED {
            return Err(NeuralError::InvalidArgument("vocabulary must start with <start>, <stop>, <pad>".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(NeuralError::InvalidArgument(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}
