//! SMILES strings to token ids and back, and prompt sets.

use std::fs;
use std::path::Path;

use era_chem::{parse_smiles, tokenize_smiles};
use era_neural::Vocabulary;

use crate::error::{PipelineError, Result};

/// Vocabulary over the atom-level tokens of `corpus`.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[S]) -> Result<Vocabulary> {
    let mut tokens: Vec<String> = Vec::new();
    for s in corpus {
        let toks = tokenize_smiles(s.as_ref())
            .map_err(|e| PipelineError::config(format!("corpus entry {:?}: {e}", s.as_ref())))?;
        tokens.extend(toks.into_iter().map(str::to_string));
    }
    Ok(Vocabulary::from_tokens(tokens.iter().map(String::as_str))?)
}

/// Token ids of `smiles`. Tokens outside the vocabulary are a configuration
/// error: the model was trained on a different token set.
pub fn encode_smiles(vocab: &Vocabulary, smiles: &str) -> Result<Vec<u32>> {
    let toks = tokenize_smiles(smiles).map_err(|e| PipelineError::config(format!("{smiles:?}: {e}")))?;
    vocab
        .encode(&toks)
        .map_err(|e| PipelineError::config(format!("{smiles:?} does not fit the model vocabulary: {e}")))
}

pub fn decode_smiles(vocab: &Vocabulary, ids: &[u32]) -> String {
    vocab.decode(ids)
}

/// Read one SMILES per line, skipping blank lines and `#` comments.
pub fn read_smiles_file(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
    Ok(parse_lines(&text))
}

fn parse_lines(text: &str) -> Vec<String> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_string).collect()
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| PipelineError::io(format!("writing {}", path.display()), e))
}

/// Prompts drawn uniformly. The empty string is the unprompted case, where
/// generation starts from the start token alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    prompts: Vec<String>,
}

impl PromptSet {
    /// Prompt molecules, each of which must parse.
    pub fn new(prompts: Vec<String>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(PipelineError::config("prompt set is empty"));
        }
        for p in prompts.iter().filter(|p| !p.is_empty()) {
            parse_smiles(p).map_err(|e| PipelineError::config(format!("prompt {p:?} is not a valid molecule: {e}")))?;
        }
        Ok(PromptSet { prompts })
    }

    /// `groups` copies of the empty prompt; each copy gets its own samples.
    pub fn unprompted(groups: usize) -> Result<Self> {
        Self::new(vec![String::new(); groups])
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_smiles_file(path)?)
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    pub fn is_prompted(&self) -> bool {
        self.prompts.iter().any(|p| !p.is_empty())
    }

    pub fn encode(&self, vocab: &Vocabulary) -> Result<Vec<Vec<u32>>> {
        self.prompts.iter().map(|p| if p.is_empty() { Ok(Vec::new()) } else { encode_smiles(vocab, p) }).collect()
    }
}
