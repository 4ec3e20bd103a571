//! Versioned JSON checkpoints holding the config, vocabulary and named tensors.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{NeuralError, Result};
use crate::params::ParamStore;
use crate::policy::NeuralPolicy;
use crate::vocab::Vocabulary;

pub const FORMAT: &str = "era-neural-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    config: ModelConfig,
    vocab: Vocabulary,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: BTreeMap<String, TensorData>,
}

/// A policy plus free-form string metadata such as the training seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new(vocab: Vocabulary, params: ParamStore) -> Result<Self> {
        if vocab.len() != params.vocab_size {
            return Err(NeuralError::Checkpoint(format!(
                "vocabulary has {} tokens but the model expects {}",
                vocab.len(),
                params.vocab_size
            )));
        }
        Ok(Checkpoint { vocab, params, metadata: BTreeMap::new() })
    }

    pub fn from_policy(policy: &NeuralPolicy) -> Self {
        Checkpoint { vocab: policy.vocab.clone(), params: policy.params.clone(), metadata: BTreeMap::new() }
    }

    pub fn into_policy(self) -> Result<NeuralPolicy> {
        NeuralPolicy::new(self.vocab, self.params)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let tensors = self
            .params
            .names()
            .into_iter()
            .zip(self.params.tensors())
            .map(|(name, t)| {
                let (r, c) = t.dim();
                (name, TensorData { shape: [r, c], data: t.iter().copied().collect() })
            })
            .collect();
        let doc = Document {
            format: FORMAT.into(),
            version: VERSION,
            config: self.params.config,
            vocab: self.vocab.clone(),
            metadata: self.metadata.clone(),
            tensors,
        };
        let mut w = BufWriter::new(writer);
        serde_json::to_writer(&mut w, &doc)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(reader: impl Read) -> Result<Self> {
        let doc: Document = serde_json::from_reader(BufReader::new(reader))
            .map_err(|e| NeuralError::Checkpoint(format!("malformed checkpoint: {e}")))?;
        if doc.format != FORMAT {
            return Err(NeuralError::Checkpoint(format!("unknown format {:?}", doc.format)));
        }
        if doc.version != VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported version {} (expected {VERSION})", doc.version)));
        }
        doc.config.validate()?;
        let vocab_size = doc.vocab.len();
        let expected = ParamStore::expected_shapes(&doc.config, vocab_size);
        if doc.tensors.len() != expected.len() {
            return Err(NeuralError::Checkpoint(format!(
                "found {} tensors, expected {}",
                doc.tensors.len(),
                expected.len()
            )));
        }
        let mut arrays = Vec::with_capacity(expected.len());
        let mut tensors = doc.tensors;
        for (name, (r, c)) in expected {
            let t = tensors.remove(&name).ok_or_else(|| NeuralError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != [r, c] || t.data.len() != r * c {
                return Err(NeuralError::Checkpoint(format!(
                    "tensor {name} has shape {:?} with {} values, expected [{r}, {c}]",
                    t.shape,
                    t.data.len()
                )));
            }
            arrays.push(Array2::from_shape_vec((r, c), t.data).expect("shape checked"));
        }
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let mut params = ParamStore::init(doc.config, vocab_size, &mut rng)?;
        for (slot, a) in params.tensors_mut().into_iter().zip(arrays) {
            *slot = a;
        }
        if !params.all_finite() {
            return Err(NeuralError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Checkpoint { vocab: doc.vocab, params, metadata: doc.metadata })
    }

    /// Write atomically: the file is replaced only after a complete write.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        self.write_to(fs::File::create(&tmp)?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(fs::File::open(path)?)
    }
}
