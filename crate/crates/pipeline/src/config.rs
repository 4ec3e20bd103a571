//! Versioned TOML run configuration. Every section is optional; command
//! line flags override file values.

use std::fs;
use std::path::{Path, PathBuf};

use era_chem::{EnergySpec, ExternalProperties, PropertyContext};
use era_neural::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::align::AlignMode;
use crate::corpus::Family;
use crate::error::{PipelineError, Result};
use crate::metrics::MetricsConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub tabular: TabularSection,
    #[serde(default)]
    pub corpus: CorpusSection,
    #[serde(default)]
    pub pretrain: PretrainSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub align: AlignSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub metrics: MetricsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelConfig::default(),
            tabular: TabularSection::default(),
            corpus: CorpusSection::default(),
            pretrain: PretrainSection::default(),
            dataset: DatasetSection::default(),
            align: AlignSection::default(),
            sample: SampleSection::default(),
            metrics: MetricsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TabularSection {
    pub instances: usize,
    pub output: Option<PathBuf>,
}

impl Default for TabularSection {
    fn default() -> Self {
        TabularSection { instances: 50, output: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSection {
    pub family: Family,
    pub size: usize,
    pub output: Option<PathBuf>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection { family: Family::Mixed, size: 2000, output: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainSection {
    /// SMILES file, one molecule per line.
    pub corpus: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Start from this checkpoint instead of fresh weights.
    pub init: Option<PathBuf>,
    /// Fine-tune `init` for prompted generation on single-token
    /// perturbations of the corpus molecules.
    pub prompted: bool,
}

impl Default for PretrainSection {
    fn default() -> Self {
        PretrainSection {
            corpus: None,
            output: None,
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-4,
            init: None,
            prompted: false,
        }
    }
}

/// Where prompts come from: a SMILES file, or `unprompted` groups that
/// each start from the start token alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSource {
    pub prompts: Option<PathBuf>,
    pub unprompted: Option<usize>,
}

impl PromptSource {
    pub fn load(&self) -> Result<crate::text::PromptSet> {
        match (&self.prompts, self.unprompted) {
            (Some(p), None) => crate::text::PromptSet::from_path(p),
            (None, Some(n)) => crate::text::PromptSet::unprompted(n),
            (None, None) => crate::text::PromptSet::unprompted(1),
            (Some(_), Some(_)) => Err(PipelineError::config("set either a prompts file or unprompted, not both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub prompts: PromptSource,
    /// Samples per prompt; every unordered pair becomes a record.
    pub k: usize,
    pub temperature: f64,
    pub energy: Option<EnergySpec>,
    /// CSV of externally computed properties (smiles,property_name,value).
    pub properties_csv: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            checkpoint: None,
            prompts: PromptSource::default(),
            k: 4,
            temperature: 1.0,
            energy: None,
            properties_csv: None,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: AlignMode,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Grid of inverse temperatures; each combination with `gamma` runs
    /// independently.
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub dpo_temperature: f64,
}

impl Default for AlignSection {
    fn default() -> Self {
        let d = crate::align::AlignConfig::default();
        AlignSection {
            checkpoint: None,
            dataset: None,
            output: None,
            mode: d.mode,
            epochs: d.epochs,
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            beta: vec![d.beta],
            gamma: vec![d.gamma],
            dpo_temperature: d.dpo_temperature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub checkpoint: Option<PathBuf>,
    #[serde(flatten)]
    pub prompts: PromptSource,
    pub n: usize,
    pub temperature: f64,
    pub output: Option<PathBuf>,
}

impl Default for SampleSection {
    fn default() -> Self {
        SampleSection { checkpoint: None, prompts: PromptSource::default(), n: 10, temperature: 1.0, output: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub checkpoint: Option<PathBuf>,
    /// Reference checkpoint for per-prompt deltas.
    pub reference: Option<PathBuf>,
    #[serde(flatten)]
    pub prompts: PromptSource,
    #[serde(flatten)]
    pub settings: MetricsConfig,
    pub properties_csv: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(PipelineError::config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        cfg.model.validate().map_err(|e| PipelineError::config(e.to_string()))?;
        if let Some(spec) = &cfg.dataset.energy {
            spec.validate()?;
        }
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| PipelineError::io(format!("reading {}", path.display()), e))?;
        Self::from_toml(&text).map_err(|e| match e {
            PipelineError::Config(m) => PipelineError::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Bundled atom contributions plus optional external property values.
pub fn property_context(csv: Option<&Path>) -> Result<PropertyContext> {
    match csv {
        Some(p) => Ok(PropertyContext::with_external(ExternalProperties::from_path(p)?)),
        None => Ok(PropertyContext::default()),
    }
}

/// The path or a configuration error naming the missing setting.
pub fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    value.as_deref().ok_or_else(|| PipelineError::config(format!("{what} is not set")))
}
