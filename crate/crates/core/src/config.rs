//! Pipeline configuration: a TOML file plus `key=value` overrides, resolved
//! into absolute paths, dataset-family defaults and per-stage seeds.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::ProviderSpec;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::generator::GeneratorConfig;
use crate::reasoner::EndpointConfig;
use crate::seed::derive_seed;
use crate::supervision::NegativeSamplingConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFamily {
    /// Two-hop default.
    #[default]
    Webqsp,
    /// Three-hop default.
    Cwq,
    /// Hop count must match the split, so `max_hop` is required.
    Metaqa,
    Custom,
}

impl DatasetFamily {
    pub fn default_max_hop(self) -> Option<usize> {
        match self {
            DatasetFamily::Webqsp => Some(2),
            DatasetFamily::Cwq => Some(3),
            DatasetFamily::Metaqa | DatasetFamily::Custom => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReasonerMode {
    /// Offline: answers are the union of grounded end entities.
    #[default]
    Union,
    Llm,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathSource {
    /// The distilled built-in generator with beam search.
    #[default]
    Builtin,
    /// One chat call per topic entity with the path-generation prompt.
    Llm,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReasonerConfig {
    pub mode: ReasonerMode,
    pub path_source: PathSource,
    pub endpoint: EndpointConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub kg: PathBuf,
    pub train_questions: Option<PathBuf>,
    pub test_questions: Option<PathBuf>,
    #[serde(default)]
    pub reference_paths: Option<PathBuf>,
    #[serde(default = "default_embedding")]
    pub embedding: String,
    #[serde(default)]
    pub dataset_family: DatasetFamily,
    #[serde(default)]
    pub max_hop: Option<usize>,
    #[serde(default)]
    pub candidate_cap: Option<usize>,
    #[serde(default = "default_top_t")]
    pub top_t: usize,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub sampling: NegativeSamplingConfig,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub reasoner: ReasonerConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_embedding() -> String {
    "builtin:256".into()
}

fn default_top_t() -> usize {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Splits `a.b.c=value` and stores `value` (parsed as TOML, falling back to
/// a plain string) at that key path.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let keys: Vec<&str> = key.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let mut cur = table;
    for k in &keys[..keys.len() - 1] {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key `{key}` crosses a non-table value")))?;
    }
    cur.insert(keys[keys.len() - 1].to_owned(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses `text`, applies overrides, and resolves relative paths against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: PipelineConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.resolve(base_dir)?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, overrides, base)
    }

    fn resolve(&mut self, base: &Path) -> Result<()> {
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        abs(&mut self.kg);
        abs(&mut self.output_dir);
        for p in [
            &mut self.train_questions,
            &mut self.test_questions,
            &mut self.reference_paths,
        ]
        .into_iter()
        .flatten()
        {
            abs(p);
        }
        if self.max_hop.is_none() {
            self.max_hop = self.dataset_family.default_max_hop();
        }
        let l = self.max_hop.ok_or_else(|| {
            Error::Config(format!(
                "max_hop is required for dataset family {:?}",
                self.dataset_family
            ))
        })?;
        self.generator.max_length = l;
        self.estimator.seed = derive_seed(self.seed, "train-estimator");
        self.sampling.seed = derive_seed(self.seed, "build-bags");
        self.generator.seed = derive_seed(self.seed, "train-generator");
        self.validate()
    }

    pub fn max_hop(&self) -> usize {
        self.max_hop.expect("resolved configs always carry max_hop")
    }

    pub fn validate(&self) -> Result<()> {
        let l = self
            .max_hop
            .ok_or_else(|| Error::Config("max_hop is unset".into()))?;
        if l == 0 {
            return Err(Error::Config("max_hop must be at least 1".into()));
        }
        if self.top_t == 0 {
            return Err(Error::Config("top_t must be at least 1".into()));
        }
        self.embedding_spec()?;
        self.estimator.validate(l)?;
        self.sampling.validate()?;
        self.generator.validate()?;
        if self.reasoner.endpoint.concurrency == 0 {
            return Err(Error::Config("reasoner concurrency must be at least 1".into()));
        }
        Ok(())
    }

    pub fn embedding_spec(&self) -> Result<ProviderSpec> {
        self.embedding.parse()
    }

    /// Short hex digest of the resolved configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }

    pub fn output(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}
