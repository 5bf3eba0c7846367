//! Pipeline configuration.
//!
//! JSON with one section per stage; every field has a default, and unknown
//! keys are rejected. [`Config::overrides`] lists the dotted paths whose
//! values differ from the defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{RefineParams, SamplerParams, SubsetParams};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::qc::QcParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhraseParams {
    /// Categories seen fewer times than this are left out of the vocabulary.
    pub vocabulary_min_frequency: u64,
}

impl Default for PhraseParams {
    fn default() -> Self {
        Self {
            vocabulary_min_frequency: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalParams {
    /// Score at or above which a category channel counts as foreground when
    /// searching for substitutes.
    pub substitution_threshold: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            substitution_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(flatten)]
    pub architecture: ModelConfig,
    /// Channel counts; inferred from the detections when absent.
    pub n_categories: Option<usize>,
    pub n_attributes: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            architecture: ModelConfig::default(),
            n_categories: None,
            n_attributes: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub sampler: SamplerParams,
    pub phrases: PhraseParams,
    pub refine: RefineParams,
    pub subsets: SubsetParams,
    pub qc: QcParams,
    pub eval: EvalParams,
    pub model: ModelSection,
    pub train: TrainConfig,
    /// Text file of stuff categories, one per line.
    pub stuff_list: Option<PathBuf>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Config = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.model.architecture.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.eval.substitution_threshold) {
            return Err(Error::Config("eval: substitution_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Dotted paths of every leaf that differs from the default, sorted.
    pub fn overrides(&self) -> Vec<String> {
        let here = serde_json::to_value(self).expect("config serializes");
        let base = serde_json::to_value(Config::default()).expect("config serializes");
        let mut out = Vec::new();
        diff("", &here, &base, &mut out);
        out.sort();
        out
    }
}

fn diff(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
    match (a, b) {
        (Value::Object(ma), Value::Object(mb)) => {
            for (k, va) in ma {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match mb.get(k) {
                    Some(vb) => diff(&path, va, vb, out),
                    None => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = Config::from_json("{}").unwrap();
        assert_eq!(c, Config::default());
        assert!(c.overrides().is_empty());
        assert_eq!(c.qc.iou_coefficient, 0.8);
        assert_eq!(c.subsets.top_rank, 100);

        let c = Config::from_json(r#"{"seed": 3, "qc": {"min_annotations": 5}, "model": {"embed_dim": 16}}"#).unwrap();
        assert_eq!(c.overrides(), vec!["model.embed_dim", "qc.min_annotations", "seed"]);
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let err = Config::from_json(r#"{"qc": {"min_anotations": 5}}"#).unwrap_err().to_string();
        assert!(err.contains("qc"), "{err}");
        assert!(err.contains("min_anotations"), "{err}");
        assert!(Config::from_json(r#"{"sampler": {"r_min": 0.95}}"#).is_err());
    }
}
