//! One TOML file configuring every stage of a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{DEFAULT_IN_FLIGHT, DEFAULT_MAX_VARIANTS};
use crate::featurize::FeaturizerConfig;
use crate::hin::HinConfig;
use crate::search::SearchConfig;
use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AugmentBackend {
    #[default]
    Rule,
    File,
    Llm,
    /// No variants; entities come from train pairs alone.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub backend: AugmentBackend,
    /// Replay file for the `file` backend.
    pub replay: Option<PathBuf>,
    /// Extra `short,long` abbreviation pairs.
    pub abbreviations: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_variants: usize,
    pub in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            backend: AugmentBackend::Rule,
            replay: None,
            abbreviations: None,
            endpoint: None,
            model: None,
            temperature: 0.7,
            top_p: 0.9,
            max_variants: DEFAULT_MAX_VARIANTS,
            in_flight: DEFAULT_IN_FLIGHT,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct HypergraphConfig {
    /// Replace every hyperedge by per-column singletons.
    pub singletons: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![5, 15, 25] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub featurizer: FeaturizerConfig,
    pub augment: AugmentConfig,
    pub hypergraph: HypergraphConfig,
    pub hin: HinConfig,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.featurizer.dim != self.hin.dim {
            return bad(format!(
                "featurizer.dim ({}) must equal hin.dim ({})",
                self.featurizer.dim, self.hin.dim
            ));
        }
        if self.hin.heads == 0 || self.hin.dim % self.hin.heads != 0 {
            return bad(format!("hin.dim {} is not divisible by {} heads", self.hin.dim, self.hin.heads));
        }
        if self.search.k == 0 || self.search.k > self.search.b {
            return bad(format!("search.k = {} must be in 1..=b ({})", self.search.k, self.search.b));
        }
        if self.search.lambda < 0.0 || !self.search.lambda.is_finite() {
            return bad(format!("search.lambda = {} must be a finite value >= 0", self.search.lambda));
        }
        if !(0.0..1.0).contains(&self.train.dropout) {
            return bad(format!("train.dropout = {} must be in [0, 1)", self.train.dropout));
        }
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if self.eval.ks.contains(&0) {
            return bad("eval.ks must be positive".into());
        }
        match self.augment.backend {
            AugmentBackend::File if self.augment.replay.is_none() => bad("augment.backend = file needs augment.replay".into()),
            AugmentBackend::Llm if self.augment.endpoint.is_none() => bad("augment.backend = llm needs augment.endpoint".into()),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_hyperparameters() {
        let c = RunConfig::default();
        assert_eq!((c.hin.dim, c.hin.node_layers, c.hin.mixer_layers, c.hin.pe_dim), (512, 2, 2, 16));
        assert_eq!(c.train.learning_rate, 4e-4);
        assert_eq!((c.train.batch_size, c.train.epochs), (64, 30));
        assert_eq!((c.train.margin, c.train.dropout), (1.0, 0.05));
        assert_eq!((c.search.b, c.search.lambda), (50, 1.0));
        assert_eq!((c.augment.temperature, c.augment.top_p), (0.7, 0.9));
        c.validate().unwrap();
    }

    #[test]
    fn roundtrip_and_partial_files() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = RunConfig::from_toml("seed = 7\n[search]\nk = 5\n").unwrap();
        assert_eq!((p.seed, p.search.k, p.search.b), (7, 5, 50));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sede = 1").is_err());
        assert!(RunConfig::from_toml("[train]\nlr = 0.1").is_err());
    }

    #[test]
    fn validation_rules() {
        let mut c = RunConfig::default();
        c.hin.dim = 64;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        c.featurizer.dim = 64;
        c.validate().unwrap();
        c.search.k = 60;
        assert!(c.validate().is_err());
        c.search.k = 10;
        c.augment.backend = AugmentBackend::File;
        assert!(c.validate().is_err());
    }
}
