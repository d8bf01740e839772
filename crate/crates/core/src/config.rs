//! Flat key-value experiment configuration.
//!
//! A config file is `key = value` lines with `#` comments. Unknown keys are
//! rejected by name. Every effective parameter (after CLI overrides) is
//! written back out as `config.resolved`, which parses to the identical
//! experiment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{self, Dataset};
use crate::error::{Error, Result};
use crate::structure::{HglParams, Similarity, ViewConfig};
use crate::trainer::{ModelConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synth {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
    },
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        per_class: usize,
    },
    Table {
        features: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train_count: usize,
    pub val_count: usize,
    pub stratified: bool,
    pub views: usize,
    pub similarities: Vec<Similarity>,
    pub embed_dim: usize,
    pub delta1: f64,
    pub delta2: f64,
    pub eta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub heads: usize,
    pub hidden: usize,
    pub k: usize,
    pub candidate_k: usize,
    pub lambda: f64,
    pub lr: f64,
    pub lr_halving_period: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub repeats: usize,
}

const KNOWN_KEYS: &[&str] = &[
    "dataset",
    "mnist_images",
    "mnist_labels",
    "mnist_per_class",
    "features_csv",
    "labels_csv",
    "synth_classes",
    "synth_per_class",
    "synth_dim",
    "synth_spread",
    "train_count",
    "val_count",
    "stratified",
    "views",
    "similarities",
    "embed_dim",
    "delta1",
    "delta2",
    "eta",
    "alpha",
    "beta",
    "gamma",
    "mu",
    "heads",
    "hidden",
    "k",
    "candidate_k",
    "lambda",
    "lr",
    "lr_halving_period",
    "max_epochs",
    "patience",
    "seed",
    "repeats",
];

/// Parse `key = value` text into an ordered map, rejecting unknown and
/// duplicate keys.
pub fn parse_kv(text: &str, origin: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::config(format!(
                "{origin}:{}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(format!(
                "{origin}:{}: unknown key `{key}`",
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::config(format!(
                "{origin}:{}: duplicate key `{key}`",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        None => Ok(default),
        Some(raw) => raw
            .parse()
            .map_err(|e| Error::config(format!("key `{key}`: bad value `{raw}`: {e}"))),
    }
}

fn get_required(map: &BTreeMap<String, String>, key: &str) -> Result<String> {
    map.get(key)
        .cloned()
        .ok_or_else(|| Error::config(format!("missing required key `{key}`")))
}

impl ExperimentConfig {
    /// Build from a parsed key map (file contents merged with overrides).
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let dataset = match get_required(map, "dataset")?.as_str() {
            "synth" => DatasetSpec::Synth {
                classes: get_parsed(map, "synth_classes", 3)?,
                per_class: get_parsed(map, "synth_per_class", 100)?,
                dim: get_parsed(map, "synth_dim", 16)?,
                spread: get_parsed(map, "synth_spread", 0.1)?,
            },
            "mnist" => DatasetSpec::Mnist {
                images: PathBuf::from(get_required(map, "mnist_images")?),
                labels: PathBuf::from(get_required(map, "mnist_labels")?),
                per_class: get_parsed(map, "mnist_per_class", 1000)?,
            },
            "table" => DatasetSpec::Table {
                features: PathBuf::from(get_required(map, "features_csv")?),
                labels: PathBuf::from(get_required(map, "labels_csv")?),
            },
            other => {
                return Err(Error::config(format!(
                    "key `dataset`: unknown kind `{other}` (expected synth|mnist|table)"
                )))
            }
        };
        let similarities_raw =
            get_parsed(map, "similarities", "cosine,inner_product".to_string())?;
        let similarities: Vec<Similarity> = similarities_raw
            .split(',')
            .map(|t| t.trim().parse())
            .collect::<Result<_>>()?;
        if similarities.is_empty() {
            return Err(Error::config("key `similarities`: empty list"));
        }
        let stratified = match get_parsed(map, "stratified", "true".to_string())?.as_str() {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::config(format!(
                    "key `stratified`: expected true|false, got `{other}`"
                )))
            }
        };
        let cfg = ExperimentConfig {
            dataset,
            train_count: get_parsed(map, "train_count", 0)?,
            val_count: get_parsed(map, "val_count", 0)?,
            stratified,
            views: get_parsed(map, "views", 2)?,
            similarities,
            embed_dim: get_parsed(map, "embed_dim", 70)?,
            delta1: get_parsed(map, "delta1", 0.6)?,
            delta2: get_parsed(map, "delta2", 0.5)?,
            eta: get_parsed(map, "eta", 0.5)?,
            alpha: get_parsed(map, "alpha", 1.0)?,
            beta: get_parsed(map, "beta", 1.0)?,
            gamma: get_parsed(map, "gamma", 1.0)?,
            mu: get_parsed(map, "mu", 1.0)?,
            heads: get_parsed(map, "heads", 2)?,
            hidden: get_parsed(map, "hidden", 64)?,
            k: get_parsed(map, "k", 15)?,
            candidate_k: get_parsed(map, "candidate_k", 50)?,
            lambda: get_parsed(map, "lambda", 1.0)?,
            lr: get_parsed(map, "lr", 0.01)?,
            lr_halving_period: get_parsed(map, "lr_halving_period", 100)?,
            max_epochs: get_parsed(map, "max_epochs", 2000)?,
            patience: get_parsed(map, "patience", 100)?,
            seed: get_parsed(map, "seed", 1)?,
            repeats: get_parsed(map, "repeats", 10)?,
        };
        if cfg.train_count == 0 {
            return Err(Error::config("missing required key `train_count`"));
        }
        if cfg.val_count == 0 {
            return Err(Error::config("missing required key `val_count`"));
        }
        if cfg.views == 0 {
            return Err(Error::config("key `views`: must be >= 1"));
        }
        cfg.model_config(RunMode::Full)?.validate()?;
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    /// Load a config file and apply `overrides` (key, value) on top.
    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut map = parse_kv(&text, &path.display().to_string())?;
        for (key, value) in overrides {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(format!("unknown override key `{key}`")));
            }
            map.insert(key.clone(), value.clone());
        }
        Self::from_map(&map)
    }

    pub fn view_configs(&self) -> Vec<ViewConfig> {
        (0..self.views)
            .map(|i| ViewConfig {
                similarity: self.similarities[i % self.similarities.len()],
                embedding_dim: self.embed_dim,
            })
            .collect()
    }

    pub fn model_config(&self, mode: RunMode) -> Result<ModelConfig> {
        let mut hgl = HglParams {
            delta1: self.delta1,
            eta: self.eta,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            mu: self.mu,
        };
        if mode == RunMode::NoHgl {
            hgl.eta = 0.0;
        }
        Ok(ModelConfig {
            views: self.view_configs(),
            hgl,
            delta2: self.delta2,
            heads: self.heads,
            hidden: self.hidden,
            k: self.k,
            candidate_k: self.candidate_k,
            use_structure_learner: mode != RunMode::NoHgl,
            use_density: mode != RunMode::NoDensity,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            learning_rate: self.lr,
            lr_halving_period: self.lr_halving_period,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            repeats: self.repeats,
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Synth {
                classes,
                per_class,
                dim,
                spread,
            } => data::synth_blobs(*classes, *per_class, *dim, *spread, self.seed),
            DatasetSpec::Mnist {
                images,
                labels,
                per_class,
            } => {
                let full = data::load_idx_images(images, labels)?;
                if full.labels.iter().filter(|&&l| l == 0).count() > *per_class {
                    data::subset_per_class(&full, *per_class)
                } else {
                    Ok(full)
                }
            }
            DatasetSpec::Table { features, labels } => data::load_table(features, labels),
        }
    }

    /// Render every effective key; parsing this text reproduces the config.
    pub fn to_resolved_string(&self) -> String {
        let mut s = String::new();
        match &self.dataset {
            DatasetSpec::Synth {
                classes,
                per_class,
                dim,
                spread,
            } => {
                let _ = writeln!(s, "dataset = synth");
                let _ = writeln!(s, "synth_classes = {classes}");
                let _ = writeln!(s, "synth_per_class = {per_class}");
                let _ = writeln!(s, "synth_dim = {dim}");
                let _ = writeln!(s, "synth_spread = {spread}");
            }
            DatasetSpec::Mnist {
                images,
                labels,
                per_class,
            } => {
                let _ = writeln!(s, "dataset = mnist");
                let _ = writeln!(s, "mnist_images = {}", images.display());
                let _ = writeln!(s, "mnist_labels = {}", labels.display());
                let _ = writeln!(s, "mnist_per_class = {per_class}");
            }
            DatasetSpec::Table { features, labels } => {
                let _ = writeln!(s, "dataset = table");
                let _ = writeln!(s, "features_csv = {}", features.display());
                let _ = writeln!(s, "labels_csv = {}", labels.display());
            }
        }
        let sims: Vec<String> = self.similarities.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "train_count = {}", self.train_count);
        let _ = writeln!(s, "val_count = {}", self.val_count);
        let _ = writeln!(s, "stratified = {}", self.stratified);
        let _ = writeln!(s, "views = {}", self.views);
        let _ = writeln!(s, "similarities = {}", sims.join(","));
        let _ = writeln!(s, "embed_dim = {}", self.embed_dim);
        let _ = writeln!(s, "delta1 = {}", self.delta1);
        let _ = writeln!(s, "delta2 = {}", self.delta2);
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "mu = {}", self.mu);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "hidden = {}", self.hidden);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "candidate_k = {}", self.candidate_k);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lr_halving_period = {}", self.lr_halving_period);
        let _ = writeln!(s, "max_epochs = {}", self.max_epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "repeats = {}", self.repeats);
        s
    }
}

/// Pipeline variant: the full model or one of the two ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunMode {
    Full,
    NoHgl,
    NoDensity,
}

impl std::str::FromStr for RunMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(RunMode::Full),
            "no-hgl" => Ok(RunMode::NoHgl),
            "no-density" => Ok(RunMode::NoDensity),
            other => Err(Error::config(format!(
                "unknown mode `{other}` (expected full|no-hgl|no-density)"
            ))),
        }
    }
}

impl std::fmt::Display for RunMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RunMode::Full => "full",
            RunMode::NoHgl => "no-hgl",
            RunMode::NoDensity => "no-density",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "dataset = synth\ntrain_count = 15\nval_count = 30\n";

    fn build(text: &str) -> Result<ExperimentConfig> {
        let map = parse_kv(text, "test")?;
        ExperimentConfig::from_map(&map)
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = build(MINIMAL).unwrap();
        assert_eq!(cfg.k, 15);
        assert_eq!(cfg.hidden, 64);
        assert_eq!(cfg.heads, 2);
        assert_eq!(cfg.views, 2);
        assert_eq!(cfg.delta1, 0.6);
        assert_eq!(cfg.repeats, 10);
        assert!(cfg.stratified);
        let views = cfg.view_configs();
        assert_eq!(views[0].similarity, Similarity::Cosine);
        assert_eq!(views[1].similarity, Similarity::InnerProduct);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = build("dataset = synth\nbogus_key = 3\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected() {
        let err = build("dataset = synth\nk = 3\nk = 4\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = build("dataset = synth\ntrain_count = 15\nval_count = 30\nlambda = soup\n")
            .unwrap_err();
        assert!(err.to_string().contains("lambda"), "{err}");
    }

    #[test]
    fn resolved_roundtrip_is_identity() {
        let cfg = build(
            "dataset = synth\ntrain_count = 15\nval_count = 30\nlambda = 0.9\nviews = 3\nsimilarities = cosine\nsynth_spread = 0.25\n",
        )
        .unwrap();
        let resolved = cfg.to_resolved_string();
        let back = build(&resolved).unwrap();
        assert_eq!(resolved, back.to_resolved_string());
        assert_eq!(back.lambda, 0.9);
        assert_eq!(back.views, 3);
    }

    #[test]
    fn views_cycle_similarities() {
        let cfg = build("dataset = synth\ntrain_count = 5\nval_count = 5\nviews = 3\n").unwrap();
        let v = cfg.view_configs();
        assert_eq!(v.len(), 3);
        assert_eq!(v[2].similarity, Similarity::Cosine);
    }

    #[test]
    fn ablation_modes_flip_flags() {
        let cfg = build(MINIMAL).unwrap();
        let full = cfg.model_config(RunMode::Full).unwrap();
        assert!(full.use_structure_learner && full.use_density);
        let nh = cfg.model_config(RunMode::NoHgl).unwrap();
        assert!(!nh.use_structure_learner);
        assert_eq!(nh.hgl.eta, 0.0);
        let nd = cfg.model_config(RunMode::NoDensity).unwrap();
        assert!(nd.use_structure_learner && !nd.use_density);
    }

    #[test]
    fn missing_dataset_keys_error() {
        assert!(build("dataset = mnist\ntrain_count = 5\nval_count = 5\n").is_err());
        assert!(build("dataset = table\ntrain_count = 5\nval_count = 5\n").is_err());
        assert!(build("train_count = 5\nval_count = 5\n").is_err());
    }
}
