//! Run configuration: command-line flags over a TOML file over defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use geohead::features::FeatureSet;
use geohead::gmm::CovActivation;
use geohead::head::{HeadConfig, HeadKind, ModelBundle, TrainOptions};
use geohead::loss::LossCombination;
use geohead::metrics::{CovAggregation, CovMode, EvalOptions, DEFAULT_ALPHA, DEFAULT_CAE_SAMPLES};

use crate::error::CliError;

/// Grouping key for evaluation reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    #[default]
    None,
    Country,
    User,
    Place,
}

/// Keys accepted in a `--config` TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub embedding_dim: Option<usize>,
    pub kind: Option<HeadKind>,
    pub outcomes: Option<usize>,
    pub kf: Option<FeatureSet>,
    pub mf: Option<Vec<FeatureSet>>,
    pub vf: Option<FeatureSet>,
    pub alpha: Option<f64>,
    pub top_k: Option<usize>,
    pub group_by: Option<GroupBy>,
    pub strict_paper_cov: Option<bool>,
    pub cov_aggregation: Option<CovAggregation>,
    pub cae_samples: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub dev_fraction: Option<f64>,
    pub covariance_activation: Option<CovActivation>,
    pub loss_combination: Option<LossCombination>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }
}

/// Values given on the command line; `None` defers to the file.
#[derive(Debug, Clone, Default)]
pub struct FlagValues {
    pub seed: Option<u64>,
    pub embedding_dim: Option<usize>,
    pub kind: Option<HeadKind>,
    pub outcomes: Option<usize>,
    pub kf: Option<FeatureSet>,
    pub mf: Option<Vec<FeatureSet>>,
    pub vf: Option<FeatureSet>,
    pub alpha: Option<f64>,
    pub top_k: Option<usize>,
    pub group_by: Option<GroupBy>,
    pub strict_paper_cov: bool,
    pub cov_aggregation: Option<CovAggregation>,
    pub cae_samples: Option<usize>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_max: Option<f64>,
    pub lr_min: Option<f64>,
    pub dev_fraction: Option<f64>,
    pub covariance_activation: Option<CovActivation>,
    pub loss_combination: Option<LossCombination>,
}

/// Parses a comma-separated minor feature list; `none` means no minor heads.
pub fn parse_feature_list(s: &str) -> Result<Vec<FeatureSet>, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("none") {
        return Ok(Vec::new());
    }
    s.split(',').map(|p| p.trim().parse::<FeatureSet>().map_err(|e| e.to_string())).collect()
}

/// The effective configuration, echoed into every output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub subcommand: String,
    pub seed: u64,
    pub embedding_dim: usize,
    pub kind: HeadKind,
    pub outcomes: usize,
    pub kf: FeatureSet,
    pub mf: Vec<FeatureSet>,
    pub vf: Option<FeatureSet>,
    pub alpha: f64,
    pub top_k: usize,
    pub group_by: GroupBy,
    pub strict_paper_cov: bool,
    pub cov_aggregation: CovAggregation,
    pub cae_samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub dev_fraction: f64,
    pub covariance_activation: CovActivation,
    pub loss_combination: LossCombination,
    pub paths: BTreeMap<String, String>,
}

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TOP_K: usize = 3;

impl RunConfig {
    pub fn resolve(subcommand: &str, flags: FlagValues, file: FileConfig) -> Result<Self, CliError> {
        let train_defaults = TrainOptions::default();
        let kind = flags.kind.or(file.kind).unwrap_or(HeadKind::Pmop);
        let default_outcomes = if kind.is_single() { 1 } else { 5 };
        let cfg = RunConfig {
            subcommand: subcommand.to_string(),
            seed: flags.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            embedding_dim: flags.embedding_dim.or(file.embedding_dim).unwrap_or(768),
            kind,
            outcomes: flags.outcomes.or(file.outcomes).unwrap_or(default_outcomes),
            kf: flags.kf.or(file.kf).unwrap_or(FeatureSet::NonGeo),
            mf: flags.mf.or(file.mf).unwrap_or_default(),
            vf: flags.vf.or(file.vf),
            alpha: flags.alpha.or(file.alpha).unwrap_or(DEFAULT_ALPHA),
            top_k: flags.top_k.or(file.top_k).unwrap_or(DEFAULT_TOP_K),
            group_by: flags.group_by.or(file.group_by).unwrap_or_default(),
            strict_paper_cov: flags.strict_paper_cov || file.strict_paper_cov.unwrap_or(false),
            cov_aggregation: flags.cov_aggregation.or(file.cov_aggregation).unwrap_or_default(),
            cae_samples: flags.cae_samples.or(file.cae_samples).unwrap_or(DEFAULT_CAE_SAMPLES),
            epochs: flags.epochs.or(file.epochs).unwrap_or(train_defaults.epochs),
            batch_size: flags.batch_size.or(file.batch_size).unwrap_or(train_defaults.batch_size),
            lr_max: flags.lr_max.or(file.lr_max).unwrap_or(train_defaults.lr_max),
            lr_min: flags.lr_min.or(file.lr_min).unwrap_or(train_defaults.lr_min),
            dev_fraction: flags.dev_fraction.or(file.dev_fraction).unwrap_or(train_defaults.dev_fraction),
            covariance_activation: flags.covariance_activation.or(file.covariance_activation).unwrap_or_default(),
            loss_combination: flags.loss_combination.or(file.loss_combination).unwrap_or_default(),
            paths: BTreeMap::new(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.head_config().validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let usage = |m: String| Err(CliError::Usage(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return usage(format!("--alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.top_k == 0 {
            return usage("--top-k must be at least 1".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return usage("epochs and batch size must be positive".into());
        }
        if !(self.lr_min >= 0.0 && self.lr_max >= self.lr_min && self.lr_max.is_finite()) {
            return usage(format!("learning rates need 0 <= lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return usage(format!("dev fraction must lie in [0, 1), got {}", self.dev_fraction));
        }
        if self.cae_samples == 0 {
            return usage("cae samples must be positive".into());
        }
        if self.embedding_dim < 8 {
            return usage(format!("--embedding-dim must be at least 8, got {}", self.embedding_dim));
        }
        Ok(())
    }

    pub fn head_config(&self) -> HeadConfig {
        HeadConfig {
            kind: self.kind,
            outcomes: self.outcomes,
            embedding_dim: self.embedding_dim,
            minor_features: self.mf.len(),
            covariance_activation: self.covariance_activation,
            loss_combination: self.loss_combination,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            lr_min: self.lr_min,
            seed: self.seed,
            dev_fraction: self.dev_fraction,
            ..TrainOptions::default()
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            alpha: self.alpha,
            cov_mode: if self.strict_paper_cov { CovMode::StrictPaper } else { CovMode::MahalanobisSquared },
            cov_aggregation: self.cov_aggregation,
            cae_samples: self.cae_samples,
            seed: self.seed,
        }
    }

    /// Evaluation feature; place-based features are refused because the
    /// `place` field is assumed unavailable at evaluation time.
    pub fn eval_feature(&self, key_feature: FeatureSet) -> Result<FeatureSet, CliError> {
        let vf = self.vf.unwrap_or(key_feature);
        if vf.uses_place() {
            return Err(CliError::Usage(format!(
                "evaluation feature {vf} reads place metadata; use TEXT_ONLY or NON_GEO"
            )));
        }
        Ok(vf)
    }

    /// Replaces architecture fields with those of a loaded model.
    pub fn adopt_model(&mut self, bundle: &ModelBundle) {
        self.kind = bundle.config.kind;
        self.outcomes = bundle.config.outcomes;
        self.embedding_dim = bundle.config.embedding_dim;
        self.kf = bundle.key_feature;
        self.mf = bundle.minor_feature_sets.clone();
        self.covariance_activation = bundle.config.covariance_activation;
        self.loss_combination = bundle.config.loss_combination;
    }

    pub fn record_path(&mut self, role: &str, path: &Path) {
        self.paths.insert(role.to_string(), path.display().to_string());
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run config serializes")
    }
}

/// Joins relative paths onto the data directory when one is set.
pub fn resolve_path(data_dir: Option<&Path>, path: &Path) -> PathBuf {
    match data_dir {
        Some(dir) if path.is_relative() => dir.join(path),
        _ => path.to_path_buf(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_then_file_then_defaults() {
        let file = FileConfig { seed: Some(7), alpha: Some(0.9), top_k: Some(2), ..Default::default() };
        let flags = FlagValues { seed: Some(9), ..Default::default() };
        let cfg = RunConfig::resolve("evaluate", flags, file).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.alpha, 0.9);
        assert_eq!(cfg.top_k, 2);
        assert_eq!(cfg.outcomes, 5);
        assert_eq!(cfg.kind, HeadKind::Pmop);
    }

    #[test]
    fn single_kinds_default_to_one_outcome() {
        let flags = FlagValues { kind: Some(HeadKind::Gsop), ..Default::default() };
        assert_eq!(RunConfig::resolve("train", flags, FileConfig::default()).unwrap().outcomes, 1);
        let bad = FlagValues { kind: Some(HeadKind::Psop), outcomes: Some(3), ..Default::default() };
        assert!(matches!(RunConfig::resolve("train", bad, FileConfig::default()), Err(CliError::Usage(_))));
    }

    #[test]
    fn feature_lists() {
        assert_eq!(parse_feature_list("none").unwrap(), vec![]);
        assert_eq!(parse_feature_list("GEO_ONLY,text-only").unwrap(), vec![FeatureSet::GeoOnly, FeatureSet::TextOnly]);
        assert!(parse_feature_list("bogus").is_err());
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        assert!(toml::from_str::<FileConfig>("seed = 3\nkind = \"gmop\"\nmf = [\"GEO_ONLY\"]").is_ok());
        assert!(toml::from_str::<FileConfig>("sead = 3").is_err());
    }

    #[test]
    fn place_features_rejected_for_evaluation() {
        let cfg = RunConfig::resolve("evaluate", FlagValues::default(), FileConfig::default()).unwrap();
        assert!(cfg.eval_feature(FeatureSet::All).is_err());
        assert_eq!(cfg.eval_feature(FeatureSet::NonGeo).unwrap(), FeatureSet::NonGeo);
    }
}
