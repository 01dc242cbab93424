//! Flat `key = value` experiment configuration.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cltr::LambdaVariant;
use crate::error::{Error, Result};
use crate::letor::SyntheticShape;
use crate::simulation::{ClickBehavior, UserModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    CfRank,
    CfDcg,
    CfRankDeploy,
    CfDcgDeploy,
    Pdgd,
    Production,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::CfRank,
        Method::CfDcg,
        Method::CfRankDeploy,
        Method::CfDcgDeploy,
        Method::Pdgd,
        Method::Production,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::CfRank => "CF-RANK",
            Method::CfDcg => "CF-DCG",
            Method::CfRankDeploy => "CF-RANK-Deploy",
            Method::CfDcgDeploy => "CF-DCG-Deploy",
            Method::Pdgd => "PDGD",
            Method::Production => "Production",
        }
    }

    pub fn lambda(self) -> Option<LambdaVariant> {
        match self {
            Method::CfRank | Method::CfRankDeploy => Some(LambdaVariant::Rank),
            Method::CfDcg | Method::CfDcgDeploy => Some(LambdaVariant::Dcg),
            Method::Pdgd | Method::Production => None,
        }
    }

    pub fn deploys(self) -> bool {
        matches!(self, Method::CfRankDeploy | Method::CfDcgDeploy)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        queries: usize,
        docs_per_query: usize,
        features: usize,
        seed: u64,
        shape: SyntheticShape,
    },
    Letor {
        train: PathBuf,
        validation: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointSchedule {
    /// 0, then 1-2-5 steps from 100 upward, then the final session count.
    Log,
    Explicit(Vec<usize>),
}

impl CheckpointSchedule {
    pub fn resolve(&self, total_sessions: usize) -> Vec<usize> {
        let mut points = match self {
            CheckpointSchedule::Log => {
                let mut v = vec![0];
                let mut decade = 100usize;
                'outer: loop {
                    for m in [1, 2, 5] {
                        let s = m * decade;
                        if s >= total_sessions {
                            break 'outer;
                        }
                        v.push(s);
                    }
                    decade *= 10;
                }
                v.push(total_sessions);
                v
            }
            CheckpointSchedule::Explicit(v) => v.clone(),
        };
        points.sort_unstable();
        points.dedup();
        points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    pub method: Method,
    pub user_model: ClickBehavior,
    pub eta: f64,
    pub selection_cutoff: Option<usize>,
    pub click_probs: Option<[f64; 5]>,
    pub total_sessions: usize,
    pub deploy_interval: usize,
    pub checkpoints: CheckpointSchedule,
    pub pdgd_learning_rate: f64,
    pub tau: f64,
    /// Candidate learning rates; several values are selected between per
    /// checkpoint on the validation partition.
    pub cf_learning_rate: Vec<f64>,
    pub cf_epochs: Vec<usize>,
    pub cf_propensity_clip: Option<f64>,
    /// Start counterfactual training from the production weights instead of 0.
    pub cf_warm_start: bool,
    pub production_query_fraction: f64,
    pub production_learning_rate: f64,
    pub production_epochs: usize,
    pub production_l2: f64,
    pub production_seed: u64,
    pub num_runs: usize,
    pub base_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            dataset: DatasetSource::Synthetic {
                queries: 100,
                docs_per_query: 20,
                features: 10,
                seed: 0,
                shape: SyntheticShape::default(),
            },
            method: Method::Pdgd,
            user_model: ClickBehavior::Binarized,
            eta: 1.0,
            selection_cutoff: None,
            click_probs: None,
            total_sessions: 100_000,
            deploy_interval: 20_000,
            checkpoints: CheckpointSchedule::Log,
            pdgd_learning_rate: 0.01,
            tau: 10.0,
            cf_learning_rate: vec![0.01],
            cf_epochs: vec![1],
            cf_propensity_clip: None,
            cf_warm_start: false,
            production_query_fraction: 0.01,
            production_learning_rate: 0.01,
            production_epochs: 50,
            production_l2: 0.0,
            production_seed: 0,
            num_runs: 1,
            base_seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn user(&self) -> Result<UserModel> {
        let user = UserModel::new(self.user_model, self.eta, self.selection_cutoff)?;
        match self.click_probs {
            Some(p) => user.with_click_probs(p),
            None => Ok(user),
        }
    }

    pub fn checkpoint_sessions(&self) -> Vec<usize> {
        self.checkpoints.resolve(self.total_sessions)
    }

    pub fn validate(&self) -> Result<()> {
        self.user()?;
        if self.total_sessions < 1 {
            return Err(Error::Config("total_sessions must be at least 1".into()));
        }
        if self.deploy_interval < 1 {
            return Err(Error::Config("deploy_interval must be at least 1".into()));
        }
        let points = self.checkpoint_sessions();
        if points.is_empty() || points.last().is_some_and(|&s| s > self.total_sessions) {
            return Err(Error::Config(
                "checkpoints must be non-empty and not exceed total_sessions".into(),
            ));
        }
        if self.tau.is_nan()
            || self.tau <= 0.0
            || self.pdgd_learning_rate.is_nan()
            || self.pdgd_learning_rate < 0.0
        {
            return Err(Error::Config(
                "tau must be positive and pdgd_learning_rate non-negative".into(),
            ));
        }
        if self.cf_learning_rate.is_empty() || self.cf_epochs.is_empty() {
            return Err(Error::Config(
                "cf_learning_rate and cf_epochs need at least one value".into(),
            ));
        }
        if !(self.production_query_fraction > 0.0 && self.production_query_fraction <= 1.0) {
            return Err(Error::Config(
                "production_query_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.num_runs < 1 {
            return Err(Error::Config("num_runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = text.parse()?;
        if let DatasetSource::Letor {
            train,
            validation,
            test,
        } = &mut cfg.dataset
        {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in [train, validation, test] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        if cfg.name == ExperimentConfig::default().name {
            if let Some(stem) = path.file_stem() {
                cfg.name = stem.to_string_lossy().into_owned();
            }
        }
        Ok(cfg)
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    match value.to_ascii_lowercase().as_str() {
        "" | "none" | "off" => Ok(None),
        _ => parse_value(key, value).map(Some),
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        let mut dataset_kind = "synthetic".to_string();
        let (mut queries, mut docs, mut features, mut dseed) = (100, 20, 10, 0);
        let mut shape = SyntheticShape::default();
        let (mut train, mut validation, mut test) = (None, None, None);

        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    i + 1
                )));
            }
            match key {
                "name" => cfg.name = value.to_string(),
                "dataset" => dataset_kind = value.to_ascii_lowercase(),
                "synthetic_queries" => queries = parse_value(key, value)?,
                "synthetic_docs_per_query" => docs = parse_value(key, value)?,
                "synthetic_features" => features = parse_value(key, value)?,
                "dataset_seed" => dseed = parse_value(key, value)?,
                "synthetic_label_noise" => shape.label_noise = parse_value(key, value)?,
                "synthetic_query_shift" => shape.query_shift = parse_value(key, value)?,
                "synthetic_feature_skew" => shape.feature_skew = parse_value(key, value)?,
                "train_path" => train = Some(PathBuf::from(value)),
                "validation_path" => validation = Some(PathBuf::from(value)),
                "test_path" => test = Some(PathBuf::from(value)),
                "method" => cfg.method = value.parse()?,
                "user_model" => cfg.user_model = value.parse()?,
                "eta" => cfg.eta = parse_value(key, value)?,
                "selection_cutoff" => cfg.selection_cutoff = parse_optional(key, value)?,
                "click_probs" => {
                    let probs: Vec<f64> = parse_list(key, value)?;
                    let probs: [f64; 5] = probs
                        .try_into()
                        .map_err(|_| Error::Config("click_probs needs exactly 5 values".into()))?;
                    cfg.click_probs = Some(probs);
                }
                "total_sessions" => cfg.total_sessions = parse_value(key, value)?,
                "deploy_interval" => cfg.deploy_interval = parse_value(key, value)?,
                "checkpoints" => {
                    cfg.checkpoints = if value.eq_ignore_ascii_case("log") {
                        CheckpointSchedule::Log
                    } else {
                        CheckpointSchedule::Explicit(parse_list(key, value)?)
                    }
                }
                "pdgd_learning_rate" => cfg.pdgd_learning_rate = parse_value(key, value)?,
                "tau" => cfg.tau = parse_value(key, value)?,
                "cf_learning_rate" => cfg.cf_learning_rate = parse_list(key, value)?,
                "cf_epochs" => cfg.cf_epochs = parse_list(key, value)?,
                "cf_propensity_clip" => cfg.cf_propensity_clip = parse_optional(key, value)?,
                "cf_warm_start" => cfg.cf_warm_start = parse_value(key, value)?,
                "production_query_fraction" => {
                    cfg.production_query_fraction = parse_value(key, value)?
                }
                "production_learning_rate" => {
                    cfg.production_learning_rate = parse_value(key, value)?
                }
                "production_epochs" => cfg.production_epochs = parse_value(key, value)?,
                "production_l2" => cfg.production_l2 = parse_value(key, value)?,
                "production_seed" => cfg.production_seed = parse_value(key, value)?,
                "num_runs" => cfg.num_runs = parse_value(key, value)?,
                "base_seed" => cfg.base_seed = parse_value(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key}", i + 1))),
            }
        }

        // eta defaults to 1 for the biased users; Perfect has no position bias
        if cfg.user_model == ClickBehavior::Perfect && !seen.contains("eta") {
            cfg.eta = 0.0;
        }

        cfg.dataset = match dataset_kind.as_str() {
            "synthetic" => DatasetSource::Synthetic {
                queries,
                docs_per_query: docs,
                features,
                seed: dseed,
                shape,
            },
            "letor" => DatasetSource::Letor {
                train: train
                    .ok_or_else(|| Error::Config("letor dataset needs train_path".into()))?,
                validation: validation
                    .ok_or_else(|| Error::Config("letor dataset needs validation_path".into()))?,
                test: test.ok_or_else(|| Error::Config("letor dataset needs test_path".into()))?,
            },
            other => return Err(Error::Config(format!("unknown dataset kind {other:?}"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
