//! Experiment orchestration: dataset preparation, seeded runs of each method,
//! checkpoint evaluation and results output.
//!
//! Every run derives independent random streams from `base_seed + run_index`
//! for query sampling, click noise, ranking sampling and display evaluation,
//! so methods that share a seed see the same sequence of queries.

mod config;
mod sweep;

use std::fs::File;
use std::io::BufReader;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{CheckpointSchedule, DatasetSource, ExperimentConfig, Method};
pub use sweep::{
    aggregate, run_sweep, significance, write_aggregate, write_results, write_significance,
    AggregateRow, RunFailure, SignificanceRow, SweepOutput, AGGREGATE_HEADER, ERRORS_HEADER,
    RESULTS_HEADER, SIGNIFICANCE_HEADER,
};

use crate::cltr::{
    cf_train_prefix, index_queries, log_session, CfParams, ClickLog, LambdaVariant, QueryIndex,
};
use crate::error::{Error, Result};
use crate::eval::{display_performance, test_performance};
use crate::letor::{generate_synthetic_with, normalize, parse_letor, DatasetSplit};
use crate::model::{train_production, LinearModel, ProductionParams};
use crate::oltr::{PdgdLearner, PlackettLuceParams};
use crate::simulation::{sample_query, simulate_session, ClickBehavior};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub checkpoint_sessions: usize,
    pub test_ndcg: f64,
    pub display_ndcg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub run_id: usize,
    pub method: Method,
    pub user_model: ClickBehavior,
    pub eta: f64,
    pub selection_cutoff: Option<usize>,
    pub samples: Vec<MetricSample>,
}

impl MetricSeries {
    fn new(cfg: &ExperimentConfig, run_id: usize) -> Self {
        MetricSeries {
            run_id,
            method: cfg.method,
            user_model: cfg.user_model,
            eta: cfg.user().map_or(cfg.eta, |u| u.eta),
            selection_cutoff: cfg.selection_cutoff,
            samples: Vec::new(),
        }
    }

    fn record(&mut self, sessions: usize, test_ndcg: f64, display_ndcg: f64) {
        self.samples.push(MetricSample {
            checkpoint_sessions: sessions,
            test_ndcg,
            display_ndcg: Some(display_ndcg),
        });
    }

    pub fn last(&self) -> &MetricSample {
        self.samples
            .last()
            .expect("series has at least one checkpoint")
    }
}

/// A normalized dataset together with the baseline ranker trained on it.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub split: DatasetSplit,
    pub production: LinearModel,
}

impl Experiment {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let split = normalize(&load_dataset(&cfg.dataset)?);
        let production = train_production(
            &split,
            &ProductionParams {
                query_fraction: cfg.production_query_fraction,
                learning_rate: cfg.production_learning_rate,
                epochs: cfg.production_epochs,
                l2: cfg.production_l2,
                seed: cfg.production_seed,
            },
        )?;
        Ok(Experiment { split, production })
    }
}

pub fn load_dataset(source: &DatasetSource) -> Result<DatasetSplit> {
    match source {
        DatasetSource::Synthetic {
            queries,
            docs_per_query,
            features,
            seed,
            shape,
        } => {
            if *queries < 1 || *docs_per_query < 1 || *features < 1 {
                return Err(Error::Config(
                    "synthetic dataset sizes must be positive".into(),
                ));
            }
            if !(shape.label_noise >= 0.0 && shape.query_shift >= 0.0 && shape.feature_skew >= 0.0)
            {
                return Err(Error::Config(
                    "synthetic noise and skew must be non-negative".into(),
                ));
            }
            Ok(generate_synthetic_with(
                *queries,
                *docs_per_query,
                *features,
                *seed,
                shape,
            ))
        }
        DatasetSource::Letor {
            train,
            validation,
            test,
        } => {
            let read =
                |p: &std::path::Path| -> Result<_> { parse_letor(BufReader::new(File::open(p)?)) };
            DatasetSplit::new(read(train)?, read(validation)?, read(test)?)
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Stream {
    Queries = 0,
    Clicks = 1,
    Rankings = 2,
    Display = 3,
}

fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn run_seed(cfg: &ExperimentConfig, run: usize) -> u64 {
    cfg.base_seed.wrapping_add(run as u64)
}

/// Runs one seeded repetition of the configured method.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    run: usize,
) -> Result<MetricSeries> {
    cfg.validate()?;
    match cfg.method {
        Method::Pdgd => run_pdgd(cfg, exp, run),
        Method::CfRank | Method::CfDcg => run_counterfactual(cfg, exp, run),
        Method::CfRankDeploy | Method::CfDcgDeploy => run_counterfactual_deploy(cfg, exp, run),
        Method::Production => run_production(cfg, exp, run),
    }
}

/// The baseline ranker on its own: a flat series.
pub fn run_production(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    run: usize,
) -> Result<MetricSeries> {
    let perf = test_performance(&exp.production, &exp.split.test)?;
    let mut series = MetricSeries::new(cfg, run);
    for s in cfg.checkpoint_sessions() {
        series.record(s, perf, perf);
    }
    Ok(series)
}

/// Online learning: warm-started from the baseline, one PDGD update per
/// session.
pub fn run_pdgd(cfg: &ExperimentConfig, exp: &Experiment, run: usize) -> Result<MetricSeries> {
    let user = cfg.user()?;
    let seed = run_seed(cfg, run);
    let mut query_rng = stream(seed, Stream::Queries);
    let mut click_rng = stream(seed, Stream::Clicks);
    let mut ranking_rng = stream(seed, Stream::Rankings);
    let mut display_rng = stream(seed, Stream::Display);

    let params = PlackettLuceParams::new(cfg.tau, cfg.selection_cutoff.unwrap_or(usize::MAX));
    let mut learner = PdgdLearner::new(exp.production.clone(), params, cfg.pdgd_learning_rate);
    let train = &exp.split.train;
    let test = &exp.split.test;

    let mut series = MetricSeries::new(cfg, run);
    let mut checkpoints = cfg.checkpoint_sessions().into_iter().peekable();
    for t in 0..=cfg.total_sessions {
        while checkpoints.next_if_eq(&t).is_some() {
            let test_ndcg = test_performance(&learner.model, test)?;
            let display_ndcg = display_performance(&learner, test, &mut display_rng)?;
            series.record(t, test_ndcg, display_ndcg);
        }
        if t == cfg.total_sessions {
            break;
        }
        let query = sample_query(train, &mut query_rng);
        let displayed = learner.sample(query, &mut ranking_rng);
        let clicks = simulate_session(&displayed, query, &user, &mut click_rng);
        learner.update(query, &displayed, &clicks)?;
    }
    Ok(series)
}

struct CfTrainer<'a> {
    cfg: &'a ExperimentConfig,
    variant: LambdaVariant,
    initial: LinearModel,
    index: QueryIndex<'a>,
    validation: &'a [crate::letor::Query],
}

impl<'a> CfTrainer<'a> {
    fn new(cfg: &'a ExperimentConfig, exp: &'a Experiment) -> Self {
        let variant = cfg.method.lambda().expect("counterfactual method");
        let initial = if cfg.cf_warm_start {
            exp.production.clone()
        } else {
            LinearModel::zeros(exp.split.feature_count)
        };
        CfTrainer {
            cfg,
            variant,
            initial,
            index: index_queries(&exp.split.train),
            validation: &exp.split.validation,
        }
    }

    /// Trains from the initial model on the first `limit` sessions. With
    /// several candidate hyperparameters the one scoring best on validation
    /// wins; ties keep the earlier candidate.
    fn train(&self, log: &ClickLog, limit: usize) -> Result<LinearModel> {
        if limit == 0 {
            return Ok(self.initial.clone());
        }
        let mut best: Option<(f64, LinearModel)> = None;
        for &learning_rate in &self.cfg.cf_learning_rate {
            for &epochs in &self.cfg.cf_epochs {
                let params = CfParams {
                    variant: self.variant,
                    learning_rate,
                    epochs,
                    propensity_clip: self.cfg.cf_propensity_clip,
                };
                let model = cf_train_prefix(log, limit, &params, &self.initial, &self.index)?;
                let single = self.cfg.cf_learning_rate.len() * self.cfg.cf_epochs.len() == 1;
                if single || self.validation.is_empty() {
                    return Ok(model);
                }
                let score = test_performance(&model, self.validation)?;
                if best.as_ref().is_none_or(|(b, _)| score > *b) {
                    best = Some((score, model));
                }
            }
        }
        Ok(best.expect("non-empty grid").1)
    }
}

/// Counterfactual learning from a log collected by the fixed baseline. Each
/// checkpoint retrains from scratch on the log prefix seen so far.
pub fn run_counterfactual(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    run: usize,
) -> Result<MetricSeries> {
    let user = cfg.user()?;
    let seed = run_seed(cfg, run);
    let mut query_rng = stream(seed, Stream::Queries);
    let mut click_rng = stream(seed, Stream::Clicks);

    let train = &exp.split.train;
    let mut log = ClickLog::new("production");
    for _ in 0..cfg.total_sessions {
        let query = sample_query(train, &mut query_rng);
        log.sessions
            .push(log_session(&exp.production, query, &user, &mut click_rng));
    }

    let trainer = CfTrainer::new(cfg, exp);
    let display = test_performance(&exp.production, &exp.split.test)?;
    let mut series = MetricSeries::new(cfg, run);
    for s in cfg.checkpoint_sessions() {
        let model = trainer.train(&log, s)?;
        series.record(s, test_performance(&model, &exp.split.test)?, display);
    }
    Ok(series)
}

/// Counterfactual learning where every `deploy_interval` sessions the model
/// trained on the whole log so far replaces the logging policy.
pub fn run_counterfactual_deploy(
    cfg: &ExperimentConfig,
    exp: &Experiment,
    run: usize,
) -> Result<MetricSeries> {
    let user = cfg.user()?;
    let seed = run_seed(cfg, run);
    let mut query_rng = stream(seed, Stream::Queries);
    let mut click_rng = stream(seed, Stream::Clicks);

    let train = &exp.split.train;
    let test = &exp.split.test;
    let trainer = CfTrainer::new(cfg, exp);
    let mut policy = exp.production.clone();
    let mut policy_perf = test_performance(&policy, test)?;
    let mut deployed_at = 0;
    let mut log = ClickLog::new("deploy");

    let mut series = MetricSeries::new(cfg, run);
    let mut checkpoints = cfg.checkpoint_sessions().into_iter().peekable();
    for t in 0..=cfg.total_sessions {
        if t > 0 && t % cfg.deploy_interval == 0 {
            policy = trainer.train(&log, t)?;
            policy_perf = test_performance(&policy, test)?;
            deployed_at = t;
        }
        while checkpoints.next_if_eq(&t).is_some() {
            let test_ndcg = if deployed_at == t && t > 0 {
                policy_perf
            } else {
                test_performance(&trainer.train(&log, t)?, test)?
            };
            series.record(t, test_ndcg, policy_perf);
        }
        if t == cfg.total_sessions {
            break;
        }
        let query = sample_query(train, &mut query_rng);
        log.sessions
            .push(log_session(&policy, query, &user, &mut click_rng));
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            dataset: DatasetSource::Synthetic {
                queries: 30,
                docs_per_query: 8,
                features: 5,
                seed: 1,
                shape: Default::default(),
            },
            production_query_fraction: 0.1,
            total_sessions: 600,
            deploy_interval: 200,
            checkpoints: CheckpointSchedule::Explicit(vec![0, 100, 200, 400, 600]),
            cf_learning_rate: vec![0.05],
            cf_epochs: vec![2],
            ..Default::default()
        }
    }

    #[test]
    fn zero_sessions_gives_production_performance() {
        let cfg = ExperimentConfig {
            total_sessions: 1,
            checkpoints: CheckpointSchedule::Explicit(vec![0]),
            ..small(Method::Pdgd)
        };
        let exp = Experiment::prepare(&cfg).unwrap();
        let s = run_pdgd(&cfg, &exp, 0).unwrap();
        assert_eq!(s.samples.len(), 1);
        assert_eq!(s.samples[0].checkpoint_sessions, 0);
        assert_eq!(
            s.samples[0].test_ndcg,
            test_performance(&exp.production, &exp.split.test).unwrap()
        );
    }

    #[test]
    fn series_follow_schedule_and_are_reproducible() {
        for method in Method::ALL {
            let cfg = small(method);
            let exp = Experiment::prepare(&cfg).unwrap();
            let a = run_experiment(&cfg, &exp, 3).unwrap();
            let b = run_experiment(&cfg, &exp, 3).unwrap();
            assert_eq!(a, b, "{method}");
            let sessions: Vec<usize> = a.samples.iter().map(|s| s.checkpoint_sessions).collect();
            assert_eq!(sessions, vec![0, 100, 200, 400, 600]);
            assert!(a.samples.iter().all(|s| (0.0..=1.0).contains(&s.test_ndcg)));
        }
    }

    #[test]
    fn production_series_is_flat() {
        let cfg = small(Method::Production);
        let exp = Experiment::prepare(&cfg).unwrap();
        let s = run_production(&cfg, &exp, 0).unwrap();
        assert!(s
            .samples
            .windows(2)
            .all(|w| w[0].test_ndcg == w[1].test_ndcg));
    }

    #[test]
    fn counterfactual_display_is_constant_production() {
        let cfg = small(Method::CfRank);
        let exp = Experiment::prepare(&cfg).unwrap();
        let s = run_counterfactual(&cfg, &exp, 0).unwrap();
        let prod = test_performance(&exp.production, &exp.split.test).unwrap();
        assert!(s.samples.iter().all(|x| x.display_ndcg == Some(prod)));
        // zero-initialized model at the first checkpoint
        let zero = test_performance(
            &LinearModel::zeros(exp.split.feature_count),
            &exp.split.test,
        )
        .unwrap();
        assert_eq!(s.samples[0].test_ndcg, zero);
    }

    #[test]
    fn counterfactual_checkpoint_uses_log_prefix() {
        let cfg = small(Method::CfDcg);
        let exp = Experiment::prepare(&cfg).unwrap();
        let full = run_counterfactual(&cfg, &exp, 2).unwrap();
        // a shorter run with the same seed collects exactly the prefix
        let short = ExperimentConfig {
            total_sessions: 200,
            checkpoints: CheckpointSchedule::Explicit(vec![200]),
            ..cfg.clone()
        };
        let s = run_counterfactual(&short, &exp, 2).unwrap();
        assert_eq!(s.samples[0].test_ndcg, full.samples[2].test_ndcg);
    }

    #[test]
    fn deploy_without_trigger_matches_plain_counterfactual() {
        let exp = Experiment::prepare(&small(Method::CfRank)).unwrap();
        for (plain, deploy) in [
            (Method::CfRank, Method::CfRankDeploy),
            (Method::CfDcg, Method::CfDcgDeploy),
        ] {
            let a = run_counterfactual(&small(plain), &exp, 1).unwrap();
            let cfg = ExperimentConfig {
                deploy_interval: 601,
                ..small(deploy)
            };
            let b = run_counterfactual_deploy(&cfg, &exp, 1).unwrap();
            assert_eq!(a.samples, b.samples);
        }
    }

    #[test]
    fn deploy_display_changes_only_at_boundaries() {
        let cfg = ExperimentConfig {
            checkpoints: CheckpointSchedule::Explicit((0..=600).step_by(50).collect()),
            ..small(Method::CfDcgDeploy)
        };
        let exp = Experiment::prepare(&cfg).unwrap();
        let s = run_counterfactual_deploy(&cfg, &exp, 0).unwrap();
        for w in s.samples.windows(2) {
            let boundary = w[1].checkpoint_sessions % cfg.deploy_interval == 0;
            if !boundary {
                assert_eq!(w[0].display_ndcg, w[1].display_ndcg, "{:?}", w);
            }
        }
        // at a boundary the live policy is the model trained at that point
        for x in &s.samples {
            if x.checkpoint_sessions > 0 && x.checkpoint_sessions % cfg.deploy_interval == 0 {
                assert_eq!(x.display_ndcg, Some(x.test_ndcg));
            }
        }
    }

    #[test]
    fn validation_grid_selects_a_candidate() {
        let cfg = ExperimentConfig {
            cf_learning_rate: vec![0.0, 0.05],
            ..small(Method::CfRank)
        };
        let exp = Experiment::prepare(&cfg).unwrap();
        let s = run_counterfactual(&cfg, &exp, 0).unwrap();
        assert_eq!(s.samples.len(), 5);
    }
}
