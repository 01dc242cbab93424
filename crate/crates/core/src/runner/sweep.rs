//! Multi-run execution and CSV output.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use super::{run_experiment, Experiment, ExperimentConfig, Method, MetricSeries};
use crate::error::{Error, Result};
use crate::eval::{mean, sample_variance, two_tailed_t_test};
use crate::simulation::ClickBehavior;

pub const RESULTS_HEADER: &str =
    "run_id,method,user_model,eta,selection_cutoff,sessions,test_ndcg,display_ndcg";
pub const AGGREGATE_HEADER: &str =
    "method,user_model,eta,selection_cutoff,sessions,mean_test_ndcg,std_test_ndcg,mean_display_ndcg,std_display_ndcg";
pub const SIGNIFICANCE_HEADER: &str =
    "user_model,eta,selection_cutoff,sessions,method_a,method_b,metric,p_value";
pub const ERRORS_HEADER: &str = "config,run_id,method,error";

fn cutoff_field(cutoff: Option<usize>) -> String {
    cutoff.map_or_else(|| "none".to_string(), |k| k.to_string())
}

fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// A failed run; the sweep records it and carries on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFailure {
    pub config: String,
    pub run_id: usize,
    pub method: Method,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepOutput {
    /// Successful runs in config order, then run order.
    pub series: Vec<MetricSeries>,
    pub failures: Vec<RunFailure>,
}

impl SweepOutput {
    /// Writes `results.csv`, `aggregate.csv`, `significance.csv` and
    /// `errors.csv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let open = |name: &str| -> Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        write_results(&self.series, open("results.csv")?)?;
        write_aggregate(&aggregate(&self.series), open("aggregate.csv")?)?;
        write_significance(&significance(&self.series), open("significance.csv")?)?;
        let mut out = open("errors.csv")?;
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(ERRORS_HEADER.split(','))?;
        for f in &self.failures {
            w.write_record([
                f.config.as_str(),
                &f.run_id.to_string(),
                f.method.name(),
                &f.message,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every config `num_runs` times on at most `parallelism` threads.
/// Output order does not depend on scheduling.
pub fn run_sweep(configs: &[ExperimentConfig], parallelism: usize) -> Result<SweepOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    pool.install(|| {
        let prepared: Vec<Result<Experiment>> = configs
            .par_iter()
            .map(|cfg| cfg.validate().and_then(|_| Experiment::prepare(cfg)))
            .collect();

        let jobs: Vec<(usize, usize)> = configs
            .iter()
            .enumerate()
            .flat_map(|(c, cfg)| (0..cfg.num_runs).map(move |r| (c, r)))
            .collect();

        let outcomes: Vec<Result<MetricSeries>> = jobs
            .par_iter()
            .map(|&(c, run)| match &prepared[c] {
                Ok(exp) => run_experiment(&configs[c], exp, run),
                Err(e) => Err(Error::Config(e.to_string())),
            })
            .collect();

        let mut output = SweepOutput::default();
        for (&(c, run), outcome) in jobs.iter().zip(outcomes) {
            match outcome {
                Ok(series) => output.series.push(series),
                Err(e) => output.failures.push(RunFailure {
                    config: configs[c].name.clone(),
                    run_id: run,
                    method: configs[c].method,
                    message: e.to_string(),
                }),
            }
        }
        Ok(output)
    })
}

pub fn write_results<W: Write>(series: &[MetricSeries], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_HEADER.split(','))?;
    for s in series {
        for x in &s.samples {
            w.write_record([
                s.run_id.to_string(),
                s.method.name().to_string(),
                s.user_model.name().to_string(),
                s.eta.to_string(),
                cutoff_field(s.selection_cutoff),
                x.checkpoint_sessions.to_string(),
                x.test_ndcg.to_string(),
                opt_field(x.display_ndcg),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Identifies a user-model condition; `eta` is keyed by its bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Condition {
    user_model: ClickBehavior,
    eta_bits: u64,
    selection_cutoff: Option<usize>,
    sessions: usize,
}

impl Condition {
    fn eta(&self) -> f64 {
        f64::from_bits(self.eta_bits)
    }
}

#[derive(Default)]
struct Samples {
    test: Vec<f64>,
    display: Vec<f64>,
}

/// Collects per-(method, condition) samples in first-appearance order.
fn group(series: &[MetricSeries]) -> Vec<((Method, Condition), Samples)> {
    let mut order: Vec<(Method, Condition)> = Vec::new();
    let mut groups: HashMap<(Method, Condition), Samples> = HashMap::new();
    for s in series {
        for x in &s.samples {
            let key = (
                s.method,
                Condition {
                    user_model: s.user_model,
                    eta_bits: s.eta.to_bits(),
                    selection_cutoff: s.selection_cutoff,
                    sessions: x.checkpoint_sessions,
                },
            );
            let entry = groups.entry(key).or_insert_with(|| {
                order.push(key);
                Samples::default()
            });
            entry.test.push(x.test_ndcg);
            entry.display.extend(x.display_ndcg);
        }
    }
    order
        .into_iter()
        .map(|k| {
            let v = groups.remove(&k).expect("grouped key");
            (k, v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub user_model: ClickBehavior,
    pub eta: f64,
    pub selection_cutoff: Option<usize>,
    pub sessions: usize,
    pub mean_test_ndcg: f64,
    pub std_test_ndcg: f64,
    pub mean_display_ndcg: Option<f64>,
    pub std_display_ndcg: Option<f64>,
}

/// Means and sample standard deviations across runs (std is 0 for one run).
pub fn aggregate(series: &[MetricSeries]) -> Vec<AggregateRow> {
    group(series)
        .into_iter()
        .map(|((method, c), v)| {
            let (mean_display_ndcg, std_display_ndcg) = if v.display.is_empty() {
                (None, None)
            } else {
                (
                    Some(mean(&v.display)),
                    Some(sample_variance(&v.display).sqrt()),
                )
            };
            AggregateRow {
                method,
                user_model: c.user_model,
                eta: c.eta(),
                selection_cutoff: c.selection_cutoff,
                sessions: c.sessions,
                mean_test_ndcg: mean(&v.test),
                std_test_ndcg: sample_variance(&v.test).sqrt(),
                mean_display_ndcg,
                std_display_ndcg,
            }
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.method.name().to_string(),
            r.user_model.name().to_string(),
            r.eta.to_string(),
            cutoff_field(r.selection_cutoff),
            r.sessions.to_string(),
            r.mean_test_ndcg.to_string(),
            r.std_test_ndcg.to_string(),
            opt_field(r.mean_display_ndcg),
            opt_field(r.std_display_ndcg),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub user_model: ClickBehavior,
    pub eta: f64,
    pub selection_cutoff: Option<usize>,
    pub sessions: usize,
    pub method_a: Method,
    pub method_b: Method,
    /// `test_ndcg` or `display_ndcg`.
    pub metric: &'static str,
    /// `None` when the test is undefined (fewer than two runs, or both
    /// groups constant).
    pub p_value: Option<f64>,
}

/// Two-tailed Welch p-values between every pair of methods sharing a
/// condition and checkpoint.
pub fn significance(series: &[MetricSeries]) -> Vec<SignificanceRow> {
    let groups = group(series);
    let mut conditions: Vec<Condition> = Vec::new();
    for ((_, c), _) in &groups {
        if !conditions.contains(c) {
            conditions.push(*c);
        }
    }
    let mut rows = Vec::new();
    for c in conditions {
        let members: Vec<&(Method, Condition)> = groups
            .iter()
            .map(|(k, _)| k)
            .filter(|(_, k)| *k == c)
            .collect();
        let samples =
            |m: &(Method, Condition)| &groups.iter().find(|(k, _)| k == m).expect("member").1;
        for (i, a) in members.iter().enumerate() {
            for b in &members[i + 1..] {
                let (sa, sb) = (samples(a), samples(b));
                for (metric, xa, xb) in [
                    ("test_ndcg", &sa.test, &sb.test),
                    ("display_ndcg", &sa.display, &sb.display),
                ] {
                    if xa.is_empty() || xb.is_empty() {
                        continue;
                    }
                    rows.push(SignificanceRow {
                        user_model: c.user_model,
                        eta: c.eta(),
                        selection_cutoff: c.selection_cutoff,
                        sessions: c.sessions,
                        method_a: a.0,
                        method_b: b.0,
                        metric,
                        p_value: two_tailed_t_test(xa, xb).ok(),
                    });
                }
            }
        }
    }
    rows
}

pub fn write_significance<W: Write>(rows: &[SignificanceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SIGNIFICANCE_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.user_model.name().to_string(),
            r.eta.to_string(),
            cutoff_field(r.selection_cutoff),
            r.sessions.to_string(),
            r.method_a.name().to_string(),
            r.method_b.name().to_string(),
            r.metric.to_string(),
            opt_field(r.p_value),
        ])?;
    }
    w.flush()?;
    Ok(())
}
