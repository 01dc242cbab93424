//! Counterfactual learning to rank from click logs.
//!
//! A fixed logging policy ranks sampled queries deterministically; every
//! session is stored with the examination propensity of each displayed rank.
//! Training minimizes an inverse-propensity-weighted, λ-transformed pairwise
//! hinge objective: each click is compared against every other candidate of
//! its query and its gradient is divided by the click's propensity.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::letor::Query;
use crate::model::{dot, hinge, rank_deterministic, LinearModel, Ranking};
use crate::simulation::{
    observation_probability, sample_query, simulate_session, ClickVector, UserModel,
};

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedSession {
    pub qid: String,
    pub displayed: Ranking,
    pub clicks: ClickVector,
    /// Examination probability of each displayed rank under the logging user.
    pub propensities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClickLog {
    pub sessions: Vec<LoggedSession>,
    pub logging_model_tag: String,
}

impl ClickLog {
    pub fn new(tag: impl Into<String>) -> Self {
        ClickLog {
            sessions: Vec::new(),
            logging_model_tag: tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }

    /// One session per line:
    /// `qid \t doc,doc,... \t 0,1,... \t p,p,...`.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let mut line = String::new();
        for s in &self.sessions {
            line.clear();
            line.push_str(&s.qid);
            line.push('\t');
            join(&mut line, s.displayed.as_slice().iter());
            line.push('\t');
            join(&mut line, s.clicks.0.iter().map(|&c| u8::from(c)));
            line.push('\t');
            join(&mut line, s.propensities.iter());
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R, tag: impl Into<String>) -> Result<Self> {
        let mut log = ClickLog::new(tag);
        for (i, line) in input.lines().enumerate() {
            let lineno = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [qid, displayed, clicks, props] = fields[..] else {
                return Err(Error::parse(
                    lineno,
                    format!("expected 4 tab-separated fields, got {}", fields.len()),
                ));
            };
            let displayed: Vec<usize> = split_list(displayed, lineno)?;
            let clicks: Vec<bool> = split_list::<u8>(clicks, lineno)?
                .into_iter()
                .map(|c| match c {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::parse(lineno, format!("click flag {c} is not 0/1"))),
                })
                .collect::<Result<_>>()?;
            let propensities: Vec<f64> = split_list(props, lineno)?;
            if clicks.len() != displayed.len() || propensities.len() != displayed.len() {
                return Err(Error::parse(
                    lineno,
                    "displayed, clicks and propensities differ in length",
                ));
            }
            log.sessions.push(LoggedSession {
                qid: qid.to_string(),
                displayed: Ranking(displayed),
                clicks: ClickVector(clicks),
                propensities,
            });
        }
        Ok(log)
    }
}

fn join<T: std::fmt::Display>(buf: &mut String, items: impl Iterator<Item = T>) {
    for (i, item) in items.enumerate() {
        if i > 0 {
            buf.push(',');
        }
        write!(buf, "{item}").unwrap();
    }
}

fn split_list<T: std::str::FromStr>(field: &str, lineno: usize) -> Result<Vec<T>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|t| {
            t.parse()
                .map_err(|_| Error::parse(lineno, format!("malformed list entry {t:?}")))
        })
        .collect()
}

/// Ranks `query` with the logging policy, simulates the user on the displayed
/// prefix and attaches the true propensities.
pub fn log_session<R: Rng + ?Sized>(
    policy: &LinearModel,
    query: &Query,
    user: &UserModel,
    click_rng: &mut R,
) -> LoggedSession {
    let mut displayed = rank_deterministic(policy, query);
    displayed.0.truncate(user.display_length(query.len()));
    let clicks = simulate_session(&displayed, query, user, click_rng);
    let propensities = (1..=displayed.len())
        .map(|rank| observation_probability(rank, user))
        .collect();
    LoggedSession {
        qid: query.qid.clone(),
        displayed,
        clicks,
        propensities,
    }
}

/// Collects `n` sessions from the fixed `production` policy.
pub fn collect_log<R: Rng + ?Sized>(
    production: &LinearModel,
    n: usize,
    partition: &[Query],
    user: &UserModel,
    rng: &mut R,
) -> ClickLog {
    assert!(n >= 1, "log size must be positive");
    let mut log = ClickLog::new("production");
    for _ in 0..n {
        let query = sample_query(partition, rng);
        log.sessions.push(log_session(production, query, user, rng));
    }
    log
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LambdaVariant {
    /// λ(r) = r: minimizes the average rank of clicked documents.
    Rank,
    /// λ(r) = −1/log₂(1 + r): maximizes DCG.
    Dcg,
}

pub fn lambda_value(variant: LambdaVariant, r: f64) -> f64 {
    assert!(r >= 1.0, "λ is defined for r ≥ 1, got {r}");
    match variant {
        LambdaVariant::Rank => r,
        LambdaVariant::Dcg => -1.0 / (1.0 + r).log2(),
    }
}

pub fn lambda_derivative(variant: LambdaVariant, r: f64) -> f64 {
    assert!(r >= 1.0, "λ is defined for r ≥ 1, got {r}");
    match variant {
        LambdaVariant::Rank => 1.0,
        LambdaVariant::Dcg => {
            let l = (1.0 + r).ln();
            std::f64::consts::LN_2 / ((1.0 + r) * l * l)
        }
    }
}

/// λ(1 + hinge(θ·x_clicked − θ·x_other)).
pub fn lambda_hinge_loss(
    variant: LambdaVariant,
    model: &LinearModel,
    clicked: &[f64],
    other: &[f64],
) -> f64 {
    let margin = dot(&model.weights, clicked) - dot(&model.weights, other);
    lambda_value(variant, 1.0 + hinge(margin))
}

pub fn lambda_hinge_gradient(
    variant: LambdaVariant,
    model: &LinearModel,
    clicked: &[f64],
    other: &[f64],
) -> Vec<f64> {
    let margin = dot(&model.weights, clicked) - dot(&model.weights, other);
    if margin >= 1.0 {
        return vec![0.0; model.dim()];
    }
    let coef = lambda_derivative(variant, 1.0 + hinge(margin));
    clicked
        .iter()
        .zip(other)
        .map(|(a, b)| -coef * (a - b))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfParams {
    pub variant: LambdaVariant,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Lower bound applied to propensities before division; off by default.
    pub propensity_clip: Option<f64>,
}

pub type QueryIndex<'a> = HashMap<&'a str, &'a Query>;

pub fn index_queries(queries: &[Query]) -> QueryIndex<'_> {
    queries.iter().map(|q| (q.qid.as_str(), q)).collect()
}

fn lookup<'a>(queries: &QueryIndex<'a>, qid: &str) -> Result<&'a Query> {
    queries
        .get(qid)
        .copied()
        .ok_or_else(|| Error::UnknownQuery(qid.to_string()))
}

/// Trains on the first `limit` sessions of `log` (all when `None`), starting
/// from `initial`. Updates are applied per click in log order.
pub fn cf_train(
    log: &ClickLog,
    params: &CfParams,
    initial: &LinearModel,
    queries: &QueryIndex<'_>,
) -> Result<LinearModel> {
    cf_train_prefix(log, log.len(), params, initial, queries)
}

pub fn cf_train_prefix(
    log: &ClickLog,
    limit: usize,
    params: &CfParams,
    initial: &LinearModel,
    queries: &QueryIndex<'_>,
) -> Result<LinearModel> {
    let mut model = initial.clone();
    let dim = model.dim();
    let sessions = &log.sessions[..limit.min(log.len())];
    let mut grad = vec![0.0; dim];
    let mut scores = Vec::new();

    for _ in 0..params.epochs {
        for session in sessions {
            if session.clicks.count() == 0 {
                continue;
            }
            let query = lookup(queries, &session.qid)?;
            for pos in session.clicks.clicked_positions() {
                let mut p = session.propensities[pos];
                if p <= 0.0 {
                    return Err(Error::ZeroPropensity { rank: pos + 1 });
                }
                if let Some(clip) = params.propensity_clip {
                    p = p.max(clip);
                }
                let clicked = &query.documents[session.displayed.0[pos]];

                scores.clear();
                scores.extend(query.documents.iter().map(|d| model.score(d)));
                let s_clicked = scores[clicked.doc_index];

                // ∇ Σ_j λ(1 + hinge(s_i − s_j)) = Σ_j c_j (x_j − x_i)
                grad.iter_mut().for_each(|g| *g = 0.0);
                let mut total = 0.0;
                for (other, &s_other) in query.documents.iter().zip(&scores) {
                    if other.doc_index == clicked.doc_index {
                        continue;
                    }
                    let margin = s_clicked - s_other;
                    if margin >= 1.0 {
                        continue;
                    }
                    let c = lambda_derivative(params.variant, 1.0 + hinge(margin));
                    total += c;
                    grad.iter_mut()
                        .zip(&other.features)
                        .for_each(|(g, x)| *g += c * x);
                }
                if total == 0.0 {
                    continue;
                }
                let step = params.learning_rate / p;
                for ((w, g), x) in model.weights.iter_mut().zip(&grad).zip(&clicked.features) {
                    let gi = g - total * x;
                    *w -= step * gi;
                }
                if !model.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "weights after click at rank {}",
                        pos + 1
                    )));
                }
            }
        }
    }
    Ok(model)
}

/// Rank of `doc` under `scores`: number of candidates scored at least as
/// high, itself included.
pub fn rank_of(scores: &[f64], doc: usize) -> usize {
    let s = scores[doc];
    scores.iter().filter(|&&x| x >= s).count()
}

/// IPS estimate of the per-session λ(rank) objective over clicked documents.
pub fn ips_objective(
    model: &LinearModel,
    log: &ClickLog,
    variant: LambdaVariant,
    queries: &QueryIndex<'_>,
) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::Undefined("IPS objective of an empty log".into()));
    }
    let mut total = 0.0;
    for session in &log.sessions {
        if session.clicks.count() == 0 {
            continue;
        }
        let query = lookup(queries, &session.qid)?;
        let scores = model.scores(query);
        for pos in session.clicks.clicked_positions() {
            let p = session.propensities[pos];
            if p <= 0.0 {
                return Err(Error::ZeroPropensity { rank: pos + 1 });
            }
            let r = rank_of(&scores, session.displayed.0[pos]);
            total += lambda_value(variant, r as f64) / p;
        }
    }
    Ok(total / log.len() as f64)
}

/// IPS-weighted mean rank of clicked documents under `model`, averaged over
/// sessions.
pub fn average_relevant_rank(
    model: &LinearModel,
    log: &ClickLog,
    queries: &QueryIndex<'_>,
) -> Result<f64> {
    ips_objective(model, log, LambdaVariant::Rank, queries)
}
