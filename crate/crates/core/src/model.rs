//! Linear scoring, deterministic ranking and the pairwise-hinge baseline ranker.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::letor::{DatasetSplit, Document, Query};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>) -> Self {
        LinearModel { weights }
    }

    pub fn zeros(feature_count: usize) -> Self {
        LinearModel {
            weights: vec![0.0; feature_count],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn score(&self, doc: &Document) -> f64 {
        dot(&self.weights, &doc.features)
    }

    pub fn scores(&self, query: &Query) -> Vec<f64> {
        query.documents.iter().map(|d| self.score(d)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

/// Whitespace-separated decimal weights on a single line.
impl fmt::Display for LinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, w) in self.weights.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{w}")?;
        }
        Ok(())
    }
}

impl FromStr for LinearModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let weights = s
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|w| w.is_finite())
                    .ok_or_else(|| Error::parse(1, format!("malformed weight {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if weights.is_empty() {
            return Err(Error::parse(1, "model has no weights"));
        }
        Ok(LinearModel { weights })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An ordered list of `doc_index` values, most relevant first. Rankings may be
/// a prefix of the candidate set (the displayed part); indices never repeat.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Ranking(pub Vec<usize>);

impl Ranking {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn position_of(&self, doc: usize) -> Option<usize> {
        self.0.iter().position(|&d| d == doc)
    }
}

/// Sorts by descending score, ties broken by ascending `doc_index`.
pub fn rank_deterministic(model: &LinearModel, query: &Query) -> Ranking {
    rank_by_scores(&model.scores(query))
}

pub(crate) fn rank_by_scores(scores: &[f64]) -> Ranking {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ranking(order)
}

pub fn hinge(x: f64) -> f64 {
    (1.0 - x).max(0.0)
}

/// Feature difference `x⁺ − x⁻` of a pair where the first document is more
/// relevant than the second.
pub fn preference_pairs(query: &Query) -> Vec<Vec<f64>> {
    let docs = &query.documents;
    let mut pairs = Vec::new();
    for hi in docs {
        for lo in docs {
            if hi.relevance > lo.relevance {
                pairs.push(
                    hi.features
                        .iter()
                        .zip(&lo.features)
                        .map(|(a, b)| a - b)
                        .collect(),
                );
            }
        }
    }
    pairs
}

/// Σ max(0, 1 − θ·(x⁺ − x⁻)) over the given pair differences.
pub fn pairwise_hinge_loss(model: &LinearModel, pairs: &[Vec<f64>]) -> f64 {
    pairs
        .iter()
        .map(|diff| hinge(dot(&model.weights, diff)))
        .sum()
}

pub fn pairwise_hinge_gradient(model: &LinearModel, pairs: &[Vec<f64>]) -> Vec<f64> {
    let mut grad = vec![0.0; model.dim()];
    for diff in pairs {
        if dot(&model.weights, diff) < 1.0 {
            grad.iter_mut().zip(diff).for_each(|(g, d)| *g -= d);
        }
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProductionParams {
    pub query_fraction: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProductionParams {
    fn default() -> Self {
        ProductionParams {
            query_fraction: 0.01,
            learning_rate: 0.01,
            epochs: 50,
            l2: 0.0,
            seed: 0,
        }
    }
}

/// Number of training queries used for the baseline: ⌈fraction · n⌉, at least 1.
pub fn production_query_count(fraction: f64, n: usize) -> usize {
    assert!(
        fraction > 0.0 && fraction <= 1.0,
        "query fraction must be in (0, 1]"
    );
    (((fraction * n as f64) - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// Trains the baseline ranker on a random fraction of the train queries by
/// stochastic subgradient descent on the pairwise hinge loss.
pub fn train_production(split: &DatasetSplit, params: &ProductionParams) -> Result<LinearModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = split.train.len();
    if n == 0 {
        return Err(Error::DegenerateTraining("empty train partition".into()));
    }
    let k = production_query_count(params.query_fraction, n);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();

    let mut pairs: Vec<Vec<f64>> = chosen
        .iter()
        .flat_map(|&i| preference_pairs(&split.train[i]))
        .collect();
    if pairs.is_empty() {
        return Err(Error::DegenerateTraining(
            "no document pair with differing relevance among the selected queries".into(),
        ));
    }

    let mut model = LinearModel::zeros(split.feature_count);
    for _ in 0..params.epochs {
        pairs.shuffle(&mut rng);
        for diff in &pairs {
            hinge_sgd_step(&mut model, diff, params.learning_rate, params.l2);
        }
    }
    if !model.is_finite() {
        return Err(Error::NonFinite("production weights diverged".into()));
    }
    Ok(model)
}

/// One subgradient step on `max(0, 1 − θ·diff) + l2/2 · |θ|²`.
pub fn hinge_sgd_step(model: &mut LinearModel, diff: &[f64], learning_rate: f64, l2: f64) {
    let margin = dot(&model.weights, diff);
    if l2 != 0.0 {
        model
            .weights
            .iter_mut()
            .for_each(|w| *w -= learning_rate * l2 * *w);
    }
    if margin < 1.0 {
        model
            .weights
            .iter_mut()
            .zip(diff)
            .for_each(|(w, d)| *w += learning_rate * d);
    }
}
