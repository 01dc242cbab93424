//! Pairwise Differentiable Gradient Descent.
//!
//! Rankings are sampled from a Plackett-Luce model over `τ·f_θ(d)`. Clicked
//! documents are preferred over every unclicked document above them and over
//! the first unclicked document below them. Each inferred pair contributes
//! the gradient of the pairwise logistic probability, weighted by
//!
//! ```text
//! ρ = P(R*) / (P(R) + P(R*))
//! ```
//!
//! where `R*` is the displayed ranking with the pair swapped.

use rand::Rng;

use crate::error::{Error, Result};
use crate::letor::{Document, Query};
use crate::model::{LinearModel, Ranking};
use crate::simulation::ClickVector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlackettLuceParams {
    /// Sharpness of the sampling distribution.
    pub tau: f64,
    /// Maximum number of positions to materialize; shorter candidate lists
    /// are sampled in full.
    pub display_length: usize,
}

impl PlackettLuceParams {
    pub fn new(tau: f64, display_length: usize) -> Self {
        assert!(tau > 0.0, "tau must be positive");
        assert!(display_length >= 1, "display length must be positive");
        PlackettLuceParams {
            tau,
            display_length,
        }
    }

    /// Materializes the complete candidate list.
    pub fn full(tau: f64) -> Self {
        Self::new(tau, usize::MAX)
    }

    pub fn length_for(&self, n: usize) -> usize {
        self.display_length.min(n)
    }
}

fn logits(model: &LinearModel, query: &Query, tau: f64) -> Vec<f64> {
    query
        .documents
        .iter()
        .map(|d| tau * model.score(d))
        .collect()
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Samples a ranking position by position from the softmax of `τ·scores`
/// over the remaining candidates. One uniform draw per position.
pub fn sample_ranking<R: Rng + ?Sized>(
    model: &LinearModel,
    query: &Query,
    params: &PlackettLuceParams,
    rng: &mut R,
) -> Ranking {
    let logits = logits(model, query, params.tau);
    let len = params.length_for(query.len());
    let mut remaining: Vec<usize> = (0..query.len()).collect();
    let mut weights = vec![0.0; remaining.len()];
    let mut order = Vec::with_capacity(len);

    for _ in 0..len {
        let max = remaining
            .iter()
            .map(|&d| logits[d])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (w, &d) in weights.iter_mut().zip(&remaining) {
            *w = (logits[d] - max).exp();
            total += *w;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = remaining.len() - 1;
        for (k, &w) in weights[..remaining.len()].iter().enumerate() {
            if target < w {
                pick = k;
                break;
            }
            target -= w;
        }
        order.push(remaining.remove(pick));
    }
    Ranking(order)
}

/// log P(prefix | θ): sum over positions of the log-softmax of the placed
/// document among all candidates not yet placed.
pub fn ranking_log_probability(
    model: &LinearModel,
    query: &Query,
    prefix: &Ranking,
    params: &PlackettLuceParams,
) -> f64 {
    let logits = logits(model, query, params.tau);
    log_probability_from_logits(&logits, prefix.as_slice())
}

fn log_probability_from_logits(logits: &[f64], prefix: &[usize]) -> f64 {
    let mut placed = vec![false; logits.len()];
    for &d in prefix {
        assert!(!placed[d], "document {d} appears twice in ranking");
        placed[d] = true;
    }
    let mut lse = logits
        .iter()
        .zip(&placed)
        .filter(|(_, &p)| !p)
        .fold(f64::NEG_INFINITY, |acc, (&l, _)| log_add_exp(acc, l));
    let mut total = 0.0;
    for &d in prefix.iter().rev() {
        lse = log_add_exp(lse, logits[d]);
        total += logits[d] - lse;
    }
    total
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PreferencePair {
    pub preferred: usize,
    pub dispreferred: usize,
}

/// Clicked documents are preferred over every unclicked document displayed
/// above them and over the first unclicked document displayed below them.
pub fn infer_preferences(displayed: &Ranking, clicks: &ClickVector) -> Vec<PreferencePair> {
    assert_eq!(
        displayed.len(),
        clicks.len(),
        "ranking and clicks are not aligned"
    );
    let docs = displayed.as_slice();
    let clicked = &clicks.0;
    let mut pairs = Vec::new();
    for (pos, &doc) in docs.iter().enumerate() {
        if !clicked[pos] {
            continue;
        }
        for (above, &u) in docs[..pos].iter().enumerate() {
            if !clicked[above] {
                pairs.push(PreferencePair {
                    preferred: doc,
                    dispreferred: u,
                });
            }
        }
        if let Some(below) = (pos + 1..docs.len()).find(|&k| !clicked[k]) {
            pairs.push(PreferencePair {
                preferred: doc,
                dispreferred: docs[below],
            });
        }
    }
    pairs
}

/// ρ(d_i, d_j, R) = P(R*) / (P(R) + P(R*)), computed as the logistic of the
/// log-probability difference over the displayed prefix.
pub fn rho(
    d_i: usize,
    d_j: usize,
    displayed: &Ranking,
    model: &LinearModel,
    query: &Query,
    params: &PlackettLuceParams,
) -> f64 {
    let logits = logits(model, query, params.tau);
    rho_from_logits(d_i, d_j, displayed.as_slice(), &logits)
}

fn rho_from_logits(d_i: usize, d_j: usize, displayed: &[usize], logits: &[f64]) -> f64 {
    assert_ne!(d_i, d_j, "cannot swap a document with itself");
    let pi = displayed
        .iter()
        .position(|&d| d == d_i)
        .expect("d_i must be displayed");
    let pj = displayed
        .iter()
        .position(|&d| d == d_j)
        .expect("d_j must be displayed");
    let mut swapped = displayed.to_vec();
    swapped.swap(pi, pj);
    let log_r = log_probability_from_logits(logits, displayed);
    let log_swapped = log_probability_from_logits(logits, &swapped);
    logistic(log_swapped - log_r)
}

/// P(d_i ≻ d_j | θ) = e^{f(d_i)} / (e^{f(d_i)} + e^{f(d_j)}).
pub fn pair_probability(model: &LinearModel, d_i: &Document, d_j: &Document) -> f64 {
    logistic(model.score(d_i) - model.score(d_j))
}

/// ∇_θ P(d_i ≻ d_j | θ) = P(1 − P)(x_i − x_j).
pub fn pair_preference_gradient(model: &LinearModel, d_i: &Document, d_j: &Document) -> Vec<f64> {
    let p = pair_probability(model, d_i, d_j);
    let c = p * (1.0 - p);
    d_i.features
        .iter()
        .zip(&d_j.features)
        .map(|(a, b)| c * (a - b))
        .collect()
}

/// Σ ρ·∇P over the preferences inferred from one session, evaluated at `model`.
pub fn pdgd_gradient(
    model: &LinearModel,
    query: &Query,
    displayed: &Ranking,
    clicks: &ClickVector,
    params: &PlackettLuceParams,
) -> Vec<f64> {
    let mut grad = vec![0.0; model.dim()];
    let pairs = infer_preferences(displayed, clicks);
    if pairs.is_empty() {
        return grad;
    }
    let logits = logits(model, query, params.tau);
    let scores: Vec<f64> = query.documents.iter().map(|d| model.score(d)).collect();
    for pair in pairs {
        let weight = rho_from_logits(
            pair.preferred,
            pair.dispreferred,
            displayed.as_slice(),
            &logits,
        );
        let p = logistic(scores[pair.preferred] - scores[pair.dispreferred]);
        let c = weight * p * (1.0 - p);
        let xi = &query.documents[pair.preferred].features;
        let xj = &query.documents[pair.dispreferred].features;
        for ((g, a), b) in grad.iter_mut().zip(xi).zip(xj) {
            *g += c * (a - b);
        }
    }
    grad
}

/// θ ← θ + μ Σ ρ·∇P.
pub fn pdgd_update(
    model: &LinearModel,
    query: &Query,
    displayed: &Ranking,
    clicks: &ClickVector,
    learning_rate: f64,
    params: &PlackettLuceParams,
) -> Result<LinearModel> {
    let grad = pdgd_gradient(model, query, displayed, clicks, params);
    let weights: Vec<f64> = model
        .weights
        .iter()
        .zip(&grad)
        .map(|(w, g)| w + learning_rate * g)
        .collect();
    let updated = LinearModel::new(weights);
    if !updated.is_finite() {
        return Err(Error::NonFinite("PDGD update".into()));
    }
    Ok(updated)
}

/// Single-owner online learner: sample, display, receive clicks, update.
#[derive(Debug, Clone)]
pub struct PdgdLearner {
    pub model: LinearModel,
    pub params: PlackettLuceParams,
    pub learning_rate: f64,
}

impl PdgdLearner {
    pub fn new(initial: LinearModel, params: PlackettLuceParams, learning_rate: f64) -> Self {
        PdgdLearner {
            model: initial,
            params,
            learning_rate,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, query: &Query, rng: &mut R) -> Ranking {
        sample_ranking(&self.model, query, &self.params, rng)
    }

    pub fn update(
        &mut self,
        query: &Query,
        displayed: &Ranking,
        clicks: &ClickVector,
    ) -> Result<()> {
        if clicks.count() == 0 {
            return Ok(());
        }
        self.model = pdgd_update(
            &self.model,
            query,
            displayed,
            clicks,
            self.learning_rate,
            &self.params,
        )?;
        Ok(())
    }
}
