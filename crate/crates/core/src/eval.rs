//! Ranking metrics and significance testing.

use rand::Rng;

use crate::error::{Error, Result};
use crate::letor::Query;
use crate::model::{rank_deterministic, LinearModel, Ranking};
use crate::oltr::PdgdLearner;

pub const EVAL_CUTOFF: usize = 10;

/// Σ_{i ≤ k} (2^rel_i − 1) / log₂(i + 1).
pub fn dcg_at_k(relevances: &[u8], k: usize) -> f64 {
    assert!(k >= 1, "k must be positive");
    relevances
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &rel)| ((1u32 << rel) - 1) as f64 / ((i + 2) as f64).log2())
        .sum()
}

/// DCG of `ranking` over the ideal DCG of the query; 0 when no document is
/// relevant. `ranking` may be a prefix of the candidate list.
pub fn ndcg_at_k(ranking: &Ranking, query: &Query, k: usize) -> f64 {
    let mut ideal: Vec<u8> = query.relevances().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let ideal_dcg = dcg_at_k(&ideal, k);
    if ideal_dcg == 0.0 {
        return 0.0;
    }
    let shown: Vec<u8> = ranking
        .as_slice()
        .iter()
        .map(|&d| query.documents[d].relevance)
        .collect();
    dcg_at_k(&shown, k) / ideal_dcg
}

/// Mean nDCG@10 of the deterministic ranking over `test`.
pub fn test_performance(model: &LinearModel, test: &[Query]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Undefined(
            "test performance on an empty query set".into(),
        ));
    }
    let total: f64 = test
        .iter()
        .map(|q| ndcg_at_k(&rank_deterministic(model, q), q, EVAL_CUTOFF))
        .sum();
    Ok(total / test.len() as f64)
}

/// Something that decides what a user is shown for a query.
pub trait DisplayPolicy {
    fn display<R: Rng + ?Sized>(&self, query: &Query, rng: &mut R) -> Ranking;
}

impl DisplayPolicy for LinearModel {
    fn display<R: Rng + ?Sized>(&self, query: &Query, _rng: &mut R) -> Ranking {
        rank_deterministic(self, query)
    }
}

impl DisplayPolicy for PdgdLearner {
    fn display<R: Rng + ?Sized>(&self, query: &Query, rng: &mut R) -> Ranking {
        self.sample(query, rng)
    }
}

/// Mean nDCG@10 of one displayed ranking per held-out query, exploration
/// included.
pub fn display_performance<P: DisplayPolicy, R: Rng + ?Sized>(
    policy: &P,
    held_out: &[Query],
    rng: &mut R,
) -> Result<f64> {
    if held_out.is_empty() {
        return Err(Error::Undefined(
            "display performance on an empty query set".into(),
        ));
    }
    let total: f64 = held_out
        .iter()
        .map(|q| ndcg_at_k(&policy.display(q, rng), q, EVAL_CUTOFF))
        .sum();
    Ok(total / held_out.len() as f64)
}

/// Mean computed relative to the first value, so constant input returns that
/// value exactly.
pub fn mean(xs: &[f64]) -> f64 {
    let Some(&x0) = xs.first() else {
        return f64::NAN;
    };
    x0 + xs.iter().map(|x| x - x0).sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator); 0 for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unequal-variance t-test, two-tailed.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Undefined(
            "t-test needs at least two samples per group".into(),
        ));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let va = sample_variance(a) / na;
    let vb = sample_variance(b) / nb;
    let se2 = va + vb;
    if se2.is_nan() || se2 <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    let p_value = if t == 0.0 {
        1.0
    } else {
        regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5).clamp(0.0, 1.0)
    };
    Ok(TTest { t, df, p_value })
}

pub fn two_tailed_t_test(a: &[f64], b: &[f64]) -> Result<f64> {
    welch_t_test(a, b).map(|r| r.p_value)
}

/// Lanczos approximation (g = 7, n = 9).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// I_x(a, b) via the continued fraction, evaluated with the modified Lentz
/// method on whichever tail converges quickly.
pub fn regularized_incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x), "x must lie in [0, 1]");
    if x == 0.0 || x == 1.0 {
        return x;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_continued_fraction(1.0 - x, b, a) / b
    }
}

fn beta_continued_fraction(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-15;
    let clamp = |v: f64| if v.abs() < TINY { TINY } else { v };

    let mut c = 1.0;
    let mut d = 1.0 / clamp(1.0 - (a + b) * x / (a + 1.0));
    let mut h = d;
    for m in 1..10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let even = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
        d = 1.0 / clamp(1.0 + even * d);
        c = clamp(1.0 + even / c);
        h *= d * c;
        let odd = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
        d = 1.0 / clamp(1.0 + odd * d);
        c = clamp(1.0 + odd / c);
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}
