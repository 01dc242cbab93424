//! Simulated users: click noise, position bias and selection bias.
//!
//! A document at rank `i` is observed with probability `(1/i)^η` (zero beyond
//! the selection cutoff) and, once observed, clicked with a probability that
//! depends only on its relevance grade. Observations are independent across
//! ranks.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::letor::Query;
use crate::model::Ranking;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClickBehavior {
    Perfect,
    Binarized,
    NearRandom,
}

impl ClickBehavior {
    /// Click probability after observation, indexed by relevance grade 0..=4.
    pub fn default_click_probs(self) -> [f64; 5] {
        match self {
            ClickBehavior::Perfect => [0.0, 0.2, 0.4, 0.8, 1.0],
            ClickBehavior::Binarized => [0.1, 0.1, 0.1, 1.0, 1.0],
            ClickBehavior::NearRandom => [0.4, 0.45, 0.5, 0.55, 0.6],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClickBehavior::Perfect => "Perfect",
            ClickBehavior::Binarized => "Binarized",
            ClickBehavior::NearRandom => "NearRandom",
        }
    }
}

impl fmt::Display for ClickBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClickBehavior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "perfect" => Ok(ClickBehavior::Perfect),
            "binarized" => Ok(ClickBehavior::Binarized),
            "near_random" | "nearrandom" => Ok(ClickBehavior::NearRandom),
            _ => Err(Error::Config(format!("unknown user model {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserModel {
    pub behavior: ClickBehavior,
    pub click_probs: [f64; 5],
    pub eta: f64,
    pub selection_cutoff: Option<usize>,
}

impl UserModel {
    /// Builds a user with the built-in click table. The Perfect user observes
    /// every document, so it only accepts `eta = 0`.
    pub fn new(behavior: ClickBehavior, eta: f64, selection_cutoff: Option<usize>) -> Result<Self> {
        if !(eta.is_finite() && eta >= 0.0) {
            return Err(Error::Config(format!(
                "eta must be finite and non-negative, got {eta}"
            )));
        }
        if behavior == ClickBehavior::Perfect && eta > 0.0 {
            return Err(Error::Config(
                "the Perfect user has no position bias; eta must be 0".into(),
            ));
        }
        if selection_cutoff == Some(0) {
            return Err(Error::Config("selection cutoff must be positive".into()));
        }
        Ok(UserModel {
            behavior,
            click_probs: behavior.default_click_probs(),
            eta,
            selection_cutoff,
        })
    }

    pub fn perfect(selection_cutoff: Option<usize>) -> Self {
        Self::new(ClickBehavior::Perfect, 0.0, selection_cutoff).unwrap()
    }

    pub fn binarized(eta: f64, selection_cutoff: Option<usize>) -> Self {
        Self::new(ClickBehavior::Binarized, eta, selection_cutoff).unwrap()
    }

    pub fn near_random(eta: f64, selection_cutoff: Option<usize>) -> Self {
        Self::new(ClickBehavior::NearRandom, eta, selection_cutoff).unwrap()
    }

    pub fn with_click_probs(mut self, probs: [f64; 5]) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!(
                "click probabilities must lie in [0, 1]: {probs:?}"
            )));
        }
        self.click_probs = probs;
        Ok(self)
    }

    /// Number of documents shown for a candidate list of `n` documents.
    pub fn display_length(&self, n: usize) -> usize {
        self.selection_cutoff.map_or(n, |k| k.min(n))
    }
}

/// Probability that the user examines 1-based `rank`.
pub fn observation_probability(rank: usize, user: &UserModel) -> f64 {
    assert!(rank >= 1, "ranks are 1-based");
    if user.selection_cutoff.is_some_and(|k| rank > k) {
        return 0.0;
    }
    if user.behavior == ClickBehavior::Perfect {
        return 1.0;
    }
    (1.0 / rank as f64).powf(user.eta)
}

pub fn click_probability(relevance: u8, user: &UserModel) -> f64 {
    user.click_probs[relevance as usize]
}

/// Clicks aligned with the displayed ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickVector(pub Vec<bool>);

impl ClickVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&c| c).count()
    }

    /// 0-based positions of clicked entries.
    pub fn clicked_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| i)
    }
}

/// Simulates one user session over `ranking`.
///
/// For each position in order, one uniform draw decides observation (skipped
/// when the observation probability is 0) and, if observed, one more decides
/// the click.
pub fn simulate_session<R: Rng + ?Sized>(
    ranking: &Ranking,
    query: &Query,
    user: &UserModel,
    rng: &mut R,
) -> ClickVector {
    let clicks = ranking
        .as_slice()
        .iter()
        .enumerate()
        .map(|(pos, &doc)| {
            let p_obs = observation_probability(pos + 1, user);
            if p_obs <= 0.0 || rng.random::<f64>() >= p_obs {
                return false;
            }
            rng.random::<f64>() < click_probability(query.documents[doc].relevance, user)
        })
        .collect();
    ClickVector(clicks)
}

/// Draws a query uniformly at random.
pub fn sample_query<'a, R: Rng + ?Sized>(partition: &'a [Query], rng: &mut R) -> &'a Query {
    assert!(
        !partition.is_empty(),
        "cannot sample from an empty partition"
    );
    &partition[rng.random_range(0..partition.len())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::letor::Document;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn query(rels: &[u8]) -> Query {
        Query {
            qid: "q".into(),
            documents: rels
                .iter()
                .enumerate()
                .map(|(i, &r)| Document {
                    doc_index: i,
                    features: vec![0.0],
                    relevance: r,
                })
                .collect(),
        }
    }

    fn identity(n: usize) -> Ranking {
        Ranking((0..n).collect())
    }

    #[test]
    fn observation_examples() {
        for eta in [0.0, 1.0, 2.0, 3.5] {
            assert_eq!(
                observation_probability(1, &UserModel::binarized(eta, None)),
                1.0
            );
        }
        assert_eq!(
            observation_probability(2, &UserModel::binarized(1.0, None)),
            0.5
        );
        assert_eq!(
            observation_probability(4, &UserModel::near_random(2.0, None)),
            0.0625
        );
        assert_eq!(
            observation_probability(11, &UserModel::binarized(1.0, Some(10))),
            0.0
        );
        assert_eq!(
            observation_probability(10, &UserModel::binarized(1.0, Some(10))),
            0.1
        );
        assert_eq!(observation_probability(50, &UserModel::perfect(None)), 1.0);
        assert_eq!(
            observation_probability(11, &UserModel::perfect(Some(10))),
            0.0
        );
    }

    #[test]
    fn click_table() {
        assert_eq!(click_probability(3, &UserModel::perfect(None)), 0.80);
        assert_eq!(click_probability(2, &UserModel::binarized(1.0, None)), 0.10);
        assert_eq!(click_probability(3, &UserModel::binarized(1.0, None)), 1.00);
        assert_eq!(
            click_probability(2, &UserModel::near_random(1.0, None)),
            0.50
        );
    }

    #[test]
    fn config_validation() {
        assert!(UserModel::new(ClickBehavior::Perfect, 1.0, None).is_err());
        assert!(UserModel::new(ClickBehavior::Perfect, 0.0, None).is_ok());
        assert!(UserModel::new(ClickBehavior::Binarized, -1.0, None).is_err());
        assert!(UserModel::new(ClickBehavior::Binarized, 1.0, Some(0)).is_err());
        assert!(UserModel::perfect(None)
            .with_click_probs([0.0, 0.0, 0.0, 0.0, 1.5])
            .is_err());
        let u = UserModel::perfect(None).with_click_probs([0.5; 5]).unwrap();
        assert_eq!(click_probability(0, &u), 0.5);
        assert_eq!(
            "Near-Random".parse::<ClickBehavior>().unwrap(),
            ClickBehavior::NearRandom
        );
        assert!("cascade".parse::<ClickBehavior>().is_err());
    }

    #[test]
    fn perfect_user_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let user = UserModel::perfect(None);
        let zeros = query(&[0; 8]);
        let fours = query(&[4; 8]);
        for _ in 0..1000 {
            assert_eq!(
                simulate_session(&identity(8), &zeros, &user, &mut rng).count(),
                0
            );
            assert_eq!(
                simulate_session(&identity(8), &fours, &user, &mut rng).count(),
                8
            );
        }
    }

    #[test]
    fn binarized_click_rate_at_rank_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let user = UserModel::binarized(1.0, None);
        let q = query(&[0, 3]);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| simulate_session(&identity(2), &q, &user, &mut rng).0[1])
            .count();
        let rate = hits as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.01, "{rate}");
    }

    #[test]
    fn sessions_are_reproducible() {
        let user = UserModel::near_random(1.0, None);
        let q = query(&[0, 1, 2, 3, 4, 0, 1]);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| simulate_session(&identity(7), &q, &user, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn query_sampling() {
        let single = vec![query(&[1])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_query(&single, &mut rng), &single[0]);

        let parts: Vec<Query> = (0..10)
            .map(|i| Query {
                qid: i.to_string(),
                ..query(&[0])
            })
            .collect();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| sample_query(&parts, &mut rng).qid.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));

        let mut counts = [0usize; 10];
        let n = 1_000_000;
        for _ in 0..n {
            counts[sample_query(&parts, &mut rng).qid.parse::<usize>().unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.1).abs() < 0.003, "{counts:?}");
        }
    }

    #[test]
    #[should_panic(expected = "empty partition")]
    fn sampling_empty_partition_panics() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        sample_query(&[], &mut rng);
    }

    proptest! {
        #[test]
        fn observation_non_increasing(eta in 0.0f64..4.0, cutoff in prop::option::of(1usize..15)) {
            let user = UserModel::binarized(eta, cutoff);
            for rank in 1..30 {
                prop_assert!(observation_probability(rank + 1, &user) <= observation_probability(rank, &user));
            }
        }

        #[test]
        fn no_clicks_beyond_cutoff(seed in 0u64..500, cutoff in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = query(&[4, 3, 2, 1, 0, 4, 3, 2, 1, 0]);
            for user in [UserModel::perfect(Some(cutoff)), UserModel::near_random(1.0, Some(cutoff))] {
                let c = simulate_session(&identity(10), &q, &user, &mut rng);
                prop_assert!(c.clicked_positions().all(|p| p < cutoff));
            }
        }
    }
}
