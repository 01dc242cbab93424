//! LETOR / SVMLight ranking datasets.
//!
//! Lines look like `<label> qid:<id> <idx>:<val> ... [# comment]`. Feature
//! indices are 1-based and strictly ascending; missing indices are zero.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};

pub const MAX_RELEVANCE: u8 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    /// Position within the query's candidate set.
    pub doc_index: usize,
    pub features: Vec<f64>,
    pub relevance: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub qid: String,
    pub documents: Vec<Document>,
}

impl Query {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn relevances(&self) -> impl Iterator<Item = u8> + '_ {
        self.documents.iter().map(|d| d.relevance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Query>,
    pub validation: Vec<Query>,
    pub test: Vec<Query>,
    pub feature_count: usize,
}

impl DatasetSplit {
    /// Assembles a split, zero-padding every document to the widest feature
    /// vector found in any partition.
    pub fn new(
        mut train: Vec<Query>,
        mut validation: Vec<Query>,
        mut test: Vec<Query>,
    ) -> Result<Self> {
        let feature_count = train
            .iter()
            .chain(&validation)
            .chain(&test)
            .flat_map(|q| q.documents.iter().map(|d| d.features.len()))
            .max()
            .unwrap_or(0);
        if feature_count == 0 {
            return Err(Error::Config("dataset has no features".into()));
        }
        for (name, part) in [
            ("train", &mut train),
            ("validation", &mut validation),
            ("test", &mut test),
        ] {
            let mut seen = HashSet::new();
            for q in part.iter_mut() {
                if !seen.insert(q.qid.clone()) {
                    return Err(Error::Config(format!(
                        "duplicate qid {:?} in {name} partition",
                        q.qid
                    )));
                }
                for d in &mut q.documents {
                    d.features.resize(feature_count, 0.0);
                }
            }
        }
        Ok(DatasetSplit {
            train,
            validation,
            test,
            feature_count,
        })
    }
}

/// Parses a LETOR stream. The feature dimension is the largest index seen in
/// the input.
pub fn parse_letor<R: BufRead>(input: R) -> Result<Vec<Query>> {
    parse(input, None)
}

/// Parses a LETOR stream into vectors of exactly `feature_count` entries.
/// An index beyond `feature_count` is a parse error.
pub fn parse_letor_with_features<R: BufRead>(input: R, feature_count: usize) -> Result<Vec<Query>> {
    parse(input, Some(feature_count))
}

struct Record {
    relevance: u8,
    features: Vec<(usize, f64)>,
}

fn parse<R: BufRead>(input: R, feature_count: Option<usize>) -> Result<Vec<Query>> {
    let mut blocks: Vec<(String, Vec<Record>)> = Vec::new();
    let mut closed: HashSet<String> = HashSet::new();
    let mut max_index = 0usize;

    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let data = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let mut tokens = data.split_whitespace();
        let Some(label) = tokens.next() else {
            continue;
        };
        let relevance: u8 = label
            .parse()
            .ok()
            .filter(|r| *r <= MAX_RELEVANCE)
            .ok_or_else(|| Error::parse(lineno, format!("malformed label {label:?}")))?;

        let qid_token = tokens
            .next()
            .ok_or_else(|| Error::parse(lineno, "missing qid token"))?;
        let qid = qid_token
            .strip_prefix("qid:")
            .filter(|id| !id.is_empty())
            .ok_or_else(|| Error::parse(lineno, format!("malformed qid token {qid_token:?}")))?;

        let mut features = Vec::new();
        let mut last = 0usize;
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::parse(lineno, format!("malformed feature pair {tok:?}")))?;
            let idx: usize = idx.parse().ok().filter(|&k| k >= 1).ok_or_else(|| {
                Error::parse(lineno, format!("malformed feature index in {tok:?}"))
            })?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    Error::parse(lineno, format!("malformed feature value in {tok:?}"))
                })?;
            if idx <= last {
                return Err(Error::parse(
                    lineno,
                    format!("feature index {idx} is not strictly ascending"),
                ));
            }
            if let Some(fc) = feature_count {
                if idx > fc {
                    return Err(Error::parse(
                        lineno,
                        format!("feature index {idx} exceeds feature count {fc}"),
                    ));
                }
            }
            last = idx;
            features.push((idx, val));
        }
        max_index = max_index.max(last);

        let record = Record {
            relevance,
            features,
        };
        match blocks.last_mut() {
            Some((current, records)) if current == qid => records.push(record),
            _ => {
                if let Some((prev, _)) = blocks.last() {
                    closed.insert(prev.clone());
                }
                if closed.contains(qid) {
                    return Err(Error::parse(
                        lineno,
                        format!("qid {qid} appears in a non-contiguous block"),
                    ));
                }
                blocks.push((qid.to_string(), vec![record]));
            }
        }
    }

    let dim = feature_count.unwrap_or(max_index);
    Ok(blocks
        .into_iter()
        .map(|(qid, records)| Query {
            qid,
            documents: records
                .into_iter()
                .enumerate()
                .map(|(doc_index, r)| {
                    let mut features = vec![0.0; dim];
                    for (idx, val) in r.features {
                        features[idx - 1] = val;
                    }
                    Document {
                        doc_index,
                        features,
                        relevance: r.relevance,
                    }
                })
                .collect(),
        })
        .collect())
}

/// Writes queries in LETOR format with every feature listed explicitly.
pub fn write_letor<W: Write>(queries: &[Query], mut out: W) -> Result<()> {
    let mut line = String::new();
    for q in queries {
        for d in &q.documents {
            line.clear();
            write!(line, "{} qid:{}", d.relevance, q.qid).unwrap();
            for (k, v) in d.features.iter().enumerate() {
                write!(line, " {}:{}", k + 1, v).unwrap();
            }
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

/// Min-max scales every feature to [0, 1] using train-partition statistics.
pub fn normalize(split: &DatasetSplit) -> DatasetSplit {
    let fc = split.feature_count;
    let mut lo = vec![f64::INFINITY; fc];
    let mut hi = vec![f64::NEG_INFINITY; fc];
    for d in split.train.iter().flat_map(|q| &q.documents) {
        for (k, &v) in d.features.iter().enumerate() {
            lo[k] = lo[k].min(v);
            hi[k] = hi[k].max(v);
        }
    }
    let scale = |part: &[Query]| -> Vec<Query> {
        part.iter()
            .map(|q| Query {
                qid: q.qid.clone(),
                documents: q
                    .documents
                    .iter()
                    .map(|d| Document {
                        doc_index: d.doc_index,
                        relevance: d.relevance,
                        features: d
                            .features
                            .iter()
                            .enumerate()
                            .map(|(k, &v)| {
                                let range = hi[k] - lo[k];
                                if range > 0.0 {
                                    ((v - lo[k]) / range).clamp(0.0, 1.0)
                                } else {
                                    0.0
                                }
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect()
    };
    DatasetSplit {
        train: scale(&split.train),
        validation: scale(&split.validation),
        test: scale(&split.test),
        feature_count: fc,
    }
}

/// Knobs of the synthetic generator beyond its size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticShape {
    /// Standard deviation of the noise added to the teacher score.
    pub label_noise: f64,
    /// Standard deviation of the per-query shift of the teacher score.
    pub query_shift: f64,
    /// Log-scale standard deviation of log-normal feature values; 0 gives
    /// Gaussian features.
    pub feature_skew: f64,
}

impl Default for SyntheticShape {
    fn default() -> Self {
        SyntheticShape {
            label_noise: 0.5,
            query_shift: 0.3,
            feature_skew: 1.0,
        }
    }
}

/// Grade boundaries in units of the teacher score's standard deviation.
const GRADE_THRESHOLDS: [f64; 4] = [0.25, 0.75, 1.2, 1.65];

/// Mean and standard deviation of exp(σ·g) for standard normal g.
fn lognormal_moments(sigma: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    ((0.5 * s2).exp(), ((s2.exp() - 1.0) * s2.exp()).sqrt())
}

/// [`generate_synthetic_with`] using the default shape.
pub fn generate_synthetic(
    num_queries: usize,
    docs_per_query: usize,
    feature_count: usize,
    seed: u64,
) -> DatasetSplit {
    generate_synthetic_with(
        num_queries,
        docs_per_query,
        feature_count,
        seed,
        &SyntheticShape::default(),
    )
}

/// Generates a synthetic dataset whose labels are a noisy, binned function of
/// a hidden linear teacher over the standardized features. Queries are split
/// 60/20/20 into train/validation/test.
pub fn generate_synthetic_with(
    num_queries: usize,
    docs_per_query: usize,
    feature_count: usize,
    seed: u64,
    shape: &SyntheticShape,
) -> DatasetSplit {
    assert!(num_queries >= 1 && docs_per_query >= 1 && feature_count >= 1);
    assert!(shape.label_noise >= 0.0 && shape.query_shift >= 0.0 && shape.feature_skew >= 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut teacher: Vec<f64> = (0..feature_count)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let norm = teacher.iter().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        teacher.iter_mut().for_each(|w| *w /= norm);
    } else {
        teacher[0] = 1.0;
    }

    let (mean, sd) = if shape.feature_skew > 0.0 {
        lognormal_moments(shape.feature_skew)
    } else {
        (0.0, 1.0)
    };
    let spread = (1.0 + shape.label_noise.powi(2) + shape.query_shift.powi(2)).sqrt();
    let noise = Normal::new(0.0, shape.label_noise).unwrap();
    let shift = Normal::new(0.0, shape.query_shift).unwrap();
    let mut queries: Vec<Query> = (0..num_queries)
        .map(|qi| {
            let offset = shift.sample(&mut rng);
            let documents = (0..docs_per_query)
                .map(|doc_index| {
                    let features: Vec<f64> = (0..feature_count)
                        .map(|_| {
                            let g: f64 = StandardNormal.sample(&mut rng);
                            if shape.feature_skew > 0.0 {
                                (shape.feature_skew * g).exp()
                            } else {
                                g
                            }
                        })
                        .collect();
                    let z = teacher
                        .iter()
                        .zip(&features)
                        .map(|(w, x)| w * (x - mean) / sd)
                        .sum::<f64>()
                        + offset
                        + noise.sample(&mut rng);
                    let relevance =
                        GRADE_THRESHOLDS.iter().filter(|&&t| z > t * spread).count() as u8;
                    Document {
                        doc_index,
                        features,
                        relevance,
                    }
                })
                .collect();
            Query {
                qid: (qi + 1).to_string(),
                documents,
            }
        })
        .collect();
    queries.shuffle(&mut rng);

    let n_val = num_queries * 2 / 10;
    let n_test = num_queries * 2 / 10;
    let n_train = num_queries - n_val - n_test;
    let test = queries.split_off(n_train + n_val);
    let validation = queries.split_off(n_train);
    DatasetSplit {
        train: queries,
        validation,
        test,
        feature_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse_str(s: &str) -> Result<Vec<Query>> {
        parse_letor(s.as_bytes())
    }

    #[test]
    fn parses_line_with_comment_and_gaps() {
        let qs = parse_letor_with_features("2 qid:10 1:0.5 3:0.25 # docA\n".as_bytes(), 3).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].qid, "10");
        assert_eq!(
            qs[0].documents[0],
            Document {
                doc_index: 0,
                features: vec![0.5, 0.0, 0.25],
                relevance: 2
            }
        );
    }

    #[test]
    fn featureless_line_is_all_zeros() {
        let qs = parse_letor_with_features("0 qid:7\n".as_bytes(), 4).unwrap();
        assert_eq!(qs[0].documents[0].features, vec![0.0; 4]);
        assert_eq!(qs[0].documents[0].relevance, 0);
    }

    #[test]
    fn rejects_non_ascending_indices() {
        let err = parse_str("1 qid:3 2:0.1 1:0.9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = parse_str("1 qid:3 2:0.1 2:0.9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn malformed_tokens_report_line_numbers() {
        assert!(matches!(
            parse_str("1 qid:1 1:1\nx qid:1 1:1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_str("7 qid:1 1:1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_str("1 q:1 1:1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_str("1 qid: 1:1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_str("\n1 qid:1 0:1\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_str("1 qid:1 1:abc\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_str("1 qid:1 1-2\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_letor_with_features("1 qid:1 5:1\n".as_bytes(), 4),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_str("").unwrap().is_empty());
        assert!(parse_str("\n  \n# only a comment\n").unwrap().is_empty());
    }

    #[test]
    fn groups_contiguous_qids() {
        let qs = parse_str("1 qid:a 1:1\n0 qid:a 1:2\n3 qid:b 2:1\n").unwrap();
        assert_eq!(qs.len(), 2);
        assert_eq!(qs[0].documents.len(), 2);
        assert_eq!(qs[0].documents[1].doc_index, 1);
        assert_eq!(qs[1].documents[0].features, vec![0.0, 1.0]);
    }

    #[test]
    fn non_contiguous_qid_is_error() {
        let err = parse_str("1 qid:a\n1 qid:b\n1 qid:a\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }

    fn split_of(train: Vec<Vec<f64>>, test: Vec<Vec<f64>>) -> DatasetSplit {
        let mk = |rows: Vec<Vec<f64>>, qid: &str| Query {
            qid: qid.into(),
            documents: rows
                .into_iter()
                .enumerate()
                .map(|(i, features)| Document {
                    doc_index: i,
                    features,
                    relevance: 0,
                })
                .collect(),
        };
        DatasetSplit::new(vec![mk(train, "1")], vec![], vec![mk(test, "2")]).unwrap()
    }

    #[test]
    fn min_max_scaling_on_train() {
        let s = normalize(&split_of(
            vec![vec![2.0, 3.0], vec![4.0, 3.0], vec![6.0, 3.0]],
            vec![vec![10.0, 5.0], vec![0.0, 3.0]],
        ));
        let train: Vec<_> = s.train[0]
            .documents
            .iter()
            .map(|d| d.features.clone())
            .collect();
        assert_eq!(train, vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![1.0, 0.0]]);
        assert_eq!(s.test[0].documents[0].features, vec![1.0, 0.0]);
        assert_eq!(s.test[0].documents[1].features, vec![0.0, 0.0]);
    }

    #[test]
    fn split_rejects_duplicate_qids_and_pads() {
        let q = |qid: &str, dim: usize| Query {
            qid: qid.into(),
            documents: vec![Document {
                doc_index: 0,
                features: vec![1.0; dim],
                relevance: 1,
            }],
        };
        assert!(DatasetSplit::new(vec![q("1", 1), q("1", 1)], vec![], vec![]).is_err());
        let s = DatasetSplit::new(vec![q("1", 1)], vec![q("1", 3)], vec![]).unwrap();
        assert_eq!(s.feature_count, 3);
        assert_eq!(s.train[0].documents[0].features, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn synthetic_is_deterministic_and_split_60_20_20() {
        let a = generate_synthetic(10, 5, 3, 42);
        let b = generate_synthetic(10, 5, 3, 42);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (6, 2, 2));
        let text = |s: &DatasetSplit| {
            let mut buf = Vec::new();
            for part in [&s.train, &s.validation, &s.test] {
                write_letor(part, &mut buf).unwrap();
            }
            buf
        };
        assert_eq!(text(&a), text(&b));
        assert_ne!(text(&a), text(&generate_synthetic(10, 5, 3, 43)));

        let all: Vec<_> = a.train.iter().chain(&a.validation).chain(&a.test).collect();
        let qids: HashSet<_> = all.iter().map(|q| q.qid.clone()).collect();
        assert_eq!(qids.len(), 10);
        assert!(all
            .iter()
            .flat_map(|q| q.relevances())
            .all(|r| r <= MAX_RELEVANCE));
    }

    #[test]
    fn synthetic_labels_cover_several_grades() {
        let s = generate_synthetic(50, 20, 8, 1);
        let mut counts = [0usize; 5];
        for r in s.train.iter().flat_map(|q| q.relevances()) {
            counts[r as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    fn arb_queries() -> impl Strategy<Value = Vec<Query>> {
        (1usize..5, 1usize..4).prop_flat_map(|(dim, nq)| {
            prop::collection::vec(
                prop::collection::vec((0u8..=4, prop::collection::vec(-1e3f64..1e3, dim)), 1..5),
                nq,
            )
            .prop_map(|qs| {
                qs.into_iter()
                    .enumerate()
                    .map(|(i, docs)| Query {
                        qid: format!("q{i}"),
                        documents: docs
                            .into_iter()
                            .enumerate()
                            .map(|(doc_index, (relevance, features))| Document {
                                doc_index,
                                features,
                                relevance,
                            })
                            .collect(),
                    })
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn write_then_parse_round_trips(queries in arb_queries()) {
            let mut buf = Vec::new();
            write_letor(&queries, &mut buf).unwrap();
            let back = parse_letor(buf.as_slice()).unwrap();
            prop_assert_eq!(&back, &queries);
            let lines = buf.split(|&b| b == b'\n').filter(|l| !l.is_empty()).count();
            prop_assert_eq!(back.iter().map(|q| q.len()).sum::<usize>(), lines);
        }

        #[test]
        fn normalized_train_lies_in_unit_interval(seed in 0u64..1000) {
            let s = normalize(&generate_synthetic(10, 4, 3, seed));
            for part in [&s.train, &s.validation, &s.test] {
                for d in part.iter().flat_map(|q| &q.documents) {
                    prop_assert!(d.features.iter().all(|v| (0.0..=1.0).contains(v)));
                }
            }
        }
    }
}
