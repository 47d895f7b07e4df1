//! Few-shot example selection from a training fold.
//!
//! Exact brute-force search over unit vectors: for unit length vectors the
//! L2 distance ordering equals the descending dot-product ordering, so the
//! dot product doubles as the reported similarity.

use std::collections::HashSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Label, Sample};
use crate::llm::{embed, Embedder, LlmError};
use crate::prompt::{example_order, OrderMode, ScoredExample};

const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum FewShotError {
    #[error("cannot build an index from an empty training set")]
    EmptyTrain,
    #[error("requested {k} examples but only {available} candidates")]
    TooFewCandidates { k: usize, available: usize },
    #[error("not enough `{class}` examples: need {needed}, have {available}")]
    InsufficientClassMembers {
        class: Label,
        needed: usize,
        available: usize,
    },
    #[error("balanced selection wants {neg} + {pos} examples but k = {k}")]
    BalanceMismatch { neg: usize, pos: usize, k: usize },
    #[error("similarity selection needs an embedded index")]
    NotEmbedded,
    #[error("selection log is empty")]
    EmptyLog,
    #[error(transparent)]
    Embedding(#[from] LlmError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    /// Unit vector; empty for an index built for random selection.
    pub vector: Vec<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingIndex {
    pub entries: Vec<IndexEntry>,
    pub dimension: usize,
}

impl EmbeddingIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_embedded(&self) -> bool {
        self.dimension > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionMethod {
    Random { seed: u64 },
    Knn,
    KnnBalanced { neg: usize, pos: usize },
}

pub fn build_index(
    train: &[Sample],
    embedder: &dyn Embedder,
) -> Result<EmbeddingIndex, FewShotError> {
    if train.is_empty() {
        return Err(FewShotError::EmptyTrain);
    }
    let mut entries = Vec::with_capacity(train.len());
    for batch in train.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|s| s.text.clone()).collect();
        let vecs = embed(&texts, embedder)?;
        for (s, v) in batch.iter().zip(vecs) {
            entries.push(IndexEntry {
                id: s.id.clone(),
                vector: v,
                label: s.label,
            });
        }
    }
    let dimension = entries[0].vector.len();
    if let Some(bad) = entries.iter().find(|e| e.vector.len() != dimension) {
        return Err(LlmError::DimensionMismatch {
            expected: dimension,
            got: bad.vector.len(),
        }
        .into());
    }
    Ok(EmbeddingIndex { entries, dimension })
}

/// Index without vectors; only usable with [`SelectionMethod::Random`].
pub fn build_unembedded_index(train: &[Sample]) -> Result<EmbeddingIndex, FewShotError> {
    if train.is_empty() {
        return Err(FewShotError::EmptyTrain);
    }
    Ok(EmbeddingIndex {
        entries: train
            .iter()
            .map(|s| IndexEntry {
                id: s.id.clone(),
                vector: Vec::new(),
                label: s.label,
            })
            .collect(),
        dimension: 0,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nearest(cands: &[&IndexEntry], query: &[f64], k: usize) -> Vec<ScoredExample> {
    let scored: Vec<ScoredExample> = cands
        .iter()
        .map(|e| ScoredExample {
            id: e.id.clone(),
            similarity: dot(&e.vector, query),
            label: e.label,
        })
        .collect();
    let mut ranked = example_order(scored, OrderMode::Similarity);
    ranked.truncate(k);
    ranked
}

fn query_seed(seed: u64, query_id: &str) -> u64 {
    let h = crate::llm::cache::sha256_hex(query_id.as_bytes());
    seed ^ u64::from_str_radix(&h[..16], 16).expect("hex digest")
}

/// Selects `k` examples for one query with a precomputed unit query vector.
/// The query's own id is never a candidate. Random picks carry similarity 0
/// and are ordered by id; kNN picks are ordered most similar first, and
/// balanced picks negatives first.
pub fn select_with_vector(
    index: &EmbeddingIndex,
    query_id: &str,
    query: Option<&[f64]>,
    k: usize,
    method: SelectionMethod,
) -> Result<Vec<ScoredExample>, FewShotError> {
    let cands: Vec<&IndexEntry> = index.entries.iter().filter(|e| e.id != query_id).collect();
    if k > cands.len() {
        return Err(FewShotError::TooFewCandidates {
            k,
            available: cands.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    match method {
        SelectionMethod::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(query_seed(seed, query_id));
            let picked = sample(&mut rng, cands.len(), k)
                .into_iter()
                .map(|i| ScoredExample {
                    id: cands[i].id.clone(),
                    similarity: 0.0,
                    label: cands[i].label,
                })
                .collect();
            Ok(example_order(picked, OrderMode::Similarity))
        }
        SelectionMethod::Knn => {
            let q = query
                .filter(|_| index.is_embedded())
                .ok_or(FewShotError::NotEmbedded)?;
            Ok(nearest(&cands, q, k))
        }
        SelectionMethod::KnnBalanced { neg, pos } => {
            if neg + pos != k {
                return Err(FewShotError::BalanceMismatch { neg, pos, k });
            }
            let q = query
                .filter(|_| index.is_embedded())
                .ok_or(FewShotError::NotEmbedded)?;
            let mut out = Vec::with_capacity(k);
            for (class, needed) in [(Label::Exclude, neg), (Label::Include, pos)] {
                let members: Vec<&IndexEntry> =
                    cands.iter().copied().filter(|e| e.label == class).collect();
                if members.len() < needed {
                    return Err(FewShotError::InsufficientClassMembers {
                        class,
                        needed,
                        available: members.len(),
                    });
                }
                out.extend(nearest(&members, q, needed));
            }
            Ok(example_order(out, OrderMode::Balanced))
        }
    }
}

/// Embeds the query text when the method needs it, then selects.
pub fn select(
    index: &EmbeddingIndex,
    query_id: &str,
    query_text: &str,
    k: usize,
    method: SelectionMethod,
    embedder: Option<&dyn Embedder>,
) -> Result<Vec<ScoredExample>, FewShotError> {
    let vector = match (method, embedder) {
        (SelectionMethod::Random { .. }, _) => None,
        (_, Some(e)) if k > 0 => Some(embed(&[query_text.to_string()], e)?.remove(0)),
        _ => None,
    };
    select_with_vector(index, query_id, vector.as_deref(), k, method)
}

/// Percentage of the training set chosen as an example at least once.
pub fn coverage<S: AsRef<str>>(log: &[Vec<S>], train_size: usize) -> Result<f64, FewShotError> {
    if log.is_empty() || train_size == 0 {
        return Err(FewShotError::EmptyLog);
    }
    let used: HashSet<&str> = log.iter().flatten().map(|s| s.as_ref()).collect();
    Ok(used.len() as f64 / train_size as f64 * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::TableEmbedder;

    fn toy() -> EmbeddingIndex {
        let c = [0.8, 0.6];
        EmbeddingIndex {
            entries: vec![
                IndexEntry {
                    id: "a".into(),
                    vector: vec![1.0, 0.0],
                    label: Label::Exclude,
                },
                IndexEntry {
                    id: "b".into(),
                    vector: vec![0.0, 1.0],
                    label: Label::Include,
                },
                IndexEntry {
                    id: "c".into(),
                    vector: c.to_vec(),
                    label: Label::Exclude,
                },
            ],
            dimension: 2,
        }
    }

    fn ids(v: &[ScoredExample]) -> Vec<&str> {
        v.iter().map(|e| e.id.as_str()).collect()
    }

    #[test]
    fn toy_knn_and_balanced() {
        let idx = toy();
        let q = [1.0, 0.0];
        let knn = select_with_vector(&idx, "q", Some(&q), 2, SelectionMethod::Knn).unwrap();
        assert_eq!(ids(&knn), ["a", "c"]);
        let bal = select_with_vector(
            &idx,
            "q",
            Some(&q),
            3,
            SelectionMethod::KnnBalanced { neg: 2, pos: 1 },
        )
        .unwrap();
        assert_eq!(ids(&bal), ["a", "c", "b"]);
        assert!(matches!(
            select_with_vector(
                &idx,
                "q",
                Some(&q),
                3,
                SelectionMethod::KnnBalanced { neg: 1, pos: 2 }
            ),
            Err(FewShotError::InsufficientClassMembers {
                class: Label::Include,
                ..
            })
        ));
    }

    #[test]
    fn query_is_excluded() {
        let idx = toy();
        let r = select_with_vector(&idx, "a", Some(&[1.0, 0.0]), 1, SelectionMethod::Knn).unwrap();
        assert_eq!(ids(&r), ["c"]);
    }

    #[test]
    fn identity_query_has_zero_distance() {
        let e = TableEmbedder::new(vec![
            ("x".into(), vec![2.0, 0.0]),
            ("y".into(), vec![0.0, 3.0]),
            ("q".into(), vec![5.0, 0.0]),
        ]);
        let train = vec![
            Sample::new("1", "x", Label::Exclude),
            Sample::new("2", "y", Label::Include),
        ];
        let idx = build_index(&train, &e).unwrap();
        assert_eq!(idx.dimension, 2);
        let r = select(&idx, "q0", "q", 1, SelectionMethod::Knn, Some(&e)).unwrap();
        assert_eq!(r[0].id, "1");
        assert!((r[0].similarity - 1.0).abs() < 1e-12);
        assert!(build_index(&[], &e).is_err());
    }

    #[test]
    fn random_is_reproducible_and_unique() {
        let train: Vec<Sample> = (0..30)
            .map(|i| Sample::new(format!("s{i:02}"), "t", Label::from_bool(i % 3 == 0)))
            .collect();
        let idx = build_unembedded_index(&train).unwrap();
        let m = SelectionMethod::Random { seed: 7 };
        let a = select_with_vector(&idx, "q", None, 5, m).unwrap();
        let b = select_with_vector(&idx, "q", None, 5, m).unwrap();
        assert_eq!(a, b);
        let set: HashSet<_> = a.iter().map(|e| &e.id).collect();
        assert_eq!(set.len(), 5);
        assert!(matches!(
            select_with_vector(&idx, "q", None, 2, SelectionMethod::Knn),
            Err(FewShotError::NotEmbedded)
        ));
    }

    #[test]
    fn coverage_arithmetic() {
        let log = vec![vec!["a", "b", "c"]; 10];
        assert!((coverage(&log, 100).unwrap() - 3.0).abs() < 1e-12);
        let all = vec![vec!["a"], vec!["b"]];
        assert!((coverage(&all, 2).unwrap() - 100.0).abs() < 1e-12);
        assert!(coverage::<&str>(&[], 5).is_err());
    }
}
