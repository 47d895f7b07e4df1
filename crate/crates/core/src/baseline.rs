//! Bag-of-words multinomial naive Bayes baseline.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::corpus::Sample;

pub const DEFAULT_MIN_DF: usize = 3;
pub const DEFAULT_ALPHA: f64 = 1.0;

/// The common 179-word English stop list.
pub const ENGLISH_STOP_WORDS: &str = "i me my myself we our ours ourselves you you're you've you'll you'd \
your yours yourself yourselves he him his himself she she's her hers herself it it's its itself they \
them their theirs themselves what which who whom this that that'll these those am is are was were be \
been being have has had having do does did doing a an the and but if or because as until while of at \
by for with about against between into through during before after above below to from up down in out \
on off over under again further then once here there when where why how all any both each few more \
most other some such no nor not only own same so than too very s t can will just don don't should \
should've now d ll m o re ve y ain aren aren't couldn couldn't didn didn't doesn doesn't hadn hadn't \
hasn hasn't haven haven't isn isn't ma mightn mightn't mustn mustn't needn needn't shan shan't shouldn \
shouldn't wasn wasn't weren weren't won won't wouldn wouldn't";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("empty training set")]
    EmptyTrain,
    #[error("no terms survive stop-word and document-frequency filtering")]
    EmptyVocabulary,
    #[error("training data contains a single class")]
    SingleClass,
    #[error("smoothing alpha must be positive")]
    InvalidAlpha,
    #[error("reading stop words from {path}: {source}")]
    StopWords {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn english_stop_words() -> HashSet<String> {
    ENGLISH_STOP_WORDS
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// One word per line, blank lines ignored.
pub fn load_stop_words(path: &Path) -> Result<HashSet<String>, BaselineError> {
    let text = std::fs::read_to_string(path).map_err(|source| BaselineError::StopWords {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text
        .lines()
        .map(|l| l.trim().to_lowercase())
        .filter(|l| !l.is_empty())
        .collect())
}

/// Lowercases and splits on runs of non-alphanumeric characters, dropping
/// single-digit tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .filter(|t| !(t.chars().count() == 1 && t.chars().all(|c| c.is_ascii_digit())))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    document_frequency: Vec<usize>,
    terms: Vec<String>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn document_frequency(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.document_frequency[i])
    }

    pub fn vectorize(&self, text: &str) -> BowVector {
        let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(i) = self.index_of(&tok) {
                *counts.entry(i).or_default() += 1;
            }
        }
        BowVector(counts.into_iter().collect())
    }
}

/// Sparse `(term index, count)` pairs sorted by index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BowVector(pub Vec<(usize, u32)>);

pub fn build_vocabulary(
    train: &[Sample],
    stop_words: &HashSet<String>,
    min_df: usize,
) -> Result<Vocabulary, BaselineError> {
    if train.is_empty() {
        return Err(BaselineError::EmptyTrain);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for s in train {
        let uniq: BTreeSet<String> = tokenize(&s.text).into_iter().collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|(t, n)| *n >= min_df && !stop_words.contains(t))
        .collect();
    if kept.is_empty() {
        return Err(BaselineError::EmptyVocabulary);
    }
    Ok(Vocabulary {
        index: kept
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect(),
        document_frequency: kept.iter().map(|(_, n)| *n).collect(),
        terms: kept.into_iter().map(|(t, _)| t).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    /// Log priors, `[negative, positive]`.
    pub log_prior: [f64; 2],
    /// Per-class log likelihood of each vocabulary term.
    pub log_likelihood: [Vec<f64>; 2],
    pub alpha: f64,
}

impl NbModel {
    /// The same model with the classes exchanged.
    pub fn swapped(&self) -> Self {
        NbModel {
            log_prior: [self.log_prior[1], self.log_prior[0]],
            log_likelihood: [
                self.log_likelihood[1].clone(),
                self.log_likelihood[0].clone(),
            ],
            alpha: self.alpha,
        }
    }
}

/// Multinomial likelihoods `(count + alpha) / (total + alpha * |V|)` and
/// class-frequency priors.
pub fn nb_fit(train: &[Sample], vocab: &Vocabulary, alpha: f64) -> Result<NbModel, BaselineError> {
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(BaselineError::InvalidAlpha);
    }
    let mut docs = [0usize; 2];
    let mut counts = [vec![0.0f64; vocab.len()], vec![0.0f64; vocab.len()]];
    for s in train {
        let c = usize::from(s.label.is_positive());
        docs[c] += 1;
        for (i, n) in vocab.vectorize(&s.text).0 {
            counts[c][i] += f64::from(n);
        }
    }
    if docs[0] == 0 || docs[1] == 0 {
        return Err(BaselineError::SingleClass);
    }
    let n = (docs[0] + docs[1]) as f64;
    let v = vocab.len() as f64;
    let lik = |c: &Vec<f64>| {
        let denom = c.iter().sum::<f64>() + alpha * v;
        c.iter()
            .map(|x| ((x + alpha) / denom).ln())
            .collect::<Vec<_>>()
    };
    Ok(NbModel {
        log_prior: [(docs[0] as f64 / n).ln(), (docs[1] as f64 / n).ln()],
        log_likelihood: [lik(&counts[0]), lik(&counts[1])],
        alpha,
    })
}

/// Posterior probability of the positive class.
pub fn nb_predict_proba(model: &NbModel, vec: &BowVector) -> f64 {
    let score = |c: usize| {
        model.log_prior[c]
            + vec
                .0
                .iter()
                .map(|&(i, n)| f64::from(n) * model.log_likelihood[c][i])
                .sum::<f64>()
    };
    let (neg, pos) = (score(0), score(1));
    let m = neg.max(pos);
    let (en, ep) = ((neg - m).exp(), (pos - m).exp());
    ep / (en + ep)
}
