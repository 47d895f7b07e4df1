//! Cross-validated experiment execution.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::baseline::{build_vocabulary, nb_fit, nb_predict_proba};
use crate::corpus::{stratified_kfold, Dataset, FoldSplit, Label, Sample};
use crate::fewshot::{
    build_index, build_unembedded_index, coverage, select, EmbeddingIndex, SelectionMethod,
};
use crate::llm::cache::sha256_hex;
use crate::llm::{Client, Embedder, LlmError};
use crate::output::{to_auprc_score, ExpectedAnswers, PredictedLabel, Prediction};
use crate::prompt::PromptTemplate;
use crate::strategy::{
    classify_base, classify_chunked, classify_cot1, classify_cot2, classify_tot, split_chunks,
    StrategyConfig, StrategyError,
};

use super::metrics::{evaluate, macro_average, micro_pr_curve, MetricsReport, PrCurve};
use super::EvalError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    Llm(StrategyConfig),
    NaiveBayes { min_df: usize, alpha: f64 },
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Llm(StrategyConfig::Base { output, .. }) => output.name().to_string(),
            Method::Llm(StrategyConfig::Chunking { .. }) => "chunking".into(),
            Method::Llm(StrategyConfig::Cot1) => "cot1".into(),
            Method::Llm(StrategyConfig::Cot2) => "cot2".into(),
            Method::Llm(StrategyConfig::Tot(_)) => "tot".into(),
            Method::NaiveBayes { .. } => "naive_bayes".into(),
        }
    }

    /// Whether scores carry more than the hard label.
    pub fn is_probabilistic(&self) -> bool {
        match self {
            Method::Llm(StrategyConfig::Base { output, .. }) => {
                output.uses_token_distribution() || *output == crate::output::OutputMethod::Score
            }
            Method::Llm(StrategyConfig::Chunking { .. }) | Method::NaiveBayes { .. } => true,
            Method::Llm(_) => false,
        }
    }
}

/// Everything one cross-validated run needs.
pub struct Experiment<'a> {
    pub dataset: &'a Dataset,
    pub k_folds: usize,
    pub seed: u64,
    pub method: Method,
    /// Template for [`StrategyConfig::Base`].
    pub template: Option<PromptTemplate>,
    pub selection: Option<SelectionMethod>,
    pub client: Option<Client<'a>>,
    pub embedder: Option<&'a dyn Embedder>,
    pub concurrency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub fold: usize,
    pub method: String,
    pub label_true: u8,
    pub label_pred: u8,
    pub predicted: PredictedLabel,
    pub p_pos: Option<f64>,
    pub score_used: f64,
    pub raw_text: String,
    pub raw_text_sha256: String,
    pub fallback: bool,
}

impl PredictionRecord {
    fn new(sample: &Sample, fold: usize, method: &str, p: &Prediction) -> Self {
        PredictionRecord {
            sample_id: sample.id.clone(),
            fold,
            method: method.to_string(),
            label_true: u8::from(sample.label.is_positive()),
            label_pred: u8::from(p.hard_label().is_positive()),
            predicted: p.label,
            p_pos: p.p_pos,
            score_used: to_auprc_score(p),
            raw_text: p.raw_text.clone(),
            raw_text_sha256: sha256_hex(p.raw_text.as_bytes()),
            fallback: p.fallback,
        }
    }

    pub fn truth(&self) -> Label {
        Label::from_bool(self.label_true == 1)
    }

    pub fn hard(&self) -> Label {
        Label::from_bool(self.label_pred == 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold_index: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub report: Option<MetricsReport>,
    pub fallbacks: usize,
    pub unrecognized: usize,
    /// Percent of the selection pool used as examples, for few-shot runs.
    pub coverage: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub fold: usize,
    pub backend: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub method: String,
    pub folds: Vec<FoldResult>,
    pub macro_report: Option<MetricsReport>,
    pub micro_curve: Option<PrCurve>,
    pub predictions: Vec<PredictionRecord>,
    pub failure: Option<RunFailure>,
}

impl ExperimentResult {
    pub fn reports(&self) -> Vec<MetricsReport> {
        self.folds.iter().filter_map(|f| f.report.clone()).collect()
    }
}

fn is_backend(e: &EvalError) -> bool {
    fn llm(e: &StrategyError) -> bool {
        match e {
            StrategyError::Llm(_) => true,
            StrategyError::ChunkFailure { source, .. } => llm(source),
            _ => false,
        }
    }
    match e {
        EvalError::Strategy(s) => llm(s),
        EvalError::FewShot(crate::fewshot::FewShotError::Embedding(_)) | EvalError::Llm(_) => true,
        _ => false,
    }
}

struct Pool {
    index: EmbeddingIndex,
    texts: HashMap<String, (String, Label)>,
}

impl Pool {
    fn build(
        samples: Vec<Sample>,
        selection: SelectionMethod,
        embedder: Option<&dyn Embedder>,
    ) -> Result<Self, EvalError> {
        let index = match selection {
            SelectionMethod::Random { .. } => build_unembedded_index(&samples)?,
            _ => build_index(&samples, embedder.ok_or(EvalError::MissingEmbedder)?)?,
        };
        let texts = samples
            .into_iter()
            .map(|s| (s.id, (s.text, s.label)))
            .collect();
        Ok(Pool { index, texts })
    }
}

struct FoldCtx<'e, 'a> {
    exp: &'e Experiment<'a>,
    pool: Option<Pool>,
    selection_log: Mutex<Vec<Vec<String>>>,
}

impl FoldCtx<'_, '_> {
    fn examples(
        &self,
        pool: &Pool,
        query_id: &str,
        query_text: &str,
        k: usize,
        answers: &ExpectedAnswers,
    ) -> Result<Vec<(String, String)>, EvalError> {
        let selection = self.exp.selection.unwrap_or(SelectionMethod::Knn);
        let picked = select(
            &pool.index,
            query_id,
            query_text,
            k,
            selection,
            self.exp.embedder,
        )?;
        self.selection_log
            .lock()
            .expect("log lock")
            .push(picked.iter().map(|e| e.id.clone()).collect());
        Ok(picked
            .iter()
            .map(|e| {
                let (text, label) = &pool.texts[&e.id];
                (text.clone(), answers.phrase(*label).to_string())
            })
            .collect())
    }

    fn classify(&self, sample: &Sample, topic: &str) -> Result<Prediction, EvalError> {
        let exp = self.exp;
        let client = exp.client.as_ref().ok_or(EvalError::MissingBackend)?;
        let Method::Llm(strategy) = &exp.method else {
            unreachable!("naive Bayes is handled per fold")
        };
        match strategy {
            StrategyConfig::Base { output, shots, .. } => {
                let template = exp.template.as_ref().ok_or(EvalError::MissingTemplate)?;
                let answers = template
                    .answers
                    .clone()
                    .unwrap_or_else(ExpectedAnswers::yes_no);
                let examples = match &self.pool {
                    Some(pool) if *shots > 0 => {
                        self.examples(pool, &sample.id, &sample.text, *shots, &answers)?
                    }
                    _ => Vec::new(),
                };
                Ok(classify_base(
                    &sample.text,
                    topic,
                    template,
                    *output,
                    &examples,
                    client,
                )?)
            }
            StrategyConfig::Chunking { max_chars, shots } => {
                let answers = ExpectedAnswers::yes_no();
                let mut examples_for =
                    |idx: usize, chunk: &str| -> Result<Vec<(String, String)>, StrategyError> {
                        match &self.pool {
                            Some(pool) if *shots > 0 => self
                                .examples(
                                    pool,
                                    &format!("{}#{idx}", sample.id),
                                    chunk,
                                    *shots,
                                    &answers,
                                )
                                .map_err(|e| match e {
                                    EvalError::Strategy(s) => s,
                                    EvalError::FewShot(
                                        crate::fewshot::FewShotError::Embedding(l),
                                    ) => StrategyError::Llm(l),
                                    other => StrategyError::Examples(other.to_string()),
                                }),
                            _ => Ok(Vec::new()),
                        }
                    };
                Ok(classify_chunked(
                    &sample.text,
                    topic,
                    *max_chars,
                    &mut examples_for,
                    client,
                )?)
            }
            StrategyConfig::Cot1 => Ok(classify_cot1(&sample.text, topic, client)?),
            StrategyConfig::Cot2 => Ok(classify_cot2(&sample.text, topic, client)?),
            StrategyConfig::Tot(p) => {
                Ok(classify_tot(&sample.text, topic, p, client)?.prediction())
            }
        }
    }
}

fn chunk_pool(train: &[&Sample], max_chars: usize) -> Result<Vec<Sample>, EvalError> {
    let mut out = Vec::new();
    for s in train {
        for (i, c) in split_chunks(&s.text, max_chars)?.into_iter().enumerate() {
            out.push(Sample::new(format!("{}#{i}", s.id), c, s.label));
        }
    }
    Ok(out)
}

/// Runs every fold in order, classifying test samples concurrently. A
/// failing sample aborts its fold and the run; results up to that point,
/// including the fold's finished predictions, are returned.
pub fn run_experiment(exp: &Experiment<'_>) -> Result<ExperimentResult, EvalError> {
    let folds = stratified_kfold(exp.dataset, exp.k_folds, exp.seed)?;
    run_folds(exp, &folds)
}

pub fn run_folds(exp: &Experiment<'_>, folds: &[FoldSplit]) -> Result<ExperimentResult, EvalError> {
    if let Method::Llm(s) = &exp.method {
        s.validate().map_err(EvalError::InvalidConfig)?;
        if exp.client.is_none() {
            return Err(EvalError::MissingBackend);
        }
    }
    let method_name = exp.method.name();
    let mut result = ExperimentResult {
        method: method_name.clone(),
        folds: Vec::new(),
        macro_report: None,
        micro_curve: None,
        predictions: Vec::new(),
        failure: None,
    };
    let mut pooled = Vec::new();
    for fold in folds {
        let (records, error) = match run_fold(exp, fold, &method_name) {
            Ok(v) => v,
            Err(e) => (
                FoldRecords {
                    records: Vec::new(),
                    selection_log: Vec::new(),
                    pool_size: 0,
                },
                Some(e),
            ),
        };
        let (records, coverage_pct) = records_and_coverage(records);
        let truth: Vec<Label> = records.iter().map(|r| r.truth()).collect();
        let hard: Vec<Label> = records.iter().map(|r| r.hard()).collect();
        let scores: Vec<f64> = records.iter().map(|r| r.score_used).collect();
        let report = if error.is_none() {
            Some(evaluate(&truth, &hard, &scores, Some(fold.fold_index))?)
        } else {
            None
        };
        if report.is_some() {
            pooled.push((truth, scores));
        }
        result.folds.push(FoldResult {
            fold_index: fold.fold_index,
            train_size: fold.train_ids.len(),
            test_size: fold.test_ids.len(),
            report,
            fallbacks: records.iter().filter(|r| r.fallback).count(),
            unrecognized: records
                .iter()
                .filter(|r| r.predicted == PredictedLabel::Unrecognized)
                .count(),
            coverage: coverage_pct,
            error: error.as_ref().map(|e| e.to_string()),
        });
        result.predictions.extend(records);
        if let Some(e) = error {
            result.failure = Some(RunFailure {
                fold: fold.fold_index,
                backend: is_backend(&e),
                message: e.to_string(),
            });
            break;
        }
    }
    let reports = result.reports();
    if !reports.is_empty() {
        result.macro_report = Some(macro_average(&reports)?);
        result.micro_curve = Some(micro_pr_curve(&pooled)?);
    }
    Ok(result)
}

struct FoldRecords {
    records: Vec<PredictionRecord>,
    selection_log: Vec<Vec<String>>,
    pool_size: usize,
}

fn records_and_coverage(f: FoldRecords) -> (Vec<PredictionRecord>, Option<f64>) {
    let cov = (!f.selection_log.is_empty())
        .then(|| coverage(&f.selection_log, f.pool_size).ok())
        .flatten();
    (f.records, cov)
}

fn run_fold(
    exp: &Experiment<'_>,
    fold: &FoldSplit,
    method_name: &str,
) -> Result<(FoldRecords, Option<EvalError>), EvalError> {
    let by_id: HashMap<&str, &Sample> = exp
        .dataset
        .samples()
        .iter()
        .map(|s| (s.id.as_str(), s))
        .collect();
    let lookup = |ids: &[String]| -> Result<Vec<&Sample>, EvalError> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| EvalError::UnknownSample(id.clone()))
            })
            .collect()
    };
    let train = lookup(&fold.train_ids)?;
    let test = lookup(&fold.test_ids)?;

    if let Method::NaiveBayes { min_df, alpha } = exp.method {
        let train_owned: Vec<Sample> = train.iter().map(|s| (*s).clone()).collect();
        let vocab = build_vocabulary(&train_owned, &crate::baseline::english_stop_words(), min_df)?;
        let model = nb_fit(&train_owned, &vocab, alpha)?;
        let records = test
            .iter()
            .map(|s| {
                let p = nb_predict_proba(&model, &vocab.vectorize(&s.text));
                let pred = Prediction {
                    label: if p > 0.5 {
                        PredictedLabel::Positive
                    } else {
                        PredictedLabel::Negative
                    },
                    p_pos: Some(p),
                    method: crate::output::OutputMethod::Score,
                    raw_text: String::new(),
                    fallback: false,
                };
                PredictionRecord::new(s, fold.fold_index, method_name, &pred)
            })
            .collect();
        return Ok((
            FoldRecords {
                records,
                selection_log: Vec::new(),
                pool_size: 0,
            },
            None,
        ));
    }

    let selection = exp.selection.unwrap_or(SelectionMethod::Knn);
    let (pool, pool_size) = match &exp.method {
        Method::Llm(StrategyConfig::Base { shots, .. }) if *shots > 0 => {
            let samples: Vec<Sample> = train.iter().map(|s| (*s).clone()).collect();
            (
                Some(Pool::build(samples, selection, exp.embedder)?),
                train.len(),
            )
        }
        Method::Llm(StrategyConfig::Chunking { max_chars, shots }) if *shots > 0 => {
            let chunks = chunk_pool(&train, *max_chars)?;
            let n = chunks.len();
            (Some(Pool::build(chunks, selection, exp.embedder)?), n)
        }
        _ => (None, 0),
    };
    let ctx = FoldCtx {
        exp,
        pool,
        selection_log: Mutex::new(Vec::new()),
    };

    let slots: Mutex<Vec<Option<Prediction>>> = Mutex::new(vec![None; test.len()]);
    let first_error: Mutex<Option<(usize, EvalError)>> = Mutex::new(None);
    let abort = AtomicBool::new(false);
    let next = AtomicUsize::new(0);
    let topic = exp.dataset.topic();
    std::thread::scope(|s| {
        for _ in 0..exp.concurrency.clamp(1, test.len().max(1)) {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(sample) = test.get(i) else { break };
                match ctx.classify(sample, topic) {
                    Ok(p) => slots.lock().expect("slots lock")[i] = Some(p),
                    Err(e) => {
                        abort.store(true, Ordering::SeqCst);
                        let mut slot = first_error.lock().expect("error lock");
                        if slot.as_ref().is_none_or(|(j, _)| i < *j) {
                            *slot = Some((i, e));
                        }
                    }
                }
            });
        }
    });
    let records = test
        .iter()
        .zip(slots.into_inner().expect("slots lock"))
        .filter_map(|(s, p)| p.map(|p| PredictionRecord::new(s, fold.fold_index, method_name, &p)))
        .collect();
    let mut selection_log = ctx.selection_log.into_inner().expect("log lock");
    selection_log.sort();
    Ok((
        FoldRecords {
            records,
            selection_log,
            pool_size,
        },
        first_error
            .into_inner()
            .expect("error lock")
            .map(|(_, e)| e),
    ))
}

/// Per-method view of a finished run, keyed by metric name.
pub fn summary_metrics(r: &ExperimentResult) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some(m) = &r.macro_report {
        for name in MetricsReport::METRICS {
            out.insert(
                format!("macro_{name}"),
                m.metric(name).expect("known metric"),
            );
        }
    }
    if let Some(c) = &r.micro_curve {
        out.insert("micro_auprc".into(), c.auprc);
    }
    out
}

impl From<LlmError> for EvalError {
    fn from(e: LlmError) -> Self {
        EvalError::Llm(e)
    }
}
