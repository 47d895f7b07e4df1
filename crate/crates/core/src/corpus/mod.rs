//! Labeled binary-classification corpora: loading, summary statistics and
//! stratified k-fold splitting.

#[cfg(feature = "http")]
pub mod fetch;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Binary class of a sample. `Include` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Exclude,
    Include,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Label::Include
        } else {
            Label::Exclude
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Include
    }

    /// Parses `0/1`, `true/false`, `yes/no` case-insensitively.
    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "1" | "true" | "yes" => Some(Label::Include),
            "0" | "false" | "no" => Some(Label::Exclude),
            _ => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Include => "include",
            Label::Exclude => "exclude",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub label: Label,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Label) -> Self {
        Sample {
            id: id.into(),
            text: text.into(),
            label,
        }
    }
}

/// A topic-scoped corpus. Construct through [`Dataset::new`] so the
/// invariants (unique ids, non-blank texts, both classes present) hold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    topic: String,
    samples: Vec<Sample>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has no samples of class `{0}`")]
    MissingClass(Label),
    #[error("class `{class}` has {count} samples, fewer than the {k} folds requested")]
    TooFewSamples {
        class: Label,
        count: usize,
        k: usize,
    },
    #[error("fold count must be at least 2, got {0}")]
    InvalidFoldCount(usize),
    #[error("unknown dataset format `{0}` (expected csv or jsonl)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Dataset {
    pub fn new(topic: impl Into<String>, samples: Vec<Sample>) -> Result<Self, CorpusError> {
        if samples.is_empty() {
            return Err(CorpusError::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(CorpusError::MalformedRecord {
                    line: i + 1,
                    reason: format!("sample `{}` has blank text", s.id),
                });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        for class in [Label::Include, Label::Exclude] {
            if !samples.iter().any(|s| s.label == class) {
                return Err(CorpusError::MissingClass(class));
            }
        }
        Ok(Dataset {
            topic: topic.into(),
            samples,
        })
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn positives(&self) -> usize {
        self.samples
            .iter()
            .filter(|s| s.label.is_positive())
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Jsonl,
}

impl DatasetFormat {
    /// Infers the format from a file extension (`.csv`, `.jsonl`, `.ndjson`).
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or_default()
            .to_ascii_lowercase();
        ext.parse()
    }
}

impl std::str::FromStr for DatasetFormat {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(DatasetFormat::Csv),
            "jsonl" | "ndjson" => Ok(DatasetFormat::Jsonl),
            other => Err(CorpusError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<serde_json::Value>,
    text: Option<String>,
    label: Option<serde_json::Value>,
}

fn value_to_string(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        serde_json::Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn record_to_sample(line: usize, raw: RawRecord) -> Result<Sample, CorpusError> {
    let malformed = |reason: &str| CorpusError::MalformedRecord {
        line,
        reason: reason.to_string(),
    };
    let id = raw
        .id
        .as_ref()
        .and_then(value_to_string)
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| malformed("missing `id`"))?;
    let text = raw.text.ok_or_else(|| malformed("missing `text`"))?;
    if text.trim().is_empty() {
        return Err(malformed("blank `text`"));
    }
    let label_raw = raw
        .label
        .as_ref()
        .and_then(value_to_string)
        .ok_or_else(|| malformed("missing `label`"))?;
    let label = Label::parse(&label_raw)
        .ok_or_else(|| malformed(&format!("unrecognized label `{label_raw}`")))?;
    Ok(Sample { id, text, label })
}

/// Loads a dataset file, preserving record order.
pub fn load_dataset(
    path: &Path,
    format: DatasetFormat,
    topic: &str,
) -> Result<Dataset, CorpusError> {
    let samples = match format {
        DatasetFormat::Jsonl => read_jsonl(path)?,
        DatasetFormat::Csv => read_csv(path)?,
    };
    let mut seen = HashSet::new();
    for s in &samples {
        if !seen.insert(s.id.as_str()) {
            return Err(CorpusError::DuplicateId(s.id.clone()));
        }
    }
    Dataset::new(topic, samples)
}

fn read_jsonl(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| CorpusError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })?;
        out.push(record_to_sample(i + 1, raw)?);
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Result<Vec<Sample>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let (id_col, text_col, label_col) = match (col("id"), col("text"), col("label")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(CorpusError::MalformedRecord {
                line: 1,
                reason: "header must contain id, text and label columns".into(),
            })
        }
    };
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| {
            record
                .get(i)
                .map(|s| serde_json::Value::String(s.to_string()))
        };
        let raw = RawRecord {
            id: field(id_col),
            text: record.get(text_col).map(str::to_string),
            label: field(label_col),
        };
        out.push(record_to_sample(line, raw)?);
    }
    Ok(out)
}

/// Writes a dataset in the given format. Labels are written as `1`/`0`.
pub fn save_dataset(d: &Dataset, path: &Path, format: DatasetFormat) -> Result<(), CorpusError> {
    let label_num = |l: Label| if l.is_positive() { "1" } else { "0" };
    match format {
        DatasetFormat::Jsonl => {
            let mut w = BufWriter::new(File::create(path)?);
            for s in d.samples() {
                let rec = serde_json::json!({
                    "id": s.id,
                    "text": s.text,
                    "label": u8::from(s.label.is_positive()),
                });
                writeln!(w, "{rec}")?;
            }
            w.flush()?;
        }
        DatasetFormat::Csv => {
            let mut w = csv::Writer::from_path(path)?;
            w.write_record(["id", "text", "label"])?;
            for s in d.samples() {
                w.write_record([s.id.as_str(), s.text.as_str(), label_num(s.label)])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_samples: usize,
    pub positive_pct: f64,
    pub word_count_mean: f64,
    /// Population standard deviation.
    pub word_count_std: f64,
    /// Sample (n - 1) standard deviation; reported alongside because the
    /// published `±` convention is unknown.
    pub word_count_std_sample: f64,
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

pub fn compute_stats(samples: &[Sample]) -> Result<DatasetStats, CorpusError> {
    if samples.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let n = samples.len() as f64;
    let pos = samples.iter().filter(|s| s.label.is_positive()).count() as f64;
    let counts: Vec<f64> = samples.iter().map(|s| word_count(&s.text) as f64).collect();
    let mean = counts.iter().sum::<f64>() / n;
    let ss: f64 = counts.iter().map(|c| (c - mean).powi(2)).sum();
    let sample_std = if samples.len() > 1 {
        (ss / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Ok(DatasetStats {
        n_samples: samples.len(),
        positive_pct: 100.0 * pos / n,
        word_count_mean: mean,
        word_count_std: (ss / n).sqrt(),
        word_count_std_sample: sample_std,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Stratified k-fold split: ids of each class are shuffled with the seed
/// and dealt round-robin into the folds. The dealing position carries over
/// from the positive class to the negative class so fold sizes stay within
/// one of each other. Id lists keep dataset order.
pub fn stratified_kfold(d: &Dataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>, CorpusError> {
    if k < 2 {
        return Err(CorpusError::InvalidFoldCount(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; d.len()];
    let mut next = 0usize;
    for class in [Label::Include, Label::Exclude] {
        let mut members: Vec<usize> = d
            .samples()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == class)
            .map(|(i, _)| i)
            .collect();
        if members.len() < k {
            return Err(CorpusError::TooFewSamples {
                class,
                count: members.len(),
                k,
            });
        }
        members.shuffle(&mut rng);
        for idx in members {
            fold_of[idx] = next % k;
            next += 1;
        }
    }
    Ok((0..k)
        .map(|fold| {
            let (test, train): (Vec<_>, Vec<_>) = d
                .samples()
                .iter()
                .zip(&fold_of)
                .partition(|(_, &f)| f == fold);
            FoldSplit {
                fold_index: fold,
                train_ids: train.into_iter().map(|(s, _)| s.id.clone()).collect(),
                test_ids: test.into_iter().map(|(s, _)| s.id.clone()).collect(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(pos: usize, neg: usize) -> Dataset {
        let samples = (0..pos + neg)
            .map(|i| {
                Sample::new(
                    format!("s{i}"),
                    format!("text {i}"),
                    Label::from_bool(i < pos),
                )
            })
            .collect();
        Dataset::new("t", samples).unwrap()
    }

    fn write(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_two_record_jsonl() {
        let f = write(
            "{\"id\":\"1\",\"text\":\"alpha\",\"label\":1}\n{\"id\":2,\"text\":\"beta\\ngamma\",\"label\":\"No\"}\n",
            ".jsonl",
        );
        let d = load_dataset(f.path(), DatasetFormat::Jsonl, "Topic").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.samples()[1].id, "2");
        assert_eq!(d.samples()[1].text, "beta\ngamma");
        assert_eq!(d.samples()[1].label, Label::Exclude);
    }

    #[test]
    fn rejects_unknown_label() {
        let f = write("id,text,label\na,hello,1\nb,world,maybe\n", ".csv");
        let err = load_dataset(f.path(), DatasetFormat::Csv, "t").unwrap_err();
        assert!(
            matches!(err, CorpusError::MalformedRecord { line: 3, .. }),
            "{err}"
        );
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        let f = write("id,text,label\na,x,1\na,y,0\n", ".csv");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Csv, "t"),
            Err(CorpusError::DuplicateId(id)) if id == "a"
        ));
        let f = write("", ".jsonl");
        assert!(matches!(
            load_dataset(f.path(), DatasetFormat::Jsonl, "t"),
            Err(CorpusError::EmptyDataset)
        ));
    }

    #[test]
    fn round_trips_both_formats() {
        let d = Dataset::new(
            "t",
            vec![
                Sample::new("a", "one, \"two\"", Label::Include),
                Sample::new("b", "three\nfour", Label::Exclude),
            ],
        )
        .unwrap();
        for fmt in [DatasetFormat::Csv, DatasetFormat::Jsonl] {
            let f = tempfile::NamedTempFile::new().unwrap();
            save_dataset(&d, f.path(), fmt).unwrap();
            assert_eq!(load_dataset(f.path(), fmt, "t").unwrap(), d);
        }
    }

    #[test]
    fn two_point_statistics() {
        let s = vec![
            Sample::new("a", "a b", Label::Include),
            Sample::new("b", "a b c d", Label::Exclude),
        ];
        let st = compute_stats(&s).unwrap();
        assert_eq!(st.word_count_mean, 3.0);
        assert_eq!(st.word_count_std, 1.0);
        assert!((st.word_count_std_sample - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(st.positive_pct, 50.0);
        assert!(matches!(compute_stats(&[]), Err(CorpusError::EmptyDataset)));
    }

    #[test]
    fn exact_divisibility_folds() {
        let folds = stratified_kfold(&ds(5, 5), 5, 7).unwrap();
        let d = ds(5, 5);
        for f in &folds {
            let pos = f
                .test_ids
                .iter()
                .filter(|id| d.get(id).unwrap().label.is_positive())
                .count();
            assert_eq!(pos, 1);
            assert_eq!(f.test_ids.len() - pos, 1);
        }
    }

    #[test]
    fn uneven_class_counts_stay_within_one() {
        let d = ds(7, 13);
        let folds = stratified_kfold(&d, 5, 11).unwrap();
        for f in &folds {
            let pos = f
                .test_ids
                .iter()
                .filter(|id| d.get(id).unwrap().label.is_positive())
                .count();
            let neg = f.test_ids.len() - pos;
            assert!((1..=2).contains(&pos), "pos {pos}");
            assert!((2..=3).contains(&neg), "neg {neg}");
        }
        assert_eq!(folds, stratified_kfold(&d, 5, 11).unwrap());
    }

    #[test]
    fn too_few_members() {
        assert!(matches!(
            stratified_kfold(&ds(3, 10), 5, 0),
            Err(CorpusError::TooFewSamples {
                class: Label::Include,
                count: 3,
                k: 5
            })
        ));
        assert!(matches!(
            stratified_kfold(&ds(3, 3), 1, 0),
            Err(CorpusError::InvalidFoldCount(1))
        ));
    }
}
