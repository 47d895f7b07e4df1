use std::fs;

use llmclf::corpus::fetch::{fetch_abstracts, FetchOptions, FetchStatus};
use llmclf::corpus::Label;
use llmclf::llm::cache::CacheError;
use llmclf::llm::ResponseCache;
use serde::Serialize;

use crate::artifacts::write_jsonl;
use crate::{io_error, CacheAction, CliError, ErrorKind, FetchArgs};

pub const EFETCH_URL: &str = "https://eutils.ncbi.nlm.nih.gov/entrez/eutils/efetch.fcgi";

fn cache_error(e: CacheError) -> CliError {
    CliError::new(ErrorKind::Io, e.to_string())
}

pub fn cmd_cache(action: &CacheAction) -> Result<(), CliError> {
    let (verb, stats) = match action {
        CacheAction::Stat { dir } => {
            if !dir.is_dir() {
                return Err(CliError::new(
                    ErrorKind::Input,
                    format!("{} is not a cache directory", dir.display()),
                ));
            }
            (
                "entries",
                ResponseCache::open(dir).map_err(cache_error)?.stats(),
            )
        }
        CacheAction::Gc { dir } => ("kept", ResponseCache::compact(dir).map_err(cache_error)?),
    };
    println!(
        "{verb} {} records {} corrupt {} unreadable {} bytes {}",
        stats.entries, stats.records, stats.corrupt_keys, stats.unreadable_lines, stats.bytes
    );
    Ok(())
}

#[derive(Serialize)]
struct Row<'a> {
    id: &'a str,
    text: &'a str,
    label: u8,
}

fn read_ids(path: &std::path::Path) -> Result<Vec<(String, Label)>, CliError> {
    let bad = |msg: String| CliError::new(ErrorKind::Input, format!("{}: {msg}", path.display()));
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
    };
    let (Some(id_col), Some(label_col)) = (col("id"), col("label")) else {
        return Err(bad("header must contain id and label columns".into()));
    };
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = i + 2;
        let id = rec.get(id_col).unwrap_or_default().trim();
        let raw = rec.get(label_col).unwrap_or_default();
        if id.is_empty() {
            return Err(bad(format!("line {line}: missing id")));
        }
        let label = Label::parse(raw)
            .ok_or_else(|| bad(format!("line {line}: unrecognized label `{raw}`")))?;
        out.push((id.to_string(), label));
    }
    if out.is_empty() {
        return Err(bad("no ids".into()));
    }
    Ok(out)
}

pub fn cmd_fetch(a: &FetchArgs) -> Result<(), CliError> {
    let rows = read_ids(&a.ids)?;
    let ids: Vec<String> = rows.iter().map(|(id, _)| id.clone()).collect();
    let opts = FetchOptions {
        parallel: a.parallel.max(1),
        ..FetchOptions::default()
    };
    let report = fetch_abstracts(&ids, &a.endpoint, &opts)
        .map_err(|e| CliError::new(ErrorKind::Input, e.to_string()))?;
    let labels: std::collections::HashMap<&str, Label> =
        rows.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    let out: Vec<Row> = report
        .abstracts
        .iter()
        .map(|(id, text)| Row {
            id,
            text,
            label: u8::from(labels[id.as_str()].is_positive()),
        })
        .collect();
    write_jsonl(&a.out, &out)?;
    for (id, status) in &report.statuses {
        match status {
            FetchStatus::Fetched => {}
            FetchStatus::NotFound => eprintln!("not found: {id}"),
            FetchStatus::Failed(msg) => eprintln!("failed: {id}: {msg}"),
        }
    }
    println!(
        "fetched {} of {} abstracts into {}",
        out.len(),
        ids.len(),
        a.out.display()
    );
    if out.is_empty() {
        return Err(CliError::new(
            ErrorKind::Backend,
            "no abstract could be fetched",
        ));
    }
    Ok(())
}
