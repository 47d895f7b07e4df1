//! Abstract download over the E-utilities `efetch` GET convention.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::llm::RetryPolicy;

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("no article ids given")]
    EmptyInput,
}

#[derive(Debug, Clone)]
pub struct FetchOptions {
    pub parallel: usize,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions {
            parallel: 4,
            timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum FetchStatus {
    Fetched,
    /// The service answered but had no abstract for the id.
    NotFound,
    /// Transport or server failure after retries.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FetchReport {
    /// Resolved `(id, abstract)` pairs in input order.
    pub abstracts: Vec<(String, String)>,
    /// Per-id outcome in input order.
    pub statuses: Vec<(String, FetchStatus)>,
}

impl FetchReport {
    pub fn unresolved(&self) -> Vec<&str> {
        self.statuses
            .iter()
            .filter(|(_, s)| *s != FetchStatus::Fetched)
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

type Outcome = (FetchStatus, Option<String>);

enum Attempt {
    Done(FetchStatus, Option<String>),
    Retry(String),
}

fn fetch_one(agent: &ureq::Agent, endpoint: &str, id: &str) -> Attempt {
    let resp = agent
        .get(endpoint)
        .query("db", "pubmed")
        .query("id", id)
        .query("rettype", "abstract")
        .query("retmode", "text")
        .call();
    let mut resp = match resp {
        Ok(r) => r,
        Err(e) => return Attempt::Retry(e.to_string()),
    };
    let status = resp.status().as_u16();
    if status == 429 || status >= 500 {
        return Attempt::Retry(format!("HTTP {status}"));
    }
    if status == 404 || status == 400 {
        return Attempt::Done(FetchStatus::NotFound, None);
    }
    if !(200..300).contains(&status) {
        return Attempt::Done(FetchStatus::Failed(format!("HTTP {status}")), None);
    }
    match resp.body_mut().read_to_string() {
        Ok(body) if body.trim().is_empty() => Attempt::Done(FetchStatus::NotFound, None),
        Ok(body) => Attempt::Done(FetchStatus::Fetched, Some(body.trim().to_string())),
        Err(e) => Attempt::Retry(e.to_string()),
    }
}

/// Fetches the abstract of every id with up to `opts.parallel` requests in
/// flight. Unresolvable ids are reported rather than failing the batch.
pub fn fetch_abstracts(
    ids: &[String],
    endpoint: &str,
    opts: &FetchOptions,
) -> Result<FetchReport, FetchError> {
    if ids.is_empty() {
        return Err(FetchError::EmptyInput);
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(opts.timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let results: Mutex<Vec<Option<Outcome>>> = Mutex::new(vec![None; ids.len()]);
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..opts.parallel.clamp(1, ids.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(id) = ids.get(i) else { break };
                let outcome = opts
                    .retry
                    .run(
                        |_: &String| true,
                        || match fetch_one(&agent, endpoint, id) {
                            Attempt::Done(st, body) => Ok((st, body)),
                            Attempt::Retry(msg) => Err(msg),
                        },
                    )
                    .unwrap_or_else(|msg| (FetchStatus::Failed(msg), None));
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });
    let mut report = FetchReport {
        abstracts: Vec::new(),
        statuses: Vec::new(),
    };
    for (id, r) in ids.iter().zip(results.into_inner().expect("results lock")) {
        let (status, body) = r.expect("every id processed");
        if let Some(text) = body {
            report.abstracts.push((id.clone(), text));
        }
        report.statuses.push((id.clone(), status));
    }
    Ok(report)
}
