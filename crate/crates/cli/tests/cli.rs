#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use llmclf::corpus::Label;
use llmclf::eval::{micro_pr_curve, PredictionRecord};
use support::{chat_completion, last_user_message, Request, Response, StubServer};
use tempfile::TempDir;

const MARK: &str = "double-blind";

fn llmclf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_llmclf"))
        .args(args)
        .output()
        .expect("spawn llmclf")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Answers `yes` with p=0.9 for marked abstracts, `no` with p=0.8 otherwise.
fn oracle(req: &Request) -> Response {
    if req.path != "/v1/chat/completions" {
        return Response::status(404, "");
    }
    if last_user_message(req).contains(MARK) {
        Response::ok(chat_completion("yes", &[("yes", 0.9), ("no", 0.1)]))
    } else {
        Response::ok(chat_completion("no", &[("no", 0.8), ("yes", 0.2)]))
    }
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new(n: usize, positives: usize) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut lines = Vec::new();
        for i in 0..n {
            let pos = i < positives;
            let text = if pos {
                format!("A {MARK} randomized trial of drug {i} in adults.")
            } else {
                format!("An observational cohort study number {i} of outcomes.")
            };
            lines.push(
                serde_json::json!({"id": format!("p{i}"), "text": text, "label": u8::from(pos)})
                    .to_string(),
            );
        }
        fs::write(dir.path().join("toy.jsonl"), lines.join("\n") + "\n").unwrap();
        Workspace { dir }
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn config(&self, url: &str, runs: &str) -> PathBuf {
        let text = format!(
            r#"
seed = 3
cache_dir = "cache"
out_dir = "results"

[[datasets]]
name = "toy"
path = "toy.jsonl"
topic = "RCTs"

[[backends]]
name = "stub"
kind = "openai"
base_url = "{url}"
model = "stub-model"
concurrency = 2

{runs}
"#
        );
        let p = self.path("experiment.toml");
        fs::write(&p, text).unwrap();
        p
    }
}

const RUNS: &str = r#"
[[runs]]
label = "token-word"
template = "B"
output = "token_word"

[[runs]]
label = "word"
template = "B"
output = "word"

[[runs]]
label = "nb"
strategy = "naive_bayes"
"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_artifacts_and_reruns_identically() {
    let ws = Workspace::new(40, 15);
    let srv = StubServer::start(oracle);
    let cfg = ws.config(&srv.url(), RUNS);
    let o = llmclf(&["run", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(srv.hits(), 80);
    let run = ws.path("results/toy/stub/token-word");
    for f in ["predictions.jsonl", "folds.csv", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(ws.path("results/toy/baseline/nb/summary.json").is_file());
    assert!(!ws.path("results/.lock").exists());
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(run.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["macro_report"]["accuracy"], 1.0);
    assert_eq!(summary["macro_report"]["auprc"], 1.0);
    let preds = fs::read_to_string(run.join("predictions.jsonl")).unwrap();
    assert_eq!(preds.lines().count(), 40);

    let before: Vec<String> = ["summary.json", "predictions.jsonl", "folds.csv"]
        .iter()
        .map(|f| fs::read_to_string(run.join(f)).unwrap())
        .collect();
    let o = llmclf(&["run", "--config", s(&cfg)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(srv.hits(), 80, "warm cache must not call the backend");
    let after: Vec<String> = ["summary.json", "predictions.jsonl", "folds.csv"]
        .iter()
        .map(|f| fs::read_to_string(run.join(f)).unwrap())
        .collect();
    for (b, a) in before.iter().zip(&after) {
        assert_eq!(b, a);
    }

    let o = llmclf(&["cache", "stat", "--dir", s(&ws.path("cache"))]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("entries 80 "));
    let o = llmclf(&["cache", "gc", "--dir", s(&ws.path("cache"))]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("kept 80 "));
}

#[test]
fn missing_selection_is_a_config_error() {
    let ws = Workspace::new(10, 5);
    let cfg = ws.config(
        "http://127.0.0.1:9",
        "[[runs]]\nlabel = \"fs\"\ntemplate = \"B-FewShot\"\noutput = \"word\"\nshots = 3\n",
    );
    let o = llmclf(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.starts_with("error[config]: runs[0].selection"), "{err}");
}

#[test]
fn unknown_key_names_the_problem() {
    let ws = Workspace::new(10, 5);
    let cfg = ws.config(
        "http://127.0.0.1:9",
        "[[runs]]\nlabel = \"a\"\ntemplate = \"B\"\noutput = \"word\"\nshot = 1\n",
    );
    let o = llmclf(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("shot"), "{}", stderr(&o));
}

#[test]
fn backend_failure_exits_with_code_2() {
    let ws = Workspace::new(10, 5);
    let srv = StubServer::start(|_| Response::status(400, "nope"));
    let cfg = ws.config(
        &srv.url(),
        "[[runs]]\nlabel = \"w\"\ntemplate = \"B\"\noutput = \"word\"\n",
    );
    let o = llmclf(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[backend]:"));
    let summary = fs::read_to_string(ws.path("results/toy/stub/w/summary.json")).unwrap();
    assert!(summary.contains("\"failure\": {"));
}

#[test]
fn backend_url_override_and_concurrency_flag() {
    let ws = Workspace::new(20, 8);
    let srv = StubServer::start(oracle);
    let cfg = ws.config(
        "http://127.0.0.1:9",
        "[[runs]]\nlabel = \"w\"\ntemplate = \"B\"\noutput = \"word\"\n",
    );
    let out = ws.path("elsewhere");
    let o = llmclf(&[
        "run",
        "--config",
        s(&cfg),
        "--backend-url",
        &srv.url(),
        "--concurrency",
        "1",
        "--out",
        s(&out),
        "--seed",
        "11",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(srv.hits(), 20);
    assert!(out.join("toy/stub/w/summary.json").is_file());
}

#[test]
fn dry_run_records_prompts_without_calls() {
    let ws = Workspace::new(20, 8);
    let srv = StubServer::start(oracle);
    let cfg = ws.config(&srv.url(), RUNS);
    let o = llmclf(&["run", "--config", s(&cfg), "--dry-run"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(srv.hits(), 0);
    let prompts = fs::read_to_string(ws.path("results/toy/stub/word/prompts.jsonl")).unwrap();
    assert_eq!(prompts.lines().count(), 20);
    let first: serde_json::Value = serde_json::from_str(prompts.lines().next().unwrap()).unwrap();
    assert_eq!(first["template"], "B");
    assert!(!ws.path("results/toy/stub/word/summary.json").exists());
}

#[test]
fn held_lock_blocks_a_second_run() {
    let ws = Workspace::new(10, 5);
    let cfg = ws.config(
        "http://127.0.0.1:9",
        "[[runs]]\nlabel = \"w\"\ntemplate = \"B\"\noutput = \"word\"\n",
    );
    fs::create_dir_all(ws.path("results")).unwrap();
    fs::write(ws.path("results/.lock"), "1").unwrap();
    let o = llmclf(&["run", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[locked]:"));
}

#[test]
fn report_marks_best_and_plot_matches_pooled_auprc() {
    let ws = Workspace::new(30, 10);
    let srv = StubServer::start(oracle);
    let cfg = ws.config(&srv.url(), RUNS);
    assert!(llmclf(&["run", "--config", s(&cfg)]).status.success());
    let results = ws.path("results");

    let o = llmclf(&["report", "--results", s(&results), "--metric", "mcc"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(results.join("table_mcc.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(lines.next().unwrap(), "dataset,nb,token-word,word");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "toy");
    // Independent max scan over the unmarked values.
    let vals: Vec<f64> = row[1..]
        .iter()
        .map(|c| c.trim_end_matches('*').parse().unwrap())
        .collect();
    let max = vals.iter().cloned().fold(f64::MIN, f64::max);
    for (v, c) in vals.iter().zip(&row[1..]) {
        assert_eq!(c.ends_with('*'), *v == max, "{row:?}");
    }

    let o = llmclf(&[
        "report",
        "--results",
        s(&results),
        "--grouping",
        "by-config",
    ]);
    assert!(o.status.success());
    assert!(results.join("table_auprc.csv").is_file());

    let o = llmclf(&["plot", "--results", s(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(results.join("pr_toy.svg")).unwrap();
    let text = fs::read_to_string(results.join("toy/stub/token-word/predictions.jsonl")).unwrap();
    let recs: Vec<PredictionRecord> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    let folds: Vec<(Vec<Label>, Vec<f64>)> = (0..5)
        .map(|k| {
            let f: Vec<&PredictionRecord> = recs.iter().filter(|r| r.fold == k).collect();
            (
                f.iter().map(|r| r.truth()).collect(),
                f.iter().map(|r| r.score_used).collect(),
            )
        })
        .collect();
    let pooled = micro_pr_curve(&folds).unwrap();
    assert!(
        svg.contains(&format!("token-word (AUPRC {:.3})", pooled.auprc)),
        "{svg}"
    );
    assert!(
        !svg.contains(">word (AUPRC"),
        "hard-label runs are not plotted"
    );
    assert!(results.join("pr_toy.csv").is_file());
}

#[test]
fn report_and_plot_need_results() {
    let empty = tempfile::tempdir().unwrap();
    let o = llmclf(&["report", "--results", s(empty.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[no-results]:"));
    let o = llmclf(&["plot", "--results", s(empty.path())]);
    assert!(stderr(&o).starts_with("error[no-results]:"));
}

#[test]
fn word_only_results_cannot_be_plotted() {
    let ws = Workspace::new(20, 8);
    let srv = StubServer::start(oracle);
    let cfg = ws.config(
        &srv.url(),
        "[[runs]]\nlabel = \"w\"\ntemplate = \"B\"\noutput = \"word\"\n",
    );
    assert!(llmclf(&["run", "--config", s(&cfg)]).status.success());
    let o = llmclf(&["plot", "--results", s(&ws.path("results"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[no-probabilistic-runs]:"));
}

#[test]
fn fetch_writes_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let srv = StubServer::start(|req| match req.param("id") {
        Some("11") => Response::ok("Abstract eleven."),
        Some("12") => Response::ok("Abstract twelve."),
        _ => Response::status(404, ""),
    });
    let ids = dir.path().join("ids.csv");
    fs::write(&ids, "id,label\n11,1\n12,0\n13,1\n").unwrap();
    let out = dir.path().join("fetched.jsonl");
    let endpoint = format!("{}/efetch.fcgi", srv.url());
    let o = llmclf(&[
        "fetch",
        "--ids",
        s(&ids),
        "--out",
        s(&out),
        "--endpoint",
        &endpoint,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("not found: 13"));
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(
        text,
        "{\"id\":\"11\",\"text\":\"Abstract eleven.\",\"label\":1}\n{\"id\":\"12\",\"text\":\"Abstract twelve.\",\"label\":0}\n"
    );
}

#[test]
fn usage_errors_use_the_error_format() {
    let o = llmclf(&["run"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error[usage]:"));
}
