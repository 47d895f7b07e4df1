use llmclf::corpus::{Dataset, Label, Sample};
use llmclf::eval::{run_experiment, Experiment, Method};
use llmclf::fewshot::SelectionMethod;
use llmclf::llm::cache::ResponseCache;
use llmclf::llm::hashing::HashingEmbedder;
use llmclf::llm::mock::{FnBackend, ScriptedBackend, ScriptedReply};
use llmclf::llm::Client;
use llmclf::output::{OutputMethod, TokenProb};
use llmclf::prompt::{template, RenderedPrompt, Role};
use llmclf::strategy::StrategyConfig;

const MARK: &str = "POSMARK";

fn corpus(n: usize, positives: usize) -> Dataset {
    let samples = (0..n)
        .map(|i| {
            let pos = i < positives;
            let text = if pos {
                format!("trial {i} randomized patients {MARK}")
            } else {
                format!("review {i} of observational cohorts")
            };
            Sample::new(format!("s{i:03}"), text, Label::from_bool(pos))
        })
        .collect();
    Dataset::new("RCTs", samples).unwrap()
}

fn query_is_positive(p: &RenderedPrompt) -> bool {
    p.messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .is_some_and(|m| m.content.contains(MARK))
}

fn oracle() -> FnBackend {
    FnBackend::new("oracle", |p, _| {
        ScriptedReply::text(if query_is_positive(p) { "yes" } else { "no" })
    })
}

fn base(output: OutputMethod, shots: usize) -> Method {
    Method::Llm(StrategyConfig::Base {
        template: "B".into(),
        output,
        shots,
    })
}

fn experiment<'a>(d: &'a Dataset, method: Method, client: Client<'a>) -> Experiment<'a> {
    Experiment {
        dataset: d,
        k_folds: 5,
        seed: 42,
        method,
        template: Some(template("B").unwrap()),
        selection: None,
        client: Some(client),
        embedder: None,
        concurrency: 4,
    }
}

#[test]
fn oracle_backend_scores_perfectly_on_every_fold() {
    let d = corpus(40, 20);
    let b = oracle();
    let r = run_experiment(&experiment(
        &d,
        base(OutputMethod::Word, 0),
        Client::new(&b),
    ))
    .unwrap();
    assert!(r.failure.is_none());
    assert_eq!(r.folds.len(), 5);
    for f in &r.folds {
        let rep = f.report.as_ref().unwrap();
        assert_eq!(rep.accuracy, 1.0);
        assert_eq!(rep.mcc, 1.0);
        assert_eq!(f.test_size, 8);
    }
    assert_eq!(r.predictions.len(), 40);
    assert_eq!(b.calls(), 40);
    assert_eq!(r.macro_report.unwrap().n, 40);
}

#[test]
fn warm_cache_makes_no_calls() {
    let dir = tempfile::tempdir().unwrap();
    let d = corpus(20, 8);
    let first = {
        let cache = ResponseCache::open(dir.path()).unwrap();
        let b = oracle();
        let r = run_experiment(&experiment(
            &d,
            base(OutputMethod::Word, 0),
            Client::new(&b).with_cache(&cache),
        ))
        .unwrap();
        assert_eq!(b.calls(), 20);
        r
    };
    let cache = ResponseCache::open(dir.path()).unwrap();
    let b = oracle();
    let second = run_experiment(&experiment(
        &d,
        base(OutputMethod::Word, 0),
        Client::new(&b).with_cache(&cache),
    ))
    .unwrap();
    assert_eq!(b.calls(), 0);
    assert_eq!(first, second);
}

#[test]
fn token_distribution_gives_perfect_auprc() {
    let d = corpus(30, 10);
    let b = FnBackend::new("dist", |p, _| {
        let q = if query_is_positive(p) { 0.8 } else { 0.3 };
        ScriptedReply::distribution(vec![
            TokenProb::new("yes", q),
            TokenProb::new("no", 1.0 - q),
        ])
    });
    let r = run_experiment(&experiment(
        &d,
        base(OutputMethod::TokenWord, 0),
        Client::new(&b),
    ))
    .unwrap();
    let m = r.macro_report.unwrap();
    assert!((m.auprc - 1.0).abs() < 1e-12);
    assert!((r.micro_curve.unwrap().auprc - 1.0).abs() < 1e-12);
    assert!(r.predictions.iter().all(|p| p.p_pos.is_some()));
}

#[test]
fn knn_few_shot_records_coverage_and_excludes_query() {
    let d = corpus(25, 10);
    let b = oracle();
    let e = HashingEmbedder::new(64);
    let method = Method::Llm(StrategyConfig::Base {
        template: "B-FewShot".into(),
        output: OutputMethod::Word,
        shots: 2,
    });
    let mut exp = experiment(&d, method, Client::new(&b));
    exp.template = Some(template("B-FewShot").unwrap());
    exp.selection = Some(SelectionMethod::Knn);
    exp.embedder = Some(&e);
    let r = run_experiment(&exp).unwrap();
    assert!(r.failure.is_none(), "{:?}", r.failure);
    for f in &r.folds {
        let c = f.coverage.unwrap();
        assert!(c > 0.0 && c <= 100.0);
    }
}

#[test]
fn backend_failure_stops_the_run_and_keeps_partial_output() {
    let d = corpus(20, 8);
    let b = ScriptedBackend::new(vec![ScriptedReply::text("yes"); 3]);
    let mut exp = experiment(&d, base(OutputMethod::Word, 0), Client::new(&b));
    exp.concurrency = 1;
    let r = run_experiment(&exp).unwrap();
    let f = r.failure.unwrap();
    assert!(f.backend);
    assert_eq!(f.fold, 0);
    assert_eq!(r.folds.len(), 1);
    assert!(r.folds[0].report.is_none());
    assert_eq!(r.predictions.len(), 3);
    assert!(r.macro_report.is_none());
}

#[test]
fn naive_bayes_separates_marked_corpus() {
    let d = corpus(40, 15);
    let exp = Experiment {
        dataset: &d,
        k_folds: 5,
        seed: 1,
        method: Method::NaiveBayes {
            min_df: 3,
            alpha: 1.0,
        },
        template: None,
        selection: None,
        client: None,
        embedder: None,
        concurrency: 1,
    };
    let r = run_experiment(&exp).unwrap();
    let m = r.macro_report.unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert!(r.predictions.iter().all(|p| p.p_pos.is_some()));
}

#[test]
fn llm_method_without_backend_is_rejected() {
    let d = corpus(10, 5);
    let b = oracle();
    let mut exp = experiment(&d, base(OutputMethod::Word, 0), Client::new(&b));
    exp.client = None;
    assert!(run_experiment(&exp).is_err());
}
