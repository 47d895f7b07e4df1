use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use llmclf::config::{
    BackendConfig, ConfigError, EmbedderConfig, EmbedderKind, ExperimentConfig, ResolvedRun,
};
use llmclf::corpus::{load_dataset, CorpusError, Dataset, DatasetFormat};
use llmclf::eval::{run_experiment, EvalError, Experiment, ExperimentResult, Method};
use llmclf::llm::cache::CachedEmbedder;
use llmclf::llm::hashing::HashingEmbedder;
use llmclf::llm::mock::RecordingBackend;
use llmclf::llm::openai::{OpenAiBackend, OpenAiConfig, OpenAiEmbedder};
use llmclf::llm::{ChatBackend, Client, Embedder, EmbeddingCache, ResponseCache};
use llmclf::prompt::{registry, registry_with_overrides, PromptTemplate};

use crate::artifacts::{run_dir, write_jsonl, write_run, DirLock, StoredSummary, PROMPTS_FILE};
use crate::{io_error, CliError, ErrorKind, RunArgs};

const BASELINE_BACKEND: &str = "baseline";
const DEFAULT_HASH_DIMENSION: usize = 256;

fn config_error(e: ConfigError) -> CliError {
    CliError::new(ErrorKind::Config, e.to_string())
}

fn eval_error(e: EvalError) -> CliError {
    let kind = match e {
        EvalError::Llm(_) => ErrorKind::Backend,
        _ => ErrorKind::Input,
    };
    CliError::new(kind, e.to_string())
}

fn api_key(field: &str, var: &Option<String>) -> Result<Option<String>, CliError> {
    match var {
        None => Ok(None),
        Some(v) => std::env::var(v).map(Some).map_err(|_| {
            CliError::new(
                ErrorKind::Config,
                format!("{field}: environment variable `{v}` is not set"),
            )
        }),
    }
}

fn openai_backend(i: usize, b: &BackendConfig) -> Result<OpenAiBackend, CliError> {
    let mut c = OpenAiConfig::new(b.base_url.clone(), b.model.clone());
    c.api_key = api_key(&format!("backends[{i}].api_key_env"), &b.api_key_env)?;
    c.timeout = Duration::from_secs(b.timeout_s);
    c.concurrency = b.concurrency;
    c.top_logprobs = b.top_logprobs;
    c.prefill = b.prefill;
    Ok(OpenAiBackend::new(c))
}

fn embedder(e: &EmbedderConfig, dry_run: bool) -> Result<Box<dyn Embedder>, CliError> {
    let hashing = || {
        Box::new(HashingEmbedder::new(
            e.dimension.unwrap_or(DEFAULT_HASH_DIMENSION),
        ))
    };
    match e.kind {
        EmbedderKind::Hashing => Ok(hashing()),
        EmbedderKind::Openai if dry_run => Ok(hashing()),
        EmbedderKind::Openai => {
            let mut c = OpenAiConfig::new(
                e.base_url.clone().unwrap_or_default(),
                e.model.clone().unwrap_or_default(),
            );
            c.api_key = api_key("embedder.api_key_env", &e.api_key_env)?;
            Ok(Box::new(OpenAiEmbedder::new(c)))
        }
    }
}

/// Everything shared by the runs of one invocation.
struct Session<'a> {
    cfg: &'a ExperimentConfig,
    templates: &'a BTreeMap<String, PromptTemplate>,
    out: PathBuf,
    cache: Option<&'a ResponseCache>,
    embedder: Option<&'a dyn Embedder>,
    concurrency: Option<usize>,
    dry_run: bool,
}

impl Session<'_> {
    fn experiment<'b>(
        &'b self,
        run: &ResolvedRun,
        dataset: &'b Dataset,
        client: Option<Client<'b>>,
        concurrency: usize,
    ) -> Experiment<'b> {
        Experiment {
            dataset,
            k_folds: self.cfg.k_folds,
            seed: self.cfg.seed,
            method: run.method.clone(),
            template: run.template.as_ref().map(|t| self.templates[t].clone()),
            selection: run.selection,
            client,
            embedder: self.embedder,
            concurrency: self.concurrency.unwrap_or(concurrency),
        }
    }

    fn column_name(&self, run: &ResolvedRun, backend: &str) -> String {
        if self.cfg.backends.len() > 1 && backend != BASELINE_BACKEND {
            format!("{backend}/{}", run.label)
        } else {
            run.label.clone()
        }
    }

    fn finish(
        &self,
        run: &ResolvedRun,
        dataset: &str,
        backend: &str,
        result: &ExperimentResult,
    ) -> Result<(), CliError> {
        let summary = StoredSummary {
            dataset: dataset.to_string(),
            config: self.column_name(run, backend),
            label: run.label.clone(),
            backend: backend.to_string(),
            method: result.method.clone(),
            probabilistic: run.method.is_probabilistic(),
            macro_report: result.macro_report.clone(),
            micro_auprc: result.micro_curve.as_ref().map(|c| c.auprc),
            fallbacks: result.folds.iter().map(|f| f.fallbacks).sum(),
            unrecognized: result.folds.iter().map(|f| f.unrecognized).sum(),
            failure: result.failure.clone(),
        };
        let dir = run_dir(&self.out, dataset, backend, &run.label);
        write_run(&dir, &summary, result)?;
        let tag = format!("{dataset}/{backend}/{}", run.label);
        match (&result.failure, &result.macro_report) {
            (Some(f), _) => {
                let kind = if f.backend {
                    ErrorKind::Backend
                } else {
                    ErrorKind::Input
                };
                Err(CliError::new(
                    kind,
                    format!("{tag}: fold {} failed: {}", f.fold, f.message),
                ))
            }
            (None, Some(m)) => {
                println!(
                    "{tag}: accuracy {:.3} f1 {:.3} mcc {:.3} auprc {:.3}",
                    m.accuracy, m.f1, m.mcc, m.auprc
                );
                Ok(())
            }
            (None, None) => Ok(()),
        }
    }

    fn execute(
        &self,
        run: &ResolvedRun,
        dataset_name: &str,
        dataset: &Dataset,
        backends: &BTreeMap<String, OpenAiBackend>,
    ) -> Result<(), CliError> {
        if matches!(run.method, Method::NaiveBayes { .. }) {
            if self.dry_run {
                println!(
                    "{dataset_name}/{BASELINE_BACKEND}/{}: no prompts",
                    run.label
                );
                return Ok(());
            }
            let result =
                run_experiment(&self.experiment(run, dataset, None, 1)).map_err(eval_error)?;
            return self.finish(run, dataset_name, BASELINE_BACKEND, &result);
        }
        for name in &run.backends {
            let bc = self.cfg.backend(name).expect("resolved backend exists");
            if self.dry_run {
                let rec = RecordingBackend::new();
                let client = Client {
                    backend: &rec,
                    cache: None,
                    system_messages: bc.system_messages,
                };
                let exp = self.experiment(run, dataset, Some(client), 1);
                let exp = Experiment {
                    concurrency: 1,
                    ..exp
                };
                run_experiment(&exp).map_err(eval_error)?;
                let prompts = rec.take();
                let dir = run_dir(&self.out, dataset_name, name, &run.label);
                write_jsonl(&dir.join(PROMPTS_FILE), &prompts)?;
                println!(
                    "{dataset_name}/{name}/{}: {} prompts",
                    run.label,
                    prompts.len()
                );
                continue;
            }
            let backend: &dyn ChatBackend = &backends[name];
            let client = Client {
                backend,
                cache: self.cache,
                system_messages: bc.system_messages,
            };
            let result =
                run_experiment(&self.experiment(run, dataset, Some(client), bc.concurrency))
                    .map_err(eval_error)?;
            self.finish(run, dataset_name, name, &result)?;
        }
        Ok(())
    }
}

fn relative_to(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.config).map_err(|e| io_error(&a.config, e))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(config_error)?;
    let base = a.config.parent().unwrap_or(Path::new("")).to_path_buf();
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(url) = &a.backend_url {
        for b in &mut cfg.backends {
            b.base_url = url.clone();
        }
    }
    if a.concurrency == Some(0) {
        return Err(CliError::new(
            ErrorKind::Usage,
            "--concurrency must be at least 1",
        ));
    }
    let templates = match &cfg.templates_dir {
        Some(d) => registry_with_overrides(&relative_to(&base, d))
            .map_err(|e| CliError::new(ErrorKind::Config, format!("templates_dir: {e}")))?,
        None => registry(),
    };
    let runs = cfg.resolve(&templates).map_err(config_error)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| relative_to(&base, &cfg.out_dir));
    let _lock = DirLock::acquire(&out)?;

    let mut backends = BTreeMap::new();
    if !a.dry_run {
        for (i, b) in cfg.backends.iter().enumerate() {
            backends.insert(b.name.clone(), openai_backend(i, b)?);
        }
    }
    let cache_dir = relative_to(&base, &cfg.cache_dir);
    let cache_err = |e: llmclf::llm::cache::CacheError| CliError::new(ErrorKind::Io, e.to_string());
    let (cache, emb_cache) = if a.dry_run {
        (None, None)
    } else {
        (
            Some(ResponseCache::open(&cache_dir).map_err(cache_err)?),
            Some(EmbeddingCache::open(&cache_dir).map_err(cache_err)?),
        )
    };
    let inner = cfg
        .embedder
        .as_ref()
        .map(|e| embedder(e, a.dry_run))
        .transpose()?;
    let cached = match (&inner, &emb_cache) {
        (Some(inner), Some(cache)) => Some(CachedEmbedder {
            inner: inner.as_ref(),
            cache,
        }),
        _ => None,
    };
    let embedder: Option<&dyn Embedder> = match (&cached, &inner) {
        (Some(c), _) => Some(c),
        (None, Some(i)) => Some(i.as_ref()),
        _ => None,
    };
    let session = Session {
        cfg: &cfg,
        templates: &templates,
        out,
        cache: cache.as_ref(),
        embedder,
        concurrency: a.concurrency,
        dry_run: a.dry_run,
    };

    let mut datasets: BTreeMap<String, Dataset> = BTreeMap::new();
    for run in &runs {
        for name in &run.datasets {
            if !datasets.contains_key(name) {
                let (i, dc) = cfg
                    .datasets
                    .iter()
                    .enumerate()
                    .find(|(_, d)| &d.name == name)
                    .expect("resolved dataset exists");
                let path = relative_to(&base, &dc.path);
                let format = match dc.format {
                    Some(f) => f,
                    None => DatasetFormat::from_path(&path).map_err(|e| {
                        CliError::new(ErrorKind::Config, format!("datasets[{i}].format: {e}"))
                    })?,
                };
                let d = load_dataset(&path, format, &dc.topic).map_err(|e| {
                    let kind = match e {
                        CorpusError::Io(_) => ErrorKind::Io,
                        _ => ErrorKind::Input,
                    };
                    CliError::new(kind, format!("{}: {e}", path.display()))
                })?;
                datasets.insert(name.clone(), d);
            }
            session.execute(run, name, &datasets[name], &backends)?;
        }
    }
    Ok(())
}
