//! Per-sample classification strategies: direct prompting, chunk
//! averaging, chain of thought, and tree of thoughts.

mod base;
mod chunk;
mod cot;
mod tot;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;
use crate::output::OutputMethod;
use crate::prompt::PromptError;

pub use base::{check_compatible, classify_base, default_params, parse_output};
pub use chunk::{classify_chunked, split_chunks, ExampleSource, CHUNK_TEMPLATE, DEFAULT_MAX_CHARS};
pub use cot::{classify_cot1, classify_cot2, extract_json_list, format_list, NoListFound};
pub use tot::{classify_tot, ToTAttempt, ToTOutcome, ToTParams, ToTStep, ToTTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    Base {
        template: String,
        output: OutputMethod,
        shots: usize,
    },
    Chunking {
        max_chars: usize,
        shots: usize,
    },
    Cot1,
    Cot2,
    Tot(ToTParams),
}

impl StrategyConfig {
    pub fn shots(&self) -> usize {
        match self {
            StrategyConfig::Base { shots, .. } | StrategyConfig::Chunking { shots, .. } => *shots,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            StrategyConfig::Chunking { max_chars: 0, .. } => {
                Err("max_chars must be positive".into())
            }
            StrategyConfig::Tot(p) => p.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("word of {len} characters exceeds the chunk limit of {max_chars}: `{word}`")]
    WordTooLong {
        word: String,
        len: usize,
        max_chars: usize,
    },
    #[error("chunk {index} failed: {source}")]
    ChunkFailure {
        index: usize,
        #[source]
        source: Box<StrategyError>,
    },
    #[error("template `{template}` cannot be used with the {method} output method")]
    Incompatible {
        template: String,
        method: &'static str,
    },
    #[error("example selection failed: {0}")]
    Examples(String),
}
