//! LLM-based binary text classification for systematic-review screening.
//!
//! Prompts are rendered from a template registry, sent to an
//! OpenAI-compatible backend, and mapped to labels or positive-class
//! probabilities by one of five output methods. Few-shot examples are
//! picked by embedding similarity; chunking, chain-of-thought and
//! tree-of-thoughts strategies build on the same pieces. A naive Bayes
//! baseline and cross-validated metrics complete the pipeline.

pub mod baseline;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod fewshot;
pub mod llm;
pub mod output;
pub mod prompt;
pub mod strategy;
