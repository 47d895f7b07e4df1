//! Prompt templates and rendering.
//!
//! Templates are ordered role-tagged messages containing placeholder tags
//! (`{topic}`, `{text}`, `{example_text}`, `{example_answer}`, `{last_gen}`)
//! and an optional assistant prefill. Messages that mention the example
//! tags form the example block, which is repeated once per few-shot example.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Label;
use crate::output::ExpectedAnswers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Message {
            role,
            content: content.into(),
        }
    }
}

/// The five placeholder tags a template may contain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Topic,
    Text,
    ExampleText,
    ExampleAnswer,
    LastGen,
}

impl Tag {
    pub const ALL: [Tag; 5] = [
        Tag::Topic,
        Tag::Text,
        Tag::ExampleText,
        Tag::ExampleAnswer,
        Tag::LastGen,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Topic => "topic",
            Tag::Text => "text",
            Tag::ExampleText => "example_text",
            Tag::ExampleAnswer => "example_answer",
            Tag::LastGen => "last_gen",
        }
    }

    pub fn placeholder(self) -> String {
        format!("{{{}}}", self.name())
    }

    fn is_example(self) -> bool {
        matches!(self, Tag::ExampleText | Tag::ExampleAnswer)
    }
}

fn mentions(content: &str, tag: Tag) -> bool {
    content.contains(&tag.placeholder())
}

/// How the answer to a template is expected to look.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerFormat {
    /// Plain yes/no style phrase.
    Word,
    /// Single-field JSON object with a boolean value.
    Json { key: String },
    /// Integer 0-5 positive-class score.
    Score,
    /// JSON list of extracted phrases.
    List,
    /// Integer 0-5 quality rating of a previous generation.
    Rating,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("no value supplied for placeholder `{{{0}}}`")]
    MissingPlaceholderValue(&'static str),
    #[error("template `{0}` does not support few-shot examples")]
    ExamplesNotSupported(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("invalid template `{name}`: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("template override file `{path}`: {reason}")]
    Override { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub messages: Vec<Message>,
    pub prefill: Option<String>,
    pub answers: Option<ExpectedAnswers>,
    pub format: AnswerFormat,
}

impl PromptTemplate {
    pub fn new(
        name: impl Into<String>,
        messages: Vec<Message>,
        prefill: Option<String>,
        answers: Option<ExpectedAnswers>,
        format: AnswerFormat,
    ) -> Result<Self, PromptError> {
        let t = PromptTemplate {
            name: name.into(),
            messages,
            prefill,
            answers,
            format,
        };
        t.validate()?;
        Ok(t)
    }

    fn validate(&self) -> Result<(), PromptError> {
        let invalid = |reason: &str| PromptError::InvalidTemplate {
            name: self.name.clone(),
            reason: reason.to_string(),
        };
        if self.messages.is_empty() {
            return Err(invalid("no messages"));
        }
        if self.messages.iter().any(|m| m.content.is_empty()) {
            return Err(invalid("empty message content"));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(invalid("last message must be a user message"));
        }
        if self.prefill.as_deref() == Some("") {
            return Err(invalid("empty prefill"));
        }
        for m in &self.messages {
            if let Some(tag) = unknown_tags(&m.content).first() {
                return Err(invalid(&format!("unknown placeholder `{{{tag}}}`")));
            }
        }
        let block = self.example_block();
        if let Some((start, end)) = block {
            if self.messages[start..end].iter().any(|m| {
                !Tag::ALL
                    .iter()
                    .any(|t| t.is_example() && mentions(&m.content, *t))
            }) {
                return Err(invalid("example messages are not contiguous"));
            }
            if end >= self.messages.len() {
                return Err(invalid("example block must precede the final user message"));
            }
        }
        Ok(())
    }

    /// Index range of the contiguous messages that mention example tags.
    fn example_block(&self) -> Option<(usize, usize)> {
        let is_ex = |m: &Message| {
            mentions(&m.content, Tag::ExampleText) || mentions(&m.content, Tag::ExampleAnswer)
        };
        let start = self.messages.iter().position(is_ex)?;
        let end = self.messages.iter().rposition(is_ex)? + 1;
        Some((start, end))
    }

    pub fn supports_examples(&self) -> bool {
        self.example_block().is_some()
    }

    pub fn uses_tag(&self, tag: Tag) -> bool {
        self.messages.iter().any(|m| mentions(&m.content, tag))
    }

    /// Number of rendered messages for a zero-shot rendering, prefill included.
    pub fn base_message_count(&self) -> usize {
        let block = self.example_block().map(|(s, e)| e - s).unwrap_or(0);
        self.messages.len() - block + usize::from(self.prefill.is_some())
    }
}

/// Tags between braces that are identifier-like but not one of the defined
/// five. JSON fragments such as `{"included": true}` are not tags.
fn unknown_tags(content: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = content;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        if let Some(close) = after.find('}') {
            let inner = &after[..close];
            if !inner.is_empty()
                && inner.chars().all(|c| c.is_ascii_lowercase() || c == '_')
                && !Tag::ALL.iter().any(|t| t.name() == inner)
            {
                out.push(inner.to_string());
            }
        }
        rest = after;
    }
    out
}

/// A message sequence ready to send, carrying what output parsing needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub template: String,
    pub messages: Vec<Message>,
    pub prefill: Option<String>,
    pub answers: Option<ExpectedAnswers>,
    pub format: AnswerFormat,
}

impl RenderedPrompt {
    /// Messages with any trailing prefill removed, for backends that reject
    /// a final assistant message.
    pub fn without_prefill(&self) -> Vec<Message> {
        let mut msgs = self.messages.clone();
        if self.prefill.is_some() && msgs.last().map(|m| m.role) == Some(Role::Assistant) {
            msgs.pop();
        }
        msgs
    }

    /// Prepends the system message to the first user message, separated by
    /// two newlines, for models without system-message support.
    pub fn fold_system_into_user(mut self) -> Self {
        let Some(sys_idx) = self.messages.iter().position(|m| m.role == Role::System) else {
            return self;
        };
        let system = self.messages.remove(sys_idx);
        if let Some(user) = self.messages.iter_mut().find(|m| m.role == Role::User) {
            user.content = format!("{}\n\n{}", system.content, user.content);
        }
        self
    }
}

/// Values substituted into a template.
#[derive(Debug, Clone, Copy)]
pub struct RenderInput<'a> {
    pub topic: &'a str,
    pub text: &'a str,
    pub examples: &'a [(String, String)],
    pub last_gen: Option<&'a str>,
}

fn substitute(
    content: &str,
    topic: &str,
    text: &str,
    example: Option<(&str, &str)>,
    last_gen: Option<&str>,
) -> Result<String, PromptError> {
    // Single left-to-right pass so substituted values are never rescanned.
    let mut out = String::with_capacity(content.len() + text.len());
    let mut rest = content;
    'scan: while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let tail = &rest[open..];
        for tag in Tag::ALL {
            let ph = tag.placeholder();
            if tail.starts_with(&ph) {
                let value = match tag {
                    Tag::Topic => topic,
                    Tag::Text => text,
                    Tag::ExampleText => example
                        .map(|e| e.0)
                        .ok_or(PromptError::MissingPlaceholderValue(tag.name()))?,
                    Tag::ExampleAnswer => example
                        .map(|e| e.1)
                        .ok_or(PromptError::MissingPlaceholderValue(tag.name()))?,
                    Tag::LastGen => {
                        last_gen.ok_or(PromptError::MissingPlaceholderValue(tag.name()))?
                    }
                };
                out.push_str(value);
                rest = &tail[ph.len()..];
                continue 'scan;
            }
        }
        out.push('{');
        rest = &tail[1..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Renders a template. Example pairs become alternating user/assistant
/// messages, in the given order, ahead of the final user message.
pub fn render(t: &PromptTemplate, input: RenderInput<'_>) -> Result<RenderedPrompt, PromptError> {
    let block = t.example_block();
    if !input.examples.is_empty() && block.is_none() {
        return Err(PromptError::ExamplesNotSupported(t.name.clone()));
    }
    if t.uses_tag(Tag::LastGen) && input.last_gen.is_none() {
        return Err(PromptError::MissingPlaceholderValue(Tag::LastGen.name()));
    }
    let sub = |m: &Message, ex: Option<(&str, &str)>| -> Result<Message, PromptError> {
        Ok(Message::new(
            m.role,
            substitute(&m.content, input.topic, input.text, ex, input.last_gen)?,
        ))
    };
    let mut messages = Vec::with_capacity(t.messages.len() + 2 * input.examples.len() + 1);
    match block {
        Some((start, end)) => {
            for m in &t.messages[..start] {
                messages.push(sub(m, None)?);
            }
            for (ex_text, ex_answer) in input.examples {
                for m in &t.messages[start..end] {
                    messages.push(sub(m, Some((ex_text, ex_answer)))?);
                }
            }
            for m in &t.messages[end..] {
                messages.push(sub(m, None)?);
            }
        }
        None => {
            for m in &t.messages {
                messages.push(sub(m, None)?);
            }
        }
    }
    if let Some(prefill) = &t.prefill {
        messages.push(Message::new(Role::Assistant, prefill.clone()));
    }
    Ok(RenderedPrompt {
        template: t.name.clone(),
        messages,
        prefill: t.prefill.clone(),
        answers: t.answers.clone(),
        format: t.format.clone(),
    })
}

/// A few-shot candidate with its similarity to the classified sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub id: String,
    pub similarity: f64,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderMode {
    /// Most similar first.
    Similarity,
    /// All negatives (most similar first), then all positives.
    Balanced,
}

fn by_similarity(a: &ScoredExample, b: &ScoredExample) -> Ordering {
    b.similarity
        .partial_cmp(&a.similarity)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.id.cmp(&b.id))
}

pub fn example_order(mut candidates: Vec<ScoredExample>, mode: OrderMode) -> Vec<ScoredExample> {
    match mode {
        OrderMode::Similarity => candidates.sort_by(by_similarity),
        OrderMode::Balanced => candidates.sort_by(|a, b| {
            a.label
                .is_positive()
                .cmp(&b.label.is_positive())
                .then_with(|| by_similarity(a, b))
        }),
    }
    candidates
}

const SYS_HELPFUL: &str = "You are a helpful assistant.";
const SYS_EXPERT: &str = "You are an expert on medical articles classification. You are going to help classify article abstracts.";
const SYS_CLASSIFIER: &str = "You are an AI assistant and you are very good at text classification. You are going to help classify medical article abstracts. You will be given an abstract of an article considered for inclusion in a review of scientific articles on the topic of {topic}.";
const SYS_CLASSIFIER_PHRASES: &str = "You are an AI assistant and you are very good at text classification. You are going to help classify medical article abstracts. You will be given an abstract of an article considered for inclusion in a review of scientific articles on the topic of {topic}, together with some phrases extracted from it that point towards it contining high quality evidence or not.";
const SYS_ANALYZER: &str = "You are an AI assistant and you are very good at natural language processing. You are going to help analyze medical article abstracts. You will be given an abstract of an article considered for inclusion in a review of scientific articles on the topic of {topic}.";
const SYS_RATER: &str = "You are an AI assistant and you an expert at natural language processing. You are going to help analyze medical article abstracts. You will be given an abstract of an article considered for inclusion in a review of scientific articles on the topic of {topic}.";

const Q_B: &str = "Is this an abstract of a high-quality article on {topic}? Answer yes or no.";
const Q_F: &str =
    "Should the article the following abstract describes be included in the review on {topic}?";
const JSON_INCLUDED: &str = "Answer in JSON format: {\"included\": false} or {\"included\": true}.";
const EXTRACT: &str = "From this abstract, extract phrases that could point towards the article containing high quality evidence or a lack thereof.";
const THINK: &str = "Let's think step by step.";
const RATING_PREFILL: &str = "{\"quality\": ";

fn sys(c: impl Into<String>) -> Message {
    Message::new(Role::System, c)
}

fn user(c: impl Into<String>) -> Message {
    Message::new(Role::User, c)
}

fn assistant(c: impl Into<String>) -> Message {
    Message::new(Role::Assistant, c)
}

fn json(key: &str) -> AnswerFormat {
    AnswerFormat::Json { key: key.into() }
}

type TemplateDef = (
    &'static str,
    Vec<Message>,
    Option<&'static str>,
    Option<ExpectedAnswers>,
    AnswerFormat,
);

/// Built-in templates keyed by name.
pub fn registry() -> BTreeMap<String, PromptTemplate> {
    let yes_no = Some(ExpectedAnswers::yes_no());
    let false_true = Some(ExpectedAnswers::false_true());
    let b_user = format!("{Q_B}\n\"{{text}}\"");
    let f_user = format!("{Q_F} \"{{text}}\" Reply with a single word, yes or no.");
    let b_json_user = "Is this an abstract of a high-quality article on {topic}? Answer in JSON format: {\"high_quality\": false} or {\"high_quality\": true}. \n\"{text}\"";
    let f_json_user = format!("{Q_F} \"{{text}}\" {JSON_INCLUDED}");
    let chunk_q = "Should the article the following abstract fragment describes be included in the review on {topic}?";

    let defs: Vec<TemplateDef> = vec![
        ("A", vec![sys(Q_B), user("{text}")], None, yes_no.clone(), AnswerFormat::Word),
        ("B", vec![sys(SYS_HELPFUL), user(b_user.clone())], None, yes_no.clone(), AnswerFormat::Word),
        (
            "C",
            vec![
                sys(format!("{SYS_EXPERT} The user will pass in a text and you should answer yes if it is an abstract of a high-quality article on the topic of {{topic}} and no otherwise.")),
                user("{text}"),
            ],
            None,
            yes_no.clone(),
            AnswerFormat::Word,
        ),
        (
            "D",
            vec![
                sys(format!("{SYS_EXPERT} Answer with a single word only, yes or no.")),
                user("Is the following an abstract of a high-quality article on the topic of {topic}? \"{text}\""),
            ],
            None,
            yes_no.clone(),
            AnswerFormat::Word,
        ),
        (
            "E",
            vec![
                sys(format!("{SYS_CLASSIFIER} You should reply yes if the article should be included, and no otherwise.")),
                user("{text}"),
            ],
            None,
            yes_no.clone(),
            AnswerFormat::Word,
        ),
        ("F", vec![sys(SYS_CLASSIFIER), user(f_user)], None, yes_no.clone(), AnswerFormat::Word),
        (
            "B-Score",
            vec![
                sys(SYS_HELPFUL),
                user("Is this an abstract of a high-quality article on {topic}? Rank the article on a scale from 0 to 5, where 5 means that it is a high-quality article on {topic}.\n\"{text}\""),
            ],
            None,
            None,
            AnswerFormat::Score,
        ),
        (
            "F-Score",
            vec![
                sys(SYS_CLASSIFIER),
                user(format!("{Q_F} \"{{text}}\" Rank the article on a scale from 0 to 5, where 0 means \"should not be included\" and 5 means \"should definitely be included\".")),
            ],
            None,
            None,
            AnswerFormat::Score,
        ),
        ("B-JSON", vec![sys(SYS_HELPFUL), user(b_json_user)], None, false_true.clone(), json("high_quality")),
        ("F-JSON", vec![sys(SYS_CLASSIFIER), user(f_json_user.clone())], None, false_true.clone(), json("included")),
        (
            "B-Token-JSON",
            vec![sys(SYS_HELPFUL), user(b_json_user)],
            Some("{\"high_quality\":"),
            false_true.clone(),
            json("high_quality"),
        ),
        (
            "F-Token-JSON",
            vec![sys(SYS_CLASSIFIER), user(f_json_user.clone())],
            Some("{\"included\":"),
            false_true.clone(),
            json("included"),
        ),
        (
            "B-FewShot",
            vec![
                sys(SYS_HELPFUL),
                user(format!("{Q_B}\n\"{{example_text}}\"")),
                assistant("{example_answer}"),
                user(b_user),
            ],
            None,
            yes_no.clone(),
            AnswerFormat::Word,
        ),
        ("CoT1", vec![sys(SYS_CLASSIFIER), user(f_json_user)], Some(THINK), false_true.clone(), json("included")),
        (
            "CoT2-Extract",
            vec![sys(SYS_CLASSIFIER), user(format!("{EXTRACT} \"{{text}}\" Give your answer as a JSON list."))],
            Some("[\""),
            None,
            AnswerFormat::List,
        ),
        (
            "CoT2-Classify",
            vec![
                sys(SYS_CLASSIFIER_PHRASES),
                user(format!("{Q_F} \"{{text}}\" \n\nHere are some phrases extracted from it in JSON format: [\"{{last_gen}} \n\n{JSON_INCLUDED}")),
            ],
            Some("{\"included\": \""),
            false_true.clone(),
            json("included"),
        ),
        (
            "Chunking",
            vec![
                sys("You are an AI assistant and you are very good at text classification. You are going to help classify medical article abstracts. You will be given a fragment of an abstract of an article considered for inclusion in a review of scientific articles on the topic of {topic}."),
                user(format!("{chunk_q} \"{{example_text}}\" Reply with a single word, yes or no.")),
                assistant("{example_answer}"),
                user(format!("{chunk_q} \"{{text}}\" Reply with a single word, yes or no.")),
            ],
            None,
            yes_no,
            AnswerFormat::Word,
        ),
        (
            "ToT-Gen1",
            vec![
                sys(SYS_ANALYZER),
                user(format!("{EXTRACT} \"{{text}}\" Your final answer should be a JSON list of the extracted phrases.")),
            ],
            Some(THINK),
            None,
            AnswerFormat::List,
        ),
        (
            "ToT-Gen2",
            vec![
                sys(SYS_CLASSIFIER_PHRASES),
                user(format!("{Q_F} \"{{text}}\" \n\nHere are some phrases extracted from it in JSON format: [\"{{last_gen}} \n\nGive your final answer in JSON format: {{\"included\": false}} or {{\"included\": true}}.")),
            ],
            Some(THINK),
            false_true,
            json("included"),
        ),
        (
            "ToT-Eval1",
            vec![
                sys(SYS_RATER),
                user("\"{text}\"\n\nThe following are phrases that could point to the article containing high-quality evidence in JSON format extracted from the above text: {last_gen} \n\nRate the quality of extraction from 0 to 5. Answer in JSON format: {\"quality\": n} where n is a number from 0 to 5."),
            ],
            Some(RATING_PREFILL),
            None,
            AnswerFormat::Rating,
        ),
        (
            "ToT-Eval2",
            vec![
                sys(SYS_RATER),
                user("For the abstract: \"{text}\" the following was an answer to a question whether it should be included in a review of articles on the topic of {topic}.\n\"{last_gen}\" \n\nRate the quality of the answer from 0 to 5. Answer in JSON format: {\"quality\": n} where n is a number from 0 to 5."),
            ],
            Some(RATING_PREFILL),
            None,
            AnswerFormat::Rating,
        ),
    ];

    defs.into_iter()
        .map(|(name, messages, prefill, answers, format)| {
            let t =
                PromptTemplate::new(name, messages, prefill.map(str::to_string), answers, format)
                    .expect("built-in templates are valid");
            (name.to_string(), t)
        })
        .collect()
}

pub fn template(name: &str) -> Result<PromptTemplate, PromptError> {
    registry()
        .remove(name)
        .ok_or_else(|| PromptError::UnknownTemplate(name.to_string()))
}

/// Loads overrides from `dir/<template name>/<NN>-<role>.txt` files, sorted
/// by file name. Roles are `system`, `user`, `assistant`, or `prefill` (at
/// most one, becoming the trailing assistant prefill). Only built-in
/// template names may be overridden; their answer formats are kept.
pub fn registry_with_overrides(
    dir: &Path,
) -> Result<BTreeMap<String, PromptTemplate>, PromptError> {
    let mut reg = registry();
    let io_err = |p: &Path, e: std::io::Error| PromptError::Override {
        path: p.display().to_string(),
        reason: e.to_string(),
    };
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir())
        .collect();
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let name = entry.file_name().to_string_lossy().to_string();
        let base = reg
            .get(&name)
            .cloned()
            .ok_or_else(|| PromptError::UnknownTemplate(name.clone()))?;
        let mut files: Vec<_> = std::fs::read_dir(entry.path())
            .map_err(|e| io_err(&entry.path(), e))?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| p.extension().and_then(|x| x.to_str()) == Some("txt"))
            .collect();
        files.sort();
        let mut messages = Vec::new();
        let mut prefill = None;
        for path in files {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            let role = stem.rsplit(['-', '_']).next().unwrap_or_default();
            let content = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let content = content.strip_suffix('\n').unwrap_or(&content).to_string();
            let role = match role {
                "system" => Role::System,
                "user" => Role::User,
                "assistant" => Role::Assistant,
                "prefill" => {
                    if prefill.replace(content).is_some() {
                        return Err(PromptError::Override {
                            path: path.display().to_string(),
                            reason: "more than one prefill file".into(),
                        });
                    }
                    continue;
                }
                other => {
                    return Err(PromptError::Override {
                        path: path.display().to_string(),
                        reason: format!("unknown role `{other}` in file name"),
                    })
                }
            };
            messages.push(Message::new(role, content));
        }
        let t = PromptTemplate::new(name.clone(), messages, prefill, base.answers, base.format)?;
        reg.insert(name, t);
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input<'a>(
        topic: &'a str,
        text: &'a str,
        examples: &'a [(String, String)],
    ) -> RenderInput<'a> {
        RenderInput {
            topic,
            text,
            examples,
            last_gen: None,
        }
    }

    #[test]
    fn registry_spot_checks() {
        let reg = registry();
        assert_eq!(reg["B"].messages[0].content, "You are a helpful assistant.");
        assert_eq!(
            reg["B-Token-JSON"].prefill.as_deref(),
            Some("{\"high_quality\":")
        );
        assert_eq!(
            reg["ToT-Gen1"].prefill.as_deref(),
            Some("Let's think step by step.")
        );
        assert!(reg["B-FewShot"].supports_examples());
        assert!(reg["Chunking"].supports_examples());
        assert!(!reg["B"].supports_examples());
        assert_eq!(reg.len(), 21);
    }

    #[test]
    fn few_shot_structure() {
        let t = template("B-FewShot").unwrap();
        let ex = vec![("E1".to_string(), "yes".to_string())];
        let r = render(&t, input("Triptans", "T", &ex)).unwrap();
        let roles: Vec<_> = r.messages.iter().map(|m| m.role).collect();
        assert_eq!(
            roles,
            [Role::System, Role::User, Role::Assistant, Role::User]
        );
        assert!(r.messages[1].content.ends_with("\"E1\""));
        assert_eq!(r.messages[2].content, "yes");
        assert!(r.messages[3].content.ends_with("\"T\""));
    }

    #[test]
    fn zero_shot_substitution() {
        let r = render(&template("B").unwrap(), input("ADHD", "T", &[])).unwrap();
        assert_eq!(r.messages.len(), 2);
        assert_eq!(
            r.messages[1].content,
            "Is this an abstract of a high-quality article on ADHD? Answer yes or no.\n\"T\""
        );
    }

    #[test]
    fn last_gen_embedding() {
        let t = template("CoT2-Classify").unwrap();
        let mut inp = input("X", "T", &[]);
        assert_eq!(
            render(&t, inp),
            Err(PromptError::MissingPlaceholderValue("last_gen"))
        );
        inp.last_gen = Some("phrase one\", \"phrase two\"]");
        let r = render(&t, inp).unwrap();
        assert!(r.messages[1]
            .content
            .contains("[\"phrase one\", \"phrase two\"]"));
        assert_eq!(r.messages.last().unwrap().role, Role::Assistant);
    }

    #[test]
    fn examples_rejected_when_unsupported() {
        let ex = vec![("E".to_string(), "no".to_string())];
        assert_eq!(
            render(&template("F").unwrap(), input("X", "T", &ex)),
            Err(PromptError::ExamplesNotSupported("F".into()))
        );
    }

    #[test]
    fn substitution_is_single_pass() {
        let r = render(&template("A").unwrap(), input("{text}", "{topic}", &[])).unwrap();
        assert!(r.messages[0].content.contains("on {text}?"));
        assert_eq!(r.messages[1].content, "{topic}");
    }

    #[test]
    fn system_folding() {
        let r = render(&template("B").unwrap(), input("X", "T", &[]))
            .unwrap()
            .fold_system_into_user();
        assert_eq!(r.messages.len(), 1);
        assert!(r.messages[0]
            .content
            .starts_with("You are a helpful assistant.\n\nIs this"));
    }

    fn se(id: &str, s: f64, pos: bool) -> ScoredExample {
        ScoredExample {
            id: id.into(),
            similarity: s,
            label: Label::from_bool(pos),
        }
    }

    #[test]
    fn ordering_rules() {
        let ids = |v: Vec<ScoredExample>| v.into_iter().map(|e| e.id).collect::<Vec<_>>();
        assert_eq!(
            ids(example_order(
                vec![se("a", 0.9, true), se("b", 0.95, false)],
                OrderMode::Similarity
            )),
            ["b", "a"]
        );
        assert_eq!(
            ids(example_order(
                vec![
                    se("a", 0.99, true),
                    se("b", 0.5, false),
                    se("c", 0.7, false)
                ],
                OrderMode::Balanced
            )),
            ["c", "b", "a"]
        );
        assert_eq!(
            ids(example_order(
                vec![se("z", 0.5, true), se("m", 0.5, false), se("a", 0.5, true)],
                OrderMode::Similarity
            )),
            ["a", "m", "z"]
        );
    }

    #[test]
    fn template_validation() {
        let bad = PromptTemplate::new(
            "x",
            vec![user("{nope} {text}")],
            None,
            None,
            AnswerFormat::Word,
        );
        assert!(matches!(bad, Err(PromptError::InvalidTemplate { .. })));
        let ok = PromptTemplate::new(
            "x",
            vec![user("{\"a\": 1} {text}")],
            None,
            None,
            AnswerFormat::Word,
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn overrides_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let b = dir.path().join("B");
        std::fs::create_dir(&b).unwrap();
        std::fs::write(b.join("00-system.txt"), "Be terse.\n").unwrap();
        std::fs::write(b.join("01-user.txt"), "{topic}? {text}").unwrap();
        std::fs::write(b.join("02-prefill.txt"), "Answer:").unwrap();
        let reg = registry_with_overrides(dir.path()).unwrap();
        let t = &reg["B"];
        assert_eq!(t.messages[0].content, "Be terse.");
        assert_eq!(t.prefill.as_deref(), Some("Answer:"));
        assert_eq!(t.answers, Some(ExpectedAnswers::yes_no()));

        std::fs::create_dir(dir.path().join("Nope")).unwrap();
        assert!(matches!(
            registry_with_overrides(dir.path()),
            Err(PromptError::UnknownTemplate(_))
        ));
    }
}
