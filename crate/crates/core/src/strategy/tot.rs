use serde::{Deserialize, Serialize};

use crate::llm::{Client, GenerationParams};
use crate::output::{first_integer_in_range, parse_json, OutputMethod, PredictedLabel, Prediction};
use crate::prompt::{render, template, AnswerFormat, PromptTemplate, RenderInput};

use super::cot::{extract_json_list, format_list, list_continuation};
use super::StrategyError;

/// Step-1 budgets before giving up: the initial one plus one re-entry
/// after step 2 is exhausted.
const STEP1_BUDGETS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToTParams {
    pub accept_threshold: u32,
    pub max_attempts_per_step: usize,
    pub max_tokens: u32,
    /// Base sampling seed; each call adds its ordinal.
    #[serde(default)]
    pub seed: u64,
}

impl Default for ToTParams {
    fn default() -> Self {
        ToTParams {
            accept_threshold: 3,
            max_attempts_per_step: 3,
            max_tokens: 512,
            seed: 0,
        }
    }
}

impl ToTParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.accept_threshold > 5 {
            return Err("accept_threshold must be in 0..=5".into());
        }
        if self.max_attempts_per_step == 0 {
            return Err("max_attempts_per_step must be at least 1".into());
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }

    /// Upper bound on backend calls for one sample.
    pub fn max_calls(&self) -> usize {
        STEP1_BUDGETS * 4 * self.max_attempts_per_step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToTAttempt {
    pub output: String,
    /// `None` when the output was rejected unparsed, without a rating call.
    pub rating: Option<u32>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToTStep {
    pub step: u8,
    pub attempts: Vec<ToTAttempt>,
}

impl ToTStep {
    pub fn accepted(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.accepted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToTOutcome {
    Success { prediction: Prediction },
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToTTrace {
    pub steps: Vec<ToTStep>,
    pub backtracks: usize,
    pub outcome: ToTOutcome,
}

impl ToTTrace {
    pub fn calls(&self) -> usize {
        self.steps
            .iter()
            .flat_map(|s| &s.attempts)
            .map(|a| 1 + usize::from(a.rating.is_some()))
            .sum()
    }

    /// Success maps to its prediction; failure to an unrecognized one.
    pub fn prediction(&self) -> Prediction {
        match &self.outcome {
            ToTOutcome::Success { prediction } => prediction.clone(),
            ToTOutcome::Failure => Prediction::unrecognized(OutputMethod::Json, ""),
        }
    }
}

struct Run<'a, 'c> {
    text: &'a str,
    topic: &'a str,
    params: &'a ToTParams,
    client: &'a Client<'c>,
    calls: u64,
}

impl Run<'_, '_> {
    fn call(
        &mut self,
        t: &PromptTemplate,
        last_gen: Option<&str>,
    ) -> Result<String, StrategyError> {
        let prompt = render(
            t,
            RenderInput {
                topic: self.topic,
                text: self.text,
                examples: &[],
                last_gen,
            },
        )?;
        let params = GenerationParams {
            seed: Some(self.params.seed.wrapping_add(self.calls)),
            ..GenerationParams::sampled(self.params.max_tokens)
        };
        self.calls += 1;
        let resp = self.client.complete(&prompt, &params)?;
        Ok(format!(
            "{}{}",
            prompt.prefill.as_deref().unwrap_or(""),
            resp.text
        ))
    }

    fn rate(&mut self, eval: &PromptTemplate, last_gen: &str) -> Result<u32, StrategyError> {
        let out = self.call(eval, Some(last_gen))?;
        Ok(first_integer_in_range(&out, 5).unwrap_or(0))
    }
}

/// Two-step generate-and-rate search: phrase extraction, then
/// classification given the phrases. Every generation is rated 0-5 and
/// kept when the rating reaches the threshold. Exhausting step 2
/// re-enters step 1 with a fresh budget once; exhausting step 1 fails.
pub fn classify_tot(
    text: &str,
    topic: &str,
    params: &ToTParams,
    client: &Client<'_>,
) -> Result<ToTTrace, StrategyError> {
    let gen1 = template("ToT-Gen1")?;
    let gen2 = template("ToT-Gen2")?;
    let eval1 = template("ToT-Eval1")?;
    let eval2 = template("ToT-Eval2")?;
    let key = match &gen2.format {
        AnswerFormat::Json { key } => key.clone(),
        _ => "included".into(),
    };
    let mut run = Run {
        text,
        topic,
        params,
        client,
        calls: 0,
    };
    let mut steps = Vec::new();
    let mut backtracks = 0;
    let m = params.max_attempts_per_step;

    for budget in 0..STEP1_BUDGETS {
        let mut step1 = ToTStep {
            step: 1,
            attempts: Vec::new(),
        };
        let mut phrases = None;
        while step1.attempts.len() < m && phrases.is_none() {
            let output = run.call(&gen1, None)?;
            let attempt = match extract_json_list(&output) {
                Ok(list) => {
                    let rating = run.rate(&eval1, &format_list(&list))?;
                    let accepted = rating >= params.accept_threshold;
                    if accepted {
                        phrases = Some(list);
                    }
                    ToTAttempt {
                        output,
                        rating: Some(rating),
                        accepted,
                    }
                }
                Err(_) => ToTAttempt {
                    output,
                    rating: None,
                    accepted: false,
                },
            };
            step1.attempts.push(attempt);
        }
        steps.push(step1);
        let Some(phrases) = phrases else {
            return Ok(ToTTrace {
                steps,
                backtracks,
                outcome: ToTOutcome::Failure,
            });
        };

        let continuation = list_continuation(&phrases);
        let mut step2 = ToTStep {
            step: 2,
            attempts: Vec::new(),
        };
        let mut answer = None;
        while step2.attempts.len() < m && answer.is_none() {
            let output = run.call(&gen2, Some(&continuation))?;
            let parsed = parse_json(&output, &key);
            let attempt = if parsed.label == PredictedLabel::Unrecognized {
                ToTAttempt {
                    output,
                    rating: None,
                    accepted: false,
                }
            } else {
                let generated = output
                    .strip_prefix(gen2.prefill.as_deref().unwrap_or(""))
                    .unwrap_or(&output);
                let rating = run.rate(&eval2, generated.trim())?;
                let accepted = rating >= params.accept_threshold;
                if accepted {
                    answer = Some(parsed);
                }
                ToTAttempt {
                    output,
                    rating: Some(rating),
                    accepted,
                }
            };
            step2.attempts.push(attempt);
        }
        steps.push(step2);
        if let Some(prediction) = answer {
            return Ok(ToTTrace {
                steps,
                backtracks,
                outcome: ToTOutcome::Success { prediction },
            });
        }
        if budget + 1 < STEP1_BUDGETS {
            backtracks += 1;
        }
    }
    Ok(ToTTrace {
        steps,
        backtracks,
        outcome: ToTOutcome::Failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{ScriptedBackend, ScriptedReply};

    const LIST: &str = r#" Phrases: ["randomized", "double-blind"]"#;
    const ANSWER: &str = r#" It is an RCT. {"included": true}"#;

    fn rating(n: u32) -> ScriptedReply {
        ScriptedReply::text(&format!("{n}}}"))
    }

    fn script(step1: &[u32], step2: &[u32]) -> Vec<ScriptedReply> {
        let mut v = Vec::new();
        for r in step1 {
            v.push(ScriptedReply::text(LIST));
            v.push(rating(*r));
        }
        for r in step2 {
            v.push(ScriptedReply::text(ANSWER));
            v.push(rating(*r));
        }
        v
    }

    #[test]
    fn success_in_four_calls() {
        let b = ScriptedBackend::new(script(&[4], &[5]));
        let tr = classify_tot("t", "X", &ToTParams::default(), &Client::new(&b)).unwrap();
        assert_eq!(b.calls(), 4);
        assert_eq!(tr.calls(), 4);
        assert_eq!(tr.prediction().label, PredictedLabel::Positive);
        let eval1 = &b.prompts()[1].messages[1].content;
        assert!(eval1.contains(r#"text: ["randomized", "double-blind"] "#));
        let gen2 = &b.prompts()[2].messages[1].content;
        assert!(gen2.contains(r#"format: ["randomized", "double-blind"] "#));
    }

    #[test]
    fn step1_exhaustion_fails_after_six() {
        let b = ScriptedBackend::new(script(&[2, 2, 2], &[]));
        let tr = classify_tot("t", "X", &ToTParams::default(), &Client::new(&b)).unwrap();
        assert_eq!(b.calls(), 6);
        assert_eq!(tr.outcome, ToTOutcome::Failure);
        assert_eq!(tr.prediction().label, PredictedLabel::Unrecognized);
    }

    #[test]
    fn unparseable_generation_skips_rating() {
        let mut s = vec![ScriptedReply::text(" no list at all")];
        s.extend(script(&[3], &[3]));
        let b = ScriptedBackend::new(s);
        let tr = classify_tot("t", "X", &ToTParams::default(), &Client::new(&b)).unwrap();
        assert_eq!(b.calls(), 5);
        assert_eq!(tr.steps[0].attempts[0].rating, None);
        assert!(matches!(tr.outcome, ToTOutcome::Success { .. }));
    }

    #[test]
    fn step2_exhaustion_backtracks_once() {
        let mut s = script(&[4], &[2, 2, 2]);
        s.extend(script(&[2, 2, 2], &[]));
        let b = ScriptedBackend::new(s);
        let tr = classify_tot("t", "X", &ToTParams::default(), &Client::new(&b)).unwrap();
        assert_eq!(b.calls(), 14);
        assert_eq!(tr.calls(), 14);
        assert_eq!(tr.backtracks, 1);
        assert_eq!(tr.outcome, ToTOutcome::Failure);
        let steps: Vec<u8> = tr.steps.iter().map(|s| s.step).collect();
        assert_eq!(steps, [1, 2, 1]);
    }
}
