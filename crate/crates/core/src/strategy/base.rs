use crate::llm::{ChatResponse, Client, GenerationParams};
use crate::output::{
    parse_json, parse_score, parse_word, token_probabilities, ExpectedAnswers, OutputMethod,
    Prediction,
};
use crate::prompt::{render, AnswerFormat, PromptTemplate, RenderInput, RenderedPrompt};

use super::StrategyError;

/// Decoding settings for an output method: greedy, 256 tokens, answers as
/// stop sequences for Word, and a single captured token for token methods.
pub fn default_params(method: OutputMethod, answers: Option<&ExpectedAnswers>) -> GenerationParams {
    match method {
        OutputMethod::Word => GenerationParams {
            stop_sequences: answers
                .map(|a| vec![a.negative().to_string(), a.positive().to_string()])
                .unwrap_or_default(),
            ..Default::default()
        },
        OutputMethod::Json | OutputMethod::Score => GenerationParams::default(),
        OutputMethod::TokenWord | OutputMethod::TokenJson => GenerationParams {
            max_tokens: 1,
            capture_first_token_distribution: true,
            ..Default::default()
        },
    }
}

pub fn check_compatible(t: &PromptTemplate, method: OutputMethod) -> Result<(), StrategyError> {
    let ok = match method {
        OutputMethod::Word | OutputMethod::TokenWord => {
            t.format == AnswerFormat::Word && t.answers.is_some()
        }
        OutputMethod::Json => matches!(t.format, AnswerFormat::Json { .. }),
        OutputMethod::TokenJson => {
            matches!(t.format, AnswerFormat::Json { .. })
                && t.answers.is_some()
                && t.prefill.is_some()
        }
        OutputMethod::Score => t.format == AnswerFormat::Score,
    };
    if ok {
        Ok(())
    } else {
        Err(StrategyError::Incompatible {
            template: t.name.clone(),
            method: method.name(),
        })
    }
}

/// Maps a response to a prediction. Prefills are part of the answer, so
/// JSON and score parsing see `prefill + text`.
pub fn parse_output(
    prompt: &RenderedPrompt,
    resp: &ChatResponse,
    method: OutputMethod,
) -> Prediction {
    let full = format!("{}{}", prompt.prefill.as_deref().unwrap_or(""), resp.text);
    let answers = prompt
        .answers
        .clone()
        .unwrap_or_else(ExpectedAnswers::yes_no);
    match method {
        OutputMethod::Word => parse_word(&resp.text, &answers),
        OutputMethod::Json => match &prompt.format {
            AnswerFormat::Json { key } => parse_json(&full, key),
            _ => Prediction::unrecognized(method, full),
        },
        OutputMethod::Score => parse_score(&full),
        OutputMethod::TokenWord | OutputMethod::TokenJson => token_probabilities(
            resp.first_token_distribution.as_deref().unwrap_or(&[]),
            &answers,
            method,
            &resp.text,
        ),
    }
}

/// Renders, sends and parses one prompt. `examples` are `(text, answer)`
/// pairs already in prompt order.
pub fn classify_base(
    text: &str,
    topic: &str,
    template: &PromptTemplate,
    method: OutputMethod,
    examples: &[(String, String)],
    client: &Client<'_>,
) -> Result<Prediction, StrategyError> {
    check_compatible(template, method)?;
    let prompt = render(
        template,
        RenderInput {
            topic,
            text,
            examples,
            last_gen: None,
        },
    )?;
    let params = default_params(method, prompt.answers.as_ref());
    let resp = client.complete(&prompt, &params)?;
    Ok(parse_output(&prompt, &resp, method))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::mock::{ScriptedBackend, ScriptedReply};
    use crate::output::{PredictedLabel, TokenProb};
    use crate::prompt::template;

    #[test]
    fn token_word_all_yes() {
        let b = ScriptedBackend::new(vec![ScriptedReply::distribution(vec![TokenProb::new(
            "yes", 1.0,
        )])]);
        let p = classify_base(
            "t",
            "X",
            &template("B").unwrap(),
            OutputMethod::TokenWord,
            &[],
            &Client::new(&b),
        )
        .unwrap();
        assert_eq!(p.label, PredictedLabel::Positive);
        assert_eq!(p.p_pos, Some(1.0));
    }

    #[test]
    fn word_no_is_negative() {
        let b = ScriptedBackend::new(vec![ScriptedReply::text("no")]);
        let p = classify_base(
            "t",
            "X",
            &template("B").unwrap(),
            OutputMethod::Word,
            &[],
            &Client::new(&b),
        )
        .unwrap();
        assert_eq!(p.label, PredictedLabel::Negative);
    }

    #[test]
    fn three_examples_make_eight_messages() {
        let b = ScriptedBackend::new(vec![ScriptedReply::text("yes")]);
        let ex: Vec<(String, String)> = (0..3)
            .map(|i| (format!("e{i}"), "no".to_string()))
            .collect();
        classify_base(
            "t",
            "X",
            &template("B-FewShot").unwrap(),
            OutputMethod::Word,
            &ex,
            &Client::new(&b),
        )
        .unwrap();
        assert_eq!(b.prompts()[0].messages.len(), 8);
    }

    #[test]
    fn token_json_reads_prefilled_value() {
        let b = ScriptedBackend::new(vec![ScriptedReply::distribution(vec![
            TokenProb::new(" true", 0.3),
            TokenProb::new(" false", 0.1),
        ])]);
        let p = classify_base(
            "t",
            "X",
            &template("F-Token-JSON").unwrap(),
            OutputMethod::TokenJson,
            &[],
            &Client::new(&b),
        )
        .unwrap();
        assert!((p.p_pos.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn incompatible_pairs_rejected() {
        assert!(check_compatible(&template("B").unwrap(), OutputMethod::Json).is_err());
        assert!(check_compatible(&template("B-JSON").unwrap(), OutputMethod::TokenJson).is_err());
        assert!(check_compatible(&template("B-Score").unwrap(), OutputMethod::Score).is_ok());
    }
}
