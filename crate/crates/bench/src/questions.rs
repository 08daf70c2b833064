//! BLIP-VQA questions and the two-round InternVL scoring script.

use serde::{Deserialize, Serialize};
use spdiffusion::prompt::ParsedPrompt;

use crate::error::{BenchError, Result};

/// One question per concept: its attributes in prompt order, the concept,
/// a question mark ("red car?", "blue coat bear?", "car?").
pub fn blip_vqa_questions(parsed: &ParsedPrompt) -> Vec<String> {
    parsed
        .concepts
        .iter()
        .map(|c| {
            let mut words: Vec<&str> = c.attributes.iter().map(|a| a.surface.as_str()).collect();
            words.push(&c.concept.surface);
            format!("{}?", words.join(" "))
        })
        .collect()
}

pub const ROUND1: &str = "You are my assistant to identify the animals or objects in the image and their attributes. \
Briefly describe the image within 50 words.";

const ROUND2_LEAD: &str =
    "According to the image and your previous answer, evaluate how well the image aligns with the text prompt: ";

pub const RUBRIC: [&str; 5] = [
    "100: the image perfectly matches the content of the text prompt, with no discrepancies.",
    "80: the image portrayed most of the actions, events and relationships but with minor discrepancies.",
    "60: the image depicted some elements in the text prompt, but ignored some key parts or details.",
    "40: the image did not depict any actions or events that match the text.",
    "20: the image failed to convey the full scope in the text prompt.",
];

const ROUND2_FORMAT: &str =
    "Provide your analysis and explanation in JSON format with the following keys: explanation (within 20 words),score (e.g., 85).";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub round1: String,
    pub round2: String,
}

/// The two rounds for one prompt; round 2 lists the rubric one line each.
pub fn internvl_protocol(prompt: &str) -> Script {
    let mut round2 = format!("{ROUND2_LEAD}{prompt}.");
    for line in RUBRIC.iter().chain(std::iter::once(&ROUND2_FORMAT)) {
        round2.push('\n');
        round2.push_str(line);
    }
    Script {
        round1: ROUND1.to_string(),
        round2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Judgement {
    pub explanation: String,
    pub score: f64,
}

/// Parses the round-2 answer. The JSON object may be wrapped in prose or a
/// code fence; the score is clamped to [0, 100].
pub fn parse_judgement(response: &str) -> Result<Judgement> {
    let (Some(open), Some(close)) = (response.find('{'), response.rfind('}')) else {
        return Err(BenchError::MalformedResponse(format!("no JSON object in {response:?}")));
    };
    if close < open {
        return Err(BenchError::MalformedResponse(format!("no JSON object in {response:?}")));
    }
    let value: serde_json::Value = serde_json::from_str(&response[open..=close])
        .map_err(|e| BenchError::MalformedResponse(format!("{e}: {response:?}")))?;
    let score = match value.get("score") {
        Some(serde_json::Value::Number(n)) => n.as_f64(),
        Some(serde_json::Value::String(s)) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|s| s.is_finite())
    .ok_or_else(|| BenchError::MalformedResponse(format!("missing numeric \"score\" in {response:?}")))?;
    let explanation = value
        .get("explanation")
        .and_then(|e| e.as_str())
        .unwrap_or_default()
        .to_string();
    Ok(Judgement {
        explanation,
        score: score.clamp(0.0, 100.0),
    })
}

/// Parses a yes-probability answer to a BLIP-VQA question, clamped to [0, 1].
pub fn parse_probability(response: &str) -> Result<f64> {
    response
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|p| p.is_finite())
        .map(|p| p.clamp(0.0, 1.0))
        .ok_or_else(|| BenchError::MalformedResponse(format!("expected a probability, got {response:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use spdiffusion::prompt::{parse_template, Template};

    #[test]
    fn cc500_questions() {
        let p = parse_template("a red car and a blue bench", Template::Cc500).unwrap();
        assert_eq!(blip_vqa_questions(&p), ["red car?", "blue bench?"]);
    }

    #[test]
    fn attribute_free_concept() {
        let p = spdiffusion::prompt::parse_prompt("a car");
        assert_eq!(blip_vqa_questions(&p), ["car?"]);
    }

    #[test]
    fn plain_json_score() {
        let j = parse_judgement(r#"{"explanation":"ok","score":85}"#).unwrap();
        assert_eq!(j.score, 85.0);
        assert_eq!(j.explanation, "ok");
    }

    #[test]
    fn fenced_json_and_clamping() {
        let j = parse_judgement("Sure.\n```json\n{\"explanation\": \"x\", \"score\": 140}\n```").unwrap();
        assert_eq!(j.score, 100.0);
        assert_eq!(parse_judgement(r#"{"score": -3}"#).unwrap().score, 0.0);
        assert_eq!(parse_judgement(r#"{"score": "72"}"#).unwrap().score, 72.0);
    }

    #[test]
    fn missing_score_is_malformed() {
        for bad in [
            r#"{"explanation":"ok"}"#,
            "no json here",
            "} {",
            r#"{"score": null}"#,
            "{not json}",
        ] {
            assert!(
                matches!(parse_judgement(bad), Err(BenchError::MalformedResponse(_))),
                "{bad}"
            );
        }
    }

    #[test]
    fn probabilities_clamp() {
        assert_eq!(parse_probability(" 0.25\n").unwrap(), 0.25);
        assert_eq!(parse_probability("1.5").unwrap(), 1.0);
        assert!(parse_probability("yes").is_err());
        assert!(parse_probability("NaN").is_err());
    }
}
