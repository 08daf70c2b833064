//! Scorer clients: a local stub for toy runs and a JSON-over-HTTP service
//! client for real VQA models.
//!
//! Service contract (one POST per question):
//!
//! ```text
//! request:  {"image": "<base64 PNG>", "text": "<question>", "round": <int>}
//! response: {"text": "<answer>"}
//! ```
//!
//! Round 0 is a BLIP-VQA question answered with a yes-probability, rounds 1
//! and 2 are the InternVL describe/judge script.

use std::io::Cursor;
use std::thread;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use spdiffusion::attention::AttnMap;
use spdiffusion::pipeline::Image;
use spdiffusion::prompt::ParsedPrompt;
use spdiffusion::Mask;

use crate::error::{BenchError, Result};
use crate::questions::{blip_vqa_questions, internvl_protocol, parse_judgement, parse_probability, Judgement};

pub const ROUND_BLIP: u8 = 0;
pub const ROUND_DESCRIBE: u8 = 1;
pub const ROUND_JUDGE: u8 = 2;

/// What the stub scorer looks at instead of pixels.
#[derive(Debug, Clone)]
pub enum Evidence {
    /// Predicted concept regions and scenario ground truth; scores are IoU.
    Regions { predicted: Vec<Mask>, truth: Vec<Mask> },
    /// Pass-2 cross-attention read inside each concept region; a concept's
    /// score is the share of its region's concept-token attention that goes
    /// to its own tokens rather than other concepts' tokens.
    Binding {
        cross: AttnMap,
        regions: Vec<Mask>,
        parsed: ParsedPrompt,
    },
}

impl Evidence {
    pub fn concept_scores(&self) -> Vec<f64> {
        match self {
            Evidence::Regions { predicted, truth } => predicted.iter().zip(truth).map(|(p, t)| p.iou(t)).collect(),
            Evidence::Binding { cross, regions, parsed } => regions
                .iter()
                .enumerate()
                .map(|(k, region)| {
                    let region = region.resample(cross.grid);
                    let own = parsed.concepts[k].protected_tokens();
                    let foreign = parsed.foreign_tokens(k);
                    let (mut own_mass, mut foreign_mass) = (0.0f64, 0.0f64);
                    for p in region.positions() {
                        own_mass += own.iter().map(|&t| f64::from(cross.values[[p, t]])).sum::<f64>();
                        foreign_mass += foreign.iter().map(|&t| f64::from(cross.values[[p, t]])).sum::<f64>();
                    }
                    if own_mass + foreign_mass > 0.0 {
                        own_mass / (own_mass + foreign_mass)
                    } else {
                        0.0
                    }
                })
                .collect(),
        }
    }

    fn mean_score(&self) -> f64 {
        let s = self.concept_scores();
        if s.is_empty() {
            0.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScoreRequest<'a> {
    pub image: &'a Image,
    pub text: &'a str,
    pub round: u8,
    /// Index of the concept a round-0 question is about.
    pub concept: Option<usize>,
    pub evidence: Option<&'a Evidence>,
}

/// Answers one question about one image. Implementations keep no state
/// between calls.
pub trait ScorerClient: Send + Sync {
    fn name(&self) -> String;
    fn ask(&self, request: &ScoreRequest<'_>) -> Result<String>;
}

/// Answers from [`Evidence`]: round 0 with the concept's score as a
/// probability, round 2 with a JSON judgement of 100 x the mean score.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubScorer;

impl ScorerClient for StubScorer {
    fn name(&self) -> String {
        "stub".into()
    }

    fn ask(&self, request: &ScoreRequest<'_>) -> Result<String> {
        let evidence = request.evidence.ok_or(BenchError::MissingEvidence("stub scorer"))?;
        Ok(match request.round {
            ROUND_BLIP => {
                let p = match request.concept {
                    Some(k) => evidence.concept_scores().get(k).copied().unwrap_or(0.0),
                    None => evidence.mean_score(),
                };
                p.to_string()
            }
            ROUND_DESCRIBE => format!(
                "{} concept region(s) scored by the stub.",
                evidence.concept_scores().len()
            ),
            _ => serde_json::json!({
                "explanation": "stub region score",
                "score": evidence.mean_score() * 100.0,
            })
            .to_string(),
        })
    }
}

#[derive(Debug, Serialize)]
struct ServiceRequest<'a> {
    image: String,
    text: &'a str,
    round: u8,
}

#[derive(Debug, Deserialize)]
struct ServiceResponse {
    text: String,
}

/// POSTs each question to `url`; every attempt has a hard time limit and
/// failed attempts are retried a bounded number of times.
#[derive(Debug, Clone)]
pub struct ServiceScorer {
    url: String,
    agent: ureq::Agent,
    attempts: usize,
    backoff: Duration,
}

impl ServiceScorer {
    pub fn new(url: impl Into<String>) -> Self {
        Self::with_limits(url, Duration::from_secs(60), 3)
    }

    pub fn with_limits(url: impl Into<String>, timeout: Duration, attempts: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            attempts: attempts.max(1),
            backoff: Duration::from_millis(50),
        }
    }

    fn attempt(&self, body: &ServiceRequest<'_>) -> std::result::Result<String, (bool, String)> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| (true, e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err((true, format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err((false, format!("HTTP {status}")));
        }
        let reply: ServiceResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (false, format!("bad response body: {e}")))?;
        Ok(reply.text)
    }
}

impl ScorerClient for ServiceScorer {
    fn name(&self) -> String {
        format!("service:{}", self.url)
    }

    fn ask(&self, request: &ScoreRequest<'_>) -> Result<String> {
        let body = ServiceRequest {
            image: base64::engine::general_purpose::STANDARD.encode(encode_png(request.image)?),
            text: request.text,
            round: request.round,
        };
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err((retry, reason)) => {
                    last = reason;
                    if !retry {
                        return Err(BenchError::Transport {
                            attempts: attempt,
                            reason: last,
                        });
                    }
                    if attempt < self.attempts {
                        thread::sleep(self.backoff * attempt as u32);
                    }
                }
            }
        }
        Err(BenchError::Transport {
            attempts: self.attempts,
            reason: last,
        })
    }
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let buffer = image::RgbImage::from_raw(image.width as u32, image.height as u32, image.pixels.clone())
        .ok_or_else(|| BenchError::Encode("pixel buffer does not match image size".into()))?;
    let mut out = Cursor::new(Vec::new());
    buffer
        .write_to(&mut out, image::ImageFormat::Png)
        .map_err(|e| BenchError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

/// BLIP-VQA score of one image: mean yes-probability over the concept
/// questions.
pub fn blip_score(
    client: &dyn ScorerClient,
    image: &Image,
    parsed: &ParsedPrompt,
    evidence: Option<&Evidence>,
) -> Result<f64> {
    let questions = blip_vqa_questions(parsed);
    if questions.is_empty() {
        return Err(BenchError::MalformedResponse(
            "prompt has no concepts to ask about".into(),
        ));
    }
    let mut sum = 0.0;
    for (k, q) in questions.iter().enumerate() {
        let answer = client.ask(&ScoreRequest {
            image,
            text: q,
            round: ROUND_BLIP,
            concept: Some(k),
            evidence,
        })?;
        sum += parse_probability(&answer)?;
    }
    Ok(sum / questions.len() as f64)
}

/// InternVL-VQA score of one image: describe, then judge against `prompt`.
pub fn internvl_score(
    client: &dyn ScorerClient,
    image: &Image,
    prompt: &str,
    evidence: Option<&Evidence>,
) -> Result<Judgement> {
    let script = internvl_protocol(prompt);
    let ask = |text: &str, round| {
        client.ask(&ScoreRequest {
            image,
            text,
            round,
            concept: None,
            evidence,
        })
    };
    ask(&script.round1, ROUND_DESCRIBE)?;
    parse_judgement(&ask(&script.round2, ROUND_JUDGE)?)
}
