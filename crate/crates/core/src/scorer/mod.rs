//! Turning prompts into predictions.
//!
//! In likelihood mode each option is scored by the summed log-probability of
//! its tokens as a continuation of the prompt, and the option probabilities
//! are the softmax of those sums. In generation mode the backend writes a
//! free-form answer and the label is extracted from the text.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::nfc;
use crate::error::{Error, Result};
use crate::hashing;
use crate::prompt::{Mode, PromptInstance, ELICITATION_SUFFIX};

mod backend;
mod cache;
mod remote;

pub use backend::{Backend, BackendConfig, BackendKind, BackendResponse, ExemplarOracle, MockBackend};
pub use cache::{CacheRecord, ResponseCache};
pub use remote::{RemoteBackend, RetryPolicy, TokenBucket};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionScore {
    pub option: String,
    pub logprob: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    pub predicted: String,
    pub confidence: f64,
    pub gold: Option<String>,
    pub gold_prob: Option<f64>,
    pub mode: Mode,
    pub extraction_failed: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<OptionScore>,
}

impl Prediction {
    /// `None` without a gold label. Failed extractions are never correct.
    pub fn is_correct(&self) -> Option<bool> {
        let gold = self.gold.as_deref()?;
        Some(!self.extraction_failed && self.predicted == gold)
    }
}

/// Numerically stable softmax. All `-inf` inputs give the uniform
/// distribution.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if logits.is_empty() {
        return Vec::new();
    }
    if max == f64::NEG_INFINITY {
        return vec![1.0 / logits.len() as f64; logits.len()];
    }
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn option_scores(options: &[String], logprobs: &[f64]) -> Vec<OptionScore> {
    let probs = softmax(logprobs);
    options
        .iter()
        .zip(logprobs)
        .zip(probs)
        .map(|((option, &logprob), prob)| OptionScore {
            option: option.clone(),
            logprob,
            prob,
        })
        .collect()
}

/// Index of the highest value; the earliest index wins ties.
fn argmax(values: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the most probable option, earliest option on ties.
pub fn predict(query_id: &str, scores: Vec<OptionScore>, gold: Option<&str>) -> Result<Prediction> {
    let best = argmax(scores.iter().map(|s| s.prob))
        .ok_or_else(|| Error::Invalid("no option scores to predict from".into()))?;
    let gold_prob = match gold {
        Some(g) => Some(
            scores
                .iter()
                .find(|s| s.option == g)
                .map(|s| s.prob)
                .ok_or_else(|| Error::Invalid(format!("gold label `{g}` is not an option")))?,
        ),
        None => None,
    };
    Ok(Prediction {
        query_id: query_id.to_string(),
        predicted: scores[best].option.clone(),
        confidence: scores[best].prob,
        gold: gold.map(String::from),
        gold_prob,
        mode: Mode::Likelihood,
        extraction_failed: false,
        scores,
    })
}

/// Finds the label a completion commits to.
///
/// Matching is case-insensitive on NFC text. The first label after the last
/// elicitation suffix wins; without one, the label mentioned last anywhere
/// in the text.
pub fn extract_label(completion: &str, labels: &[String]) -> Option<usize> {
    let text = nfc(completion).to_lowercase();
    let needles: Vec<String> = labels.iter().map(|l| nfc(l).to_lowercase()).collect();
    let suffix = ELICITATION_SUFFIX.trim_end().to_lowercase();

    if let Some(pos) = text.rfind(&suffix) {
        let tail = &text[pos + suffix.len()..];
        let first = needles
            .iter()
            .enumerate()
            .filter_map(|(i, n)| tail.find(n.as_str()).map(|p| (p, std::cmp::Reverse(n.len()), i)))
            .min();
        if let Some((_, _, i)) = first {
            return Some(i);
        }
    }
    needles
        .iter()
        .enumerate()
        .filter_map(|(i, n)| text.rfind(n.as_str()).map(|p| (p, n.len(), std::cmp::Reverse(i))))
        .max()
        .map(|(_, _, std::cmp::Reverse(i))| i)
}

/// Prediction from a generated completion.
pub fn prediction_from_completion(
    query_id: &str,
    completion: &str,
    labels: &[String],
    gold: Option<&str>,
) -> Result<Prediction> {
    if labels.is_empty() {
        return Err(Error::Invalid("no labels to extract".into()));
    }
    let (predicted, confidence, failed) = match extract_label(completion, labels) {
        Some(i) => (labels[i].clone(), 1.0, false),
        None => (labels[0].clone(), 1.0 / labels.len() as f64, true),
    };
    let gold_prob = gold.map(|g| if !failed && g == predicted { 1.0 } else { 0.0 });
    Ok(Prediction {
        query_id: query_id.to_string(),
        predicted,
        confidence,
        gold: gold.map(String::from),
        gold_prob,
        mode: Mode::Generation,
        extraction_failed: failed,
        scores: Vec::new(),
    })
}

/// Stable content hash identifying a backend response. The endpoint URL is
/// deliberately not part of the key.
pub fn cache_key(prompt: &PromptInstance, model_name: &str) -> String {
    let mode = prompt.mode.to_string();
    let options = prompt.option_strings.join("\u{1f}");
    hashing::digest_fields([
        prompt.text.as_bytes(),
        options.as_bytes(),
        mode.as_bytes(),
        model_name.as_bytes(),
    ])
}

/// A backend with an optional response cache in front of it.
pub struct Scorer {
    backend: Arc<dyn Backend>,
    cache: Option<Arc<ResponseCache>>,
    length_normalize: bool,
    backend_calls: AtomicUsize,
}

impl Scorer {
    pub fn new(backend: Arc<dyn Backend>) -> Scorer {
        Scorer {
            backend,
            cache: None,
            length_normalize: false,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Scorer {
        self.cache = Some(cache);
        self
    }

    /// Divide each option's summed log-probability by its token count.
    pub fn length_normalized(mut self, on: bool) -> Scorer {
        self.length_normalize = on;
        self
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    /// Requests that reached the backend (cache misses).
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::Relaxed)
    }

    /// Fails early when the backend cannot serve `mode`.
    pub fn check_mode(&self, mode: Mode) -> Result<()> {
        if mode == Mode::Likelihood && !self.backend.supports_logprobs() {
            return Err(Error::Config(format!(
                "backend `{}` does not return token log-probabilities",
                self.model_name()
            )));
        }
        Ok(())
    }

    fn fetch(&self, prompt: &PromptInstance) -> Result<BackendResponse> {
        let key = cache_key(prompt, self.model_name());
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                return Ok(hit);
            }
        }
        self.backend_calls.fetch_add(1, Ordering::Relaxed);
        let response = match prompt.mode {
            Mode::Likelihood => BackendResponse::Continuations {
                token_logprobs: self.backend.score_continuations(prompt)?,
            },
            Mode::Generation => BackendResponse::Completion {
                text: self.backend.complete(prompt)?,
            },
        };
        if let Some(cache) = &self.cache {
            cache.put(&key, prompt, self.model_name(), &response)?;
        }
        Ok(response)
    }

    pub fn score_options(&self, prompt: &PromptInstance) -> Result<Vec<OptionScore>> {
        if prompt.mode != Mode::Likelihood {
            return Err(Error::Invalid("score_options needs a likelihood-mode prompt".into()));
        }
        if prompt.option_strings.is_empty() {
            return Err(Error::Invalid("prompt has no options".into()));
        }
        let BackendResponse::Continuations { token_logprobs } = self.fetch(prompt)? else {
            return Err(Error::Backend("expected continuation scores".into()));
        };
        if token_logprobs.len() != prompt.option_strings.len() {
            return Err(Error::Backend(format!(
                "{} continuation scores for {} options",
                token_logprobs.len(),
                prompt.option_strings.len()
            )));
        }
        let mut logprobs = Vec::with_capacity(token_logprobs.len());
        for tokens in &token_logprobs {
            if tokens.is_empty() || tokens.iter().any(|l| l.is_nan() || *l > 0.0) {
                return Err(Error::Backend(format!("invalid token log-probabilities {tokens:?}")));
            }
            let sum: f64 = tokens.iter().sum();
            logprobs.push(if self.length_normalize {
                sum / tokens.len() as f64
            } else {
                sum
            });
        }
        Ok(option_scores(&prompt.option_strings, &logprobs))
    }

    pub fn generate_and_extract(&self, prompt: &PromptInstance, gold: Option<&str>) -> Result<Prediction> {
        if prompt.mode != Mode::Generation {
            return Err(Error::Invalid("generate_and_extract needs a generation-mode prompt".into()));
        }
        let BackendResponse::Completion { text } = self.fetch(prompt)? else {
            return Err(Error::Backend("expected a completion".into()));
        };
        prediction_from_completion(&prompt.query_id, &text, &prompt.option_strings, gold)
    }

    /// Scores or generates according to the prompt's mode.
    pub fn predict_prompt(&self, prompt: &PromptInstance, gold: Option<&str>) -> Result<Prediction> {
        match prompt.mode {
            Mode::Likelihood => predict(&prompt.query_id, self.score_options(prompt)?, gold),
            Mode::Generation => self.generate_and_extract(prompt, gold),
        }
    }
}
