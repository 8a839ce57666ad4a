use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::remote::{RemoteBackend, RetryPolicy};
use crate::corpus::{Dataset, Task};
use crate::error::{Error, Result};
use crate::hashing;
use crate::prompt::{PromptInstance, ELICITATION_SUFFIX};

/// A language model as the harness sees it.
pub trait Backend: Send + Sync {
    fn model_name(&self) -> &str;

    fn supports_logprobs(&self) -> bool {
        true
    }

    /// Token log-probabilities of each option, in `prompt.option_strings`
    /// order, as a continuation of `prompt.text`.
    fn score_continuations(&self, prompt: &PromptInstance) -> Result<Vec<Vec<f64>>>;

    /// Free-form completion of `prompt.text`.
    fn complete(&self, prompt: &PromptInstance) -> Result<String>;
}

/// Raw backend output, as stored in the response cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendResponse {
    Continuations { token_logprobs: Vec<Vec<f64>> },
    Completion { text: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Mock,
    ExemplarOracle,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    5
}
fn default_in_flight() -> usize {
    4
}
fn default_api_key_env() -> String {
    "ICL_LAB_API_KEY".into()
}
fn default_true() -> bool {
    true
}
fn default_max_tokens() -> u32 {
    512
}
fn default_backoff_ms() -> u64 {
    1000
}

/// The `[backend]` block of a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model_name: String,
    /// Seconds.
    #[serde(default = "default_timeout")]
    pub request_timeout: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// Mock-backend seed and retry-jitter seed. Falls back to the run's
    /// top-level seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub length_normalize: bool,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub requests_per_second: Option<f64>,
    /// Whether the remote endpoint returns token log-probabilities.
    #[serde(default = "default_true")]
    pub logprobs: bool,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
}

impl BackendConfig {
    pub fn mock(model_name: impl Into<String>) -> BackendConfig {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: model_name.into(),
            request_timeout: default_timeout(),
            max_retries: default_retries(),
            seed: None,
            max_in_flight: default_in_flight(),
            length_normalize: false,
            api_key_env: default_api_key_env(),
            requests_per_second: None,
            logprobs: true,
            max_tokens: default_max_tokens(),
            backoff_base_ms: default_backoff_ms(),
        }
    }

    pub fn exemplar_oracle() -> BackendConfig {
        BackendConfig {
            kind: BackendKind::ExemplarOracle,
            ..BackendConfig::mock("")
        }
    }

    pub fn resolved_model_name(&self) -> String {
        if !self.model_name.is_empty() {
            return self.model_name.clone();
        }
        match self.kind {
            BackendKind::Remote => String::new(),
            BackendKind::Mock => "mock".into(),
            BackendKind::ExemplarOracle => "exemplar-oracle".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == BackendKind::Remote {
            match self.endpoint.as_deref() {
                Some(e) if e.starts_with("http://") || e.starts_with("https://") => {}
                Some(e) => return Err(Error::Config(format!("backend.endpoint `{e}` is not an http(s) URL"))),
                None => return Err(Error::Config("backend.endpoint is required for a remote backend".into())),
            }
            if self.model_name.is_empty() {
                return Err(Error::Config("backend.model_name is required for a remote backend".into()));
            }
        }
        if self.request_timeout.is_nan() || self.request_timeout <= 0.0 {
            return Err(Error::Config("backend.request_timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("backend.max_in_flight must be >= 1".into()));
        }
        if let Some(rps) = self.requests_per_second {
            if rps.is_nan() || rps <= 0.0 {
                return Err(Error::Config("backend.requests_per_second must be positive".into()));
            }
        }
        Ok(())
    }

    /// Instantiates the backend. `train` supplies gold labels to the
    /// exemplar oracle and is ignored by the other kinds.
    pub fn build(&self, train: &Dataset) -> Result<Arc<dyn Backend>> {
        self.validate()?;
        let name = self.resolved_model_name();
        Ok(match self.kind {
            BackendKind::Mock => Arc::new(MockBackend::new(name, self.seed.unwrap_or(0))),
            BackendKind::ExemplarOracle => Arc::new(ExemplarOracle::with_name(name, train)),
            BackendKind::Remote => {
                let api_key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
                let policy = RetryPolicy {
                    max_retries: self.max_retries,
                    base: Duration::from_millis(self.backoff_base_ms),
                    factor: 2.0,
                };
                Arc::new(RemoteBackend::new(
                    self.endpoint.clone().unwrap_or_default(),
                    name,
                    api_key,
                    Duration::from_secs_f64(self.request_timeout),
                    policy,
                    self.requests_per_second,
                    self.logprobs,
                    self.max_tokens,
                    self.seed.unwrap_or(0),
                ))
            }
        })
    }
}

/// Deterministic pseudo-model: every token log-probability is a hash of the
/// seed, the prompt, the option, and the token position.
pub struct MockBackend {
    name: String,
    seed: u64,
}

impl MockBackend {
    pub fn new(name: impl Into<String>, seed: u64) -> MockBackend {
        MockBackend {
            name: name.into(),
            seed,
        }
    }

    fn unit(&self, parts: &[&[u8]]) -> f64 {
        let seed = self.seed.to_le_bytes();
        let digest = hashing::digest_fields(std::iter::once(seed.as_slice()).chain(parts.iter().copied()));
        let bits = u64::from_str_radix(&digest[..16], 16).expect("hex digest");
        (bits >> 11) as f64 / (1u64 << 53) as f64
    }
}

impl Backend for MockBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn score_continuations(&self, prompt: &PromptInstance) -> Result<Vec<Vec<f64>>> {
        Ok(prompt
            .option_strings
            .iter()
            .map(|option| {
                let count = option.split_whitespace().count().max(1);
                (0..count)
                    .map(|i| {
                        let pos = (i as u64).to_le_bytes();
                        -(0.05 + 4.0 * self.unit(&[prompt.text.as_bytes(), option.as_bytes(), &pos]))
                    })
                    .collect()
            })
            .collect())
    }

    fn complete(&self, prompt: &PromptInstance) -> Result<String> {
        let n = prompt.option_strings.len();
        if n == 0 {
            return Ok("I cannot tell.".into());
        }
        let pick = ((self.unit(&[prompt.text.as_bytes(), b"complete"]) * n as f64) as usize).min(n - 1);
        Ok(format!(
            "Weighing the article step by step. {ELICITATION_SUFFIX}{}.",
            prompt.option_strings[pick]
        ))
    }
}

/// Model-free backend that predicts the majority gold label among a
/// prompt's exemplars.
///
/// Option probabilities are proportional to `count + 1`, so ties share the
/// top probability and a prompt without exemplars is uniform.
pub struct ExemplarOracle {
    name: String,
    labels: HashMap<String, (Option<String>, Option<String>)>,
}

impl ExemplarOracle {
    pub fn new(train: &Dataset) -> ExemplarOracle {
        ExemplarOracle::with_name("exemplar-oracle", train)
    }

    pub fn with_name(name: impl Into<String>, train: &Dataset) -> ExemplarOracle {
        ExemplarOracle {
            name: name.into(),
            labels: train
                .articles
                .iter()
                .map(|a| (a.id.clone(), (a.impact_type.clone(), a.impact_duration.clone())))
                .collect(),
        }
    }

    fn counts(&self, prompt: &PromptInstance) -> Result<Vec<usize>> {
        let task = Task::from_options(&prompt.option_strings).ok_or_else(|| {
            Error::Backend(format!("options {:?} match no task", prompt.option_strings))
        })?;
        let mut counts = vec![0usize; prompt.option_strings.len()];
        for id in &prompt.exemplar_ids {
            let (impact_type, impact_duration) = self
                .labels
                .get(id)
                .ok_or_else(|| Error::Backend(format!("exemplar `{id}` is unknown to the oracle")))?;
            let label = match task {
                Task::ImpactType => impact_type,
                Task::ImpactDuration => impact_duration,
            };
            let label = label
                .as_deref()
                .ok_or_else(|| Error::Backend(format!("exemplar `{id}` has no {task} label")))?;
            if let Some(i) = prompt.option_strings.iter().position(|o| o == label) {
                counts[i] += 1;
            }
        }
        Ok(counts)
    }
}

impl Backend for ExemplarOracle {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn score_continuations(&self, prompt: &PromptInstance) -> Result<Vec<Vec<f64>>> {
        let counts = self.counts(prompt)?;
        let denom = (counts.iter().sum::<usize>() + counts.len()) as f64;
        Ok(counts
            .iter()
            .map(|&c| vec![((c + 1) as f64 / denom).ln()])
            .collect())
    }

    fn complete(&self, prompt: &PromptInstance) -> Result<String> {
        let counts = self.counts(prompt)?;
        let best = counts
            .iter()
            .enumerate()
            .fold(None::<(usize, usize)>, |acc, (i, &c)| match acc {
                Some((_, b)) if b >= c => acc,
                _ => Some((i, c)),
            });
        Ok(match best {
            Some((i, _)) => format!("{ELICITATION_SUFFIX}{}", prompt.option_strings[i]),
            None => "No options.".into(),
        })
    }
}
