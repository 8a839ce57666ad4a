//! Completion-style HTTP backend.
//!
//! Option scoring sends the prompt with the option appended, `echo: true`,
//! `max_tokens: 0` and `logprobs` set, then sums the log-probabilities of
//! the trailing tokens that cover the option text. Generation sends the
//! prompt alone and reads `choices[0].text`.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::Backend;
use crate::error::{Error, Result};
use crate::prompt::PromptInstance;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base: Duration,
    pub factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base: Duration::from_secs(1),
            factor: 2.0,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based), with `jitter` in
    /// `[0, 1)` adding up to one extra base interval.
    pub fn delay(&self, attempt: u32, jitter: f64) -> Duration {
        let base = self.base.as_secs_f64();
        Duration::from_secs_f64(base * self.factor.powi(attempt as i32) + base * jitter)
    }
}

/// Token bucket allowing short bursts up to `capacity`.
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate: f64, capacity: f64) -> TokenBucket {
        TokenBucket {
            rate,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut state = self.state.lock().expect("token bucket lock");
                let now = Instant::now();
                let (tokens, last) = *state;
                let tokens = (tokens + now.duration_since(last).as_secs_f64() * self.rate).min(self.capacity);
                if tokens >= 1.0 {
                    *state = (tokens - 1.0, now);
                    return;
                }
                *state = (tokens, now);
                (1.0 - tokens) / self.rate
            };
            thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

pub struct RemoteBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    policy: RetryPolicy,
    bucket: Option<TokenBucket>,
    logprobs: bool,
    max_tokens: u32,
    rng: Mutex<ChaCha8Rng>,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RemoteBackend {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        endpoint: String,
        model: String,
        api_key: Option<String>,
        timeout: Duration,
        policy: RetryPolicy,
        requests_per_second: Option<f64>,
        logprobs: bool,
        max_tokens: u32,
        seed: u64,
    ) -> RemoteBackend {
        RemoteBackend {
            endpoint,
            model,
            api_key,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            policy,
            bucket: requests_per_second.map(|r| TokenBucket::new(r, r.max(1.0))),
            logprobs,
            max_tokens,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    fn send_once(&self, body: &Value) -> std::result::Result<Value, Failure> {
        if let Some(bucket) = &self.bucket {
            bucket.acquire();
        }
        let mut request = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        match request.send_json(body.clone()) {
            Ok(response) => response
                .into_json::<Value>()
                .map_err(|e| Failure::Retryable(format!("unreadable response body: {e}"))),
            Err(ureq::Error::Status(code, response)) => {
                let detail = response.into_string().unwrap_or_default();
                let detail: String = detail.chars().take(200).collect();
                let msg = format!("HTTP {code}: {detail}");
                if code == 429 || code >= 500 {
                    Err(Failure::Retryable(msg))
                } else {
                    Err(Failure::Fatal(msg))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Failure::Retryable(t.to_string())),
        }
    }

    fn post(&self, body: Value) -> Result<Value> {
        let mut attempt = 0;
        loop {
            match self.send_once(&body) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(msg)) => return Err(Error::Backend(msg)),
                Err(Failure::Retryable(msg)) if attempt >= self.policy.max_retries => {
                    return Err(Error::Backend(format!(
                        "giving up after {} attempts: {msg}",
                        attempt + 1
                    )))
                }
                Err(Failure::Retryable(msg)) => {
                    let jitter: f64 = self.rng.lock().expect("rng lock").gen();
                    let delay = self.policy.delay(attempt, jitter);
                    tracing::warn!("request failed ({msg}); retrying in {:.2}s", delay.as_secs_f64());
                    thread::sleep(delay);
                    attempt += 1;
                }
            }
        }
    }

    fn continuation_logprobs(&self, prompt: &str, continuation: &str) -> Result<Vec<f64>> {
        let body = json!({
            "model": self.model,
            "prompt": format!("{prompt}{continuation}"),
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0,
        });
        let response = self.post(body)?;
        parse_continuation(&response, continuation)
    }
}

/// Sums over the trailing echoed tokens that cover `continuation`. A token
/// straddling the prompt/continuation boundary counts as continuation.
pub(crate) fn parse_continuation(response: &Value, continuation: &str) -> Result<Vec<f64>> {
    let logprobs = &response["choices"][0]["logprobs"];
    let tokens = logprobs["tokens"].as_array();
    let values = logprobs["token_logprobs"].as_array();
    let (Some(tokens), Some(values)) = (tokens, values) else {
        return Err(Error::Config(
            "endpoint returned no token log-probabilities; it cannot score options".into(),
        ));
    };
    if tokens.len() != values.len() {
        return Err(Error::Backend("tokens and token_logprobs differ in length".into()));
    }
    let needed = continuation.chars().count();
    let mut covered = 0usize;
    let mut out = Vec::new();
    for (token, value) in tokens.iter().zip(values).rev() {
        if covered >= needed {
            break;
        }
        let token = token
            .as_str()
            .ok_or_else(|| Error::Backend("non-string token".into()))?;
        let lp = value
            .as_f64()
            .ok_or_else(|| Error::Backend("missing log-probability inside the continuation".into()))?;
        covered += token.chars().count();
        out.push(lp);
    }
    if covered < needed || out.is_empty() {
        return Err(Error::Backend("echoed tokens do not cover the option text".into()));
    }
    out.reverse();
    Ok(out)
}

impl Backend for RemoteBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn supports_logprobs(&self) -> bool {
        self.logprobs
    }

    fn score_continuations(&self, prompt: &PromptInstance) -> Result<Vec<Vec<f64>>> {
        prompt
            .option_strings
            .iter()
            .map(|option| self.continuation_logprobs(&prompt.text, option))
            .collect()
    }

    fn complete(&self, prompt: &PromptInstance) -> Result<String> {
        let body = json!({
            "model": self.model,
            "prompt": prompt.text,
            "max_tokens": self.max_tokens,
            "temperature": 0,
        });
        let response = self.post(body)?;
        response["choices"][0]["text"]
            .as_str()
            .map(String::from)
            .ok_or_else(|| Error::Backend("response has no choices[0].text".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_exponentially() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay(0, 0.0), Duration::from_secs(1));
        assert_eq!(p.delay(3, 0.0), Duration::from_secs(8));
        assert_eq!(p.delay(1, 0.5), Duration::from_millis(2500));
    }

    #[test]
    fn continuation_parsing() {
        let response = json!({"choices": [{"logprobs": {
            "tokens": ["The", " answer", " is", " Opp", "ortunity"],
            "token_logprobs": [null, -0.5, -0.25, -1.0, -0.125],
        }}]});
        let lp = parse_continuation(&response, "Opportunity").unwrap();
        assert_eq!(lp, vec![-1.0, -0.125]);

        let missing = json!({"choices": [{"text": ""}]});
        assert!(matches!(parse_continuation(&missing, "x"), Err(Error::Config(_))));

        let short = json!({"choices": [{"logprobs": {"tokens": ["ab"], "token_logprobs": [-1.0]}}]});
        assert!(parse_continuation(&short, "abc").is_err());
    }

    #[test]
    fn token_bucket_paces_requests() {
        let bucket = TokenBucket::new(50.0, 1.0);
        let start = Instant::now();
        for _ in 0..4 {
            bucket.acquire();
        }
        // One burst token, then three more at 50/s.
        assert!(start.elapsed() >= Duration::from_millis(55));
    }
}
