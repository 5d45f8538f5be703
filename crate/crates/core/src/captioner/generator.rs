use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::PromptTemplate;
use crate::error::{Error, Result};
use crate::mock;

/// Decoding knobs forwarded to the generator; the prompt is supplied per call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub num_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams {
            num_samples: 10,
            temperature: 0.1,
            top_p: 0.9,
            max_tokens: 40,
            seed: None,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("num_samples must be at least 1".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::InvalidArgument("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    pub fn request(&self, prompt: impl Into<String>) -> GenerationRequest {
        GenerationRequest {
            prompt: prompt.into(),
            num_samples: self.num_samples,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }
}

/// Body of `POST /v1/generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub num_samples: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: usize,
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn params(&self) -> SamplingParams {
        SamplingParams {
            num_samples: self.num_samples,
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

pub trait Generator: Send + Sync {
    /// Returns up to `req.num_samples` raw candidate strings.
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>> {
        (**self).generate(req)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>> {
        (**self).generate(req)
    }
}

/// Cleaned generator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub texts: Vec<String>,
    pub requested: usize,
    pub returned: usize,
    pub empty_dropped: usize,
}

/// Requests candidates, trims whitespace and drops empty strings.
pub fn generate_candidates(gen: &dyn Generator, req: &GenerationRequest) -> Result<Generated> {
    req.params().validate()?;
    let raw = gen.generate(req)?;
    if raw.len() > req.num_samples {
        return Err(Error::Service(format!(
            "generator returned {} candidates for num_samples = {}",
            raw.len(),
            req.num_samples
        )));
    }
    let returned = raw.len();
    let texts: Vec<String> = raw
        .iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect();
    Ok(Generated {
        empty_dropped: returned - texts.len(),
        texts,
        requested: req.num_samples,
        returned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

impl RetryPolicy {
    /// Runs `op` until it succeeds, fails with a non-retryable error, or the
    /// attempts are exhausted. Delays double after each failure.
    pub(crate) fn run<T>(&self, mut op: impl FnMut() -> Attempt<T>) -> Result<T> {
        let mut delay = self.base_delay;
        let mut last = None;
        for attempt in 0..self.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match op() {
                Attempt::Done(v) => return Ok(v),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => last = Some(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Service("no attempts made".into())))
    }
}

pub(crate) enum Attempt<T> {
    Done(T),
    Retry(Error),
    Fatal(Error),
}

pub(crate) fn http_agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

/// POSTs JSON and decodes a JSON reply, retrying transport failures and 5xx.
pub(crate) fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    body: &Req,
    retry: &RetryPolicy,
) -> Result<Resp> {
    retry.run(|| {
        let mut resp = match agent.post(url).send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(Error::Service(format!("POST {url}: {e}"))),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(Error::Service(format!("reading reply from {url}: {e}"))),
        };
        if status >= 400 {
            let msg = serde_json::from_str::<ErrorResponse>(&text)
                .map(|e| e.error)
                .unwrap_or(text);
            let err = Error::Service(format!("{url} returned {status}: {msg}"));
            return if status >= 500 {
                Attempt::Retry(err)
            } else {
                Attempt::Fatal(err)
            };
        }
        match serde_json::from_str(&text) {
            Ok(v) => Attempt::Done(v),
            Err(e) => Attempt::Fatal(Error::Service(format!("malformed reply from {url}: {e}"))),
        }
    })
}

/// Client for the `/v1/generate` HTTP contract.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl HttpGenerator {
    pub fn new(base_url: &str) -> Self {
        HttpGenerator {
            url: format!("{}/v1/generate", base_url.trim_end_matches('/')),
            agent: http_agent(Duration::from_secs(120)),
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl Generator for HttpGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>> {
        let resp: GenerationResponse = post_json(&self.agent, &self.url, req, &self.retry)?;
        Ok(resp.candidates)
    }
}

/// In-process deterministic generators.
#[derive(Debug, Clone)]
pub enum MockGenerator {
    /// Every sample is the captions portion of the prompt, verbatim.
    Echo(PromptTemplate),
    /// Sample `j` is one of the retrieved captions, chosen by hashing the
    /// prompt, the request seed and `j`.
    Resample(PromptTemplate),
    /// Sample `j` is `"mock caption <hex>"` for a hash of prompt, seed and `j`.
    Hash,
}

impl Generator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<Vec<String>> {
        let seed = req.seed.unwrap_or(0);
        let n = req.num_samples as u64;
        match self {
            MockGenerator::Echo(t) => {
                let body = t
                    .body(&req.prompt)
                    .ok_or_else(|| Error::Service("echo generator: prompt does not match template".into()))?;
                Ok(vec![body.to_owned(); req.num_samples])
            }
            MockGenerator::Resample(t) => {
                let captions = t
                    .parse(&req.prompt)
                    .ok_or_else(|| Error::Service("resample generator: prompt does not match template".into()))?;
                Ok((0..n)
                    .map(|j| {
                        let pick = mock::mix(seed, &req.prompt, j) % captions.len() as u64;
                        captions[pick as usize].clone()
                    })
                    .collect())
            }
            MockGenerator::Hash => Ok((0..n)
                .map(|j| format!("mock caption {:016x}", mock::mix(seed, &req.prompt, j)))
                .collect()),
        }
    }
}
