use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{check_scoring, BackendInfo, LanguageModel};
use crate::dist::{log_softmax, LogProbVec, TokenId};
use crate::error::{Error, Result};
use crate::tokenizer::{IdTokenizer, Tokenizer};

#[derive(Clone, Copy, Debug)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3, base_delay: Duration::from_millis(200) }
    }
}

#[derive(Serialize)]
struct NextRequest<'a> {
    tokens: &'a [TokenId],
}

/// `-inf` log-probabilities travel as JSON `null`.
#[derive(Deserialize)]
struct NextResponse {
    logprobs: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    context: &'a [TokenId],
    continuation: &'a [TokenId],
}

#[derive(Deserialize)]
struct ScoreResponse {
    #[allow(dead_code)]
    logprob: Option<f64>,
    per_token: Vec<Option<f64>>,
}

/// Client for the JSON logit protocol (`/v1/info`, `/v1/next_logprobs`, `/v1/score`).
pub struct RemoteModel {
    base: String,
    client: Client,
    info: BackendInfo,
    tokenizer: Box<dyn Tokenizer>,
    auth: Option<String>,
    retry: RetryPolicy,
}

impl RemoteModel {
    /// Connects and fetches `/v1/info`. Without a tokenizer, text is read as integer ids.
    pub fn connect(url: &str, tokenizer: Option<Box<dyn Tokenizer>>, auth: Option<String>) -> Result<Self> {
        Self::connect_with(url, tokenizer, auth, RetryPolicy::default())
    }

    pub fn connect_with(
        url: &str,
        tokenizer: Option<Box<dyn Tokenizer>>,
        auth: Option<String>,
        retry: RetryPolicy,
    ) -> Result<Self> {
        let client = Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| Error::Backend(e.to_string()))?;
        let base = url.trim_end_matches('/').to_string();
        let mut model = RemoteModel {
            base,
            client,
            info: BackendInfo { vocab_size: 2, max_context: 2, name: String::new() },
            tokenizer: Box::new(IdTokenizer { vocab_size: 0, eot: None }),
            auth,
            retry,
        };
        let info: BackendInfo = model.request("/v1/info", None::<&()>)?;
        info.validate()?;
        model.tokenizer = tokenizer
            .unwrap_or_else(|| Box::new(IdTokenizer { vocab_size: info.vocab_size, eot: None }));
        model.info = info;
        Ok(model)
    }

    fn request<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: Option<&B>) -> Result<T> {
        let url = format!("{}{}", self.base, path);
        let mut attempt = 0;
        loop {
            let mut req = match body {
                Some(b) => self.client.post(&url).json(b),
                None => self.client.get(&url),
            };
            if let Some(auth) = &self.auth {
                req = req.header("Authorization", auth);
            }
            let transient = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<T>().map_err(|e| Error::Backend(format!("{url}: {e}")));
                    }
                    let text = resp.text().unwrap_or_default();
                    if status == StatusCode::BAD_REQUEST {
                        return Err(Error::invalid(format!("{url} rejected request: {text}")));
                    }
                    if status != StatusCode::SERVICE_UNAVAILABLE {
                        return Err(Error::Backend(format!("{url}: HTTP {status}: {text}")));
                    }
                    format!("HTTP {status}")
                }
                Err(e) => e.to_string(),
            };
            if attempt >= self.retry.retries {
                return Err(Error::Backend(format!(
                    "{url}: giving up after {} attempts: {transient}",
                    attempt + 1
                )));
            }
            let delay = self.retry.base_delay * 2u32.pow(attempt);
            log::warn!("{url}: transient failure ({transient}); retrying in {delay:?}");
            thread::sleep(delay);
            attempt += 1;
        }
    }
}

fn unnull(values: Vec<Option<f64>>) -> Vec<f64> {
    values.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect()
}

impl LanguageModel for RemoteModel {
    fn info(&self) -> BackendInfo {
        self.info.clone()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec> {
        self.info.check_context(context)?;
        let resp: NextResponse = self.request("/v1/next_logprobs", Some(&NextRequest { tokens: context }))?;
        if resp.logprobs.len() != self.info.vocab_size {
            return Err(Error::Backend(format!(
                "server returned {} logprobs for a vocabulary of {}",
                resp.logprobs.len(),
                self.info.vocab_size
            )));
        }
        log_softmax(&unnull(resp.logprobs))
    }

    fn score_tokens(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        check_scoring(&self.info, context, continuation)?;
        let resp: ScoreResponse = self.request("/v1/score", Some(&ScoreRequest { context, continuation }))?;
        if resp.per_token.len() != continuation.len() {
            return Err(Error::Backend(format!(
                "server scored {} tokens, expected {}",
                resp.per_token.len(),
                continuation.len()
            )));
        }
        Ok(unnull(resp.per_token))
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }
}
