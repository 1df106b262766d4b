//! Uniform access to autoregressive language models.
//!
//! A backend answers two questions: the full next-token distribution after a
//! context, and the log-probability of a continuation. `f_k`, the model seen
//! through only the last `k` tokens, is `next_logprobs(truncated_context(ctx, k))`.

mod cache;
mod remote;
mod server;

pub use cache::{CachedModel, DEFAULT_CACHE_CAPACITY};
pub use remote::{RemoteModel, RetryPolicy};
pub use server::{serve, ServerHandle, ServerOptions};

use serde::{Deserialize, Serialize};

use crate::dist::{LogProbVec, TokenId};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendInfo {
    pub vocab_size: usize,
    pub max_context: usize,
    pub name: String,
}

impl BackendInfo {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.max_context < 2 {
            return Err(Error::invalid(format!(
                "backend needs vocab_size >= 2 and max_context >= 2, got {} and {}",
                self.vocab_size, self.max_context
            )));
        }
        Ok(())
    }

    /// Checks `0 < len(ctx) <= max_context` and every id in range.
    pub fn check_context(&self, context: &[TokenId]) -> Result<()> {
        if context.is_empty() {
            return Err(Error::EmptyContext);
        }
        if context.len() > self.max_context {
            return Err(Error::ContextTooLong { len: context.len(), max: self.max_context });
        }
        self.check_tokens(context)
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab_size: self.vocab_size }),
            None => Ok(()),
        }
    }
}

pub trait LanguageModel: Send + Sync {
    fn info(&self) -> BackendInfo;

    /// `f(· | context)`; the context must satisfy [`BackendInfo::check_context`].
    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec>;

    /// Per-token log-probabilities of `continuation` after `context`.
    fn score_tokens(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        check_scoring(&self.info(), context, continuation)?;
        let mut ctx = context.to_vec();
        let mut out = Vec::with_capacity(continuation.len());
        for &tok in continuation {
            out.push(self.next_logprobs(&ctx)?.get(tok));
            ctx.push(tok);
        }
        Ok(out)
    }

    /// `Σ_j log f(c_j | context ⊕ c_<j)`.
    fn score_continuation(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<f64> {
        Ok(self.score_tokens(context, continuation)?.iter().sum())
    }

    fn tokenizer(&self) -> &dyn Tokenizer;
}

/// Validates a scoring request: non-empty parts, total length within the context budget.
///
/// The last continuation token is never part of a context, hence the `- 1`.
pub fn check_scoring(info: &BackendInfo, context: &[TokenId], continuation: &[TokenId]) -> Result<()> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    if continuation.is_empty() {
        return Err(Error::invalid("continuation must be non-empty"));
    }
    let total = context.len() + continuation.len() - 1;
    if total > info.max_context {
        return Err(Error::ContextTooLong { len: total, max: info.max_context });
    }
    info.check_tokens(context)?;
    info.check_tokens(continuation)
}

/// The last `min(k, len)` tokens of `context`.
pub fn truncated_context(context: &[TokenId], k: usize) -> &[TokenId] {
    &context[context.len().saturating_sub(k)..]
}

impl<T: LanguageModel + ?Sized> LanguageModel for &T {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec> {
        (**self).next_logprobs(context)
    }
    fn score_tokens(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        (**self).score_tokens(context, continuation)
    }
    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Box<T> {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec> {
        (**self).next_logprobs(context)
    }
    fn score_tokens(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        (**self).score_tokens(context, continuation)
    }
    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<T> {
    fn info(&self) -> BackendInfo {
        (**self).info()
    }
    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec> {
        (**self).next_logprobs(context)
    }
    fn score_tokens(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        (**self).score_tokens(context, continuation)
    }
    fn tokenizer(&self) -> &dyn Tokenizer {
        (**self).tokenizer()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_examples() {
        assert_eq!(truncated_context(&[5, 6, 7], 2), &[6, 7]);
        assert_eq!(truncated_context(&[5, 6, 7], 10), &[5, 6, 7]);
        assert_eq!(truncated_context(&[5], 1), &[5]);
    }

    #[test]
    fn context_checks() {
        let info = BackendInfo { vocab_size: 4, max_context: 3, name: "t".into() };
        assert!(info.check_context(&[0, 1, 2]).is_ok());
        assert!(matches!(info.check_context(&[]), Err(Error::EmptyContext)));
        assert!(matches!(info.check_context(&[0, 1, 2, 3]), Err(Error::ContextTooLong { .. })));
        assert!(matches!(info.check_context(&[4]), Err(Error::TokenOutOfRange { .. })));
        assert!(check_scoring(&info, &[0, 1], &[2, 3]).is_ok());
        assert!(check_scoring(&info, &[0, 1], &[2, 3, 1]).is_err());
        assert!(check_scoring(&info, &[0], &[]).is_err());
    }
}
