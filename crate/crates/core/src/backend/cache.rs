use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};

use lru::LruCache;
use parking_lot::Mutex;

use super::{check_scoring, BackendInfo, LanguageModel};
use crate::dist::{LogProbVec, TokenId, TokenSeq};
use crate::error::Result;
use crate::tokenizer::Tokenizer;

pub const DEFAULT_CACHE_CAPACITY: usize = 1 << 20;

type ScoreKey = (TokenSeq, TokenSeq);

/// Memoizing wrapper keyed by exact token-id sequences, bounded LRU.
///
/// Entries are returned as stored, so cached and uncached answers are
/// bit-identical.
pub struct CachedModel<M> {
    inner: M,
    info: BackendInfo,
    next: Mutex<LruCache<TokenSeq, LogProbVec>>,
    scores: Mutex<LruCache<ScoreKey, Vec<f64>>>,
    inner_calls: AtomicU64,
}

impl<M: LanguageModel> CachedModel<M> {
    pub fn new(inner: M) -> Self {
        Self::with_capacity(inner, DEFAULT_CACHE_CAPACITY)
    }

    pub fn with_capacity(inner: M, capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        let info = inner.info();
        CachedModel {
            inner,
            info,
            next: Mutex::new(LruCache::new(cap)),
            scores: Mutex::new(LruCache::new(cap)),
            inner_calls: AtomicU64::new(0),
        }
    }

    /// Number of queries forwarded to the wrapped backend.
    pub fn inner_calls(&self) -> u64 {
        self.inner_calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    pub fn len(&self) -> usize {
        self.next.lock().len() + self.scores.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.next.lock().clear();
        self.scores.lock().clear();
    }
}

impl<M: LanguageModel> LanguageModel for CachedModel<M> {
    fn info(&self) -> BackendInfo {
        self.info.clone()
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec> {
        if let Some(hit) = self.next.lock().get(context) {
            return Ok(hit.clone());
        }
        // the lock is not held across the backend call; concurrent misses on
        // the same key compute the same value
        self.inner_calls.fetch_add(1, Ordering::Relaxed);
        let value = self.inner.next_logprobs(context)?;
        self.next.lock().put(context.to_vec(), value.clone());
        Ok(value)
    }

    fn score_tokens(&self, context: &[TokenId], continuation: &[TokenId]) -> Result<Vec<f64>> {
        check_scoring(&self.info, context, continuation)?;
        let key = (context.to_vec(), continuation.to_vec());
        if let Some(hit) = self.scores.lock().get(&key) {
            return Ok(hit.clone());
        }
        self.inner_calls.fetch_add(1, Ordering::Relaxed);
        let value = self.inner.score_tokens(context, continuation)?;
        self.scores.lock().put(key, value.clone());
        Ok(value)
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.inner.tokenizer()
    }
}
