//! Additive lagged-bigram ("tensor n-gram") language model.
//!
//! Logits after a context `w_1..w_n` are
//! `bias[w] + Σ_{j=1..min(n,M)} U_j[w_{n-j+1}, w]`: one `|V|×|V|` table per
//! lag. Evaluating on a `k`-truncated context is exactly the same as dropping
//! the tables for lags `> k`, which gives `f_k` a closed form and makes every
//! gradient analytic.
//!
//! Parameters live in one flat vector: `bias` (length `|V|`) followed by
//! `U_1..U_M`, each row-major `[prev][next]`.

mod io;
mod train;

pub use train::{loss_profile, train_uniform_scalarization, LossProfile, TrainConfig, TrainOutcome};

use std::sync::Arc;

use rand::Rng;

use crate::backend::{BackendInfo, LanguageModel};
use crate::dist::{log_softmax, LogProbVec, TokenId};
use crate::error::{Error, Result};
use crate::tokenizer::{IdTokenizer, Tokenizer};

#[derive(Clone)]
pub struct ToyLm {
    vocab_size: usize,
    max_context: usize,
    theta: Vec<f64>,
    tokenizer: Arc<dyn Tokenizer>,
}

impl std::fmt::Debug for ToyLm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToyLm")
            .field("vocab_size", &self.vocab_size)
            .field("max_context", &self.max_context)
            .finish_non_exhaustive()
    }
}

impl PartialEq for ToyLm {
    fn eq(&self, other: &Self) -> bool {
        self.vocab_size == other.vocab_size
            && self.max_context == other.max_context
            && self.theta == other.theta
    }
}

impl ToyLm {
    /// All-zero parameters: the uniform model.
    pub fn zeros(vocab_size: usize, max_context: usize) -> Self {
        assert!(vocab_size >= 2 && max_context >= 1, "toy LM needs |V| >= 2 and M >= 1");
        ToyLm {
            vocab_size,
            max_context,
            theta: vec![0.0; Self::param_count(vocab_size, max_context)],
            tokenizer: Arc::new(IdTokenizer { vocab_size, eot: None }),
        }
    }

    /// Parameters drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, max_context: usize, scale: f64, seed: u64) -> Self {
        let mut model = Self::zeros(vocab_size, max_context);
        let mut rng = crate::rng::stream(seed, "toy-lm-random", 0);
        for v in &mut model.theta {
            *v = rng.random_range(-scale..=scale);
        }
        model
    }

    pub fn from_parts(vocab_size: usize, max_context: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != Self::param_count(vocab_size, max_context) {
            return Err(Error::LengthMismatch(Self::param_count(vocab_size, max_context), theta.len()));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("toy LM parameters must be finite"));
        }
        let mut model = Self::zeros(vocab_size, max_context);
        model.theta = theta;
        Ok(model)
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn Tokenizer>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn tokenizer_arc(&self) -> Arc<dyn Tokenizer> {
        Arc::clone(&self.tokenizer)
    }

    pub fn param_count(vocab_size: usize, max_context: usize) -> usize {
        vocab_size + max_context * vocab_size * vocab_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_context(&self) -> usize {
        self.max_context
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn bias(&self) -> &[f64] {
        &self.theta[..self.vocab_size]
    }

    /// `U_lag` for `lag` in `1..=M`, row-major `[prev][next]`.
    pub fn lag_table(&self, lag: usize) -> &[f64] {
        let off = self.table_offset(lag);
        &self.theta[off..off + self.vocab_size * self.vocab_size]
    }

    pub fn lag_table_mut(&mut self, lag: usize) -> &mut [f64] {
        let off = self.table_offset(lag);
        let n = self.vocab_size * self.vocab_size;
        &mut self.theta[off..off + n]
    }

    fn table_offset(&self, lag: usize) -> usize {
        assert!(lag >= 1 && lag <= self.max_context, "lag {lag} outside 1..={}", self.max_context);
        self.vocab_size + (lag - 1) * self.vocab_size * self.vocab_size
    }

    fn row_offset(&self, lag: usize, prev: TokenId) -> usize {
        self.table_offset(lag) + prev as usize * self.vocab_size
    }

    /// Raw logits using every lag the context reaches (capped at `M`).
    pub fn logits(&self, context: &[TokenId]) -> Vec<f64> {
        self.logits_lag_limited(context, self.max_context)
    }

    /// Logits with contributions of lags `> max_lag` zeroed.
    pub fn logits_lag_limited(&self, context: &[TokenId], max_lag: usize) -> Vec<f64> {
        let v = self.vocab_size;
        let mut out = self.bias().to_vec();
        let n = context.len();
        for lag in 1..=n.min(max_lag).min(self.max_context) {
            let off = self.row_offset(lag, context[n - lag]);
            for (o, u) in out.iter_mut().zip(&self.theta[off..off + v]) {
                *o += u;
            }
        }
        out
    }

    /// Adds `scale · dlogits` into every parameter that fed the logits for `context`.
    pub fn accumulate_logit_grad(&self, context: &[TokenId], dlogits: &[f64], scale: f64, grad: &mut [f64]) {
        let v = self.vocab_size;
        for (g, d) in grad[..v].iter_mut().zip(dlogits) {
            *g += scale * d;
        }
        let n = context.len();
        for lag in 1..=n.min(self.max_context) {
            let off = self.row_offset(lag, context[n - lag]);
            for (g, d) in grad[off..off + v].iter_mut().zip(dlogits) {
                *g += scale * d;
            }
        }
    }

    /// Uniform-scalarized NLL of a window plus `l2 · ||θ||²`.
    ///
    /// Every token after the first is predicted from all tokens preceding it
    /// in the window, so a window of length `M+1` averages the `M` losses for
    /// context lengths `1..M`.
    pub fn window_loss(&self, window: &[TokenId], l2: f64) -> f64 {
        let preds = window.len().saturating_sub(1);
        let mut nll = 0.0;
        for i in 1..window.len() {
            let ctx = &window[i.saturating_sub(self.max_context)..i];
            let lp = log_softmax(&self.logits(ctx)).expect("toy logits are finite");
            nll -= lp.get(window[i]);
        }
        let data = if preds > 0 { nll / preds as f64 } else { 0.0 };
        data + l2 * self.theta.iter().map(|t| t * t).sum::<f64>()
    }

    /// Exact gradient of [`ToyLm::window_loss`].
    pub fn gradient(&self, window: &[TokenId], l2: f64) -> Vec<f64> {
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_window_grad(window, 1.0, &mut grad);
        if l2 != 0.0 {
            for (g, t) in grad.iter_mut().zip(&self.theta) {
                *g += 2.0 * l2 * t;
            }
        }
        grad
    }

    /// Adds `scale ·` the data-term gradient of `window`; returns its mean NLL.
    pub(crate) fn accumulate_window_grad(&self, window: &[TokenId], scale: f64, grad: &mut [f64]) -> f64 {
        let preds = window.len().saturating_sub(1);
        if preds == 0 {
            return 0.0;
        }
        let per = scale / preds as f64;
        let mut nll = 0.0;
        for i in 1..window.len() {
            let ctx = &window[i.saturating_sub(self.max_context)..i];
            let lp = log_softmax(&self.logits(ctx)).expect("toy logits are finite");
            let target = window[i] as usize;
            nll -= lp.values()[target];
            let mut d: Vec<f64> = lp.values().iter().map(|v| v.exp()).collect();
            d[target] -= 1.0;
            self.accumulate_logit_grad(ctx, &d, per, grad);
        }
        nll / preds as f64
    }
}

impl LanguageModel for ToyLm {
    fn info(&self) -> BackendInfo {
        BackendInfo {
            vocab_size: self.vocab_size,
            max_context: self.max_context,
            name: format!("toy-lm(V={}, M={})", self.vocab_size, self.max_context),
        }
    }

    fn next_logprobs(&self, context: &[TokenId]) -> Result<LogProbVec> {
        self.info().check_context(context)?;
        log_softmax(&self.logits(context))
    }

    fn tokenizer(&self) -> &dyn Tokenizer {
        self.tokenizer.as_ref()
    }
}
