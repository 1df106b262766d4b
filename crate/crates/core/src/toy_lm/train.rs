use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ToyLm;
use crate::backend::truncated_context;
use crate::dist::{log_softmax, TokenId};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_context: usize,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { max_context: 12, learning_rate: 0.1, steps: 3000, batch_size: 32, seed: 0, l2: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ToyLm,
    /// Mean uniform-scalarized window NLL of each step's batch, before the update.
    pub loss_trace: Vec<f64>,
}

/// SGD on the uniform scalarization of the `M` per-context-length losses.
///
/// Each step draws `batch_size` windows of length `M+1` uniformly from the
/// corpus (one concatenated stream) and descends the mean window loss.
pub fn train_uniform_scalarization(corpus: &[TokenId], vocab_size: usize, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let m = cfg.max_context;
    if m == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("max_context and batch_size must be positive"));
    }
    if !(cfg.learning_rate > 0.0) || cfg.l2 < 0.0 {
        return Err(Error::invalid("learning rate must be positive and l2 non-negative"));
    }
    let needed = 10 * (m + 1);
    if corpus.len() < needed {
        return Err(Error::CorpusTooShort { len: corpus.len(), needed });
    }
    if let Some(&bad) = corpus.iter().find(|&&t| t as usize >= vocab_size) {
        return Err(Error::TokenOutOfRange { token: bad, vocab_size });
    }

    let mut model = ToyLm::zeros(vocab_size, m);
    let mut rng = crate::rng::stream(cfg.seed, "train-windows", 0);
    let last_start = corpus.len() - (m + 1);
    let mut grad = vec![0.0; model.theta.len()];
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let scale = 1.0 / cfg.batch_size as f64;

    for _ in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let start = rng.random_range(0..=last_start);
            loss += model.accumulate_window_grad(&corpus[start..start + m + 1], scale, &mut grad);
        }
        loss *= scale;
        if cfg.l2 > 0.0 {
            loss += cfg.l2 * model.theta.iter().map(|t| t * t).sum::<f64>();
            for (g, t) in grad.iter_mut().zip(&model.theta) {
                *g += 2.0 * cfg.l2 * t;
            }
        }
        loss_trace.push(loss);
        for (t, g) in model.theta.iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * g;
        }
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Held-out NLL per context length: `per_length_nll[k-1] = L_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossProfile {
    pub per_length_nll: Vec<f64>,
    pub positions: usize,
}

impl LossProfile {
    pub fn get(&self, k: usize) -> f64 {
        self.per_length_nll[k - 1]
    }
}

/// `L_k` = mean of `-log f_k` over every held-out position with at least
/// `max_context` tokens of history.
pub fn loss_profile(model: &ToyLm, heldout: &[TokenId], max_context: usize) -> Result<LossProfile> {
    let m = max_context.min(model.max_context);
    if m == 0 {
        return Err(Error::invalid("max_context must be positive"));
    }
    if heldout.len() <= m {
        return Err(Error::CorpusTooShort { len: heldout.len(), needed: m + 1 });
    }
    let mut sums = vec![0.0; m];
    let positions = heldout.len() - m;
    for t in m..heldout.len() {
        let ctx = &heldout[t - m..t];
        for (k, sum) in sums.iter_mut().enumerate() {
            let lp = log_softmax(&model.logits(truncated_context(ctx, k + 1)))?;
            *sum -= lp.get(heldout[t]);
        }
    }
    Ok(LossProfile {
        per_length_nll: sums.into_iter().map(|s| s / positions as f64).collect(),
        positions,
    })
}
