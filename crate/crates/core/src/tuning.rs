//! Coherence tuning of the toy model: sample from the current model, compute
//! boosted targets from the current parameters (held constant), and descend
//! `KL(target ‖ current)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::truncated_context;
use crate::boosting::{boosted_next_dist, BoostSpec};
use crate::dist::{kl_divergence_log, log_softmax, sample, LogProbVec, TokenSeq};
use crate::error::{Error, Result};
use crate::rng;
use crate::toy_lm::ToyLm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneConfig {
    pub spec: BoostSpec,
    pub steps: usize,
    pub batch: usize,
    pub seq_len: usize,
    pub learning_rate: f64,
    /// Only the last `n` positions of each sequence enter the loss; `None` uses all.
    pub tail_positions: Option<usize>,
    pub seed: u64,
    /// Sequences sampled once from the initial model to measure KL before and after.
    pub eval_sequences: usize,
}

impl TuneConfig {
    pub fn new(spec: BoostSpec) -> Self {
        TuneConfig {
            spec,
            steps: 32,
            batch: 32,
            seq_len: 32,
            learning_rate: 1.0,
            tail_positions: None,
            seed: 0,
            eval_sequences: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.seq_len < 2 {
            return Err(Error::invalid("batch must be positive and seq_len at least 2"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.tail_positions == Some(0) {
            return Err(Error::invalid("tail_positions must be positive"));
        }
        if !self.spec.weights().iter().any(|(_, w)| *w < 0.0) {
            log::warn!("tuning spec has no negative short-context weight");
        }
        Ok(())
    }
}

/// A context and its constant boosted target.
#[derive(Clone, Debug)]
pub struct TargetPosition {
    pub context: TokenSeq,
    pub target: LogProbVec,
}

/// Unboosted sampling at temperature 1. The first token is drawn from the
/// empty-context distribution (bias only).
pub fn sample_sequence<R: Rng + ?Sized>(model: &ToyLm, len: usize, rng: &mut R) -> Result<TokenSeq> {
    let m = model.max_context();
    let mut seq = Vec::with_capacity(len);
    for _ in 0..len {
        let lp = log_softmax(&model.logits(truncated_context(&seq, m)))?;
        seq.push(sample(&lp.to_probs(), rng));
    }
    Ok(seq)
}

pub fn sample_batch(model: &ToyLm, n: usize, len: usize, seed: u64, name: &str, offset: u64) -> Result<Vec<TokenSeq>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, name, offset + i as u64);
            sample_sequence(model, len, &mut r)
        })
        .collect()
}

fn positions(len: usize, tail: Option<usize>) -> std::ops::Range<usize> {
    let first = match tail {
        Some(n) => len.saturating_sub(n).max(1),
        None => 1,
    };
    first..len
}

/// Boosted targets at every scored position; contexts are the previous
/// tokens truncated to the model window.
pub fn batch_targets(model: &ToyLm, seqs: &[TokenSeq], spec: &BoostSpec, tail: Option<usize>) -> Result<Vec<TargetPosition>> {
    let m = model.max_context();
    let per_seq = seqs
        .par_iter()
        .map(|s| {
            positions(s.len(), tail)
                .map(|i| {
                    let context = truncated_context(&s[..i], m).to_vec();
                    let target = boosted_next_dist(model, &context, spec)?;
                    Ok(TargetPosition { context, target })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seq.into_iter().flatten().collect())
}

/// Mean `KL(target ‖ model)` over fixed targets.
pub fn kl_objective(model: &ToyLm, targets: &[TargetPosition]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("no positions"));
    }
    let mut total = 0.0;
    for t in targets {
        total += kl_divergence_log(&t.target, &log_softmax(&model.logits(&t.context))?);
    }
    Ok(total / targets.len() as f64)
}

/// Gradient of [`kl_objective`] with the targets held constant: per position
/// the logit gradient is `softmax(current) - target`.
pub fn kl_gradient(model: &ToyLm, targets: &[TargetPosition]) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::invalid("no positions"));
    }
    let mut grad = vec![0.0; model.theta().len()];
    let scale = 1.0 / targets.len() as f64;
    for t in targets {
        let cur = log_softmax(&model.logits(&t.context))?;
        let d: Vec<f64> = cur.values().iter().zip(t.target.values()).map(|(c, p)| c.exp() - p.exp()).collect();
        model.accumulate_logit_grad(&t.context, &d, scale, &mut grad);
    }
    Ok(grad)
}

/// Mean `KL(boosted ‖ base)` over the positions of `seqs`.
pub fn kl_to_boosted(model: &ToyLm, spec: &BoostSpec, seqs: &[TokenSeq], tail: Option<usize>) -> Result<f64> {
    kl_objective(model, &batch_targets(model, seqs, spec, tail)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlPoint {
    pub step: usize,
    pub mean_kl: f64,
}

#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub model: ToyLm,
    /// Mean KL of each step's on-policy batch, before the update.
    pub trace: Vec<KlPoint>,
    /// KL on the fixed evaluation sequences before and after tuning.
    pub initial_kl: f64,
    pub final_kl: f64,
}

pub fn trace_csv(trace: &[KlPoint]) -> String {
    let mut out = String::from("step,mean_kl\n");
    for p in trace {
        out.push_str(&format!("{},{}\n", p.step, p.mean_kl));
    }
    out
}

/// Fails when the mean KL is not finite or has grown more than tenfold.
pub fn divergence_guard(initial: f64, current: f64, step: usize) -> Result<()> {
    if !current.is_finite() {
        return Err(Error::NumericalGuard(format!("mean KL is {current} at step {step}")));
    }
    if initial > 0.0 && current > 10.0 * initial {
        return Err(Error::NumericalGuard(format!(
            "mean KL {current:.6} at step {step} exceeds 10x its initial value {initial:.6}"
        )));
    }
    Ok(())
}

pub fn coherence_tune(initial: &ToyLm, cfg: &TuneConfig) -> Result<TuneOutcome> {
    cfg.validate()?;
    let mut model = initial.clone();
    let eval = sample_batch(initial, cfg.eval_sequences, cfg.seq_len, cfg.seed, "tune-eval", 0)?;
    let initial_kl = if eval.is_empty() { 0.0 } else { kl_to_boosted(&model, &cfg.spec, &eval, cfg.tail_positions)? };
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut first: Option<f64> = None;
    for step in 0..cfg.steps {
        let seqs = sample_batch(&model, cfg.batch, cfg.seq_len, cfg.seed, "tune-sample", (step * cfg.batch) as u64)?;
        let targets = batch_targets(&model, &seqs, &cfg.spec, cfg.tail_positions)?;
        let kl = kl_objective(&model, &targets)?;
        divergence_guard(*first.get_or_insert(kl), kl, step)?;
        trace.push(KlPoint { step, mean_kl: kl });
        let grad = kl_gradient(&model, &targets)?;
        for (t, g) in model.theta_mut().iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * g;
        }
    }
    let final_kl = if eval.is_empty() { 0.0 } else { kl_to_boosted(&model, &cfg.spec, &eval, cfg.tail_positions)? };
    Ok(TuneOutcome { model, trace, initial_kl, final_kl })
}
