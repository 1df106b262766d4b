//! Coherence-boosted next-token distributions and answer scores.
//!
//! A boosted distribution is `softmax(Σ α_e log f_e)` over a sparse set of
//! experts `e`, each the same model evaluated on a different view of the
//! context: the full window, its last `k` tokens, the tokens generated since
//! a separator, or an explicitly supplied short context.

use serde::{Deserialize, Serialize};

use crate::backend::{truncated_context, LanguageModel};
use crate::dist::{log_linear_mix_with, LogProbVec, MixOptions, TokenId, TokenSeq};
use crate::error::{Error, Result};

/// Default cap on the number of nonzero weights in a [`BoostSpec`].
pub const DEFAULT_MAX_NONZERO: usize = 2;

/// Which view of the context an expert sees.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expert {
    /// The whole context, clipped to the backend's maximum context (`f_max`).
    Full,
    /// The last `k` tokens (`f_k`).
    LastK(usize),
    /// Tokens after the last occurrence of the separator sequence.
    AfterSeparator(TokenSeq),
    /// A fixed short context supplied by the caller (premise-free context).
    Explicit(TokenSeq),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostSpec {
    weights: Vec<(Expert, f64)>,
    #[serde(default)]
    mix: MixFloor,
}

/// Serializable wrapper around [`MixOptions`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
struct MixFloor(Option<f64>);

impl Default for MixFloor {
    fn default() -> Self {
        MixFloor(MixOptions::default().floor)
    }
}

impl BoostSpec {
    /// Validates and builds a spec with at most [`DEFAULT_MAX_NONZERO`] nonzero weights.
    pub fn new(weights: Vec<(Expert, f64)>) -> Result<Self> {
        Self::with_max_nonzero(weights, DEFAULT_MAX_NONZERO)
    }

    pub fn with_max_nonzero(weights: Vec<(Expert, f64)>, max_nonzero: usize) -> Result<Self> {
        let mut merged: Vec<(Expert, f64)> = Vec::new();
        for (e, w) in weights {
            if !w.is_finite() {
                return Err(Error::invalid("boost weights must be finite"));
            }
            match &e {
                Expert::LastK(0) => return Err(Error::invalid("short context length k must be >= 1")),
                Expert::AfterSeparator(sep) if sep.is_empty() => {
                    return Err(Error::invalid("separator must be non-empty"))
                }
                _ => {}
            }
            match merged.iter_mut().find(|(x, _)| *x == e) {
                Some(slot) => slot.1 += w,
                None => merged.push((e, w)),
            }
        }
        let nonzero = merged.iter().filter(|(_, w)| *w != 0.0).count();
        if nonzero > max_nonzero {
            return Err(Error::invalid(format!(
                "boost spec has {nonzero} nonzero weights; at most {max_nonzero} allowed"
            )));
        }
        Ok(BoostSpec { weights: merged, mix: MixFloor::default() })
    }

    /// The unboosted model, `{max: 1}`.
    pub fn base() -> Self {
        BoostSpec { weights: vec![(Expert::Full, 1.0)], mix: MixFloor::default() }
    }

    /// `f_k^α f_max^{1-α}`: collapses to `f_max` whenever the context is no longer than `k`.
    pub fn fixed_k(k: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![(Expert::Full, 1.0 - alpha), (Expert::LastK(k), alpha)])
    }

    /// `f_max · f_k^α`, the form used for last-token ranking.
    pub fn contrast_k(k: usize, alpha: f64) -> Result<Self> {
        Self::new(vec![(Expert::Full, 1.0), (Expert::LastK(k), alpha)])
    }

    /// `f_max · f_short^α` where the short context is everything after `sep`.
    pub fn after_separator(sep: TokenSeq, alpha: f64) -> Result<Self> {
        Self::new(vec![(Expert::Full, 1.0), (Expert::AfterSeparator(sep), alpha)])
    }

    /// Sets the log-probability floor for negatively weighted experts (`None` = error instead).
    pub fn with_floor(mut self, floor: Option<f64>) -> Self {
        self.mix = MixFloor(floor);
        self
    }

    pub fn weights(&self) -> &[(Expert, f64)] {
        &self.weights
    }

    pub fn weight(&self, expert: &Expert) -> f64 {
        self.weights.iter().filter(|(e, _)| e == expert).map(|(_, w)| *w).sum()
    }

    pub fn is_base(&self) -> bool {
        self.weights.iter().all(|(e, w)| if *e == Expert::Full { *w == 1.0 } else { *w == 0.0 })
    }

    pub fn mix_options(&self) -> MixOptions {
        MixOptions { floor: self.mix.0 }
    }
}

/// The context an expert sees, or `None` when its view is empty.
fn expert_context<'a>(expert: &'a Expert, context: &'a [TokenId], max_context: usize) -> Option<&'a [TokenId]> {
    let view: &[TokenId] = match expert {
        Expert::Full => context,
        Expert::LastK(k) => truncated_context(context, *k),
        Expert::AfterSeparator(sep) => {
            let start = context
                .windows(sep.len())
                .rposition(|w| w == sep.as_slice())
                .map(|i| i + sep.len())?;
            &context[start..]
        }
        Expert::Explicit(ctx) => ctx,
    };
    if view.is_empty() {
        None
    } else {
        Some(truncated_context(view, max_context))
    }
}

/// Boosted next-token distribution after `context`.
///
/// Experts whose view coincides with the full window share its weight; an
/// expert with an empty view (e.g. nothing generated after the separator yet)
/// is dropped, i.e. its weight is treated as zero.
pub fn boosted_next_dist<M: LanguageModel + ?Sized>(
    model: &M,
    context: &[TokenId],
    spec: &BoostSpec,
) -> Result<LogProbVec> {
    if context.is_empty() {
        return Err(Error::EmptyContext);
    }
    let max_context = model.info().max_context;
    let full = truncated_context(context, max_context);

    let mut groups: Vec<(&[TokenId], f64)> = Vec::with_capacity(spec.weights.len());
    for (expert, w) in &spec.weights {
        if *w == 0.0 {
            continue;
        }
        let Some(view) = expert_context(expert, context, max_context) else {
            continue;
        };
        match groups.iter_mut().find(|(c, _)| *c == view) {
            Some(slot) => slot.1 += w,
            None => groups.push((view, *w)),
        }
    }

    if let [(ctx, w)] = groups.as_slice() {
        // merged weights like (1 - α) + α may miss 1.0 by an ulp
        if (*w - 1.0).abs() <= 1e-12 {
            return model.next_logprobs(ctx);
        }
    }
    if groups.is_empty() {
        log::debug!("boost spec has no active experts; using the base model");
        return model.next_logprobs(full);
    }
    let dists = groups
        .iter()
        .map(|(ctx, _)| model.next_logprobs(ctx))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&LogProbVec> = dists.iter().collect();
    let weights: Vec<f64> = groups.iter().map(|(_, w)| *w).collect();
    log_linear_mix_with(&refs, &weights, spec.mix_options())
}

/// The two terms of a boosted answer score and their combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MCScore {
    pub full_logprob: f64,
    pub short_logprob: f64,
    pub combined: f64,
}

impl MCScore {
    pub fn new(full_logprob: f64, short_logprob: f64, alpha: f64) -> Self {
        let combined = if alpha == 0.0 { full_logprob } else { full_logprob + alpha * short_logprob };
        MCScore { full_logprob, short_logprob, combined }
    }

    /// Same two log-probabilities under a different `α`.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self::new(self.full_logprob, self.short_logprob, alpha)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Divide both log-probabilities by the answer length.
    pub length_normalize: bool,
}

/// `log f(a | full) + α log f(a | premise-free)`.
///
/// An empty premise-free context is replaced by a single end-of-text token.
pub fn score_choice<M: LanguageModel + ?Sized>(
    model: &M,
    full_ctx: &[TokenId],
    premise_free_ctx: &[TokenId],
    answer: &[TokenId],
    alpha: f64,
    opts: ScoreOptions,
) -> Result<MCScore> {
    if answer.is_empty() {
        return Err(Error::invalid("answer must be non-empty"));
    }
    let eot_ctx;
    let short_ctx = if premise_free_ctx.is_empty() {
        let eot = model
            .tokenizer()
            .eot()
            .ok_or_else(|| Error::invalid("empty premise-free context and the backend has no end-of-text token"))?;
        log::warn!("empty premise-free context; conditioning the short expert on <eot>");
        eot_ctx = [eot];
        &eot_ctx[..]
    } else {
        premise_free_ctx
    };
    let mut full = model.score_continuation(full_ctx, answer)?;
    let mut short = model.score_continuation(short_ctx, answer)?;
    if opts.length_normalize {
        full /= answer.len() as f64;
        short /= answer.len() as f64;
    }
    Ok(MCScore::new(full, short, alpha))
}

/// Default α grid: −5.0 to 1.0 in steps of 0.05.
pub fn default_alpha_grid() -> Vec<f64> {
    (-100..=20).map(|i| i as f64 * 0.05).collect()
}

/// Default short-context grid: `1..=16`.
pub fn default_k_grid() -> Vec<usize> {
    (1..=16).collect()
}

/// Inclusive arithmetic grid `start, start+step, …, ≤ end`, computed by index to avoid drift.
pub fn alpha_range(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || end < start {
        return Err(Error::invalid(format!("bad grid {start}:{end}:{step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as i64;
    Ok((0..=n)
        .map(|i| {
            let v = start + i as f64 * step;
            // snap to 1e-9 so grids print and compare cleanly
            (v * 1e9).round() / 1e9
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Accuracy,
    Nll,
}

/// Summary statistics a task reports for one `(k, α)` setting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub accuracy: f64,
    pub mean_nll: f64,
}

/// A dataset that can be evaluated under any boosting parameters.
pub trait BoostTask: Sync {
    /// Whether the short-context length `k` affects this task.
    fn uses_k(&self) -> bool {
        true
    }

    fn score(&self, model: &dyn LanguageModel, k: usize, alpha: f64) -> Result<TaskScore>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: Option<usize>,
    pub alpha: f64,
    pub accuracy: f64,
    pub mean_nll: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub objective: Objective,
    pub best: GridPoint,
    pub points: Vec<GridPoint>,
}

/// Exhaustive search over `k_grid × alpha_grid`.
///
/// Ties go to the smaller `|α|`, then the smaller `k`, so equal scores favor
/// the base model.
pub fn grid_search(
    model: &dyn LanguageModel,
    task: &dyn BoostTask,
    k_grid: &[usize],
    alpha_grid: &[f64],
    objective: Objective,
) -> Result<GridResult> {
    if alpha_grid.is_empty() || (task.uses_k() && k_grid.is_empty()) {
        return Err(Error::invalid("grid search needs non-empty grids"));
    }
    let ks: Vec<Option<usize>> = if task.uses_k() { k_grid.iter().map(|&k| Some(k)).collect() } else { vec![None] };

    let mut points = Vec::with_capacity(ks.len() * alpha_grid.len());
    for &k in &ks {
        for &alpha in alpha_grid {
            let s = task.score(model, k.unwrap_or(0), alpha)?;
            points.push(GridPoint { k, alpha, accuracy: s.accuracy, mean_nll: s.mean_nll });
        }
    }

    let better = |a: &GridPoint, b: &GridPoint| -> bool {
        let (sa, sb) = match objective {
            Objective::Accuracy => (a.accuracy, b.accuracy),
            Objective::Nll => (-a.mean_nll, -b.mean_nll),
        };
        if sa != sb {
            return sa > sb;
        }
        if a.alpha.abs() != b.alpha.abs() {
            return a.alpha.abs() < b.alpha.abs();
        }
        a.k < b.k
    };
    let mut best = points[0].clone();
    for p in &points[1..] {
        if better(p, &best) {
            best = p.clone();
        }
    }
    Ok(GridResult { objective, best, points })
}
