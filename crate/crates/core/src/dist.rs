//! Probability-vector arithmetic in log space.
//!
//! Every distribution over the vocabulary is carried either as a
//! [`LogProbVec`] (natural-log probabilities, `-inf` allowed) or a
//! [`ProbDist`]. Mixing, temperature and truncation all go through a
//! max-shifted logsumexp so that negative expert weights, which amplify tail
//! ratios, never underflow.

use rand::Rng;

use crate::error::{Error, Result};

pub type TokenId = u32;
pub type TokenSeq = Vec<TokenId>;

/// Default floor applied to the log-probabilities of negatively weighted experts.
pub const DEFAULT_LOG_FLOOR: f64 = -23.025850929940457; // ln 1e-10

/// Tolerance used when comparing cumulative mass against a top-p threshold.
const MASS_EPS: f64 = 1e-12;

/// Normalized log-probabilities over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct LogProbVec(Vec<f64>);

/// Normalized probabilities over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbDist(Vec<f64>);

impl LogProbVec {
    /// Normalizes arbitrary logits (log-softmax).
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        log_softmax(logits)
    }

    /// Wraps values the caller guarantees are already normalized.
    pub fn from_normalized(values: Vec<f64>) -> Self {
        LogProbVec(values)
    }

    pub fn uniform(n: usize) -> Self {
        LogProbVec(vec![-(n as f64).ln(); n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, token: TokenId) -> f64 {
        self.0[token as usize]
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token as usize].exp()
    }

    pub fn to_probs(&self) -> ProbDist {
        ProbDist(self.0.iter().map(|v| v.exp()).collect())
    }

    /// Highest-probability token; lowest id wins ties.
    pub fn argmax(&self) -> TokenId {
        argmax(&self.0) as TokenId
    }
}

impl ProbDist {
    /// Normalizes non-negative weights.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| w.is_nan() || *w < 0.0) {
            return Err(Error::invalid("weights must be non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::DegenerateDistribution);
        }
        Ok(ProbDist(weights.iter().map(|w| w / total).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_log(&self) -> LogProbVec {
        LogProbVec(self.0.iter().map(|p| p.ln()).collect())
    }

    pub fn argmax(&self) -> TokenId {
        argmax(&self.0) as TokenId
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `ln Σ exp(v)`, shifted by the maximum. Returns `-inf` when every entry is `-inf`.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    if logits.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("logits must be finite or -inf"));
    }
    if logits.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::DegenerateDistribution);
    }
    Ok(())
}

pub fn log_softmax(logits: &[f64]) -> Result<LogProbVec> {
    check_logits(logits)?;
    let lse = logsumexp(logits);
    Ok(LogProbVec(logits.iter().map(|v| v - lse).collect()))
}

pub fn softmax(logits: &[f64]) -> Result<ProbDist> {
    check_logits(logits)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbDist(exps.into_iter().map(|e| e / total).collect()))
}

/// How zero-probability tokens under negatively weighted experts are handled.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixOptions {
    /// Log-probabilities of negatively weighted experts are clamped from below
    /// at this value. `None` turns the situation into [`Error::SupportMismatch`].
    pub floor: Option<f64>,
}

impl Default for MixOptions {
    fn default() -> Self {
        MixOptions { floor: Some(DEFAULT_LOG_FLOOR) }
    }
}

/// Weighted product of experts, renormalized: `softmax(Σ w_i log p_i)`.
pub fn log_linear_mix(experts: &[&LogProbVec], weights: &[f64]) -> Result<LogProbVec> {
    log_linear_mix_with(experts, weights, MixOptions::default())
}

pub fn log_linear_mix_with(
    experts: &[&LogProbVec],
    weights: &[f64],
    opts: MixOptions,
) -> Result<LogProbVec> {
    if experts.is_empty() {
        return Err(Error::invalid("log_linear_mix needs at least one expert"));
    }
    if experts.len() != weights.len() {
        return Err(Error::LengthMismatch(experts.len(), weights.len()));
    }
    let n = experts[0].len();
    for e in experts {
        if e.len() != n {
            return Err(Error::LengthMismatch(n, e.len()));
        }
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("mixture weights must be finite"));
    }

    let active: Vec<(&LogProbVec, f64)> = experts
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w != 0.0)
        .map(|(e, &w)| (*e, w))
        .collect();
    match active.as_slice() {
        [] => return Ok(LogProbVec::uniform(n)),
        [(e, w)] if *w == 1.0 => return Ok((*e).clone()),
        _ => {}
    }

    let mut mixed = vec![0.0; n];
    for (tok, slot) in mixed.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut zero_under_positive = false;
        let mut zero_under_negative = false;
        for (e, w) in &active {
            let lp = e.0[tok];
            if *w > 0.0 {
                if lp == f64::NEG_INFINITY {
                    zero_under_positive = true;
                } else {
                    acc += w * lp;
                }
            } else {
                let lp = match opts.floor {
                    Some(floor) => lp.max(floor),
                    None => {
                        if lp == f64::NEG_INFINITY {
                            zero_under_negative = true;
                        }
                        lp
                    }
                };
                if lp.is_finite() {
                    acc += w * lp;
                }
            }
        }
        if zero_under_positive {
            *slot = f64::NEG_INFINITY;
        } else if zero_under_negative {
            return Err(Error::SupportMismatch { token: tok });
        } else {
            *slot = acc;
        }
    }
    log_softmax(&mixed)
}

/// Keeps the smallest probability-sorted prefix with mass ≥ `p`, renormalized.
pub fn truncate_top_p(dist: &ProbDist, p: f64) -> Result<ProbDist> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::invalid(format!("top-p must be in (0, 1], got {p}")));
    }
    if p >= 1.0 {
        return Ok(dist.clone());
    }
    let order = sorted_desc(&dist.0);
    let mut keep = vec![false; dist.len()];
    let mut mass = 0.0;
    for idx in order {
        keep[idx] = true;
        mass += dist.0[idx];
        if mass >= p - MASS_EPS {
            break;
        }
    }
    renormalize_kept(dist, &keep)
}

/// Keeps the `k` most probable tokens, renormalized; lower ids win ties.
pub fn truncate_top_k(dist: &ProbDist, k: usize) -> Result<ProbDist> {
    if k == 0 {
        return Err(Error::invalid("top-k requires k >= 1"));
    }
    if k >= dist.len() {
        return Ok(dist.clone());
    }
    let mut keep = vec![false; dist.len()];
    for idx in sorted_desc(&dist.0).into_iter().take(k) {
        keep[idx] = true;
    }
    renormalize_kept(dist, &keep)
}

fn sorted_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps lower ids first among equal probabilities
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

fn renormalize_kept(dist: &ProbDist, keep: &[bool]) -> Result<ProbDist> {
    let kept: Vec<f64> = dist
        .0
        .iter()
        .zip(keep)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect();
    ProbDist::from_weights(&kept)
}

/// Softmax of `values / t`. `t == 1` returns the input unchanged.
pub fn apply_temperature(logprobs: &LogProbVec, t: f64) -> Result<LogProbVec> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("temperature must be positive, got {t}")));
    }
    if t == 1.0 {
        return Ok(logprobs.clone());
    }
    let scaled: Vec<f64> = logprobs.0.iter().map(|v| v / t).collect();
    log_softmax(&scaled)
}

/// `KL(p ‖ q)` in nats. Returns `+inf` when `p` puts mass where `q` has none.
pub fn kl_divergence(p: &ProbDist, q: &ProbDist) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_divergence: length mismatch");
    let mut kl = 0.0;
    for (&pi, &qi) in p.0.iter().zip(&q.0) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            kl += pi * (pi / qi).ln();
        }
    }
    kl.max(0.0)
}

/// `KL(p ‖ q)` computed directly from log-probabilities.
pub fn kl_divergence_log(p: &LogProbVec, q: &LogProbVec) -> f64 {
    assert_eq!(p.len(), q.len(), "kl_divergence_log: length mismatch");
    let mut kl = 0.0;
    for (&lp, &lq) in p.0.iter().zip(&q.0) {
        if lp > f64::NEG_INFINITY {
            if lq == f64::NEG_INFINITY {
                return f64::INFINITY;
            }
            kl += lp.exp() * (lp - lq);
        }
    }
    kl.max(0.0)
}

/// Draws a token by inverse CDF.
pub fn sample<R: Rng + ?Sized>(dist: &ProbDist, rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &p) in dist.0.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_nonzero = i;
            if u < acc {
                return i as TokenId;
            }
        }
    }
    last_nonzero as TokenId
}
