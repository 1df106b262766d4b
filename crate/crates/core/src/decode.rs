//! Autoregressive generation: greedy, sampling and beam search, each with
//! optional coherence boosting.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{truncated_context, LanguageModel};
use crate::boosting::{boosted_next_dist, BoostSpec, Expert};
use crate::dist::{apply_temperature, argmax, truncate_top_k, truncate_top_p, LogProbVec, TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::rng;

/// Default length limit for dialog responses.
pub const DEFAULT_DIALOG_MAX_NEW_TOKENS: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Strategy {
    Greedy,
    Sample {
        temperature: f64,
        top_p: Option<f64>,
        top_k: Option<usize>,
    },
    Beam {
        width: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub max_new_tokens: usize,
    pub strategy: Strategy,
    #[serde(default)]
    pub stop_tokens: Vec<TokenId>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub boost: Option<BoostSpec>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { max_new_tokens: 200, strategy: Strategy::Greedy, stop_tokens: Vec::new(), seed: 0, boost: None }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        match &self.strategy {
            Strategy::Greedy => {}
            Strategy::Sample { temperature, top_p, top_k } => {
                if !(*temperature > 0.0) || !temperature.is_finite() {
                    return Err(Error::invalid("temperature must be positive and finite"));
                }
                if let Some(p) = top_p {
                    if !(*p > 0.0 && *p <= 1.0) {
                        return Err(Error::invalid("top_p must be in (0, 1]"));
                    }
                }
                if *top_k == Some(0) {
                    return Err(Error::invalid("top_k must be >= 1"));
                }
            }
            Strategy::Beam { width } => {
                if *width == 0 {
                    return Err(Error::invalid("beam width must be >= 1"));
                }
            }
        }
        Ok(())
    }
}

/// Generated tokens (prompt excluded, stop token excluded).
///
/// When the backend fails mid-generation the tokens produced so far are kept
/// and `error` holds the failure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: TokenSeq,
    pub error: Option<String>,
}

/// One line of a generations JSONL file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub prompt_tokens: TokenSeq,
    pub output_tokens: TokenSeq,
    pub text: String,
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn check_prompt<M: LanguageModel + ?Sized>(model: &M, prompt: &[TokenId]) -> Result<()> {
    let info = model.info();
    if prompt.is_empty() {
        return Err(Error::EmptyContext);
    }
    info.check_context(prompt)?;
    info.check_tokens(prompt)
}

/// Next-token distribution under an optional boost spec, windowed to the
/// backend's maximum context.
pub fn step_logprobs<M: LanguageModel + ?Sized>(
    model: &M,
    context: &[TokenId],
    boost: Option<&BoostSpec>,
) -> Result<LogProbVec> {
    match boost {
        Some(spec) => boosted_next_dist(model, context, spec),
        None => model.next_logprobs(truncated_context(context, model.info().max_context)),
    }
}

/// Picks the next token from a (boosted) distribution: temperature, then
/// top-k, then top-p, then sampling. Greedy takes the argmax.
pub fn choose_token<R: Rng + ?Sized>(logprobs: &LogProbVec, strategy: &Strategy, rng: &mut R) -> Result<TokenId> {
    match strategy {
        Strategy::Greedy | Strategy::Beam { .. } => Ok(logprobs.argmax()),
        Strategy::Sample { temperature, top_p, top_k } => {
            let mut dist = apply_temperature(logprobs, *temperature)?.to_probs();
            if let Some(k) = top_k {
                dist = truncate_top_k(&dist, *k)?;
            }
            if let Some(p) = top_p {
                dist = truncate_top_p(&dist, *p)?;
            }
            Ok(crate::dist::sample(&dist, rng))
        }
    }
}

fn run_loop<M, R, F>(model: &M, prompt: &[TokenId], cfg: &GenConfig, rng: &mut R, spec_at: F) -> Result<Generation>
where
    M: LanguageModel + ?Sized,
    R: Rng + ?Sized,
    F: Fn(&[TokenId]) -> Result<Option<BoostSpec>>,
{
    let mut context = prompt.to_vec();
    let mut out = Vec::with_capacity(cfg.max_new_tokens);
    for _ in 0..cfg.max_new_tokens {
        let step = spec_at(&out).and_then(|spec| step_logprobs(model, &context, spec.as_ref()));
        let lp = match step {
            Ok(lp) => lp,
            Err(e @ Error::Backend(_)) => {
                log::warn!("generation stopped after {} tokens: {e}", out.len());
                return Ok(Generation { tokens: out, error: Some(e.to_string()) });
            }
            Err(e) => return Err(e),
        };
        let tok = choose_token(&lp, &cfg.strategy, rng)?;
        if cfg.stop_tokens.contains(&tok) {
            break;
        }
        out.push(tok);
        context.push(tok);
    }
    Ok(Generation { tokens: out, error: None })
}

/// Generates with the random stream `(cfg.seed, "generate", 0)`.
pub fn generate<M: LanguageModel + ?Sized>(model: &M, prompt: &[TokenId], cfg: &GenConfig) -> Result<Generation> {
    let mut rng = rng::stream(cfg.seed, "generate", 0);
    generate_with_rng(model, prompt, cfg, &mut rng)
}

pub fn generate_with_rng<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<Generation> {
    cfg.validate()?;
    check_prompt(model, prompt)?;
    if let Strategy::Beam { width } = cfg.strategy {
        return beam_search(model, prompt, width, cfg);
    }
    run_loop(model, prompt, cfg, rng, |_| Ok(cfg.boost.clone()))
}

/// Generates one continuation per prompt in parallel; prompt `i` uses random
/// stream `(cfg.seed, "generate", i)`, so results do not depend on scheduling.
pub fn generate_batch<M: LanguageModel + ?Sized>(
    model: &M,
    prompts: &[TokenSeq],
    cfg: &GenConfig,
) -> Result<Vec<Generation>> {
    prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = rng::stream(cfg.seed, "generate", i as u64);
            generate_with_rng(model, p, cfg, &mut rng)
        })
        .collect()
}

/// Response generation where the short expert sees only the response so far.
///
/// The long expert is conditioned on `conversation ⊕ sep ⊕ response`, the
/// short one on `response`. The first token has no short context and is
/// drawn from the unboosted model. `cfg.boost` is ignored.
pub fn generate_dialog<M: LanguageModel + ?Sized>(
    model: &M,
    conversation: &[TokenId],
    sep: &[TokenId],
    alpha: f64,
    cfg: &GenConfig,
) -> Result<Generation> {
    let mut rng = rng::stream(cfg.seed, "generate", 0);
    generate_dialog_with_rng(model, conversation, sep, alpha, cfg, &mut rng)
}

pub fn generate_dialog_with_rng<M: LanguageModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    conversation: &[TokenId],
    sep: &[TokenId],
    alpha: f64,
    cfg: &GenConfig,
    rng: &mut R,
) -> Result<Generation> {
    cfg.validate()?;
    if matches!(cfg.strategy, Strategy::Beam { .. }) {
        return Err(Error::invalid("dialog generation supports greedy and sampling only"));
    }
    let mut prompt = conversation.to_vec();
    prompt.extend_from_slice(sep);
    let prompt = truncated_context(&prompt, model.info().max_context).to_vec();
    check_prompt(model, &prompt)?;
    run_loop(model, &prompt, cfg, rng, |response| {
        if response.is_empty() || alpha == 0.0 {
            return Ok(None);
        }
        BoostSpec::new(vec![(Expert::Full, 1.0), (Expert::Explicit(response.to_vec()), alpha)]).map(Some)
    })
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: TokenSeq,
    score: f64,
    done: bool,
}

/// Width-`b` beam search over summed (boosted) log-probabilities.
///
/// Hypotheses that emit a stop token are finished and keep competing with
/// their final score. Candidates with equal scores are ordered by their
/// token sequences, lowest ids first.
pub fn beam_search<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    width: usize,
    cfg: &GenConfig,
) -> Result<Generation> {
    if width == 0 {
        return Err(Error::invalid("beam width must be >= 1"));
    }
    check_prompt(model, prompt)?;
    let mut beams = vec![Hyp { tokens: Vec::new(), score: 0.0, done: false }];
    for _ in 0..cfg.max_new_tokens {
        if beams.iter().all(|h| h.done) {
            break;
        }
        let mut cands: Vec<Hyp> = Vec::new();
        for h in &beams {
            if h.done {
                cands.push(h.clone());
                continue;
            }
            let mut ctx = prompt.to_vec();
            ctx.extend_from_slice(&h.tokens);
            let lp = match step_logprobs(model, &ctx, cfg.boost.as_ref()) {
                Ok(lp) => lp,
                Err(e @ Error::Backend(_)) => {
                    let best = best_hyp(&beams);
                    return Ok(Generation { tokens: best.tokens.clone(), error: Some(e.to_string()) });
                }
                Err(e) => return Err(e),
            };
            for (tok, &l) in lp.values().iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let tok = tok as TokenId;
                let mut tokens = h.tokens.clone();
                let done = cfg.stop_tokens.contains(&tok);
                if !done {
                    tokens.push(tok);
                }
                cands.push(Hyp { tokens, score: h.score + l, done });
            }
        }
        cands.sort_by(order);
        cands.truncate(width);
        beams = cands;
    }
    Ok(Generation { tokens: best_hyp(&beams).tokens.clone(), error: None })
}

fn order(a: &Hyp, b: &Hyp) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)).then_with(|| a.done.cmp(&b.done))
}

fn best_hyp(beams: &[Hyp]) -> &Hyp {
    let mut sorted: Vec<&Hyp> = beams.iter().collect();
    sorted.sort_by(|a, b| order(a, b));
    sorted[0]
}

/// Sum of per-step log-probabilities of `tokens` after `prompt` under the
/// (optionally boosted) stepwise model.
pub fn sequence_logprob<M: LanguageModel + ?Sized>(
    model: &M,
    prompt: &[TokenId],
    tokens: &[TokenId],
    boost: Option<&BoostSpec>,
) -> Result<f64> {
    let mut ctx = prompt.to_vec();
    let mut total = 0.0;
    for &t in tokens {
        total += step_logprobs(model, &ctx, boost)?.get(t);
        ctx.push(t);
    }
    Ok(total)
}

/// Index of the maximum entry, lowest index on ties.
pub fn argmax_token(values: &[f64]) -> TokenId {
    argmax(values) as TokenId
}
