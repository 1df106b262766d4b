//! Corpus metrics for generated text.
//!
//! Model-relative probes (perplexity, LTF, δ) always query the unboosted
//! backend. Text-level and n-gram metrics live in [`ngram`]; table layouts in
//! [`report`].

pub mod ngram;
pub mod report;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{truncated_context, LanguageModel};
use crate::dist::{TokenId, TokenSeq};
use crate::error::{Error, Result};

pub use ngram::{
    bleu, corpus_bleu, distinct_n, entropy_n, entropy_n_bits, first_sentences, nist, rouge, rouge_l, rouge_n,
    rouge_tokens, self_bleu4, split_sentences, Prf, RougeVariant, Smoothing,
};
pub use report::{CoherenceReport, DialogReport, MetricSettings};

/// One generated document and the prompt it continues.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub prompt: TokenSeq,
    pub tokens: TokenSeq,
}

impl Document {
    pub fn new(prompt: TokenSeq, tokens: TokenSeq) -> Self {
        Document { prompt, tokens }
    }

    pub fn unprompted(tokens: TokenSeq) -> Self {
        Document { prompt: Vec::new(), tokens }
    }
}

fn token_views(docs: &[Document]) -> Vec<&[TokenId]> {
    docs.iter().map(|d| d.tokens.as_slice()).collect()
}

fn check_corpus(docs: &[Document]) -> Result<()> {
    if docs.is_empty() {
        return Err(Error::invalid("corpus has no documents"));
    }
    Ok(())
}

/// `Σ R_n(D) / Σ S(D)`: distinct tokens whose first and last occurrences are
/// at least `n` positions apart, over all distinct tokens, summed over documents.
pub fn lr_score(docs: &[&[TokenId]], n: usize) -> Result<f64> {
    let mut r = 0usize;
    let mut s = 0usize;
    for d in docs {
        let mut span: HashMap<TokenId, (usize, usize)> = HashMap::new();
        for (i, &t) in d.iter().enumerate() {
            span.entry(t).and_modify(|e| e.1 = i).or_insert((i, i));
        }
        s += span.len();
        r += span.values().filter(|(a, b)| b - a >= n).count();
    }
    if s == 0 {
        return Err(Error::invalid("corpus has no tokens"));
    }
    Ok(r as f64 / s as f64)
}

/// Magnitude of the least-squares slope of log-frequency on log-rank.
///
/// `max_rank` keeps only the most frequent ranks.
pub fn zipf_coefficient(docs: &[&[TokenId]], max_rank: Option<usize>) -> Result<f64> {
    let mut counts: HashMap<TokenId, usize> = HashMap::new();
    for d in docs {
        for &t in *d {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut freqs: Vec<usize> = counts.into_values().collect();
    freqs.sort_unstable_by(|a, b| b.cmp(a));
    if let Some(m) = max_rank {
        freqs.truncate(m);
    }
    zipf_from_counts(&freqs)
}

/// Zipf slope of frequencies already sorted in descending order.
pub fn zipf_from_counts(freqs: &[usize]) -> Result<f64> {
    if freqs.len() < 2 {
        return Err(Error::invalid("Zipf regression needs at least 2 ranks"));
    }
    let n = freqs.len() as f64;
    let xs: Vec<f64> = (1..=freqs.len()).map(|r| (r as f64).ln()).collect();
    let ys: Vec<f64> = freqs.iter().map(|&c| (c as f64).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok((sxy / sxx).abs())
}

pub const DEFAULT_MIN_COPIES: usize = 3;
pub const DEFAULT_MAX_SPAN: usize = 16;

/// Whether `doc` ends in at least `min_copies` back-to-back copies of some
/// span of length `1..=max_span`.
pub fn ends_in_repetition(doc: &[TokenId], min_copies: usize, max_span: usize) -> bool {
    (1..=max_span).any(|l| {
        let need = l * min_copies;
        if doc.len() < need {
            return false;
        }
        let tail = &doc[doc.len() - need..];
        let unit = &tail[need - l..];
        tail.chunks(l).all(|c| c == unit)
    })
}

/// Fraction of documents that end in a repeating span.
pub fn repetition_fraction(docs: &[&[TokenId]], min_copies: usize, max_span: usize) -> Result<f64> {
    if docs.is_empty() {
        return Err(Error::invalid("corpus has no documents"));
    }
    if min_copies < 2 || max_span == 0 {
        return Err(Error::invalid("repetition needs min_copies >= 2 and max_span >= 1"));
    }
    let hits = docs.iter().filter(|d| ends_in_repetition(d, min_copies, max_span)).count();
    Ok(hits as f64 / docs.len() as f64)
}

/// Per-position probabilities of the realized token under the full window
/// and under the last `short_len` tokens.
#[derive(Clone, Copy, Debug, PartialEq)]
struct PositionProbs {
    logp_full: f64,
    p_full: f64,
    p_short: f64,
}

/// Walks the scored positions of one document. Positions with no history at
/// all (an unprompted first token) are skipped.
fn document_positions<M: LanguageModel + ?Sized>(
    model: &M,
    doc: &Document,
    short_len: Option<usize>,
    include_prompt: bool,
) -> Result<Vec<PositionProbs>> {
    let max_context = model.info().max_context;
    let mut seq = doc.prompt.clone();
    seq.extend_from_slice(&doc.tokens);
    let first = if include_prompt { 1 } else { doc.prompt.len().max(1) };
    let mut out = Vec::with_capacity(seq.len().saturating_sub(first));
    for t in first..seq.len() {
        let history = &seq[..t];
        let full_ctx = truncated_context(history, max_context);
        let full = model.next_logprobs(full_ctx)?;
        let logp_full = full.get(seq[t]);
        let p_short = match short_len {
            Some(s) => {
                let short_ctx = truncated_context(history, s);
                if short_ctx.len() == full_ctx.len() {
                    logp_full.exp()
                } else {
                    model.next_logprobs(short_ctx)?.prob(seq[t])
                }
            }
            None => logp_full.exp(),
        };
        out.push(PositionProbs { logp_full, p_full: logp_full.exp(), p_short });
    }
    Ok(out)
}

fn all_positions<M: LanguageModel + ?Sized>(
    model: &M,
    docs: &[Document],
    short_len: Option<usize>,
    include_prompt: bool,
) -> Result<Vec<PositionProbs>> {
    check_corpus(docs)?;
    let per_doc: Vec<Vec<PositionProbs>> = docs
        .par_iter()
        .map(|d| document_positions(model, d, short_len, include_prompt))
        .collect::<Result<_>>()?;
    let flat: Vec<PositionProbs> = per_doc.into_iter().flatten().collect();
    if flat.is_empty() {
        return Err(Error::invalid("corpus has no scorable tokens"));
    }
    Ok(flat)
}

/// `exp` of the mean token NLL under the windowed full context.
pub fn corpus_perplexity<M: LanguageModel + ?Sized>(model: &M, docs: &[Document], include_prompt: bool) -> Result<f64> {
    let pos = all_positions(model, docs, None, include_prompt)?;
    let nll = -pos.iter().map(|p| p.logp_full).sum::<f64>() / pos.len() as f64;
    Ok(nll.exp())
}

pub const DEFAULT_LONG_THRESH: f64 = 0.20;
pub const DEFAULT_SHORT_THRESH: f64 = 0.05;
pub const DEFAULT_SHORT_LEN: usize = 20;

/// Fraction of generated tokens with full-context probability at least
/// `long_thresh` and short-context probability below `short_thresh`.
pub fn ltf<M: LanguageModel + ?Sized>(
    model: &M,
    docs: &[Document],
    long_thresh: f64,
    short_thresh: f64,
    short_len: usize,
) -> Result<f64> {
    let pos = all_positions(model, docs, Some(short_len), false)?;
    let hits = pos.iter().filter(|p| p.p_full >= long_thresh && p.p_short < short_thresh).count();
    Ok(hits as f64 / pos.len() as f64)
}

/// Mean of `p_full − p_short` over generated tokens.
pub fn delta<M: LanguageModel + ?Sized>(model: &M, docs: &[Document], short_len: usize) -> Result<f64> {
    let pos = all_positions(model, docs, Some(short_len), false)?;
    Ok(pos.iter().map(|p| p.p_full - p.p_short).sum::<f64>() / pos.len() as f64)
}

/// Every column of the coherence table in one pass over the backend.
pub fn coherence_report<M: LanguageModel + ?Sized>(
    model: &M,
    docs: &[Document],
    settings: &MetricSettings,
) -> Result<CoherenceReport> {
    check_corpus(docs)?;
    let views = token_views(docs);
    let mut lr = BTreeMap::new();
    for &n in &settings.lr_ns {
        lr.insert(n, lr_score(&views, n)?);
    }
    let pos = all_positions(model, docs, Some(settings.short_len), false)?;
    let count = pos.len() as f64;
    let hits = pos
        .iter()
        .filter(|p| p.p_full >= settings.long_thresh && p.p_short < settings.short_thresh)
        .count();
    let ppl = if settings.ppl_include_prompt {
        corpus_perplexity(model, docs, true)?
    } else {
        (-pos.iter().map(|p| p.logp_full).sum::<f64>() / count).exp()
    };
    let self_bleu4 = if docs.len() >= 2 { self_bleu4(&views, settings.self_bleu_smoothing)? } else { 0.0 };
    Ok(CoherenceReport {
        documents: docs.len(),
        tokens: docs.iter().map(|d| d.tokens.len()).sum(),
        ppl,
        self_bleu4,
        zipf: zipf_coefficient(&views, settings.zipf_max_rank)?,
        repetition: repetition_fraction(&views, settings.rep_min_copies, settings.rep_max_span)?,
        lr,
        delta: pos.iter().map(|p| p.p_full - p.p_short).sum::<f64>() / count,
        ltf: hits as f64 / count,
        settings: settings.clone(),
    })
}

/// Reference-based and diversity metrics for responses with one or more
/// references each. BLEU uses no smoothing; entropy is over 4-grams.
pub fn dialog_report<T: Ord + std::hash::Hash>(responses: &[&[T]], references: &[Vec<&[T]>]) -> Result<DialogReport> {
    if responses.is_empty() {
        return Err(Error::invalid("no responses"));
    }
    if responses.len() != references.len() {
        return Err(Error::LengthMismatch(responses.len(), references.len()));
    }
    if references.iter().any(|r| r.is_empty()) {
        return Err(Error::invalid("every response needs at least one reference"));
    }
    Ok(DialogReport {
        responses: responses.len(),
        nist2: nist(responses, references, 2)?,
        nist4: nist(responses, references, 4)?,
        bleu2: corpus_bleu(responses, references, 2, Smoothing::None)?,
        bleu4: corpus_bleu(responses, references, 4, Smoothing::None)?,
        entropy4: entropy_n(responses, 4),
        entropy4_bits: entropy_n_bits(responses, 4),
        distinct1: distinct_n(responses, 1),
        distinct2: distinct_n(responses, 2),
        avg_len: responses.iter().map(|r| r.len()).sum::<usize>() as f64 / responses.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendInfo;
    use crate::dist::LogProbVec;
    use crate::tokenizer::{IdTokenizer, Tokenizer};
    use crate::toy_lm::ToyLm;
    use proptest::prelude::*;

    #[test]
    fn dialog_report_values() {
        let a: Vec<u32> = vec![1, 2, 3, 4, 5];
        let b: Vec<u32> = vec![1, 1, 2];
        let ra: Vec<u32> = vec![1, 2, 3, 4, 5];
        let rb: Vec<u32> = vec![7, 8];
        let r = dialog_report(&[&a[..], &b[..]], &[vec![&ra[..]], vec![&rb[..], &b[..]]]).unwrap();
        assert_eq!(r.responses, 2);
        assert_eq!(r.avg_len, 4.0);
        assert_eq!(r.distinct1, 5.0 / 8.0);
        assert_eq!(r.bleu4, 1.0);
        assert!((r.entropy4_bits - r.entropy4 / std::f64::consts::LN_2).abs() < 1e-15);
        assert!(dialog_report::<u32>(&[&a[..]], &[vec![]]).is_err());
    }

    #[test]
    fn lr_examples() {
        assert_eq!(lr_score(&[&[0, 1, 0]], 2).unwrap(), 0.5);
        assert_eq!(lr_score(&[&[0, 1, 2, 3]], 1).unwrap(), 0.0);
        // macro-average: (1 + 0) / (2 + 2)
        assert_eq!(lr_score(&[&[0, 1, 0], &[4, 5]], 2).unwrap(), 0.25);
        assert!(lr_score(&[&[]], 1).is_err());
    }

    #[test]
    fn zipf_examples() {
        let counts = [1000usize, 500, 333, 250];
        let z = zipf_from_counts(&counts).unwrap();
        assert!((z - 1.0).abs() < 0.01, "{z}");
        let mut doc = Vec::new();
        for (t, &c) in counts.iter().enumerate() {
            doc.extend(std::iter::repeat_n(t as TokenId, c));
        }
        assert_eq!(zipf_coefficient(&[&doc], None).unwrap(), z);
        assert!(zipf_coefficient(&[&[3, 3, 3]], None).is_err());
    }

    #[test]
    fn repetition_examples() {
        assert!(ends_in_repetition(&[5, 1, 2, 2, 2], 3, 16));
        assert!(!ends_in_repetition(&[0, 1, 2, 3], 3, 16));
        assert!(ends_in_repetition(&[7, 0, 1, 0, 1, 0, 1], 3, 16));
        assert!(!ends_in_repetition(&[7, 0, 1, 0, 1], 3, 16));
        assert_eq!(repetition_fraction(&[&[1, 1, 1], &[1, 2, 3], &[4], &[]], 3, 16).unwrap(), 0.25);
    }

    /// Brute force over every span and copy count.
    fn repeats_naive(doc: &[TokenId], copies: usize, max_span: usize) -> bool {
        for l in 1..=max_span {
            for c in copies..=doc.len() {
                if l * c <= doc.len() {
                    let start = doc.len() - l * c;
                    if (0..l * c).all(|i| doc[start + i] == doc[start + i % l]) {
                        return true;
                    }
                }
            }
        }
        false
    }

    /// `[p_full, p_short]` for token 0; the short view is any context of length 1.
    struct TwoView {
        table: Vec<(usize, f64)>,
        tok: IdTokenizer,
    }

    impl LanguageModel for TwoView {
        fn info(&self) -> BackendInfo {
            BackendInfo { vocab_size: 4, max_context: 16, name: "two-view".into() }
        }
        fn next_logprobs(&self, ctx: &[TokenId]) -> Result<LogProbVec> {
            // probability of token 0 depends on the context length only
            let p0 = self.table.iter().find(|(l, _)| *l == ctx.len()).map(|x| x.1).unwrap_or(0.25);
            let rest = (1.0 - p0) / 3.0;
            Ok(LogProbVec::from_normalized(
                [p0, rest, rest, rest].iter().map(|p| p.ln()).collect(),
            ))
        }
        fn tokenizer(&self) -> &dyn Tokenizer {
            &self.tok
        }
    }

    #[test]
    fn ltf_and_delta_hand_case() {
        // ten generated tokens after a 5-token prompt; only the first is token 0,
        // seen with history length 5 (full: 0.25) and short view length 1 (0.04)
        let m = TwoView { table: vec![(5, 0.25), (1, 0.04)], tok: IdTokenizer { vocab_size: 4, eot: None } };
        let mut tokens = vec![0];
        tokens.extend(std::iter::repeat_n(1, 9));
        let docs = [Document::new(vec![3; 5], tokens)];
        assert!((ltf(&m, &docs, 0.2, 0.05, 1).unwrap() - 0.1).abs() < 1e-15);
        // the nine token-1 positions: full 0.75/3, short 0.96/3
        let expect = ((0.25 - 0.04) + 9.0 * (0.25 - 0.32)) / 10.0;
        assert!((delta(&m, &docs, 1).unwrap() - expect).abs() < 1e-15);

        let two = [Document::new(vec![3; 5], vec![0, 2])];
        let m2 = TwoView { table: vec![(5, 0.25), (1, 0.04), (6, 0.5)], tok: IdTokenizer { vocab_size: 4, eot: None } };
        // token 2 at history 6: full (1-0.5)/3, short (1-0.04)/3
        let expect = ((0.25 - 0.04) + ((1.0 - 0.5) / 3.0 - (1.0 - 0.04) / 3.0)) / 2.0;
        assert!((delta(&m2, &two, 1).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn lag_one_model_has_no_long_dependence() {
        let mut m = ToyLm::random(6, 8, 1.5, 9);
        for lag in 2..=8 {
            m.lag_table_mut(lag).iter_mut().for_each(|x| *x = 0.0);
        }
        let docs = [Document::new(vec![1, 2], vec![3, 4, 5, 0, 1, 2, 3, 4, 5, 5, 5])];
        assert_eq!(ltf(&m, &docs, 0.2, 0.05, 1).unwrap(), 0.0);
        assert!(delta(&m, &docs, 1).unwrap().abs() < 1e-15);
    }

    #[test]
    fn short_len_beyond_history_gives_zero() {
        let m = ToyLm::random(6, 8, 1.5, 9);
        let docs = [Document::new(vec![1, 2], vec![3, 4, 5, 0])];
        assert_eq!(delta(&m, &docs, 20).unwrap(), 0.0);
        assert_eq!(ltf(&m, &docs, 0.2, 0.05, 20).unwrap(), 0.0);
    }

    #[test]
    fn uniform_perplexity_is_vocab_size() {
        let m = ToyLm::zeros(8, 4);
        let docs = [Document::new(vec![1], vec![2, 3, 4, 5, 6, 7, 0]), Document::unprompted(vec![1, 2, 3])];
        let ppl = corpus_perplexity(&m, &docs, false).unwrap();
        assert!((ppl - 8.0).abs() < 1e-9);
    }

    #[test]
    fn report_columns_agree_with_single_metrics() {
        let m = ToyLm::random(6, 8, 1.0, 4);
        let docs: Vec<Document> = (0..5)
            .map(|i| Document::new(vec![i, i + 1], (0..30).map(|j| ((j * (i + 2)) % 6) as TokenId).collect()))
            .collect();
        let s = MetricSettings { short_len: 3, lr_ns: vec![5, 10], ..Default::default() };
        let r = coherence_report(&m, &docs, &s).unwrap();
        let v = token_views(&docs);
        assert_eq!(r.lr[&5], lr_score(&v, 5).unwrap());
        assert_eq!(r.ltf, ltf(&m, &docs, 0.2, 0.05, 3).unwrap());
        assert_eq!(r.delta, delta(&m, &docs, 3).unwrap());
        assert!((r.ppl - corpus_perplexity(&m, &docs, false).unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn repetition_detector_matches_brute_force(doc in prop::collection::vec(0u32..3, 0..20)) {
            prop_assert_eq!(ends_in_repetition(&doc, 3, 4), repeats_naive(&doc, 3, 4));
        }

        #[test]
        fn corpus_metrics_ignore_document_order(docs in prop::collection::vec(prop::collection::vec(0u32..5, 1..15), 2..6)) {
            let a: Vec<&[TokenId]> = docs.iter().map(|d| d.as_slice()).collect();
            let mut b = a.clone();
            b.reverse();
            prop_assert_eq!(lr_score(&a, 3).unwrap(), lr_score(&b, 3).unwrap());
            prop_assert_eq!(repetition_fraction(&a, 3, 4).unwrap(), repetition_fraction(&b, 3, 4).unwrap());
            prop_assert_eq!(distinct_n(&a, 2), distinct_n(&b, 2));
            prop_assert_eq!(entropy_n(&a, 2), entropy_n(&b, 2));
            if let (Ok(x), Ok(y)) = (zipf_coefficient(&a, None), zipf_coefficient(&b, None)) {
                prop_assert_eq!(x, y);
            }
            let sa = self_bleu4(&a, Smoothing::Epsilon).unwrap();
            let sb = self_bleu4(&b, Smoothing::Epsilon).unwrap();
            prop_assert!((sa - sb).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&sa));
        }

        #[test]
        fn zipf_is_scale_invariant(mut counts in prop::collection::vec(1usize..500, 2..20), c in 1usize..9) {
            counts.sort_unstable_by(|a, b| b.cmp(a));
            let scaled: Vec<usize> = counts.iter().map(|x| x * c).collect();
            if counts.iter().any(|&x| x != counts[0]) {
                let a = zipf_from_counts(&counts).unwrap();
                let b = zipf_from_counts(&scaled).unwrap();
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
