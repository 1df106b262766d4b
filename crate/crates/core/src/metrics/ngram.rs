//! Reference-based and diversity metrics over token sequences: BLEU, NIST,
//! Distinct-n, Entropy-n and ROUGE.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts of every `n`-gram of `seq`.
pub fn ngram_counts<T: Eq + Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n == 0 || seq.len() < n {
        return counts;
    }
    for w in seq.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Smoothing {
    #[default]
    None,
    /// Zero-match precisions become `epsilon / total` with epsilon 0.1.
    Epsilon,
}

const SMOOTHING_EPSILON: f64 = 0.1;

/// Per-order clipped matches and totals, plus lengths, for BLEU.
#[derive(Clone, Debug, Default, PartialEq)]
struct BleuStats {
    matches: Vec<f64>,
    totals: Vec<f64>,
    cand_len: usize,
    ref_len: usize,
}

/// Reference length closest to `cand_len`; ties go to the shorter reference.
fn closest_ref_len(cand_len: usize, ref_lens: impl IntoIterator<Item = usize>) -> usize {
    ref_lens
        .into_iter()
        .min_by_key(|&r| (r.abs_diff(cand_len), r))
        .unwrap_or(0)
}

fn bleu_stats<T: Eq + Hash>(candidate: &[T], references: &[&[T]], max_n: usize) -> BleuStats {
    let mut st = BleuStats {
        matches: vec![0.0; max_n],
        totals: vec![0.0; max_n],
        cand_len: candidate.len(),
        ref_len: closest_ref_len(candidate.len(), references.iter().map(|r| r.len())),
    };
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, c) in ngram_counts(r, n) {
                let slot = max_ref.entry(g).or_insert(0);
                *slot = (*slot).max(c);
            }
        }
        for (g, c) in &cand {
            st.matches[n - 1] += (*c).min(max_ref.get(g).copied().unwrap_or(0)) as f64;
            st.totals[n - 1] += *c as f64;
        }
    }
    st
}

fn bleu_from_stats(st: &BleuStats, smoothing: Smoothing) -> f64 {
    if st.cand_len == 0 {
        return 0.0;
    }
    let max_n = st.matches.len();
    let mut log_sum = 0.0;
    for n in 0..max_n {
        let (m, t) = (st.matches[n], st.totals[n]);
        let p = if t == 0.0 {
            match smoothing {
                Smoothing::None => return 0.0,
                Smoothing::Epsilon => SMOOTHING_EPSILON,
            }
        } else if m == 0.0 {
            match smoothing {
                Smoothing::None => return 0.0,
                Smoothing::Epsilon => SMOOTHING_EPSILON / t,
            }
        } else {
            m / t
        };
        log_sum += p.ln();
    }
    let bp = if st.cand_len > st.ref_len {
        1.0
    } else {
        (1.0 - st.ref_len as f64 / st.cand_len as f64).exp()
    };
    bp * (log_sum / max_n as f64).exp()
}

/// Sentence BLEU: geometric mean of clipped `n`-gram precisions (uniform
/// weights, orders `1..=max_n`) times the brevity penalty against the
/// closest reference length.
pub fn bleu<T: Eq + Hash>(candidate: &[T], references: &[&[T]], max_n: usize, smoothing: Smoothing) -> f64 {
    if candidate.is_empty() {
        log::warn!("BLEU of an empty candidate is 0");
        return 0.0;
    }
    if references.is_empty() || max_n == 0 {
        return 0.0;
    }
    bleu_from_stats(&bleu_stats(candidate, references, max_n), smoothing)
}

/// Corpus BLEU: match counts and lengths are summed over segments before the
/// precisions and brevity penalty are formed.
pub fn corpus_bleu<T: Eq + Hash>(
    candidates: &[&[T]],
    references: &[Vec<&[T]>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(candidates.len(), references.len()));
    }
    let mut total = BleuStats { matches: vec![0.0; max_n], totals: vec![0.0; max_n], cand_len: 0, ref_len: 0 };
    for (c, refs) in candidates.iter().zip(references) {
        let st = bleu_stats(c, refs, max_n);
        for n in 0..max_n {
            total.matches[n] += st.matches[n];
            total.totals[n] += st.totals[n];
        }
        total.cand_len += st.cand_len;
        total.ref_len += st.ref_len;
    }
    Ok(bleu_from_stats(&total, smoothing))
}

/// Mean BLEU-4 of every document against all the others as references.
///
/// Equivalent to calling [`bleu`] once per document, but builds each
/// document's `n`-gram table only once.
pub fn self_bleu4<T: Eq + Hash>(docs: &[&[T]], smoothing: Smoothing) -> Result<f64> {
    self_bleu(docs, 4, smoothing)
}

pub fn self_bleu<T: Eq + Hash>(docs: &[&[T]], max_n: usize, smoothing: Smoothing) -> Result<f64> {
    if docs.len() < 2 {
        return Err(Error::invalid("self-BLEU needs at least two documents"));
    }
    // per order: n-gram -> (best count, its doc, second best count)
    let counts: Vec<Vec<HashMap<&[T], usize>>> =
        docs.iter().map(|d| (1..=max_n).map(|n| ngram_counts(d, n)).collect()).collect();
    let mut top: Vec<HashMap<&[T], (usize, usize, usize)>> = vec![HashMap::new(); max_n];
    for (i, per_n) in counts.iter().enumerate() {
        for (n, table) in per_n.iter().enumerate() {
            for (g, &c) in table {
                let e = top[n].entry(*g).or_insert((0, usize::MAX, 0));
                if c > e.0 {
                    *e = (c, i, e.0);
                } else if c > e.2 {
                    e.2 = c;
                }
            }
        }
    }
    let mut sum = 0.0;
    for (i, doc) in docs.iter().enumerate() {
        if doc.is_empty() {
            continue;
        }
        let mut st = BleuStats {
            matches: vec![0.0; max_n],
            totals: vec![0.0; max_n],
            cand_len: doc.len(),
            ref_len: closest_ref_len(
                doc.len(),
                docs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| d.len()),
            ),
        };
        for n in 0..max_n {
            for (g, &c) in &counts[i][n] {
                let (best, owner, second) = top[n][g];
                let other = if owner == i { second } else { best };
                st.matches[n] += c.min(other) as f64;
                st.totals[n] += c as f64;
            }
        }
        sum += bleu_from_stats(&st, smoothing);
    }
    Ok(sum / docs.len() as f64)
}

/// Corpus-level NIST-`max_n` with multiple references per segment.
///
/// Information weights come from n-gram counts over all references:
/// `info(w_1..w_n) = log2(count(w_1..w_{n-1}) / count(w_1..w_n))`, with the
/// total reference word count in the numerator for unigrams. Matches are
/// clipped by the maximum count in any one reference of the segment. The
/// reference length of a segment is the mean of its reference lengths.
pub fn nist<T: Ord + Hash>(candidates: &[&[T]], references: &[Vec<&[T]>], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::LengthMismatch(candidates.len(), references.len()));
    }
    if max_n == 0 {
        return Err(Error::invalid("NIST order must be >= 1"));
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    let mut ref_words = 0usize;
    for refs in references {
        for r in refs {
            ref_words += r.len();
            for n in 1..=max_n {
                for (g, c) in ngram_counts(r, n) {
                    *ref_counts.entry(g).or_insert(0) += c;
                }
            }
        }
    }
    let info = |g: &[T]| -> f64 {
        let num = if g.len() == 1 { ref_words } else { ref_counts.get(&g[..g.len() - 1]).copied().unwrap_or(0) };
        let den = ref_counts[g];
        (num as f64 / den as f64).log2()
    };

    let mut info_sum = vec![0.0; max_n];
    let mut cand_ngrams = vec![0.0; max_n];
    let mut sys_len = 0.0;
    let mut ref_len = 0.0;
    for (c, refs) in candidates.iter().zip(references) {
        sys_len += c.len() as f64;
        if !refs.is_empty() {
            ref_len += refs.iter().map(|r| r.len()).sum::<usize>() as f64 / refs.len() as f64;
        }
        for n in 1..=max_n {
            let cand = ngram_counts(c, n);
            let mut max_ref: HashMap<&[T], usize> = HashMap::new();
            for r in refs {
                for (g, k) in ngram_counts(r, n) {
                    let slot = max_ref.entry(g).or_insert(0);
                    *slot = (*slot).max(k);
                }
            }
            // sorted so the floating-point sum does not depend on hash order
            let mut cand: Vec<_> = cand.into_iter().collect();
            cand.sort_unstable();
            for &(g, k) in &cand {
                cand_ngrams[n - 1] += k as f64;
                let m = k.min(max_ref.get(g).copied().unwrap_or(0));
                if m > 0 {
                    info_sum[n - 1] += info(g) * m as f64;
                }
            }
        }
    }
    let score: f64 = (0..max_n)
        .map(|n| if cand_ngrams[n] > 0.0 { info_sum[n] / cand_ngrams[n] } else { 0.0 })
        .sum();
    Ok(score * nist_length_penalty(sys_len, ref_len))
}

/// `exp(β · ln²(min(1, sys/ref)))` with β chosen so a length ratio of 2/3 gives 0.5.
pub fn nist_length_penalty(sys_len: f64, ref_len: f64) -> f64 {
    if ref_len <= 0.0 {
        return 1.0;
    }
    let ratio = sys_len / ref_len;
    if ratio >= 1.0 {
        return 1.0;
    }
    if ratio <= 0.0 {
        return 0.0;
    }
    let beta = 0.5f64.ln() / 1.5f64.ln().powi(2);
    (beta * ratio.ln().powi(2)).exp()
}

/// Unique `n`-grams over total `n`-grams across the corpus.
pub fn distinct_n<T: Eq + Hash>(docs: &[&[T]], n: usize) -> f64 {
    let mut all: HashMap<&[T], usize> = HashMap::new();
    let mut total = 0usize;
    for d in docs {
        for (g, c) in ngram_counts(d, n) {
            *all.entry(g).or_insert(0) += c;
            total += c;
        }
    }
    if total == 0 {
        0.0
    } else {
        all.len() as f64 / total as f64
    }
}

/// Shannon entropy (nats) of the corpus `n`-gram frequency distribution.
pub fn entropy_n<T: Eq + Hash>(docs: &[&[T]], n: usize) -> f64 {
    let mut all: HashMap<&[T], usize> = HashMap::new();
    let mut total = 0usize;
    for d in docs {
        for (g, c) in ngram_counts(d, n) {
            *all.entry(g).or_insert(0) += c;
            total += c;
        }
    }
    if total == 0 {
        return 0.0;
    }
    let mut counts: Vec<usize> = all.into_values().collect();
    // fixed summation order keeps the result independent of hash iteration
    counts.sort_unstable();
    let t = total as f64;
    -counts.iter().map(|&c| c as f64 / t).map(|p| p * p.ln()).sum::<f64>()
}

pub fn entropy_n_bits<T: Eq + Hash>(docs: &[&[T]], n: usize) -> f64 {
    entropy_n(docs, n) / std::f64::consts::LN_2
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_overlap(overlap: f64, cand_total: f64, ref_total: f64) -> Self {
        let precision = if cand_total > 0.0 { overlap / cand_total } else { 0.0 };
        let recall = if ref_total > 0.0 { overlap / ref_total } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "rouge1")]
    One,
    #[serde(rename = "rouge2")]
    Two,
    #[serde(rename = "rougeL")]
    L,
}

pub fn rouge<T: Eq + Hash>(candidate: &[T], reference: &[T], variant: RougeVariant) -> Prf {
    match variant {
        RougeVariant::One => rouge_n(candidate, reference, 1),
        RougeVariant::Two => rouge_n(candidate, reference, 2),
        RougeVariant::L => rouge_l(candidate, reference),
    }
}

pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> Prf {
    let c = ngram_counts(candidate, n);
    let r = ngram_counts(reference, n);
    let overlap: usize = c.iter().map(|(g, k)| (*k).min(r.get(g).copied().unwrap_or(0))).sum();
    Prf::from_overlap(
        overlap as f64,
        c.values().sum::<usize>() as f64,
        r.values().sum::<usize>() as f64,
    )
}

pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> Prf {
    Prf::from_overlap(lcs_len(candidate, reference) as f64, candidate.len() as f64, reference.len() as f64)
}

/// Lowercased alphanumeric word tokens, the usual normalization for ROUGE.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

/// Splits after `.`, `!` or `?` when followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let s = text[start..=i].trim();
                    if !s.is_empty() {
                        out.push(s);
                    }
                    start = i + c.len_utf8();
                }
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail);
    }
    out
}

/// The first `n` sentences of `text`, joined by single spaces.
pub fn first_sentences(text: &str, n: usize) -> String {
    split_sentences(text).into_iter().take(n).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn bleu_hand_cases() {
        let c = w("the cat sat");
        let r = w("the cat sat down");
        let b = bleu(&c, &[&r], 3, Smoothing::None);
        assert!((b - (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-15);
        assert!((b - 0.7165).abs() < 1e-4);
        assert_eq!(bleu(&r, &[&r], 4, Smoothing::None), 1.0);
        assert_eq!(bleu(&w("x y z"), &[&w("a b c")], 1, Smoothing::None), 0.0);
        assert_eq!(bleu::<&str>(&[], &[&r], 4, Smoothing::None), 0.0);
    }

    #[test]
    fn bleu_matches_reference_implementation() {
        // nltk sentence_bleu; epsilon case uses its method1 smoothing
        let c = w("the the cat is on a mat near the door");
        let r1 = w("the cat is on the mat");
        let r2 = w("there is a cat on the mat by the door");
        let b = bleu(&c, &[&r1, &r2], 4, Smoothing::None);
        assert!((b - BLEU_NLTK_PLAIN).abs() < 1e-12, "{b}");
        let c2 = w("a cat sat on a mat");
        let e = bleu(&c2, &[&r1], 4, Smoothing::Epsilon);
        assert!((e - BLEU_NLTK_EPS).abs() < 1e-12, "{e}");
    }

    const BLEU_NLTK_PLAIN: f64 = 0.3356891925037239;
    const BLEU_NLTK_EPS: f64 = 0.05372849659117709;

    #[test]
    fn self_bleu_matches_naive() {
        let docs = [w("a b c d a b"), w("a b c e f"), w("c d e f a b c"), w("f e d c b a"), w("a b")];
        let refs: Vec<&[&str]> = docs.iter().map(|d| d.as_slice()).collect();
        for smoothing in [Smoothing::None, Smoothing::Epsilon] {
            let naive: f64 = (0..docs.len())
                .map(|i| {
                    let others: Vec<&[&str]> =
                        refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, d)| *d).collect();
                    bleu(refs[i], &others, 4, smoothing)
                })
                .sum::<f64>()
                / docs.len() as f64;
            let fast = self_bleu4(&refs, smoothing).unwrap();
            assert!((naive - fast).abs() < 1e-12);
        }
    }

    #[test]
    fn self_bleu_extremes() {
        let same = [w("a b c d e"), w("a b c d e"), w("a b c d e")];
        let refs: Vec<&[&str]> = same.iter().map(|d| d.as_slice()).collect();
        assert_eq!(self_bleu4(&refs, Smoothing::None).unwrap(), 1.0);
        let disjoint = [w("a b c d e"), w("f g h i j"), w("k l m n o")];
        let refs: Vec<&[&str]> = disjoint.iter().map(|d| d.as_slice()).collect();
        assert_eq!(self_bleu4(&refs, Smoothing::None).unwrap(), 0.0);
    }

    #[test]
    fn nist_matches_independent_oracle() {
        let c1 = w("it is a guide to action which ensures that the military always obeys the commands of the party");
        let c2 = w("he read the book because he was interested in world history");
        let r1a = w("it is a guide to action that ensures that the military will forever heed party commands");
        let r1b = w("it is the guiding principle which guarantees the military forces always being under the command of the party");
        let r2a = w("he was interested in world history because he read the book");
        let cands = [c1.as_slice(), c2.as_slice()];
        let refs = vec![vec![r1a.as_slice(), r1b.as_slice()], vec![r2a.as_slice()]];
        let n5 = nist(&cands, &refs, 5).unwrap();
        assert!((n5 - NIST5_ORACLE).abs() < 1e-10, "{n5}");
        let n2 = nist(&cands, &refs, 2).unwrap();
        assert!((n2 - NIST2_ORACLE).abs() < 1e-10, "{n2}");
        // single reference per segment: agrees with nltk's corpus_nist
        let single = vec![vec![r1a.as_slice()], vec![r2a.as_slice()]];
        let s = nist(&cands, &single, 4).unwrap();
        assert!((s - NIST4_SINGLE_NLTK).abs() < 1e-10, "{s}");
    }

    const NIST5_ORACLE: f64 = 5.142882156207013;
    const NIST2_ORACLE: f64 = 5.102882156207013;
    const NIST4_SINGLE_NLTK: f64 = 3.783889066211385;

    #[test]
    fn nist_edge_cases() {
        let c = w("x y z");
        let r = w("a b c");
        assert_eq!(nist(&[c.as_slice()], &[vec![r.as_slice()]], 2).unwrap(), 0.0);
        assert!((nist_length_penalty(2.0, 3.0) - 0.5).abs() < 1e-12);
        assert_eq!(nist_length_penalty(5.0, 3.0), 1.0);
    }

    #[test]
    fn distinct_and_entropy() {
        let d = w("a a b");
        assert_eq!(distinct_n(&[d.as_slice()], 1), 2.0 / 3.0);
        let e = entropy_n(&[d.as_slice()], 1);
        let expect = -(2.0f64 / 3.0) * (2.0f64 / 3.0).ln() - (1.0f64 / 3.0) * (1.0f64 / 3.0).ln();
        assert!((e - expect).abs() < 1e-15);
        assert!((e - 0.6365).abs() < 1e-4);
        assert!((entropy_n_bits(&[d.as_slice()], 1) - 0.9182958340544896).abs() < 1e-12);
        let same = w("z z z z");
        assert_eq!(distinct_n(&[same.as_slice()], 1), 0.25);
        assert_eq!(distinct_n::<&str>(&[], 2), 0.0);
    }

    #[test]
    fn rouge_cases() {
        let c = w("a b c d");
        let r = w("a c d");
        let l = rouge_l(&c, &r);
        assert_eq!(l.recall, 1.0);
        assert_eq!(l.precision, 0.75);
        assert_eq!(l.f1, 6.0 / 7.0);
        assert_eq!(rouge(&r, &r, RougeVariant::Two).f1, 1.0);
        assert_eq!(rouge(&w("x y"), &r, RougeVariant::One).f1, 0.0);
        let two = rouge_n(&c, &r, 2);
        assert_eq!((two.precision, two.recall), (1.0 / 3.0, 0.5));
        assert_eq!(rouge_tokens("The cat, the HAT!"), vec!["the", "cat", "the", "hat"]);
    }

    #[test]
    fn sentences() {
        let t = "First one. Second? Third!  Fourth e.g.x stays. Fifth";
        assert_eq!(split_sentences(t), vec!["First one.", "Second?", "Third!", "Fourth e.g.x stays.", "Fifth"]);
        assert_eq!(first_sentences(t, 2), "First one. Second?");
        assert_eq!(first_sentences("no stop", 3), "no stop");
    }

    fn doc_strategy() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..6, 1..12)
    }

    proptest! {
        #[test]
        fn bleu_ignores_reference_order(c in doc_strategy(), refs in prop::collection::vec(doc_strategy(), 1..4)) {
            let a: Vec<&[u8]> = refs.iter().map(|r| r.as_slice()).collect();
            let mut b = a.clone();
            b.reverse();
            prop_assert_eq!(bleu(&c, &a, 2, Smoothing::Epsilon), bleu(&c, &b, 2, Smoothing::Epsilon));
        }

        #[test]
        fn adding_matching_reference_never_lowers_bleu(c in doc_strategy(), refs in prop::collection::vec(doc_strategy(), 1..4)) {
            let a: Vec<&[u8]> = refs.iter().map(|r| r.as_slice()).collect();
            let mut b = a.clone();
            b.push(c.as_slice());
            prop_assert!(bleu(&c, &b, 2, Smoothing::None) >= bleu(&c, &a, 2, Smoothing::None));
            prop_assert!((bleu(&c, &b, 2, Smoothing::None) - 1.0).abs() < 1e-12 || c.len() < 2);
        }

        #[test]
        fn fractions_in_unit_interval(docs in prop::collection::vec(doc_strategy(), 1..6)) {
            let d: Vec<&[u8]> = docs.iter().map(|x| x.as_slice()).collect();
            for n in 1..4 {
                let x = distinct_n(&d, n);
                prop_assert!((0.0..=1.0).contains(&x));
            }
            let r = rouge_l(d[0], *d.last().unwrap());
            prop_assert!((0.0..=1.0).contains(&r.f1));
            if d.len() > 1 {
                let n = nist(&d[1..], &d[..d.len() - 1].iter().map(|x| vec![*x]).collect::<Vec<_>>(), 3).unwrap();
                prop_assert!(n >= 0.0);
            }
        }
    }
}
