//! Zero-shot summarization: the article is followed by a separator and the
//! continuation is boosted against the summary generated so far.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::items::SummarizeItem;
use crate::backend::LanguageModel;
use crate::decode::{generate_dialog, GenConfig};
use crate::error::{Error, Result};
use crate::metrics::ngram::{first_sentences, rouge_l, rouge_n, rouge_tokens};
use crate::metrics::report::render_table;

pub const DEFAULT_SEPARATOR: &str = " TL;DR:";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarizeConfig {
    pub separator: String,
    /// Sentences kept from each generated summary.
    pub sentences: usize,
    pub generation: GenConfig,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        SummarizeConfig { separator: DEFAULT_SEPARATOR.to_string(), sentences: 3, generation: GenConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryOutput {
    pub id: String,
    pub summary: String,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mean ROUGE F1 scores for one α.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RougeRow {
    pub alpha: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub outputs: Vec<SummaryOutput>,
}

/// ROUGE-1, ROUGE-2 and ROUGE-L F1 of `candidate` against `reference` text.
pub fn rouge_scores(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    (rouge_n(&c, &r, 1).f1, rouge_n(&c, &r, 2).f1, rouge_l(&c, &r).f1)
}

pub fn summarize_eval(
    model: &dyn LanguageModel,
    items: &[SummarizeItem],
    alpha: f64,
    cfg: &SummarizeConfig,
) -> Result<RougeRow> {
    if items.is_empty() {
        return Err(Error::invalid("no articles to summarize"));
    }
    if cfg.sentences == 0 {
        return Err(Error::invalid("sentence count must be >= 1"));
    }
    let tok = model.tokenizer();
    let sep = tok.encode(&cfg.separator)?;
    let outputs = items
        .par_iter()
        .map(|it| {
            let g = generate_dialog(model, &it.article, &sep, alpha, &cfg.generation)?;
            let summary = first_sentences(&tok.decode(&g.tokens), cfg.sentences);
            let (rouge1, rouge2, rouge_l) = rouge_scores(&summary, &it.reference);
            Ok(SummaryOutput { id: it.id.clone(), summary, rouge1, rouge2, rouge_l, error: g.error })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = outputs.len() as f64;
    let mean = |f: fn(&SummaryOutput) -> f64| outputs.iter().map(f).sum::<f64>() / n;
    Ok(RougeRow {
        alpha,
        rouge1: mean(|o| o.rouge1),
        rouge2: mean(|o| o.rouge2),
        rouge_l: mean(|o| o.rouge_l),
        outputs,
    })
}

/// One row per α with ROUGE F1 in percent; the α = 0 row is the base model.
pub fn rouge_table(rows: &[RougeRow]) -> String {
    let cols = vec!["ROUGE-1".to_string(), "ROUGE-2".into(), "ROUGE-L".into()];
    let body: Vec<(String, Vec<String>)> = rows
        .iter()
        .map(|r| {
            let label = if r.alpha == 0.0 { "base".to_string() } else { format!("α={:.2}", r.alpha) };
            (label, vec![
                format!("{:.2}", 100.0 * r.rouge1),
                format!("{:.2}", 100.0 * r.rouge2),
                format!("{:.2}", 100.0 * r.rouge_l),
            ])
        })
        .collect();
    render_table(&cols, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::generate;
    use crate::tokenizer::WordVocab;
    use crate::toy_lm::ToyLm;
    use std::sync::Arc;

    #[test]
    fn reference_scores_one() {
        let (r1, r2, rl) = rouge_scores("The cat sat. It slept.", "the cat sat it slept");
        assert_eq!((r1, r2, rl), (1.0, 1.0, 1.0));
    }

    fn model() -> ToyLm {
        let vocab = WordVocab::build("the cat sat on a mat . dog ran TL;DR:");
        let v = vocab.len();
        ToyLm::random(v, 8, 2.0, 4).with_tokenizer(Arc::new(vocab))
    }

    #[test]
    fn zero_alpha_matches_plain_generation() {
        let m = model();
        let tok = m.tokenizer();
        let article = tok.encode("the cat sat on a mat .").unwrap();
        let items = vec![SummarizeItem { id: "a".into(), article: article.clone(), reference: "the cat sat".into() }];
        let cfg = SummarizeConfig {
            generation: GenConfig { max_new_tokens: 6, ..Default::default() },
            ..Default::default()
        };
        let row = summarize_eval(&m, &items, 0.0, &cfg).unwrap();
        let mut prompt = article;
        prompt.extend(tok.encode(DEFAULT_SEPARATOR).unwrap());
        let g = generate(&m, &prompt, &cfg.generation).unwrap();
        assert_eq!(row.outputs[0].summary, first_sentences(&tok.decode(&g.tokens), 3));
        let t = rouge_table(&[row]);
        assert!(t.lines().nth(1).unwrap().starts_with("base"));
    }
}
