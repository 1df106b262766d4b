//! Evaluation harnesses: last-token prediction, multiple choice and
//! candidate ranking, each under coherence boosting.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::items::{LamaItem, LastTokenItem, McItem};
use crate::backend::{truncated_context, LanguageModel};
use crate::boosting::{boosted_next_dist, score_choice, BoostSpec, BoostTask, MCScore, ScoreOptions, TaskScore};
use crate::dist::{argmax, log_softmax, TokenId};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    LastToken,
    Mc,
    Lama,
    Summarize,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lasttoken" => Ok(TaskKind::LastToken),
            "mc" => Ok(TaskKind::Mc),
            "lama" => Ok(TaskKind::Lama),
            "summarize" => Ok(TaskKind::Summarize),
            _ => Err(Error::invalid(format!("unknown task {s:?}; expected lasttoken, mc, lama or summarize"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub prediction: usize,
    pub gold: usize,
    pub correct: bool,
    /// Boosted log-probability of the target (last-token items only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_logprob: Option<f64>,
    /// Per-choice scores (multiple-choice and candidate-ranking items only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<MCScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: TaskKind,
    pub k: Option<usize>,
    pub alpha: f64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Mean negative log-probability of the gold answer under the boosted
    /// model (for choices: softmax over the combined scores).
    pub mean_nll: f64,
    pub items: Vec<ItemResult>,
}

impl EvalResult {
    fn from_items(task: TaskKind, k: Option<usize>, alpha: f64, items: Vec<(ItemResult, f64)>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("no items to evaluate"));
        }
        let total = items.len();
        let correct = items.iter().filter(|(r, _)| r.correct).count();
        let mean_nll = items.iter().map(|(_, n)| n).sum::<f64>() / total as f64;
        Ok(EvalResult {
            task,
            k,
            alpha,
            correct,
            total,
            accuracy: correct as f64 / total as f64,
            mean_nll,
            items: items.into_iter().map(|(r, _)| r).collect(),
        })
    }

    pub fn task_score(&self) -> TaskScore {
        TaskScore { accuracy: self.accuracy, mean_nll: self.mean_nll }
    }
}

/// Argmax of the boosted distribution `f_max · f_k^α` after each context.
pub fn eval_last_token(model: &dyn LanguageModel, items: &[LastTokenItem], k: usize, alpha: f64) -> Result<EvalResult> {
    let spec = BoostSpec::contrast_k(k, alpha)?;
    let vocab = model.info().vocab_size;
    let results = items
        .par_iter()
        .map(|it| {
            if it.target as usize >= vocab {
                return Err(Error::TokenOutOfRange { token: it.target, vocab_size: vocab });
            }
            let lp = boosted_next_dist(model, &it.context, &spec)?;
            let pred = lp.argmax();
            let tl = lp.get(it.target);
            Ok((
                ItemResult {
                    id: it.id.clone(),
                    prediction: pred as usize,
                    gold: it.target as usize,
                    correct: pred == it.target,
                    target_logprob: Some(tl),
                    scores: Vec::new(),
                },
                -tl,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_items(TaskKind::LastToken, Some(k), alpha, results)
}

fn rank_choices(
    model: &dyn LanguageModel,
    id: &str,
    full: &[TokenId],
    short: &[TokenId],
    choices: &[Vec<TokenId>],
    gold: usize,
    alpha: f64,
    opts: ScoreOptions,
) -> Result<(ItemResult, f64)> {
    let scores = choices
        .iter()
        .map(|c| score_choice(model, full, short, c, alpha, opts))
        .collect::<Result<Vec<_>>>()?;
    let combined: Vec<f64> = scores.iter().map(|s| s.combined).collect();
    let pred = argmax(&combined);
    let nll = -log_softmax(&combined)?.get(gold as TokenId);
    Ok((ItemResult { id: id.to_string(), prediction: pred, gold, correct: pred == gold, target_logprob: None, scores }, nll))
}

/// Ranks choices by `log f(a | full) + α log f(a | premise-free)`; ties go to the lowest index.
pub fn eval_multiple_choice(
    model: &dyn LanguageModel,
    items: &[McItem],
    alpha: f64,
    opts: ScoreOptions,
) -> Result<EvalResult> {
    let results = items
        .par_iter()
        .map(|it| {
            rank_choices(model, &it.id, &it.full_context, &it.premise_free_context, &it.choices, it.gold, alpha, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_items(TaskKind::Mc, None, alpha, results)
}

/// Candidate ranking where the premise-free context is the last `k` prompt tokens.
pub fn eval_lama_style(
    model: &dyn LanguageModel,
    items: &[LamaItem],
    k: usize,
    alpha: f64,
    opts: ScoreOptions,
) -> Result<EvalResult> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let results = items
        .par_iter()
        .map(|it| {
            let short = truncated_context(&it.prompt, k);
            rank_choices(model, &it.id, &it.prompt, short, &it.candidates, it.gold, alpha, opts)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalResult::from_items(TaskKind::Lama, Some(k), alpha, results)
}

pub struct LastTokenTask<'a>(pub &'a [LastTokenItem]);
pub struct McTask<'a>(pub &'a [McItem], pub ScoreOptions);
pub struct LamaTask<'a>(pub &'a [LamaItem], pub ScoreOptions);

impl BoostTask for LastTokenTask<'_> {
    fn score(&self, model: &dyn LanguageModel, k: usize, alpha: f64) -> Result<TaskScore> {
        Ok(eval_last_token(model, self.0, k, alpha)?.task_score())
    }
}

impl BoostTask for McTask<'_> {
    fn uses_k(&self) -> bool {
        false
    }
    fn score(&self, model: &dyn LanguageModel, _k: usize, alpha: f64) -> Result<TaskScore> {
        Ok(eval_multiple_choice(model, self.0, alpha, self.1)?.task_score())
    }
}

impl BoostTask for LamaTask<'_> {
    fn score(&self, model: &dyn LanguageModel, k: usize, alpha: f64) -> Result<TaskScore> {
        Ok(eval_lama_style(model, self.0, k, alpha, self.1)?.task_score())
    }
}

/// One column of the accuracy table: base and boosted accuracy with the
/// boosting parameters that produced the latter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyColumn {
    pub model: String,
    pub base_accuracy: f64,
    pub boosted_accuracy: f64,
    pub alpha: f64,
    pub k: Option<usize>,
}

/// Rows `f_max`, `CB`, `α*`, `k*`; one column per model; accuracies in percent.
pub fn accuracy_table(cols: &[AccuracyColumn]) -> String {
    let header: Vec<String> = cols.iter().map(|c| c.model.clone()).collect();
    let row = |f: &dyn Fn(&AccuracyColumn) -> String| cols.iter().map(f).collect::<Vec<_>>();
    let rows = vec![
        ("f_max".to_string(), row(&|c| format!("{:.2}", 100.0 * c.base_accuracy))),
        ("CB".to_string(), row(&|c| format!("{:.2}", 100.0 * c.boosted_accuracy))),
        ("α*".to_string(), row(&|c| format!("{:.2}", c.alpha))),
        ("k*".to_string(), row(&|c| c.k.map_or("-".to_string(), |k| k.to_string()))),
    ];
    crate::metrics::report::render_table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::BackendInfo;
    use crate::boosting::{grid_search, Objective};
    use crate::dist::LogProbVec;
    use crate::tokenizer::{IdTokenizer, Tokenizer};
    use crate::toy_lm::ToyLm;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn random_items(n: usize, v: u32, len: usize, seed: u64) -> Vec<LastTokenItem> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "test-items", 0);
        (0..n)
            .map(|i| LastTokenItem {
                id: i.to_string(),
                context: (0..len).map(|_| rng.random_range(0..v)).collect(),
                target: rng.random_range(0..v),
            })
            .collect()
    }

    #[test]
    fn zero_alpha_is_base_argmax() {
        let m = ToyLm::random(7, 6, 2.0, 3);
        let items = random_items(40, 7, 6, 1);
        let r = eval_last_token(&m, &items, 2, 0.0).unwrap();
        let naive = items.iter().filter(|it| m.next_logprobs(&it.context).unwrap().argmax() == it.target).count();
        assert_eq!(r.correct, naive);
        assert_eq!(r.accuracy, naive as f64 / 40.0);
        for (res, it) in r.items.iter().zip(&items) {
            assert_eq!(res.target_logprob.unwrap(), m.next_logprobs(&it.context).unwrap().get(it.target));
        }
    }

    /// Backend with a hand-written table; unknown contexts are uniform.
    struct TableLm {
        table: HashMap<Vec<TokenId>, Vec<f64>>,
        tok: IdTokenizer,
    }

    impl LanguageModel for TableLm {
        fn info(&self) -> BackendInfo {
            BackendInfo { vocab_size: 4, max_context: 8, name: "table".into() }
        }
        fn next_logprobs(&self, ctx: &[TokenId]) -> Result<LogProbVec> {
            let p = self.table.get(ctx).cloned().unwrap_or(vec![0.25; 4]);
            Ok(LogProbVec::from_normalized(p.iter().map(|x| x.ln()).collect()))
        }
        fn tokenizer(&self) -> &dyn Tokenizer {
            &self.tok
        }
    }

    #[test]
    fn pmi_flips_three_way_choice() {
        // full context [0, 1]; premise-free [1]; single-token answers 2, 3 and 0
        let table: HashMap<Vec<TokenId>, Vec<f64>> = [
            (vec![0, 1], vec![0.2, 0.1, 0.45, 0.25]),
            (vec![1], vec![0.1, 0.1, 0.7, 0.1]),
        ]
        .into_iter()
        .collect();
        let m = TableLm { table, tok: IdTokenizer { vocab_size: 4, eot: None } };
        let item = McItem {
            id: "q".into(),
            full_context: vec![0, 1],
            premise_free_context: vec![1],
            choices: vec![vec![2], vec![3], vec![0]],
            gold: 1,
        };
        let base = eval_multiple_choice(&m, std::slice::from_ref(&item), 0.0, ScoreOptions::default()).unwrap();
        let pmi = eval_multiple_choice(&m, std::slice::from_ref(&item), -1.0, ScoreOptions::default()).unwrap();
        // exhaustive: base scores ln .45, ln .25, ln .2 -> choice 0
        // pmi scores ln(.45/.7), ln(.25/.1), ln(.2/.1) -> choice 1
        assert_eq!(base.items[0].prediction, 0);
        assert_eq!(pmi.items[0].prediction, 1);
        let s = &pmi.items[0].scores;
        assert!((s[1].combined - (0.25f64.ln() - 0.1f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn mc_pmi_matches_two_pass_scorer() {
        let m = ToyLm::random(9, 10, 1.5, 5);
        let items: Vec<McItem> = (0..20)
            .map(|i| McItem {
                id: i.to_string(),
                full_context: vec![i % 9, (i + 1) % 9, (i + 4) % 9, 3],
                premise_free_context: vec![3],
                choices: vec![vec![1, 2], vec![(i % 7) + 1], vec![5, 5, 6]],
                gold: (i % 3) as usize,
            })
            .collect();
        let r = eval_multiple_choice(&m, &items, -1.0, ScoreOptions::default()).unwrap();
        let mut correct = 0;
        for (res, it) in r.items.iter().zip(&items) {
            let pmi: Vec<f64> = it
                .choices
                .iter()
                .map(|c| {
                    let mut full = 0.0;
                    let mut ctx = it.full_context.clone();
                    for &t in c {
                        full += m.next_logprobs(&ctx).unwrap().get(t);
                        ctx.push(t);
                    }
                    let mut short = 0.0;
                    let mut ctx = it.premise_free_context.clone();
                    for &t in c {
                        short += m.next_logprobs(&ctx).unwrap().get(t);
                        ctx.push(t);
                    }
                    full - short
                })
                .collect();
            for (s, p) in res.scores.iter().zip(&pmi) {
                assert!((s.combined - p).abs() <= 1e-12);
            }
            let best = argmax(&pmi);
            assert_eq!(res.prediction, best);
            correct += (best == it.gold) as usize;
        }
        assert_eq!(r.correct, correct);
    }

    #[test]
    fn lama_with_k_covering_prompt_scales_full_score() {
        let m = ToyLm::random(6, 8, 1.0, 2);
        let item = LamaItem { id: "x".into(), prompt: vec![1, 2, 3], candidates: vec![vec![4], vec![5, 0]], gold: 0 };
        let alpha = -0.4;
        let r = eval_lama_style(&m, std::slice::from_ref(&item), 5, alpha, ScoreOptions::default()).unwrap();
        for s in &r.items[0].scores {
            assert!((s.combined - (1.0 + alpha) * s.full_logprob).abs() < 1e-12);
        }
    }

    #[test]
    fn lama_short_context_fixes_biased_item() {
        // relation prior after [2] favours 0; the subject in the full prompt points to 1 weakly
        let table: HashMap<Vec<TokenId>, Vec<f64>> = [
            (vec![3, 2], vec![0.5, 0.4, 0.05, 0.05]),
            (vec![2], vec![0.8, 0.1, 0.05, 0.05]),
        ]
        .into_iter()
        .collect();
        let m = TableLm { table, tok: IdTokenizer { vocab_size: 4, eot: None } };
        let item = LamaItem { id: "born-in".into(), prompt: vec![3, 2], candidates: vec![vec![0], vec![1]], gold: 1 };
        let base = eval_lama_style(&m, std::slice::from_ref(&item), 1, 0.0, ScoreOptions::default()).unwrap();
        let boosted = eval_lama_style(&m, std::slice::from_ref(&item), 1, -0.5, ScoreOptions::default()).unwrap();
        assert_eq!(base.correct, 0);
        assert_eq!(boosted.correct, 1);
    }

    #[test]
    fn grid_with_only_zero_alpha_returns_base() {
        let m = ToyLm::random(7, 6, 2.0, 3);
        let items = random_items(30, 7, 6, 2);
        let base = eval_last_token(&m, &items, 1, 0.0).unwrap();
        let g = grid_search(&m, &LastTokenTask(&items), &[1, 3, 5], &[0.0], Objective::Accuracy).unwrap();
        assert_eq!(g.best.accuracy, base.accuracy);
        assert_eq!(g.best.k, Some(1));
    }

    #[test]
    fn accuracy_table_shape() {
        let t = accuracy_table(&[AccuracyColumn {
            model: "toy".into(),
            base_accuracy: 0.4766,
            boosted_accuracy: 0.667,
            alpha: -0.6,
            k: Some(10),
        }]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("f_max") && lines[1].ends_with("47.66"));
        assert!(lines[2].starts_with("CB") && lines[2].ends_with("66.70"));
        assert!(lines[3].ends_with("-0.60"));
        assert!(lines[4].ends_with("10"));
    }

    proptest! {
        #[test]
        fn grid_best_never_below_zero_column(seed in 0u64..40) {
            let m = ToyLm::random(5, 6, 1.5, seed);
            let items = random_items(25, 5, 6, seed + 100);
            let alphas = [-1.0, -0.5, 0.0, 0.5];
            let g = grid_search(&m, &LastTokenTask(&items), &[1, 2, 4], &alphas, Objective::Accuracy).unwrap();
            let base = eval_last_token(&m, &items, 1, 0.0).unwrap().accuracy;
            prop_assert!(g.best.accuracy >= base);
        }

        #[test]
        fn evaluation_ignores_item_order(seed in 0u64..40) {
            let m = ToyLm::random(5, 6, 1.5, seed);
            let items = random_items(20, 5, 6, seed);
            let mut rev = items.clone();
            rev.reverse();
            let a = eval_last_token(&m, &items, 2, -0.5).unwrap();
            let b = eval_last_token(&m, &rev, 2, -0.5).unwrap();
            prop_assert_eq!(a.correct, b.correct);
            prop_assert!((a.mean_nll - b.mean_nll).abs() < 1e-12);
        }
    }
}
