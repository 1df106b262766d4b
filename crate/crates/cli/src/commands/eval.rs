use std::path::Path;

use anyhow::Result;
use coboost::boosting::{grid_search, GridPoint, Objective, ScoreOptions};
use coboost::tasks::items::{LamaRecord, LastTokenRecord, McRecord, SummarizeRecord};
use coboost::tasks::{
    accuracy_table, eval_lama_style, eval_last_token, eval_multiple_choice, rouge_table, summarize_eval,
    AccuracyColumn, EvalResult, LamaItem, LamaTask, LastTokenItem, LastTokenTask, McItem, McTask, RougeRow,
    SummarizeConfig, SummarizeItem, TaskKind,
};
use coboost::decode::GenConfig;
use coboost::{Error, LanguageModel};
use serde::Serialize;

use super::read_records;
use crate::backend::open_backend;
use crate::manifest::{write_report, RunManifest};
use crate::parse;
use crate::{EvalArgs, ObjectiveArg, SweepArgs, TaskArg};

fn last_token_items(path: &Path, model: &dyn LanguageModel) -> Result<Vec<LastTokenItem>> {
    let recs: Vec<LastTokenRecord> = read_records(path)?;
    Ok(recs.iter().map(|r| r.tokenize(model.tokenizer())).collect::<coboost::Result<_>>()?)
}

fn mc_items(path: &Path, model: &dyn LanguageModel) -> Result<Vec<McItem>> {
    let recs: Vec<McRecord> = read_records(path)?;
    Ok(recs.iter().map(|r| r.tokenize(model.tokenizer())).collect::<coboost::Result<_>>()?)
}

fn lama_items(path: &Path, model: &dyn LanguageModel) -> Result<Vec<LamaItem>> {
    let recs: Vec<LamaRecord> = read_records(path)?;
    Ok(recs.iter().map(|r| r.tokenize(model.tokenizer())).collect::<coboost::Result<_>>()?)
}

fn summarize_items(path: &Path, model: &dyn LanguageModel) -> Result<Vec<SummarizeItem>> {
    let recs: Vec<SummarizeRecord> = read_records(path)?;
    Ok(recs.iter().map(|r| r.tokenize(model.tokenizer())).collect::<coboost::Result<_>>()?)
}

fn require_k(task: TaskArg, k: Option<usize>) -> Result<usize> {
    let name = match task {
        TaskArg::Lasttoken => "lasttoken",
        TaskArg::Mc => "mc",
        TaskArg::Lama => "lama",
        TaskArg::Summarize => "summarize",
    };
    k.ok_or_else(|| Error::InvalidArgument(format!("--k is required for the {name} task")).into())
}

/// Items of one choice-free or choice task, loaded once.
enum Loaded {
    LastToken(Vec<LastTokenItem>),
    Mc(Vec<McItem>),
    Lama(Vec<LamaItem>),
}

impl Loaded {
    fn load(task: TaskArg, path: &Path, model: &dyn LanguageModel) -> Result<Self> {
        Ok(match task {
            TaskArg::Lasttoken => Loaded::LastToken(last_token_items(path, model)?),
            TaskArg::Mc => Loaded::Mc(mc_items(path, model)?),
            TaskArg::Lama => Loaded::Lama(lama_items(path, model)?),
            TaskArg::Summarize => {
                return Err(Error::InvalidArgument("summarize has no accuracy; use eval --task summarize".into()).into())
            }
        })
    }

    fn eval(&self, model: &dyn LanguageModel, k: Option<usize>, alpha: f64, opts: ScoreOptions) -> Result<EvalResult> {
        Ok(match self {
            Loaded::LastToken(items) => eval_last_token(model, items, require_k(TaskArg::Lasttoken, k)?, alpha)?,
            Loaded::Mc(items) => eval_multiple_choice(model, items, alpha, opts)?,
            Loaded::Lama(items) => eval_lama_style(model, items, require_k(TaskArg::Lama, k)?, alpha, opts)?,
        })
    }
}

#[derive(Serialize)]
struct EvalOutput {
    task: TaskKind,
    k: Option<usize>,
    alpha: f64,
    base_accuracy: f64,
    accuracy: f64,
    correct: usize,
    total: usize,
    mean_nll: f64,
    table: String,
    items: Vec<coboost::tasks::ItemResult>,
}

#[derive(Serialize)]
struct SummarizeOutput {
    rows: Vec<RougeRow>,
    table: String,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let model = open_backend(&a.backend)?;
    let mut manifest = RunManifest::new("eval", a, Some(a.seed), Some(&a.backend))?;
    manifest.add_backend_inputs(&a.backend)?;
    manifest.add_input(&a.data)?;
    let opts = ScoreOptions { length_normalize: a.length_normalize };

    if a.task == TaskArg::Summarize {
        let items = summarize_items(&a.data, model.as_ref())?;
        let cfg = SummarizeConfig {
            separator: a.separator.clone(),
            sentences: a.sentences,
            generation: GenConfig { max_new_tokens: a.max_new_tokens, seed: a.seed, ..Default::default() },
        };
        let mut rows = vec![summarize_eval(model.as_ref(), &items, 0.0, &cfg)?];
        if a.alpha != 0.0 {
            rows.push(summarize_eval(model.as_ref(), &items, a.alpha, &cfg)?);
        }
        let table = rouge_table(&rows);
        print!("{table}");
        return write_report(&a.report, &manifest, &SummarizeOutput { rows, table });
    }

    if a.task == TaskArg::Mc && a.k.is_some() {
        log::warn!("--k is ignored for multiple-choice items");
    }
    let k = if a.task == TaskArg::Mc { None } else { Some(require_k(a.task, a.k)?) };
    let loaded = Loaded::load(a.task, &a.data, model.as_ref())?;
    let boosted = loaded.eval(model.as_ref(), k, a.alpha, opts)?;
    let base_accuracy = if a.alpha == 0.0 { boosted.accuracy } else { loaded.eval(model.as_ref(), k, 0.0, opts)?.accuracy };
    let table = accuracy_table(&[AccuracyColumn {
        model: model.info().name,
        base_accuracy,
        boosted_accuracy: boosted.accuracy,
        alpha: a.alpha,
        k,
    }]);
    print!("{table}");
    let out = EvalOutput {
        task: boosted.task,
        k,
        alpha: a.alpha,
        base_accuracy,
        accuracy: boosted.accuracy,
        correct: boosted.correct,
        total: boosted.total,
        mean_nll: boosted.mean_nll,
        table,
        items: boosted.items,
    };
    write_report(&a.report, &manifest, &out)
}

#[derive(Serialize)]
struct SweepOutput {
    task: TaskArg,
    objective: Objective,
    k_star: Option<usize>,
    alpha_star: f64,
    validation_best: GridPoint,
    test_base_accuracy: f64,
    test_accuracy: f64,
    test_mean_nll: f64,
    table: String,
    grid: Vec<GridPoint>,
}

pub fn sweep(a: &SweepArgs) -> Result<()> {
    let alphas = parse::alpha_grid(&a.alpha_grid)?;
    let ks = parse::k_grid(&a.k_grid)?;
    let objective = match a.objective {
        ObjectiveArg::Accuracy => Objective::Accuracy,
        ObjectiveArg::Nll => Objective::Nll,
    };
    let opts = ScoreOptions { length_normalize: a.length_normalize };
    let model = open_backend(&a.backend)?;
    let mut manifest = RunManifest::new("sweep", a, None, Some(&a.backend))?;
    manifest.add_backend_inputs(&a.backend)?;
    manifest.add_input(&a.val)?;
    manifest.add_input(&a.test)?;

    let val = Loaded::load(a.task, &a.val, model.as_ref())?;
    let grid = match &val {
        Loaded::LastToken(items) => grid_search(model.as_ref(), &LastTokenTask(items), &ks, &alphas, objective)?,
        Loaded::Mc(items) => grid_search(model.as_ref(), &McTask(items, opts), &ks, &alphas, objective)?,
        Loaded::Lama(items) => grid_search(model.as_ref(), &LamaTask(items, opts), &ks, &alphas, objective)?,
    };
    drop(val);
    let test = Loaded::load(a.task, &a.test, model.as_ref())?;
    let best = grid.best.clone();
    let k_eval = best.k.or(Some(ks[0]));
    let boosted = test.eval(model.as_ref(), k_eval, best.alpha, opts)?;
    let base = test.eval(model.as_ref(), k_eval, 0.0, opts)?;
    let table = accuracy_table(&[AccuracyColumn {
        model: model.info().name,
        base_accuracy: base.accuracy,
        boosted_accuracy: boosted.accuracy,
        alpha: best.alpha,
        k: best.k,
    }]);
    print!("{table}");
    let out = SweepOutput {
        task: a.task,
        objective,
        k_star: best.k,
        alpha_star: best.alpha,
        validation_best: best,
        test_base_accuracy: base.accuracy,
        test_accuracy: boosted.accuracy,
        test_mean_nll: boosted.mean_nll,
        table,
        grid: grid.points,
    };
    write_report(&a.report, &manifest, &out)
}
