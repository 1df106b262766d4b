use std::fmt::Write as _;

use anyhow::{Context, Result};
use coboost::tasks::copy_source::copy_source_entropy;
use coboost::tasks::items::LastTokenRecord;
use coboost::tasks::{make_copy_source_task, write_jsonl, CopySourceConfig, ItemSelection, LastTokenItem};
use coboost::tokenizer::WordVocab;
use coboost::toy_lm::{train_uniform_scalarization, TrainConfig};
use serde::Serialize;

use super::write_text;
use crate::backend::vocab_path;
use crate::manifest::{write_report, write_sidecar, RunManifest};
use crate::{MakeTaskArgs, Selection, TrainArgs};

fn word(t: u32) -> String {
    format!("t{t}")
}

fn record(item: &LastTokenItem) -> LastTokenRecord {
    LastTokenRecord {
        id: item.id.clone(),
        context: item.context.iter().map(|&t| word(t)).collect::<Vec<_>>().join(" "),
        target: word(item.target),
    }
}

#[derive(Serialize)]
struct TaskSummary {
    train_tokens: usize,
    train_copy_rate: f64,
    validation_items: usize,
    test_items: usize,
    conditional_entropy: f64,
}

pub fn make_task(a: &MakeTaskArgs) -> Result<()> {
    let cfg = CopySourceConfig {
        vocab_size: a.vocab_size,
        length: a.length,
        offset: a.offset,
        copy_prob: a.copy_prob,
        seed: a.seed,
        context_len: a.context_len,
        eval_length: a.eval_length,
        selection: match a.selection {
            Selection::CopyEvents => ItemSelection::CopyEvents,
            Selection::AllPositions => ItemSelection::AllPositions,
        },
    };
    let task = make_copy_source_task(&cfg)?;
    std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut corpus = String::with_capacity(task.train.len() * 3);
    for (i, &t) in task.train.iter().enumerate() {
        if i > 0 {
            corpus.push(' ');
        }
        let _ = write!(corpus, "t{t}");
    }
    corpus.push('\n');
    write_text(&a.out_dir.join("train.txt"), &corpus)?;
    let val: Vec<LastTokenRecord> = task.validation.iter().map(record).collect();
    let test: Vec<LastTokenRecord> = task.test.iter().map(record).collect();
    write_jsonl(&a.out_dir.join("validation.jsonl"), &val)?;
    write_jsonl(&a.out_dir.join("test.jsonl"), &test)?;
    let summary = TaskSummary {
        train_tokens: task.train.len(),
        train_copy_rate: task.train_copy_rate,
        validation_items: val.len(),
        test_items: test.len(),
        conditional_entropy: copy_source_entropy(a.vocab_size, a.copy_prob),
    };
    let manifest = RunManifest::new("make-task", a, Some(a.seed), None)?;
    write_report(&a.out_dir.join("task.json"), &manifest, &summary)?;
    println!(
        "train tokens {}  copy rate {:.4}  validation items {}  test items {}",
        summary.train_tokens, summary.train_copy_rate, summary.validation_items, summary.test_items
    );
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.corpus).with_context(|| format!("reading {}", a.corpus.display()))?;
    let vocab = match &a.vocab {
        Some(p) => WordVocab::load(p)?,
        None => WordVocab::build(&text),
    };
    let tokens = vocab.encode_corpus(&text);
    let cfg = TrainConfig {
        max_context: a.max_context,
        learning_rate: a.lr,
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
        l2: a.l2,
    };
    let out = train_uniform_scalarization(&tokens, vocab.len(), &cfg)?;
    let mut manifest = RunManifest::new("train", a, Some(a.seed), None)?;
    manifest.add_input(&a.corpus)?;
    if let Some(p) = &a.vocab {
        manifest.add_input(p)?;
    }
    out.model.save(&a.out)?;
    vocab.save(&vocab_path(&a.out))?;
    write_sidecar(&a.out, &manifest)?;
    if let Some(p) = &a.loss_trace {
        let mut csv = String::from("step,loss\n");
        for (i, l) in out.loss_trace.iter().enumerate() {
            let _ = writeln!(csv, "{i},{l}");
        }
        write_text(p, &csv)?;
        write_sidecar(p, &manifest)?;
    }
    match out.loss_trace.last() {
        Some(l) => println!("|V|={} M={} steps={} final batch loss {:.6}", vocab.len(), a.max_context, a.steps, l),
        None => println!("|V|={} M={} steps=0 (zero parameters)", vocab.len(), a.max_context),
    }
    Ok(())
}
