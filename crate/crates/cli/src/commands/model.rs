use std::fmt::Write as _;
use std::sync::Arc;

use anyhow::{Context, Result};
use coboost::analysis::{boost_derivative_check, pareto_profile, BoostDerivativeReport, ParetoProfile};
use coboost::backend::{serve as serve_backend, ServerOptions};
use coboost::metrics::{delta, Document};
use coboost::tuning::{coherence_tune, sample_sequence, trace_csv, KlPoint, TuneConfig};
use coboost::{BoostSpec, Error, LanguageModel, ToyLm};
use serde::Serialize;

use super::write_text;
use crate::backend::{load_toy, open_backend, vocab_path};
use crate::manifest::{write_report, write_sidecar, RunManifest};
use crate::parse::{self, BoostArg};
use crate::{AnalyzeArgs, ServeArgs, TuneArgs};

/// Tokens sampled from each model to compare δ before and after tuning.
const DELTA_TOKENS: usize = 1000;

#[derive(Serialize)]
struct TuneOutput {
    initial_kl: f64,
    final_kl: f64,
    delta_short_len: usize,
    delta_before: f64,
    delta_after: f64,
    trace: Vec<KlPoint>,
}

fn self_delta(model: &ToyLm, seed: u64, short_len: usize) -> Result<f64> {
    let mut rng = coboost::rng::stream(seed, "delta-sample", 0);
    let text = sample_sequence(model, DELTA_TOKENS, &mut rng)?;
    Ok(delta(model, &[Document::unprompted(text)], short_len)?)
}

pub fn tune(a: &TuneArgs) -> Result<()> {
    let (k, spec) = match parse::boost(&a.boost)? {
        BoostArg::LastK { k, alpha } => (k, BoostSpec::fixed_k(k, alpha)?),
        BoostArg::Separator { .. } => {
            return Err(Error::InvalidArgument("tuning needs a k:ALPHA boost".into()).into());
        }
    };
    let model = load_toy(&a.model)?;
    let mut manifest = RunManifest::new("tune", a, Some(a.seed), None)?;
    manifest.add_input(&a.model)?;
    let cfg = TuneConfig {
        spec,
        steps: a.steps,
        batch: a.batch,
        seq_len: a.seq_len,
        learning_rate: a.lr,
        tail_positions: a.tail,
        seed: a.seed,
        eval_sequences: a.eval_sequences,
    };
    let out = coherence_tune(&model, &cfg)?;
    let delta_before = self_delta(&model, a.seed, k)?;
    let delta_after = self_delta(&out.model, a.seed, k)?;

    out.model.save(&a.out)?;
    let vocab = vocab_path(&a.model);
    if vocab.exists() {
        std::fs::copy(&vocab, vocab_path(&a.out)).with_context(|| format!("copying {}", vocab.display()))?;
    }
    write_sidecar(&a.out, &manifest)?;
    if let Some(p) = &a.trace {
        write_text(p, &trace_csv(&out.trace))?;
        write_sidecar(p, &manifest)?;
    }
    println!(
        "mean KL {:.6} -> {:.6}   δ (k={k}) {:.4} -> {:.4}",
        out.initial_kl, out.final_kl, delta_before, delta_after
    );
    if let Some(p) = &a.report {
        let body = TuneOutput {
            initial_kl: out.initial_kl,
            final_kl: out.final_kl,
            delta_short_len: k,
            delta_before,
            delta_after,
            trace: out.trace,
        };
        write_report(p, &manifest, &body)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalyzeOutput {
    derivative: BoostDerivativeReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pareto: Option<ParetoProfile>,
    table: String,
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let model = load_toy(&a.model)?;
    let text = std::fs::read_to_string(&a.heldout).with_context(|| format!("reading {}", a.heldout.display()))?;
    let heldout = model.tokenizer().encode(&text)?;
    let mut manifest = RunManifest::new("analyze", a, None, None)?;
    manifest.add_input(&a.model)?;
    manifest.add_input(&a.heldout)?;
    let derivative = boost_derivative_check(&model, &heldout, a.k, a.h)?;
    let mut table = derivative.to_table();
    let pareto = if a.pareto { Some(pareto_profile(&model, &heldout)?) } else { None };
    if let Some(p) = &pareto {
        let _ = write!(table, "\n{}", p.to_table());
    }
    print!("{table}");
    if let Some(p) = &a.report {
        write_report(p, &manifest, &AnalyzeOutput { derivative, pareto, table })?;
    }
    Ok(())
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let model: Arc<dyn LanguageModel> = Arc::from(open_backend(&a.backend)?);
    let handle = serve_backend(model, &a.addr, ServerOptions::default())?;
    println!("serving {} on {}", a.backend, handle.url());
    handle.wait();
    Ok(())
}
