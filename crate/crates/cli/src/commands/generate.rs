use std::collections::HashMap;

use anyhow::Result;
use coboost::backend::truncated_context;
use coboost::decode::{generate_dialog_with_rng, generate_with_rng, GenConfig, Generation, GenerationRecord, Strategy};
use coboost::metrics::{coherence_report, dialog_report, CoherenceReport, DialogReport, Document, MetricSettings};
use coboost::tasks::write_jsonl;
use coboost::{BoostSpec, Error, TokenSeq};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::read_records;
use crate::backend::open_backend;
use crate::manifest::{write_report, write_sidecar, RunManifest};
use crate::parse::{self, BoostArg};
use crate::{GenerateArgs, MetricsArgs, ModeArg};

#[derive(Deserialize)]
struct PromptRecord {
    id: String,
    prompt: String,
}

#[derive(Deserialize)]
struct ReferenceRecord {
    id: String,
    references: Vec<String>,
}

fn strategy(a: &GenerateArgs) -> Strategy {
    match a.mode {
        ModeArg::Greedy => Strategy::Greedy,
        ModeArg::Sample => Strategy::Sample { temperature: a.temp, top_p: None, top_k: a.top_k },
        ModeArg::Topp => Strategy::Sample { temperature: a.temp, top_p: Some(a.p), top_k: a.top_k },
        ModeArg::Beam => Strategy::Beam { width: a.beam },
    }
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let model = open_backend(&a.backend)?;
    let tok = model.tokenizer();
    let info = model.info();
    let mut manifest = RunManifest::new("generate", a, Some(a.seed), Some(&a.backend))?;
    manifest.add_backend_inputs(&a.backend)?;
    manifest.add_input(&a.prompts)?;

    let mut stop_tokens = Vec::new();
    for s in &a.stop {
        let ids = tok.encode(s)?;
        if ids.len() != 1 {
            return Err(Error::InvalidArgument(format!("stop token {s:?} is {} tokens, expected 1", ids.len())).into());
        }
        stop_tokens.push(ids[0]);
    }
    if let Some(eot) = tok.eot() {
        if !stop_tokens.contains(&eot) {
            stop_tokens.push(eot);
        }
    }
    let boost = a.boost.as_deref().map(parse::boost).transpose()?;
    let mut cfg = GenConfig {
        max_new_tokens: a.max_new_tokens,
        strategy: strategy(a),
        stop_tokens,
        seed: a.seed,
        boost: None,
    };
    if let Some(BoostArg::LastK { k, alpha }) = boost {
        cfg.boost = Some(BoostSpec::fixed_k(k, alpha)?);
    }
    let sep = tok.encode(&a.separator)?;

    let records: Vec<PromptRecord> = read_records(&a.prompts)?;
    let prompts = records
        .iter()
        .map(|r| {
            let p = tok.encode(&r.prompt)?;
            if p.len() > info.max_context && !matches!(boost, Some(BoostArg::Separator { .. })) {
                log::warn!("prompt {} has {} tokens; keeping the last {}", r.id, p.len(), info.max_context);
                return Ok(truncated_context(&p, info.max_context).to_vec());
            }
            Ok(p)
        })
        .collect::<coboost::Result<Vec<TokenSeq>>>()?;

    let gens: Vec<Generation> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = coboost::rng::stream(cfg.seed, "generate", i as u64);
            match boost {
                Some(BoostArg::Separator { alpha }) => generate_dialog_with_rng(model.as_ref(), p, &sep, alpha, &cfg, &mut rng),
                _ => generate_with_rng(model.as_ref(), p, &cfg, &mut rng),
            }
        })
        .collect::<coboost::Result<_>>()?;

    let out: Vec<GenerationRecord> = records
        .iter()
        .zip(prompts)
        .zip(gens)
        .map(|((r, p), g)| {
            if let Some(e) = &g.error {
                log::warn!("prompt {}: generation stopped early: {e}", r.id);
            }
            GenerationRecord {
                id: r.id.clone(),
                text: tok.decode(&g.tokens),
                prompt_tokens: p,
                output_tokens: g.tokens,
                config_hash: manifest.config_hash.clone(),
                error: g.error,
            }
        })
        .collect();
    write_jsonl(&a.out, &out)?;
    write_sidecar(&a.out, &manifest)?;
    let failed = out.iter().filter(|r| r.error.is_some()).count();
    println!("{} generations written ({} stopped by backend errors)", out.len(), failed);
    if failed > 0 {
        return Err(Error::Backend(format!("{failed} generations stopped by backend errors")).into());
    }
    Ok(())
}

#[derive(Serialize)]
struct CoherenceOutput {
    report: CoherenceReport,
    table: String,
}

#[derive(Serialize)]
struct DialogOutput {
    report: DialogReport,
    table: String,
}

pub fn metrics(a: &MetricsArgs) -> Result<()> {
    let model = open_backend(&a.backend)?;
    let gens: Vec<GenerationRecord> = read_records(&a.generations)?;
    let mut manifest = RunManifest::new("metrics", a, None, Some(&a.backend))?;
    manifest.add_backend_inputs(&a.backend)?;
    manifest.add_input(&a.generations)?;
    let label = a.label.clone().unwrap_or_else(|| "generated".to_string());

    if let Some(ref_path) = &a.references {
        manifest.add_input(ref_path)?;
        let refs: Vec<ReferenceRecord> = read_records(ref_path)?;
        let tok = model.tokenizer();
        let mut by_id: HashMap<&str, Vec<TokenSeq>> = HashMap::new();
        for r in &refs {
            let toks = r.references.iter().map(|t| tok.encode(t)).collect::<coboost::Result<Vec<_>>>()?;
            by_id.insert(r.id.as_str(), toks);
        }
        let mut responses = Vec::with_capacity(gens.len());
        let mut references = Vec::with_capacity(gens.len());
        for g in &gens {
            let r = by_id
                .get(g.id.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("no references for generation {}", g.id)))?;
            responses.push(g.output_tokens.as_slice());
            references.push(r.iter().map(Vec::as_slice).collect::<Vec<_>>());
        }
        let report = dialog_report(&responses, &references)?;
        let table = report.to_table(&label);
        print!("{table}");
        if let Some(p) = &a.report {
            write_report(p, &manifest, &DialogOutput { report, table })?;
        }
        return Ok(());
    }

    let docs: Vec<Document> = gens.iter().map(|g| Document::new(g.prompt_tokens.clone(), g.output_tokens.clone())).collect();
    let settings = MetricSettings {
        lr_ns: a.lr_n.clone(),
        long_thresh: a.long_thresh,
        short_thresh: a.short_thresh,
        short_len: a.short_len,
        ppl_include_prompt: a.include_prompt,
        ..Default::default()
    };
    let report = coherence_report(model.as_ref(), &docs, &settings)?;
    let table = report.to_table(&label);
    print!("{table}");
    if let Some(p) = &a.report {
        write_report(p, &manifest, &CoherenceOutput { report, table })?;
    }
    Ok(())
}
