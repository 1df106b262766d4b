//! Metric reports as JSON-serializable structs and aligned text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ngram::Smoothing;
use super::{DEFAULT_LONG_THRESH, DEFAULT_MAX_SPAN, DEFAULT_MIN_COPIES, DEFAULT_SHORT_LEN, DEFAULT_SHORT_THRESH};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSettings {
    pub lr_ns: Vec<usize>,
    pub long_thresh: f64,
    pub short_thresh: f64,
    pub short_len: usize,
    pub rep_min_copies: usize,
    pub rep_max_span: usize,
    pub zipf_max_rank: Option<usize>,
    pub self_bleu_smoothing: Smoothing,
    pub ppl_include_prompt: bool,
}

impl Default for MetricSettings {
    fn default() -> Self {
        MetricSettings {
            lr_ns: vec![50, 100],
            long_thresh: DEFAULT_LONG_THRESH,
            short_thresh: DEFAULT_SHORT_THRESH,
            short_len: DEFAULT_SHORT_LEN,
            rep_min_copies: DEFAULT_MIN_COPIES,
            rep_max_span: DEFAULT_MAX_SPAN,
            zipf_max_rank: None,
            self_bleu_smoothing: Smoothing::None,
            ppl_include_prompt: false,
        }
    }
}

/// Distributional and long-range coherence metrics of a generated corpus.
/// Fractions are stored in `[0, 1]`; the text table shows percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub documents: usize,
    pub tokens: usize,
    pub ppl: f64,
    pub self_bleu4: f64,
    pub zipf: f64,
    pub repetition: f64,
    pub lr: BTreeMap<usize, f64>,
    pub delta: f64,
    pub ltf: f64,
    pub settings: MetricSettings,
}

impl CoherenceReport {
    pub fn columns(&self) -> Vec<String> {
        let mut cols = vec!["ppl".to_string(), "BLEU-4".into(), "Zipf".into(), "rep %".into()];
        cols.extend(self.lr.keys().map(|n| format!("LR_{n} %")));
        cols.push("δ %".into());
        cols.push("LTF %".into());
        cols
    }

    pub fn values(&self) -> Vec<String> {
        let mut vals = vec![
            format!("{:.2}", self.ppl),
            format!("{:.2}", self.self_bleu4),
            format!("{:.2}", self.zipf),
            format!("{:.2}", 100.0 * self.repetition),
        ];
        vals.extend(self.lr.values().map(|v| format!("{:.2}", 100.0 * v)));
        vals.push(format!("{:.2}", 100.0 * self.delta));
        vals.push(format!("{:.2}", 100.0 * self.ltf));
        vals
    }

    /// One-row table headed by `label`.
    pub fn to_table(&self, label: &str) -> String {
        render_table(&self.columns(), &[(label.to_string(), self.values())])
    }
}

/// Reference-based and diversity metrics for responses scored against
/// multiple references. BLEU and Distinct values are fractions; the table
/// shows percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogReport {
    pub responses: usize,
    pub nist2: f64,
    pub nist4: f64,
    pub bleu2: f64,
    pub bleu4: f64,
    pub entropy4: f64,
    pub entropy4_bits: f64,
    pub distinct1: f64,
    pub distinct2: f64,
    pub avg_len: f64,
}

impl DialogReport {
    pub const COLUMNS: [&'static str; 9] = ["N-2", "N-4", "B-2", "B-4", "Ent-4", "Dist-1", "Dist-2", "avg len", "Ent-4 (bits)"];

    pub fn values(&self) -> Vec<String> {
        vec![
            format!("{:.2}", self.nist2),
            format!("{:.2}", self.nist4),
            format!("{:.2}", 100.0 * self.bleu2),
            format!("{:.2}", 100.0 * self.bleu4),
            format!("{:.2}", self.entropy4),
            format!("{:.2}", 100.0 * self.distinct1),
            format!("{:.2}", 100.0 * self.distinct2),
            format!("{:.2}", self.avg_len),
            format!("{:.2}", self.entropy4_bits),
        ]
    }

    pub fn to_table(&self, label: &str) -> String {
        let cols: Vec<String> = Self::COLUMNS.iter().map(|s| s.to_string()).collect();
        render_table(&cols, &[(label.to_string(), self.values())])
    }
}

/// Right-aligned columns under a left-aligned row label.
pub fn render_table(columns: &[String], rows: &[(String, Vec<String>)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(6);
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            rows.iter()
                .filter_map(|(_, v)| v.get(i).map(|s| s.chars().count()))
                .chain(std::iter::once(c.chars().count()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "");
    for (c, w) in columns.iter().zip(&widths) {
        let _ = write!(out, "  {}", pad_left(c, *w));
    }
    out.push('\n');
    for (label, vals) in rows {
        let _ = write!(out, "{:<label_w$}", label);
        for (v, w) in vals.iter().zip(&widths) {
            let _ = write!(out, "  {}", pad_left(v, *w));
        }
        out.push('\n');
    }
    out
}

// `format!` width counts chars, but be explicit for non-ASCII headers
fn pad_left(s: &str, w: usize) -> String {
    let n = s.chars().count();
    format!("{}{}", " ".repeat(w.saturating_sub(n)), s)
}
