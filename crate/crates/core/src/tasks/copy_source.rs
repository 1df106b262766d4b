//! Synthetic long-range dependency task: each token repeats the token `d`
//! positions back with probability `q`, otherwise it is drawn uniformly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::items::LastTokenItem;
use crate::dist::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemSelection {
    /// Positions where a copy event occurred.
    CopyEvents,
    /// Every position with a full context window.
    AllPositions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopySourceConfig {
    pub vocab_size: usize,
    /// Training stream length.
    pub length: usize,
    pub offset: usize,
    pub copy_prob: f64,
    pub seed: u64,
    /// Tokens of context in each evaluation item.
    pub context_len: usize,
    /// Length of each of the validation and test streams.
    pub eval_length: usize,
    pub selection: ItemSelection,
}

impl Default for CopySourceConfig {
    fn default() -> Self {
        CopySourceConfig {
            vocab_size: 8,
            length: 200_000,
            offset: 10,
            copy_prob: 0.7,
            seed: 1,
            context_len: 12,
            eval_length: 20_000,
            selection: ItemSelection::CopyEvents,
        }
    }
}

impl CopySourceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocab_size must be >= 2"));
        }
        if self.offset == 0 {
            return Err(Error::invalid("copy offset must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.copy_prob) {
            return Err(Error::invalid("copy probability must be in [0, 1]"));
        }
        if self.context_len < self.offset + 2 {
            return Err(Error::invalid(format!(
                "context_len {} must be at least offset + 2 = {}",
                self.context_len,
                self.offset + 2
            )));
        }
        Ok(())
    }
}

/// A generated stream and, per position, whether it was a copy event.
#[derive(Clone, Debug, PartialEq)]
pub struct CopyStream {
    pub tokens: TokenSeq,
    pub copied: Vec<bool>,
}

pub fn copy_source_stream(cfg: &CopySourceConfig, length: usize, split: &str) -> CopyStream {
    let mut rng = rng::stream(cfg.seed, &format!("copy-source/{split}"), 0);
    let mut tokens = Vec::with_capacity(length);
    let mut copied = Vec::with_capacity(length);
    for t in 0..length {
        // the copy draw is made at every position so streams of different
        // lengths share a prefix
        let u: f64 = rng.random();
        let fresh = rng.random_range(0..cfg.vocab_size) as TokenId;
        if t >= cfg.offset && u < cfg.copy_prob {
            tokens.push(tokens[t - cfg.offset]);
            copied.push(true);
        } else {
            tokens.push(fresh);
            copied.push(false);
        }
    }
    CopyStream { tokens, copied }
}

/// Last-token items over one stream, each with exactly `context_len` tokens of context.
pub fn stream_items(stream: &CopyStream, context_len: usize, selection: ItemSelection, split: &str) -> Vec<LastTokenItem> {
    (context_len..stream.tokens.len())
        .filter(|&t| selection == ItemSelection::AllPositions || stream.copied[t])
        .map(|t| LastTokenItem {
            id: format!("{split}-{t}"),
            context: stream.tokens[t - context_len..t].to_vec(),
            target: stream.tokens[t],
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CopySourceTask {
    pub train: TokenSeq,
    pub train_copy_rate: f64,
    pub validation: Vec<LastTokenItem>,
    pub test: Vec<LastTokenItem>,
}

/// Training stream plus validation and test items from independent streams.
pub fn make_copy_source_task(cfg: &CopySourceConfig) -> Result<CopySourceTask> {
    cfg.validate()?;
    let train = copy_source_stream(cfg, cfg.length, "train");
    let eligible = cfg.length.saturating_sub(cfg.offset);
    let copies = train.copied.iter().filter(|&&c| c).count();
    let rate = if eligible == 0 { 0.0 } else { copies as f64 / eligible as f64 };
    let val = copy_source_stream(cfg, cfg.eval_length, "validation");
    let test = copy_source_stream(cfg, cfg.eval_length, "test");
    Ok(CopySourceTask {
        train: train.tokens,
        train_copy_rate: rate,
        validation: stream_items(&val, cfg.context_len, cfg.selection, "validation"),
        test: stream_items(&test, cfg.context_len, cfg.selection, "test"),
    })
}

/// Conditional entropy (nats) of a token given the token `offset` back.
pub fn copy_source_entropy(vocab_size: usize, copy_prob: f64) -> f64 {
    let v = vocab_size as f64;
    let hit = copy_prob + (1.0 - copy_prob) / v;
    let miss = (1.0 - copy_prob) / v;
    let term = |p: f64| if p > 0.0 { -p * p.ln() } else { 0.0 };
    term(hit) + (v - 1.0) * term(miss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_copy_targets_repeat_offset() {
        let cfg = CopySourceConfig { copy_prob: 1.0, length: 500, eval_length: 300, ..Default::default() };
        let task = make_copy_source_task(&cfg).unwrap();
        assert!(!task.test.is_empty());
        for it in &task.test {
            assert_eq!(it.target, it.context[it.context.len() - cfg.offset]);
            assert_eq!(it.context.len(), 12);
        }
    }

    #[test]
    fn copy_rate_matches_probability() {
        let cfg = CopySourceConfig::default();
        let task = make_copy_source_task(&cfg).unwrap();
        assert_eq!(task.train.len(), 200_000);
        assert!((task.train_copy_rate - 0.7).abs() < 0.01, "{}", task.train_copy_rate);
        assert!(task.train.iter().all(|&t| t < 8));
    }

    #[test]
    fn no_copy_selection() {
        let cfg = CopySourceConfig { copy_prob: 0.0, eval_length: 1000, length: 1000, ..Default::default() };
        let task = make_copy_source_task(&cfg).unwrap();
        assert!(task.test.is_empty());
        let all = CopySourceConfig { selection: ItemSelection::AllPositions, ..cfg };
        assert_eq!(make_copy_source_task(&all).unwrap().test.len(), 1000 - 12);
    }

    #[test]
    fn entropy_closed_form() {
        // 0.7375 and seven times 0.0375
        let h = copy_source_entropy(8, 0.7);
        let expect = -0.7375f64 * 0.7375f64.ln() - 7.0 * 0.0375 * 0.0375f64.ln();
        assert!((h - expect).abs() < 1e-15);
        assert!((h - 1.0864570440180348).abs() < 1e-12);
        assert!((copy_source_entropy(8, 0.0) - 8f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_context() {
        let cfg = CopySourceConfig { context_len: 11, ..Default::default() };
        assert!(make_copy_source_task(&cfg).is_err());
    }
}
