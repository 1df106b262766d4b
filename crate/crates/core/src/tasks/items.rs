//! Task items and their JSONL files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dist::{TokenId, TokenSeq};
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

/// Predict `target` after `context`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LastTokenItem {
    pub id: String,
    pub context: TokenSeq,
    pub target: TokenId,
}

/// A multiple-choice item after tokenization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McItem {
    pub id: String,
    pub full_context: TokenSeq,
    pub premise_free_context: TokenSeq,
    pub choices: Vec<TokenSeq>,
    pub gold: usize,
}

/// A cloze prompt ranked over an explicit candidate set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LamaItem {
    pub id: String,
    pub prompt: TokenSeq,
    pub candidates: Vec<TokenSeq>,
    pub gold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarizeItem {
    pub id: String,
    pub article: TokenSeq,
    pub reference: String,
}

// Raw JSONL records as stored on disk (text fields).

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LastTokenRecord {
    pub id: String,
    pub context: String,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McRecord {
    pub id: String,
    pub full_context: String,
    pub premise_free_context: String,
    pub choices: Vec<String>,
    pub gold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LamaRecord {
    pub id: String,
    pub prompt: String,
    pub candidates: Vec<String>,
    pub gold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummarizeRecord {
    pub id: String,
    pub article: String,
    pub reference: String,
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn item_error(id: &str, msg: impl std::fmt::Display) -> Error {
    Error::invalid(format!("item {id}: {msg}"))
}

impl LastTokenRecord {
    pub fn tokenize(&self, tok: &dyn Tokenizer) -> Result<LastTokenItem> {
        let context = tok.encode(&self.context)?;
        if context.is_empty() {
            return Err(item_error(&self.id, "empty context"));
        }
        let target = tok.encode(&self.target)?;
        if target.len() != 1 {
            return Err(item_error(&self.id, format!("target must be one token, got {}", target.len())));
        }
        Ok(LastTokenItem { id: self.id.clone(), context, target: target[0] })
    }

    pub fn from_item(item: &LastTokenItem, tok: &dyn Tokenizer) -> Self {
        LastTokenRecord { id: item.id.clone(), context: tok.decode(&item.context), target: tok.decode(&[item.target]) }
    }
}

fn check_choices(id: &str, n: usize, gold: usize) -> Result<()> {
    if n < 2 {
        return Err(item_error(id, "needs at least two choices"));
    }
    if gold >= n {
        return Err(item_error(id, format!("gold index {gold} out of range for {n} choices")));
    }
    Ok(())
}

fn encode_all(id: &str, texts: &[String], tok: &dyn Tokenizer) -> Result<Vec<TokenSeq>> {
    texts
        .iter()
        .map(|t| {
            let s = tok.encode(t)?;
            if s.is_empty() {
                return Err(item_error(id, "empty answer"));
            }
            Ok(s)
        })
        .collect()
}

impl McRecord {
    pub fn tokenize(&self, tok: &dyn Tokenizer) -> Result<McItem> {
        check_choices(&self.id, self.choices.len(), self.gold)?;
        let full_context = tok.encode(&self.full_context)?;
        let premise_free_context = tok.encode(&self.premise_free_context)?;
        if full_context.is_empty() {
            return Err(item_error(&self.id, "empty full context"));
        }
        if !full_context.ends_with(&premise_free_context) {
            log::warn!("item {}: premise-free context is not a token suffix of the full context", self.id);
        }
        Ok(McItem {
            id: self.id.clone(),
            full_context,
            premise_free_context,
            choices: encode_all(&self.id, &self.choices, tok)?,
            gold: self.gold,
        })
    }
}

impl LamaRecord {
    pub fn tokenize(&self, tok: &dyn Tokenizer) -> Result<LamaItem> {
        check_choices(&self.id, self.candidates.len(), self.gold)?;
        let prompt = tok.encode(&self.prompt)?;
        if prompt.is_empty() {
            return Err(item_error(&self.id, "empty prompt"));
        }
        Ok(LamaItem { id: self.id.clone(), prompt, candidates: encode_all(&self.id, &self.candidates, tok)?, gold: self.gold })
    }
}

impl SummarizeRecord {
    pub fn tokenize(&self, tok: &dyn Tokenizer) -> Result<SummarizeItem> {
        let article = tok.encode(&self.article)?;
        if article.is_empty() {
            return Err(item_error(&self.id, "empty article"));
        }
        Ok(SummarizeItem { id: self.id.clone(), article, reference: self.reference.clone() })
    }
}

/// Prompt layouts whose final segment is the premise-free context.
///
/// `render` returns `(full_context, premise_free_context)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptTemplate {
    /// `[context]`, premise-free context is empty (the end-of-text fallback applies).
    Plain,
    /// `[question] the answer is:`
    AnswerIs,
    /// `Question: [question] Answer:`
    QuestionAnswer,
    /// `[premise] because|so`
    Connective,
    /// `[context] This quote has a tone that is:`
    Tone,
    /// `[passage]\n Question: [hypothesis] True or False? Answer:`
    TrueFalse,
}

impl PromptTemplate {
    pub fn render(&self, main: &str, extra: &str) -> (String, String) {
        let (body, short) = match self {
            PromptTemplate::Plain => (main.to_string(), String::new()),
            PromptTemplate::AnswerIs => (main.to_string(), "the answer is:".to_string()),
            PromptTemplate::QuestionAnswer => (format!("Question: {main}"), "Answer:".to_string()),
            PromptTemplate::Connective => (main.to_string(), extra.to_string()),
            PromptTemplate::Tone => (main.to_string(), "This quote has a tone that is:".to_string()),
            PromptTemplate::TrueFalse => {
                (format!("{main}\n Question: {extra}"), "True or False? Answer:".to_string())
            }
        };
        if short.is_empty() {
            (body, short)
        } else {
            (format!("{body} {short}"), short)
        }
    }
}
