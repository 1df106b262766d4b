//! Tokenizers owned by backends.

use std::collections::HashMap;
use std::path::Path;

use crate::dist::{TokenId, TokenSeq};
use crate::error::{Error, Result};

pub const UNK: &str = "<unk>";
pub const EOT: &str = "<eot>";

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<TokenSeq>;
    fn decode(&self, tokens: &[TokenId]) -> String;
    /// End-of-text token, when the vocabulary has one.
    fn eot(&self) -> Option<TokenId>;
}

/// Whitespace tokenizer over a corpus-derived vocabulary.
///
/// Id 0 is `<unk>` and id 1 is `<eot>`; remaining ids follow first
/// appearance in the building corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl WordVocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = WordVocab { words: Vec::new(), index: HashMap::new() };
        vocab.insert(UNK);
        vocab.insert(EOT);
        for w in words {
            vocab.insert(w.as_ref());
        }
        vocab
    }

    /// Builds the vocabulary from raw corpus text.
    pub fn build(text: &str) -> Self {
        Self::from_words(text.split_whitespace())
    }

    fn insert(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            self.index.insert(word.to_string(), self.words.len() as TokenId);
            self.words.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn unk(&self) -> TokenId {
        0
    }

    /// Encodes a corpus in which blank lines separate documents; an `<eot>`
    /// token closes every document.
    pub fn encode_corpus(&self, text: &str) -> TokenSeq {
        let eot = self.index[EOT];
        let mut out = Vec::new();
        let mut in_doc = false;
        for line in text.lines() {
            if line.trim().is_empty() {
                if in_doc {
                    out.push(eot);
                    in_doc = false;
                }
                continue;
            }
            for w in line.split_whitespace() {
                out.push(self.id(w).unwrap_or(0));
                in_doc = w != EOT;
            }
        }
        if in_doc {
            out.push(eot);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.words.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let words: Vec<&str> = text.lines().collect();
        if words.len() < 2 || words[0] != UNK || words[1] != EOT {
            return Err(Error::Format(format!(
                "{}: vocabulary must start with {UNK} and {EOT}",
                path.display()
            )));
        }
        Ok(Self::from_words(&words[2..]))
    }
}

impl Tokenizer for WordVocab {
    fn encode(&self, text: &str) -> Result<TokenSeq> {
        Ok(text.split_whitespace().map(|w| self.id(w).unwrap_or(0)).collect())
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn eot(&self) -> Option<TokenId> {
        Some(1)
    }
}

/// Text is a whitespace-separated list of integer token ids.
///
/// Used when a backend has no vocabulary of its own, e.g. a remote server
/// that is fed pre-tokenized data.
#[derive(Clone, Debug)]
pub struct IdTokenizer {
    pub vocab_size: usize,
    pub eot: Option<TokenId>,
}

impl Tokenizer for IdTokenizer {
    fn encode(&self, text: &str) -> Result<TokenSeq> {
        text.split_whitespace()
            .map(|w| {
                let id: TokenId = w
                    .parse()
                    .map_err(|_| Error::invalid(format!("expected an integer token id, got {w:?}")))?;
                if id as usize >= self.vocab_size {
                    return Err(Error::TokenOutOfRange { token: id, vocab_size: self.vocab_size });
                }
                Ok(id)
            })
            .collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
    }

    fn eot(&self) -> Option<TokenId> {
        self.eot
    }
}
