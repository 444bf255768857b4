//! Word tokenization and the caption vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};

pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";
pub const UNK: &str = "<UNK>";
/// Placeholder for character names, lowercased like every other token.
pub const SOMEONE: &str = "someone";

pub const BOS_ID: usize = 0;
pub const EOS_ID: usize = 1;
pub const UNK_ID: usize = 2;

fn splitter() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\w+|[^\w\s]+").expect("static regex"))
}

/// Word-punct split, punctuation dropped, lowercased.
pub fn tokenize(text: &str) -> Vec<String> {
    splitter()
        .find_iter(text)
        .map(|m| m.as_str())
        .filter(|t| t.chars().any(|c| c.is_alphanumeric() || c == '_'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens first, then every distinct word in sorted order.
    pub fn build<S: AsRef<str>>(corpus: &[S]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Config("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut words: BTreeSet<String> = corpus.iter().flat_map(|c| tokenize(c.as_ref())).collect();
        words.insert(SOMEONE.to_string());
        let tokens = [BOS, EOS, UNK].into_iter().map(String::from).chain(words).collect();
        Self::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[BOS_ID] != BOS || tokens[EOS_ID] != EOS || tokens[UNK_ID] != UNK {
            return Err(Error::Format { offset: 0, message: "vocabulary must start with <BOS>, <EOS>, <UNK>".into() });
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format { offset: 0, message: format!("duplicate vocabulary token {t:?}") });
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.tokens[i].clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tokens).expect("strings serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tokens: Vec<String> =
            serde_json::from_str(text).map_err(|e| Error::Format { offset: 0, message: format!("vocabulary: {e}") })?;
        Self::from_tokens(tokens)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("SOMEONE walks away."), ["someone", "walks", "away"]);
        assert_eq!(tokenize("don't stop"), ["don", "t", "stop"]);
        assert_eq!(tokenize("  ...!? "), Vec::<String>::new());
        let once = tokenize("He said: \"Run, 2 times!\"");
        assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn vocab_counts() {
        let v = Vocabulary::build(&["SOMEONE opens the door.", "someone opens a box"]).unwrap();
        // distinct: a box door opens someone the
        assert_eq!(v.len(), 6 + 3);
        assert_eq!(v.token(BOS_ID), BOS);
        assert_eq!(v.id("zebra"), UNK_ID);
        assert_eq!(v.decode(&v.encode("the box")), ["the", "box"]);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::build::<&str>(&[]).is_err());
        let no_someone = Vocabulary::build(&["a cat"]).unwrap();
        assert_eq!(no_someone.len(), 2 + 3 + 1);
    }
}
