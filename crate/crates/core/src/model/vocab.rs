// SPDX-License-Identifier: MIT OR Apache-2.0

//! Whitespace tokenizer over a fixed vocabulary.
//!
//! Text is split on whitespace; ASCII punctuation at either end of a word is
//! split off into its own token. Words missing from the vocabulary map to
//! [`UNK`]. Every sequence starts with [`BOS`].

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<bos>";
pub const UNK: usize = 0;
pub const BOS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: BTreeMap<String, usize>,
}

/// Splits text into word pieces, peeling ASCII punctuation off word edges.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let bytes = word.as_bytes();
        let mut start = 0;
        let mut end = bytes.len();
        while start < end && bytes[start].is_ascii_punctuation() {
            out.push(&word[start..start + 1]);
            start += 1;
        }
        let mut trailing = Vec::new();
        while end > start && bytes[end - 1].is_ascii_punctuation() {
            trailing.push(&word[end - 1..end]);
            end -= 1;
        }
        if start < end {
            out.push(&word[start..end]);
        }
        out.extend(trailing.into_iter().rev());
    }
    out
}

impl Vocab {
    /// Vocabulary from an ordered token list; id = position. The two reserved
    /// tokens must occupy ids 0 and 1.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(UNK_TOKEN) || tokens.get(1).map(String::as_str) != Some(BOS_TOKEN)
        {
            return Err(Error::InvalidConfig("vocabulary must start with <unk>, <bos>".into()));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(Error::InvalidConfig(alloc::format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    /// Reserved tokens followed by the sorted, deduplicated word pieces of
    /// `texts` and any `extra` tokens.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, extra: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in texts {
            for w in split_words(text) {
                words.insert(w.to_string());
            }
        }
        for e in extra {
            words.insert(e.to_string());
        }
        words.remove(UNK_TOKEN);
        words.remove(BOS_TOKEN);
        let mut tokens = alloc::vec![UNK_TOKEN.to_string(), BOS_TOKEN.to_string()];
        tokens.extend(words);
        Self::new(tokens).expect("reserved tokens are in place")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn require(&self, token: &str) -> Result<usize> {
        self.id(token).ok_or_else(|| Error::UnknownToken(token.to_string()))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `BOS` followed by one id per word piece.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        core::iter::once(BOS)
            .chain(split_words(text).into_iter().map(|w| self.id(w).unwrap_or(UNK)))
            .collect()
    }
}
