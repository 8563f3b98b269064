use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Sentence;
use crate::formulate::{CLOSE, DEFAULT_MASK, OPEN, PIPE, SPAN_LITERAL, TYPE_LITERAL};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

/// Word-level vocabulary. Ids `0..specials` are reserved markup and control
/// tokens; the rest are corpus words in sorted order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRecord", into = "VocabRecord")]
pub struct Vocab {
    tokens: Vec<String>,
    mask_token: String,
    specials: usize,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabRecord {
    tokens: Vec<String>,
    mask_token: String,
    specials: usize,
}

impl From<VocabRecord> for Vocab {
    fn from(r: VocabRecord) -> Self {
        Vocab::from_parts(r.tokens, r.mask_token, r.specials)
    }
}

impl From<Vocab> for VocabRecord {
    fn from(v: Vocab) -> Self {
        VocabRecord { tokens: v.tokens, mask_token: v.mask_token, specials: v.specials }
    }
}

impl Vocab {
    fn special_tokens(mask_token: &str) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in [PAD, UNK, mask_token, OPEN, CLOSE, PIPE, SPAN_LITERAL, TYPE_LITERAL] {
            if !out.iter().any(|o| o == t) {
                out.push(t.to_string());
            }
        }
        out
    }

    pub fn from_parts(tokens: Vec<String>, mask_token: String, specials: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, mask_token, specials, index }
    }

    /// Specials plus every distinct word of `sentences`.
    pub fn build<'a, I>(sentences: I, mask_token: &str) -> Self
    where
        I: IntoIterator<Item = &'a Sentence>,
    {
        let mut tokens = Self::special_tokens(mask_token);
        let specials = tokens.len();
        let words: BTreeSet<&str> = sentences.into_iter().flat_map(|s| s.tokens().iter().map(|t| t.as_str())).collect();
        let rest: Vec<String> =
            words.into_iter().filter(|w| !tokens.iter().any(|s| s == w)).map(str::to_string).collect();
        tokens.extend(rest);
        Self::from_parts(tokens, mask_token.to_string(), specials)
    }

    pub fn default_mask() -> &'static str {
        DEFAULT_MASK
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> usize {
        self.specials
    }

    pub fn mask_token(&self) -> &str {
        &self.mask_token
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.get(token).unwrap_or_else(|| self.unk_id())
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK]
    }

    pub fn mask_id(&self) -> Option<u32> {
        self.get(&self.mask_token)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Swaps two entries; used to check that scoring is invariant under
    /// consistent relabelling of ids.
    pub fn swapped(&self, a: u32, b: u32) -> Self {
        let mut tokens = self.tokens.clone();
        tokens.swap(a as usize, b as usize);
        Self::from_parts(tokens, self.mask_token.clone(), self.specials)
    }
}
