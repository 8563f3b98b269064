//! Template-generated NER corpora.
//!
//! Every type owns a lexicon of pseudo-words and a set of cue words that
//! tend to precede or follow its mentions. A shared pool of ambiguous words
//! appears inside mentions of every type and as plain filler, so neither
//! types nor span boundaries can be read off single tokens. Lexicons depend
//! only on the number of types; the seed drives sentence generation.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Sentence, Split, Token, TypeInventory, TypedSpan};
use crate::rng::{stream_rng, tag};

pub const MIN_TYPES: usize = 2;
pub const MIN_SENTENCES: usize = 100;

const BASE_NAMES: &[&str] = &["PER", "LOC", "ORG", "MISC", "DATE", "PROD", "EVENT", "WORK"];
const LEXICON_SEED: u64 = 0x5EED_1E81;
const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "l", "x"];
const RESERVED: &[&str] = &["span", "type"];

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("need at least {MIN_TYPES} entity types, got {0}")]
    TooFewTypes(usize),
    #[error("need at least {MIN_SENTENCES} sentences, got {0}")]
    TooFewSentences(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub types: usize,
    pub sentences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { types: 4, sentences: 1000, seed: 0 }
    }
}

pub fn type_names(n: usize) -> Vec<String> {
    (0..n).map(|i| BASE_NAMES.get(i).map(|s| s.to_string()).unwrap_or_else(|| format!("TYPE{i}"))).collect()
}

struct Lexicon {
    mentions: Vec<Vec<String>>,
    left_cues: Vec<Vec<String>>,
    right_cues: Vec<Vec<String>>,
    shared: Vec<String>,
    shared_cues: Vec<String>,
    filler: Vec<String>,
}

struct WordMaker {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl WordMaker {
    fn word(&mut self, syllables: usize) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut self.rng).expect("nonempty"));
                w.push_str(VOWELS.choose(&mut self.rng).expect("nonempty"));
            }
            w.push_str(CODAS.choose(&mut self.rng).expect("nonempty"));
            if !RESERVED.contains(&w.as_str()) && self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, count: usize, syllables: usize) -> Vec<String> {
        (0..count).map(|_| self.word(syllables)).collect()
    }
}

impl Lexicon {
    fn new(types: usize) -> Self {
        let mut m = WordMaker { rng: stream_rng(LEXICON_SEED, &[types as u64]), used: BTreeSet::new() };
        let filler = m.words(160, 1);
        let shared = m.words(16, 2);
        let shared_cues = m.words(6, 1);
        let mentions = (0..types).map(|_| m.words(12, 2)).collect();
        let left_cues = (0..types).map(|_| m.words(4, 1)).collect();
        let right_cues = (0..types).map(|_| m.words(3, 1)).collect();
        Self { mentions, left_cues, right_cues, shared, shared_cues, filler }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &'a [String]) -> &'a str {
    xs.choose(rng).expect("nonempty word list")
}

fn filler_word<'a>(rng: &mut ChaCha8Rng, lex: &'a Lexicon) -> &'a str {
    if rng.random_bool(0.15) {
        pick(rng, &lex.shared)
    } else {
        pick(rng, &lex.filler)
    }
}

fn mention<'a>(rng: &mut ChaCha8Rng, lex: &'a Lexicon, t: usize) -> Vec<&'a str> {
    let len = match rng.random_range(0..100) {
        0..50 => 1,
        50..85 => 2,
        _ => 3,
    };
    (0..len)
        .map(|_| if rng.random_bool(0.25) { pick(rng, &lex.shared) } else { pick(rng, &lex.mentions[t]) })
        .collect()
}

fn sentence(rng: &mut ChaCha8Rng, lex: &Lexicon, types: usize) -> Sentence {
    let k: usize = match rng.random_range(0..100) {
        0..15 => 0,
        15..60 => 1,
        60..90 => 2,
        _ => 3,
    };
    let mut blocks: Vec<(Vec<&str>, Option<(usize, usize, usize)>)> = Vec::new();
    for _ in 0..k {
        let t = rng.random_range(0..types);
        let mut words = Vec::new();
        let cue = rng.random_range(0..100);
        if cue < 80 {
            words.push(pick(rng, &lex.left_cues[t]));
        } else if cue < 90 {
            words.push(pick(rng, &lex.shared_cues));
        }
        let start = words.len();
        words.extend(mention(rng, lex, t));
        let end = words.len() - 1;
        if rng.random_bool(0.3) {
            words.push(pick(rng, &lex.right_cues[t]));
        }
        blocks.push((words, Some((start, end, t))));
    }
    let block_tokens: usize = blocks.iter().map(|b| b.0.len()).sum();
    let target: usize = if k == 0 { rng.random_range(6..=10) } else { 10 * k + rng.random_range(0..=4) - 2 };
    let fillers = target.saturating_sub(block_tokens).max(k + 1);
    // Split the fillers into k + 1 gaps, every inner gap non-empty.
    let mut gaps = vec![0usize; k + 1];
    for g in gaps.iter_mut().take(k).skip(1) {
        *g = 1;
    }
    let fixed: usize = gaps.iter().sum();
    for _ in fixed..fillers {
        let i = rng.random_range(0..=k);
        gaps[i] += 1;
    }

    let mut tokens: Vec<&str> = Vec::new();
    let mut entities = Vec::new();
    for (i, gap) in gaps.iter().enumerate() {
        for _ in 0..*gap {
            tokens.push(filler_word(rng, lex));
        }
        if let Some((words, ent)) = blocks.get(i) {
            let offset = tokens.len();
            if let Some((s, e, t)) = ent {
                entities.push(TypedSpan::new(offset + s, offset + e, *t));
            }
            tokens.extend(words.iter().copied());
        }
    }
    let tokens = tokens.into_iter().map(|w| Token::new(w).expect("generated words are valid tokens")).collect();
    Sentence::new(tokens, entities).expect("generated spans are disjoint and in range")
}

/// Generates `cfg.sentences` sentences over `cfg.types` types.
pub fn synthesize(cfg: &SynthConfig, split: Split) -> Result<Corpus, SynthError> {
    if cfg.types < MIN_TYPES {
        return Err(SynthError::TooFewTypes(cfg.types));
    }
    if cfg.sentences < MIN_SENTENCES {
        return Err(SynthError::TooFewSentences(cfg.sentences));
    }
    let lex = Lexicon::new(cfg.types);
    let mut rng = stream_rng(cfg.seed, &[tag::SYNTH]);
    let sentences = (0..cfg.sentences).map(|_| sentence(&mut rng, &lex, cfg.types)).collect();
    let types = TypeInventory::new(type_names(cfg.types)).expect("distinct type names");
    Ok(Corpus::new(sentences, types, split).expect("generated corpus is valid"))
}
