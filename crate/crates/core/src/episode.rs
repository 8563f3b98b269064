//! N-way K-shot support sets drawn from a full training corpus.
//!
//! Types are visited in inventory order. For each type, K sentences that
//! mention it are drawn uniformly without replacement from the sentences not
//! already selected for an earlier type. A sentence picked for one type may
//! incidentally mention others; it is not re-counted toward their quota.

use std::collections::BTreeSet;

use rand::seq::index;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, JsonSentence, Sentence, TypeInventory};
use crate::rng::{stream_rng, tag};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("type `{type_name}` has {available} eligible sentences, need {needed}")]
    InsufficientSupport { type_name: String, available: usize, needed: usize },
    #[error("k_shots must be at least 1")]
    ZeroShots,
    #[error("episode has no sentences")]
    EmptyEpisode,
    #[error("episode file line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub k_shots: usize,
    pub seed: u64,
    pub fold_id: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub sentences: Vec<Sentence>,
    pub types: TypeInventory,
    pub spec: EpisodeSpec,
}

impl Episode {
    /// Number of episode sentences that mention `type_id`.
    pub fn support(&self, type_id: usize) -> usize {
        self.sentences.iter().filter(|s| s.has_type(type_id)).count()
    }

    pub fn is_valid(&self) -> bool {
        (0..self.types.len()).all(|t| self.support(t) >= self.spec.k_shots)
    }

    /// Longest gold entity, in tokens.
    pub fn longest_entity(&self) -> usize {
        self.sentences
            .iter()
            .flat_map(|s| s.entities().iter().map(|e| e.len()))
            .max()
            .unwrap_or(1)
    }
}

pub fn sample_episode(corpus: &Corpus, spec: EpisodeSpec) -> Result<Episode, EpisodeError> {
    if spec.k_shots == 0 {
        return Err(EpisodeError::ZeroShots);
    }
    let mut rng = stream_rng(spec.seed, &[tag::EPISODE, u64::from(spec.fold_id)]);
    let mut taken: BTreeSet<usize> = BTreeSet::new();
    let mut order: Vec<usize> = Vec::new();

    for (type_id, name) in corpus.types.names().iter().enumerate() {
        let pool: Vec<usize> = corpus
            .sentences
            .iter()
            .enumerate()
            .filter(|(i, s)| !taken.contains(i) && s.has_type(type_id))
            .map(|(i, _)| i)
            .collect();
        if pool.len() < spec.k_shots {
            return Err(EpisodeError::InsufficientSupport {
                type_name: name.clone(),
                available: pool.len(),
                needed: spec.k_shots,
            });
        }
        for pick in index::sample(&mut rng, pool.len(), spec.k_shots) {
            let idx = pool[pick];
            taken.insert(idx);
            order.push(idx);
        }
    }

    Ok(Episode {
        sentences: order.into_iter().map(|i| corpus.sentences[i].clone()).collect(),
        types: corpus.types.clone(),
        spec,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EpisodeHeader {
    k_shots: usize,
    seed: u64,
    fold_id: u32,
    types: Vec<String>,
}

/// Episode as JSON lines: a header object, then one sentence per line in the
/// corpus sentence schema.
pub fn episode_to_jsonl(episode: &Episode) -> String {
    let header = EpisodeHeader {
        k_shots: episode.spec.k_shots,
        seed: episode.spec.seed,
        fold_id: episode.spec.fold_id,
        types: episode.types.names().to_vec(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for s in &episode.sentences {
        out.push_str(&serde_json::to_string(&JsonSentence::from_sentence(s, &episode.types)).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

/// Parses an episode file. The header line may be omitted for externally
/// produced splits, in which case `inventory` and `spec` must be supplied.
pub fn episode_from_jsonl(
    text: &str,
    inventory: Option<&TypeInventory>,
    spec: Option<EpisodeSpec>,
) -> Result<Episode, EpisodeError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
    let header = match lines.peek() {
        Some((_, first)) if serde_json::from_str::<serde_json::Value>(first).is_ok_and(|v| v.get("k_shots").is_some()) => {
            let (idx, first) = lines.next().unwrap();
            Some(
                serde_json::from_str::<EpisodeHeader>(first)
                    .map_err(|e| EpisodeError::Schema { line: idx + 1, message: e.to_string() })?,
            )
        }
        _ => None,
    };

    let (types, spec) = match (header, inventory) {
        (Some(h), inv) => {
            let types = TypeInventory::new(h.types)?;
            if let Some(inv) = inv {
                if inv != &types {
                    return Err(EpisodeError::Schema {
                        line: 1,
                        message: "header type inventory differs from the supplied one".into(),
                    });
                }
            }
            (types, EpisodeSpec { k_shots: h.k_shots, seed: h.seed, fold_id: h.fold_id })
        }
        (None, Some(inv)) => {
            let spec = spec.ok_or(EpisodeError::Schema { line: 1, message: "missing header and no spec given".into() })?;
            (inv.clone(), spec)
        }
        (None, None) => {
            return Err(EpisodeError::Schema { line: 1, message: "missing header and no type inventory given".into() })
        }
    };

    let mut sentences = Vec::new();
    for (idx, line) in lines {
        let row: JsonSentence =
            serde_json::from_str(line).map_err(|e| EpisodeError::Schema { line: idx + 1, message: e.to_string() })?;
        sentences.push(row.into_sentence(&types, idx + 1)?);
    }
    if sentences.is_empty() {
        return Err(EpisodeError::EmptyEpisode);
    }
    Ok(Episode { sentences, types, spec })
}

pub fn save_episode(episode: &Episode, path: &std::path::Path) -> std::io::Result<()> {
    std::fs::write(path, episode_to_jsonl(episode))
}

pub fn load_episode(path: &std::path::Path, inventory: Option<&TypeInventory>) -> Result<Episode, EpisodeError> {
    let text = std::fs::read_to_string(path).map_err(|e| EpisodeError::Schema { line: 0, message: e.to_string() })?;
    episode_from_jsonl(&text, inventory, None)
}
