//! BIO-tagged corpora: sentences, typed spans and the entity-type inventory.
//!
//! Spans use inclusive token coordinates `[start, end]`. Character offsets are
//! never used anywhere in the crate.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("empty input")]
    EmptyInput,
    #[error("line {line}: expected `token<TAB>tag`, found {fields} field(s)")]
    MalformedLine { line: usize, fields: usize },
    #[error("line {line}: unrecognised tag `{tag}`")]
    BadTag { line: usize, tag: String },
    #[error("line {line}: entity type `{name}` is not in the inventory")]
    UnknownType { line: usize, name: String },
    #[error("line {line}: `{tag}` does not continue an open entity of the same type")]
    DanglingInside { line: usize, tag: String },
    #[error("invalid token {0:?}: tokens must be non-empty and contain no whitespace")]
    InvalidToken(String),
    #[error("span ({start}, {end}) is invalid for a sentence of {len} tokens")]
    InvalidSpan { start: usize, end: usize, len: usize },
    #[error("entities ({0}, {1}) and ({2}, {3}) overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("sentence has no tokens")]
    EmptySentence,
    #[error("type id {0} is out of range for the inventory")]
    BadTypeId(usize),
    #[error("duplicate type name `{0}` in inventory")]
    DuplicateType(String),
    #[error("type inventory is empty")]
    EmptyInventory,
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
}

/// A single whitespace-free word.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self, CorpusError> {
        let text = text.into();
        if text.is_empty() || text.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidToken(text));
        }
        Ok(Token(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Token {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Inclusive token interval with an entity type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypedSpan {
    pub start: usize,
    pub end: usize,
    pub type_id: usize,
}

impl TypedSpan {
    pub fn new(start: usize, end: usize, type_id: usize) -> Self {
        Self { start, end, type_id }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn bounds(&self) -> (usize, usize) {
        (self.start, self.end)
    }

    pub fn overlaps(&self, other: &TypedSpan) -> bool {
        spans_overlap(self.bounds(), other.bounds())
    }
}

pub fn spans_overlap(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// A tokenized sentence with non-overlapping gold entities, kept sorted by
/// start position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<Token>,
    entities: Vec<TypedSpan>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>, mut entities: Vec<TypedSpan>) -> Result<Self, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        let len = tokens.len();
        for e in &entities {
            if e.start > e.end || e.end >= len {
                return Err(CorpusError::InvalidSpan { start: e.start, end: e.end, len });
            }
        }
        entities.sort();
        for pair in entities.windows(2) {
            if pair[0].overlaps(&pair[1]) {
                return Err(CorpusError::Overlap(pair[0].start, pair[0].end, pair[1].start, pair[1].end));
            }
        }
        Ok(Self { tokens, entities })
    }

    /// Builds a sentence from whitespace-separated text, with no entities.
    pub fn from_words(text: &str) -> Result<Self, CorpusError> {
        let tokens = text.split_whitespace().map(Token::new).collect::<Result<Vec<_>, _>>()?;
        Self::new(tokens, Vec::new())
    }

    pub fn with_entities(self, entities: Vec<TypedSpan>) -> Result<Self, CorpusError> {
        Self::new(self.tokens, entities)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn entities(&self) -> &[TypedSpan] {
        &self.entities
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn has_type(&self, type_id: usize) -> bool {
        self.entities.iter().any(|e| e.type_id == type_id)
    }

    pub fn is_gold_interval(&self, span: (usize, usize)) -> bool {
        self.entities.iter().any(|e| e.bounds() == span)
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(Token::as_str).collect::<Vec<_>>().join(" ")
    }
}

/// Ordered, duplicate-free list of entity type names. `type_id` values index
/// into it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct TypeInventory {
    names: Vec<String>,
}

impl TypeInventory {
    pub fn new(names: Vec<String>) -> Result<Self, CorpusError> {
        if names.is_empty() {
            return Err(CorpusError::EmptyInventory);
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(CorpusError::DuplicateType(n.clone()));
            }
            Token::new(n.as_str())?;
        }
        Ok(Self { names })
    }

    /// Sorted inventory of the given names.
    pub fn sorted<I, S>(names: I) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self::new(set.into_iter().collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, type_id: usize) -> Option<&str> {
        self.names.get(type_id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for TypeInventory {
    type Error = CorpusError;
    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        TypeInventory::new(v)
    }
}

impl From<TypeInventory> for Vec<String> {
    fn from(t: TypeInventory) -> Self {
        t.names
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Dev,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<Sentence>,
    pub types: TypeInventory,
    pub split: Split,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>, types: TypeInventory, split: Split) -> Result<Self, CorpusError> {
        for s in &sentences {
            if let Some(e) = s.entities.iter().find(|e| e.type_id >= types.len()) {
                return Err(CorpusError::BadTypeId(e.type_id));
            }
        }
        Ok(Self { sentences, types, split })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn entity_count(&self) -> usize {
        self.sentences.iter().map(|s| s.entities.len()).sum()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TagScheme {
    /// `B-` opens an entity, `I-` continues it. Identical handling to IOB2.
    #[default]
    Bio,
    Iob2,
}

#[derive(Clone, Debug, Default)]
pub struct BioOptions {
    pub scheme: TagScheme,
    /// Reject `I-X` that does not continue an open `X` entity instead of
    /// repairing it to `B-X`.
    pub strict: bool,
    /// Map type names onto this inventory instead of inferring a sorted one.
    pub inventory: Option<TypeInventory>,
    pub split: Split,
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_tag(tag: &str) -> Option<Tag<'_>> {
    if tag == "O" {
        return Some(Tag::Outside);
    }
    let (prefix, name) = tag.split_at_checked(2)?;
    if name.is_empty() {
        return None;
    }
    match prefix {
        "B-" => Some(Tag::Begin(name)),
        "I-" => Some(Tag::Inside(name)),
        _ => None,
    }
}

/// Sentence under construction; entity types are still names, tagged with
/// the line that opened them.
#[derive(Default)]
struct RawSentence {
    tokens: Vec<Token>,
    entities: Vec<(usize, usize, String, usize)>,
}

struct OpenEntity {
    name: String,
    start: usize,
    line: usize,
}

impl RawSentence {
    fn close(&mut self, open: &mut Option<OpenEntity>, end: usize) {
        if let Some(e) = open.take() {
            self.entities.push((e.start, end, e.name, e.line));
        }
    }
}

/// Parses a line-oriented BIO file: one `token<TAB or space>tag` pair per
/// line, sentences separated by blank lines.
pub fn parse_bio(text: &str, opts: &BioOptions) -> Result<Corpus, CorpusError> {
    let mut raw: Vec<RawSentence> = Vec::new();
    let mut current = RawSentence::default();
    let mut open: Option<OpenEntity> = None;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            let end = current.tokens.len().saturating_sub(1);
            current.close(&mut open, end);
            if !current.tokens.is_empty() {
                raw.push(std::mem::take(&mut current));
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(CorpusError::MalformedLine { line: line_no, fields: fields.len() });
        }
        let token = Token::new(fields[0])?;
        let tag = parse_tag(fields[1]).ok_or_else(|| CorpusError::BadTag { line: line_no, tag: fields[1].to_string() })?;
        let pos = current.tokens.len();
        current.tokens.push(token);

        let begin = |name: &str| Some(OpenEntity { name: name.to_string(), start: pos, line: line_no });
        match tag {
            Tag::Outside => current.close(&mut open, pos.wrapping_sub(1)),
            Tag::Begin(name) => {
                current.close(&mut open, pos.wrapping_sub(1));
                open = begin(name);
            }
            Tag::Inside(name) => {
                if !matches!(&open, Some(e) if e.name == name) {
                    if opts.strict {
                        return Err(CorpusError::DanglingInside { line: line_no, tag: fields[1].to_string() });
                    }
                    current.close(&mut open, pos.wrapping_sub(1));
                    open = begin(name);
                }
            }
        }
    }
    let end = current.tokens.len().saturating_sub(1);
    current.close(&mut open, end);
    if !current.tokens.is_empty() {
        raw.push(current);
    }

    if raw.is_empty() {
        return Err(CorpusError::EmptyInput);
    }

    let types = match &opts.inventory {
        Some(inv) => inv.clone(),
        None => {
            let names: BTreeSet<&str> = raw.iter().flat_map(|s| s.entities.iter().map(|e| e.2.as_str())).collect();
            if names.is_empty() {
                // An inventory needs at least one type; a corpus with no
                // entities at all is still representable through a fixed one.
                return Err(CorpusError::EmptyInventory);
            }
            TypeInventory::sorted(names)?
        }
    };

    let mut sentences = Vec::with_capacity(raw.len());
    for s in raw {
        let mut spans = Vec::with_capacity(s.entities.len());
        for (start, end, name, line) in s.entities {
            let type_id = types.id_of(&name).ok_or(CorpusError::UnknownType { line, name: name.clone() })?;
            spans.push(TypedSpan::new(start, end, type_id));
        }
        sentences.push(Sentence::new(s.tokens, spans)?);
    }
    Corpus::new(sentences, types, opts.split)
}

/// Renders a corpus back to BIO lines. Adjacent entities of the same type
/// each start with `B-`, so `parse_bio` in strict mode inverts this exactly.
pub fn emit_bio(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        let mut tags: Vec<String> = vec!["O".to_string(); s.len()];
        for e in &s.entities {
            let name = corpus.types.name(e.type_id).unwrap_or("UNK");
            tags[e.start] = format!("B-{name}");
            for tag in &mut tags[e.start + 1..=e.end] {
                *tag = format!("I-{name}");
            }
        }
        for (tok, tag) in s.tokens.iter().zip(&tags) {
            out.push_str(tok.as_str());
            out.push('\t');
            out.push_str(tag);
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Every span `(l, r)` of a sentence of `len` tokens with at most `max_len`
/// tokens, in lexicographic order. `None` means unlimited.
pub fn spans_of_length(len: usize, max_len: Option<usize>) -> Vec<(usize, usize)> {
    let cap = max_len.unwrap_or(len).max(1);
    let mut out = Vec::new();
    for l in 0..len {
        for r in l..len.min(l + cap) {
            out.push((l, r));
        }
    }
    out
}

pub fn all_spans(sentence: &Sentence, max_len: Option<usize>) -> Vec<(usize, usize)> {
    spans_of_length(sentence.len(), max_len)
}

#[derive(Serialize, Deserialize)]
pub(crate) struct JsonEntity {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub type_name: String,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct JsonSentence {
    pub tokens: Vec<Token>,
    pub entities: Vec<JsonEntity>,
}

impl JsonSentence {
    pub(crate) fn from_sentence(s: &Sentence, types: &TypeInventory) -> Self {
        JsonSentence {
            tokens: s.tokens.clone(),
            entities: s
                .entities
                .iter()
                .map(|e| JsonEntity {
                    start: e.start,
                    end: e.end,
                    type_name: types.name(e.type_id).unwrap_or("UNK").to_string(),
                })
                .collect(),
        }
    }

    pub(crate) fn into_sentence(self, types: &TypeInventory, line: usize) -> Result<Sentence, CorpusError> {
        let mut spans = Vec::with_capacity(self.entities.len());
        for e in self.entities {
            let type_id = types.id_of(&e.type_name).ok_or(CorpusError::UnknownType { line, name: e.type_name })?;
            spans.push(TypedSpan::new(e.start, e.end, type_id));
        }
        Sentence::new(self.tokens, spans)
    }
}

pub fn corpus_to_jsonl(corpus: &Corpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        let line = serde_json::to_string(&JsonSentence::from_sentence(s, &corpus.types)).expect("sentence serializes");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// Reads a JSON-lines corpus. Without a fixed inventory the sorted set of
/// observed type names is used.
pub fn corpus_from_jsonl(text: &str, inventory: Option<&TypeInventory>, split: Split) -> Result<Corpus, CorpusError> {
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonSentence =
            serde_json::from_str(line).map_err(|e| CorpusError::Json { line: idx + 1, message: e.to_string() })?;
        rows.push((idx + 1, row));
    }
    if rows.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let types = match inventory {
        Some(t) => t.clone(),
        None => TypeInventory::sorted(rows.iter().flat_map(|(_, r)| r.entities.iter().map(|e| e.type_name.clone())))?,
    };
    let sentences = rows
        .into_iter()
        .map(|(line, r)| r.into_sentence(&types, line))
        .collect::<Result<Vec<_>, _>>()?;
    Corpus::new(sentences, types, split)
}
