//! Sentence/span pairs rendered as encoder inputs, and entity-annotated
//! sentences rendered as bracketed target sequences.
//!
//! The main layout for a span `(l, r)` is
//!
//! ```text
//! w_0 .. w_{l-1} [ M ] [ w_l .. w_r ] [ M ] w_{r+1} .. w_{n-1}
//! ```
//!
//! where the first `M` is the is-entity slot and the second the which-type
//! slot. Brackets are always standalone tokens.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Sentence, Token, TypeInventory, TypedSpan};

pub const OPEN: &str = "[";
pub const CLOSE: &str = "]";
pub const PIPE: &str = "|";
pub const DEFAULT_MASK: &str = "<mask>";
pub const SPAN_LITERAL: &str = "span";
pub const TYPE_LITERAL: &str = "type";

#[derive(Debug, Error, PartialEq)]
pub enum FormulateError {
    #[error("span ({0}, {1}) is invalid for a sentence of {2} tokens")]
    InvalidSpan(usize, usize, usize),
    #[error("variant {0} is a linearization format; use `linearize`")]
    UnsupportedVariant(FormulationVariant),
    #[error("token {position}: {message}")]
    Parse { position: usize, message: String },
    #[error("token {position}: type `{name}` is not in the inventory")]
    UnknownType { position: usize, name: String },
    #[error("unknown label `{0}`")]
    BadLabel(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationVariant {
    Fff,
    /// The two slots hold the literal words `span` and `type`.
    NotMask,
    /// All six brackets removed.
    NoBrackets,
    /// No is-entity slot; the which-type slot also predicts "no entity".
    SpanTypeTogether,
    Genre,
    Tanl,
}

impl FormulationVariant {
    pub const ENCODER_VARIANTS: [FormulationVariant; 4] = [
        FormulationVariant::Fff,
        FormulationVariant::NotMask,
        FormulationVariant::NoBrackets,
        FormulationVariant::SpanTypeTogether,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FormulationVariant::Fff => "fff",
            FormulationVariant::NotMask => "not_mask",
            FormulationVariant::NoBrackets => "no_brackets",
            FormulationVariant::SpanTypeTogether => "span_type_together",
            FormulationVariant::Genre => "genre",
            FormulationVariant::Tanl => "tanl",
        }
    }

    /// Whether the which-type head carries an extra "no entity" class.
    pub fn joint_type_head(self) -> bool {
        self == FormulationVariant::SpanTypeTogether
    }

    /// Tokens added to an `n`-token sentence.
    pub fn inserted_len(self) -> Option<usize> {
        match self {
            FormulationVariant::Fff | FormulationVariant::NotMask => Some(8),
            FormulationVariant::NoBrackets => Some(2),
            FormulationVariant::SpanTypeTogether => Some(5),
            FormulationVariant::Genre | FormulationVariant::Tanl => None,
        }
    }
}

impl fmt::Display for FormulationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FormulationVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fff" => Ok(FormulationVariant::Fff),
            "not_mask" => Ok(FormulationVariant::NotMask),
            "no_brackets" => Ok(FormulationVariant::NoBrackets),
            "span_type_together" => Ok(FormulationVariant::SpanTypeTogether),
            "genre" => Ok(FormulationVariant::Genre),
            "tanl" => Ok(FormulationVariant::Tanl),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Positive(usize),
    Negative,
}

impl Label {
    pub fn is_positive(self) -> bool {
        matches!(self, Label::Positive(_))
    }

    pub fn render(self, types: &TypeInventory) -> String {
        match self {
            Label::Positive(t) => format!("POS:{}", types.name(t).unwrap_or("UNK")),
            Label::Negative => "NEG".to_string(),
        }
    }

    pub fn parse(text: &str, types: &TypeInventory) -> Result<Self, FormulateError> {
        if text == "NEG" {
            return Ok(Label::Negative);
        }
        text.strip_prefix("POS:")
            .and_then(|name| types.id_of(name))
            .map(Label::Positive)
            .ok_or_else(|| FormulateError::BadLabel(text.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormulatedInstance {
    pub tokens: Vec<Token>,
    pub is_entity_pos: Option<usize>,
    pub which_type_pos: Option<usize>,
    pub span: (usize, usize),
    pub label: Label,
    pub sentence_id: usize,
}

impl FormulatedInstance {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.iter().map(Token::as_str).collect::<Vec<_>>().join(" ")
    }
}

fn tok(s: &str) -> Token {
    Token::new(s).expect("markup tokens are valid")
}

/// Renders `(sentence, span)` under one of the encoder variants. The label
/// is set to `Negative`; callers attach the gold label.
pub fn formulate(
    sentence: &Sentence,
    span: (usize, usize),
    variant: FormulationVariant,
    mask: &Token,
) -> Result<FormulatedInstance, FormulateError> {
    let (l, r) = span;
    let n = sentence.len();
    if l > r || r >= n {
        return Err(FormulateError::InvalidSpan(l, r, n));
    }
    let words = sentence.tokens();
    let extra = variant.inserted_len().ok_or(FormulateError::UnsupportedVariant(variant))?;
    let mut out = Vec::with_capacity(n + extra);
    out.extend_from_slice(&words[..l]);

    let (slot_a, slot_b) = match variant {
        FormulationVariant::NotMask => (tok(SPAN_LITERAL), tok(TYPE_LITERAL)),
        _ => (mask.clone(), mask.clone()),
    };

    let (is_entity_pos, which_type_pos) = match variant {
        FormulationVariant::Fff | FormulationVariant::NotMask => {
            out.extend([tok(OPEN), slot_a, tok(CLOSE), tok(OPEN)]);
            let ie = l + 1;
            out.extend_from_slice(&words[l..=r]);
            out.extend([tok(CLOSE), tok(OPEN), slot_b, tok(CLOSE)]);
            (Some(ie), Some(out.len() - 2))
        }
        FormulationVariant::NoBrackets => {
            out.push(slot_a);
            out.extend_from_slice(&words[l..=r]);
            out.push(slot_b);
            (Some(l), Some(out.len() - 1))
        }
        FormulationVariant::SpanTypeTogether => {
            out.push(tok(OPEN));
            out.extend_from_slice(&words[l..=r]);
            out.extend([tok(CLOSE), tok(OPEN), slot_b, tok(CLOSE)]);
            (None, Some(out.len() - 2))
        }
        FormulationVariant::Genre | FormulationVariant::Tanl => unreachable!("rejected above"),
    };
    out.extend_from_slice(&words[r + 1..]);

    Ok(FormulatedInstance {
        tokens: out,
        is_entity_pos,
        which_type_pos,
        span,
        label: Label::Negative,
        sentence_id: 0,
    })
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    tokens: Vec<Token>,
    is_entity_pos: Option<usize>,
    which_type_pos: Option<usize>,
    span: [usize; 2],
    label: String,
    sentence_id: usize,
}

pub fn instance_to_json(inst: &FormulatedInstance, types: &TypeInventory) -> String {
    serde_json::to_string(&InstanceRecord {
        tokens: inst.tokens.clone(),
        is_entity_pos: inst.is_entity_pos,
        which_type_pos: inst.which_type_pos,
        span: [inst.span.0, inst.span.1],
        label: inst.label.render(types),
        sentence_id: inst.sentence_id,
    })
    .expect("instance serializes")
}

pub fn instance_from_json(line: &str, types: &TypeInventory) -> Result<FormulatedInstance, FormulateError> {
    let rec: InstanceRecord =
        serde_json::from_str(line).map_err(|e| FormulateError::Parse { position: 0, message: e.to_string() })?;
    let n = rec.tokens.len();
    for p in [rec.is_entity_pos, rec.which_type_pos].into_iter().flatten() {
        if p >= n {
            return Err(FormulateError::Parse { position: p, message: "slot position out of range".into() });
        }
    }
    Ok(FormulatedInstance {
        tokens: rec.tokens,
        is_entity_pos: rec.is_entity_pos,
        which_type_pos: rec.which_type_pos,
        span: (rec.span[0], rec.span[1]),
        label: Label::parse(&rec.label, types)?,
        sentence_id: rec.sentence_id,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearFormat {
    /// `[ mention ] [ Type ]`
    Genre,
    /// `[ mention | Type ]`
    Tanl,
}

impl LinearFormat {
    fn is_markup(self, s: &str) -> bool {
        s == OPEN || s == CLOSE || (self == LinearFormat::Tanl && s == PIPE)
    }

    /// Sentence words that coincide with markup are prefixed with `\`, as are
    /// words that already look like an escaped markup token. Everything else
    /// passes through untouched.
    fn escape(self, s: &str) -> String {
        if self.is_markup(s.trim_start_matches('\\')) {
            format!("\\{s}")
        } else {
            s.to_string()
        }
    }

    fn unescape(self, s: &str) -> String {
        match s.strip_prefix('\\') {
            Some(rest) if self.is_markup(rest.trim_start_matches('\\')) => rest.to_string(),
            _ => s.to_string(),
        }
    }
}

impl FromStr for LinearFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "genre" => Ok(LinearFormat::Genre),
            "tanl" => Ok(LinearFormat::Tanl),
            other => Err(format!("unknown format `{other}` (expected genre or tanl)")),
        }
    }
}

pub fn linearize(sentence: &Sentence, format: LinearFormat, types: &TypeInventory) -> Vec<Token> {
    let words = sentence.tokens();
    let mut out = Vec::with_capacity(words.len() + 6 * sentence.entities().len());
    let word = |i: usize| tok(&format.escape(words[i].as_str()));
    let mut next = 0;
    for e in sentence.entities() {
        out.extend((next..e.start).map(word));
        out.push(tok(OPEN));
        out.extend((e.start..=e.end).map(word));
        let name = tok(types.name(e.type_id).unwrap_or("UNK"));
        match format {
            LinearFormat::Genre => out.extend([tok(CLOSE), tok(OPEN), name, tok(CLOSE)]),
            LinearFormat::Tanl => out.extend([tok(PIPE), name, tok(CLOSE)]),
        }
        next = e.end + 1;
    }
    out.extend((next..words.len()).map(word));
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

/// Result of trying to read one entity group starting at an opening bracket.
enum Group {
    /// Mention tokens (escaped form), type name, index one past the group.
    Entity(Vec<usize>, String, usize),
    Malformed { position: usize, message: &'static str },
}

fn read_group(tokens: &[Token], open_at: usize, format: LinearFormat) -> Group {
    let mut i = open_at + 1;
    let mut mention = Vec::new();
    let fail = |position: usize, message| Group::Malformed { position, message };
    while i < tokens.len() && !format.is_markup(tokens[i].as_str()) {
        mention.push(i);
        i += 1;
    }
    if mention.is_empty() {
        return fail(i, "expected mention tokens after `[`");
    }
    let sep: &[&str] = match format {
        LinearFormat::Genre => &[CLOSE, OPEN],
        LinearFormat::Tanl => &[PIPE],
    };
    for &s in sep {
        if tokens.get(i).map(Token::as_str) != Some(s) {
            return fail(i, "malformed entity group separator");
        }
        i += 1;
    }
    let name = match tokens.get(i) {
        Some(t) if !format.is_markup(t.as_str()) => t.as_str().to_string(),
        _ => return fail(i, "expected a type name"),
    };
    i += 1;
    if tokens.get(i).map(Token::as_str) != Some(CLOSE) {
        return fail(i, "expected `]` after the type name");
    }
    Group::Entity(mention, name, i + 1)
}

/// Inverse of [`linearize`]. Lenient mode never fails on markup: malformed
/// groups lose their brackets, groups with unknown types keep their words
/// but not the entity, and stray closers are dropped. Spans are indexed
/// against the resulting bracket-free token stream.
pub fn delinearize(
    tokens: &[Token],
    format: LinearFormat,
    types: &TypeInventory,
    mode: ParseMode,
) -> Result<Sentence, FormulateError> {
    let strict = mode == ParseMode::Strict;
    let mut words: Vec<Token> = Vec::with_capacity(tokens.len());
    let mut entities = Vec::new();
    let plain = |t: &Token| tok(&format.unescape(t.as_str()));
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i].as_str();
        if t == OPEN {
            match read_group(tokens, i, format) {
                Group::Entity(mention, name, next) => {
                    let start = words.len();
                    words.extend(mention.iter().map(|&j| plain(&tokens[j])));
                    match types.id_of(&name) {
                        Some(type_id) => entities.push(TypedSpan::new(start, words.len() - 1, type_id)),
                        None if strict => {
                            return Err(FormulateError::UnknownType { position: next - 2, name });
                        }
                        None => {}
                    }
                    i = next;
                }
                Group::Malformed { position, message } => {
                    if strict {
                        return Err(FormulateError::Parse { position, message: message.into() });
                    }
                    i += 1;
                }
            }
        } else if format.is_markup(t) {
            if strict {
                return Err(FormulateError::Parse { position: i, message: format!("unexpected `{t}`") });
            }
            i += 1;
        } else {
            words.push(plain(&tokens[i]));
            i += 1;
        }
    }
    Ok(Sentence::new(words, entities)?)
}
