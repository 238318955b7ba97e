//! Direct-translation and refinement prompt templates, and reply parsing.
//!
//! Templates use `{src_name}`, `{tgt_name}`, `{source}` and `{intermediate}`
//! slots. `{{` and `}}` produce literal braces; any other `{word}` is an
//! error so that typos surface when the template is loaded rather than as
//! a stray placeholder in a prompt.

use alloc::borrow::ToOwned;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Direction;

pub const DEFAULT_DIRECT_TEMPLATE: &str = include_str!("../templates/direct.txt");
pub const DEFAULT_REFINE_TEMPLATE: &str = include_str!("../templates/refine.txt");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown slot `{{{0}}}`")]
    UnknownSlot(String),
    #[error("{kind} template is missing the {slot} slot")]
    MissingSlot { kind: TemplateKind, slot: Slot },
    #[error("{kind} template must contain the {slot} slot exactly once")]
    RepeatedSlot { kind: TemplateKind, slot: Slot },
    #[error("{kind} template must not contain the {slot} slot")]
    ForbiddenSlot { kind: TemplateKind, slot: Slot },
    #[error("expected a {expected} template, got {actual}")]
    KindMismatch {
        expected: TemplateKind,
        actual: TemplateKind,
    },
    #[error("{0} text is empty")]
    EmptyInput(Slot),
    #[error("model reply is empty")]
    EmptyReply,
    #[error("model reply is empty after removing labels and quotes")]
    EmptyAfterStripping,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateKind {
    Direct,
    Refine,
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TemplateKind::Direct => "direct",
            TemplateKind::Refine => "refine",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    SrcName,
    TgtName,
    Source,
    Intermediate,
}

impl Slot {
    const ALL: [Slot; 4] = [Slot::SrcName, Slot::TgtName, Slot::Source, Slot::Intermediate];

    pub fn name(self) -> &'static str {
        match self {
            Slot::SrcName => "src_name",
            Slot::TgtName => "tgt_name",
            Slot::Source => "source",
            Slot::Intermediate => "intermediate",
        }
    }

    fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Slot),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    text: String,
    segments: Vec<Segment>,
}

/// Rendered prompt text plus the byte range each slot occupies in it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RenderedPrompt {
    text: String,
    spans: Vec<(Slot, Range<usize>)>,
}

impl RenderedPrompt {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn into_text(self) -> String {
        self.text
    }

    pub fn spans(&self) -> &[(Slot, Range<usize>)] {
        &self.spans
    }

    /// Text substituted at the first occurrence of `slot`.
    pub fn slot_text(&self, slot: Slot) -> Option<&str> {
        self.spans
            .iter()
            .find(|(s, _)| *s == slot)
            .map(|(_, r)| &self.text[r.clone()])
    }
}

fn parse_segments(text: &str) -> Result<Vec<Segment>, PromptError> {
    let mut segments = Vec::new();
    let mut literal = String::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if rest.starts_with("{{") {
            literal.push('{');
            rest = &rest[2..];
        } else if rest.starts_with("}}") {
            literal.push('}');
            rest = &rest[2..];
        } else if c == '{' {
            let body = &rest[1..];
            let ident_len = body
                .find(|ch: char| !(ch.is_ascii_alphanumeric() || ch == '_'))
                .unwrap_or(body.len());
            if ident_len > 0 && body[ident_len..].starts_with('}') {
                let name = &body[..ident_len];
                let slot =
                    Slot::from_name(name).ok_or_else(|| PromptError::UnknownSlot(name.to_owned()))?;
                if !literal.is_empty() {
                    segments.push(Segment::Literal(core::mem::take(&mut literal)));
                }
                segments.push(Segment::Slot(slot));
                rest = &body[ident_len + 1..];
            } else {
                literal.push('{');
                rest = body;
            }
        } else {
            literal.push(c);
            rest = &rest[c.len_utf8()..];
        }
    }
    if !literal.is_empty() {
        segments.push(Segment::Literal(literal));
    }
    Ok(segments)
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind, text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        let segments = parse_segments(&text)?;
        let count = |slot| {
            segments
                .iter()
                .filter(|s| matches!(s, Segment::Slot(x) if *x == slot))
                .count()
        };
        for slot in [Slot::SrcName, Slot::TgtName] {
            if count(slot) == 0 {
                return Err(PromptError::MissingSlot { kind, slot });
            }
        }
        let once: &[Slot] = match kind {
            TemplateKind::Direct => {
                if count(Slot::Intermediate) > 0 {
                    return Err(PromptError::ForbiddenSlot {
                        kind,
                        slot: Slot::Intermediate,
                    });
                }
                &[Slot::Source]
            }
            TemplateKind::Refine => &[Slot::Source, Slot::Intermediate],
        };
        for &slot in once {
            match count(slot) {
                0 => return Err(PromptError::MissingSlot { kind, slot }),
                1 => {}
                _ => return Err(PromptError::RepeatedSlot { kind, slot }),
            }
        }
        Ok(Self {
            kind,
            text,
            segments,
        })
    }

    pub fn default_direct() -> Self {
        Self::new(TemplateKind::Direct, DEFAULT_DIRECT_TEMPLATE.trim_end_matches('\n'))
            .expect("bundled direct template is valid")
    }

    pub fn default_refine() -> Self {
        Self::new(TemplateKind::Refine, DEFAULT_REFINE_TEMPLATE.trim_end_matches('\n'))
            .expect("bundled refine template is valid")
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    fn expect_kind(&self, expected: TemplateKind) -> Result<(), PromptError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(PromptError::KindMismatch {
                expected,
                actual: self.kind,
            })
        }
    }

    fn render(&self, direction: &Direction, source: &str, intermediate: &str) -> RenderedPrompt {
        let mut text = String::new();
        let mut spans = Vec::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(lit) => text.push_str(lit),
                Segment::Slot(slot) => {
                    let value = match slot {
                        Slot::SrcName => direction.src_name(),
                        Slot::TgtName => direction.tgt_name(),
                        Slot::Source => source,
                        Slot::Intermediate => intermediate,
                    };
                    let start = text.len();
                    text.push_str(value);
                    spans.push((*slot, start..text.len()));
                }
            }
        }
        RenderedPrompt { text, spans }
    }

    /// Renders a direct-translation prompt.
    pub fn render_direct(
        &self,
        source: &str,
        direction: &Direction,
    ) -> Result<RenderedPrompt, PromptError> {
        self.expect_kind(TemplateKind::Direct)?;
        if source.trim().is_empty() {
            return Err(PromptError::EmptyInput(Slot::Source));
        }
        Ok(self.render(direction, source, ""))
    }

    /// Renders a refinement prompt around an existing translation.
    pub fn render_refine(
        &self,
        source: &str,
        intermediate: &str,
        direction: &Direction,
    ) -> Result<RenderedPrompt, PromptError> {
        self.expect_kind(TemplateKind::Refine)?;
        if source.trim().is_empty() {
            return Err(PromptError::EmptyInput(Slot::Source));
        }
        if intermediate.trim().is_empty() {
            return Err(PromptError::EmptyInput(Slot::Intermediate));
        }
        Ok(self.render(direction, source, intermediate))
    }
}

/// How to pull a bare translation out of a chatty model reply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionPolicy {
    /// Leading labels removed case-insensitively, e.g. `Translation:`.
    pub labels: Vec<String>,
    /// Also remove any short leading `... translation:` label.
    pub translation_suffix_label: bool,
    /// Remove quotes that enclose the entire reply.
    pub strip_quotes: bool,
}

impl Default for ExtractionPolicy {
    fn default() -> Self {
        Self {
            labels: vec![
                "Translation:".to_string(),
                "Refined translation:".to_string(),
                "Final translation:".to_string(),
            ],
            translation_suffix_label: true,
            strip_quotes: true,
        }
    }
}

impl ExtractionPolicy {
    /// Keeps the reply as-is apart from trimming.
    pub fn verbatim() -> Self {
        Self {
            labels: Vec::new(),
            translation_suffix_label: false,
            strip_quotes: false,
        }
    }
}

fn strip_prefix_ignore_case<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

fn strip_suffix_label(s: &str) -> Option<&str> {
    let first_line = s.lines().next()?;
    let colon = first_line.find(':')?;
    let label = first_line[..colon].trim_end();
    let lower_ok = label.len() >= "translation".len()
        && label[label.len() - "translation".len()..].eq_ignore_ascii_case("translation");
    (lower_ok && label.split_whitespace().count() <= 6).then(|| &s[colon + 1..])
}

const QUOTE_PAIRS: &[(char, char)] = &[
    ('"', '"'),
    ('\'', '\''),
    ('“', '”'),
    ('„', '“'),
    ('«', '»'),
    ('「', '」'),
    ('『', '』'),
];

fn strip_enclosing_quotes(s: &str) -> &str {
    for &(open, close) in QUOTE_PAIRS {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            if !inner.contains(close) && !inner.contains(open) {
                return inner;
            }
        }
    }
    s
}

/// Extracts the translation from a raw completion.
pub fn parse_completion(raw_reply: &str, policy: &ExtractionPolicy) -> Result<String, PromptError> {
    let mut text = raw_reply.trim();
    if text.is_empty() {
        return Err(PromptError::EmptyReply);
    }
    if let Some(rest) = policy
        .labels
        .iter()
        .find_map(|label| strip_prefix_ignore_case(text, label))
    {
        text = rest.trim();
    } else if policy.translation_suffix_label {
        if let Some(rest) = strip_suffix_label(text) {
            text = rest.trim();
        }
    }
    if policy.strip_quotes {
        text = strip_enclosing_quotes(text).trim();
    }
    if text.is_empty() {
        Err(PromptError::EmptyAfterStripping)
    } else {
        Ok(text.to_string())
    }
}
