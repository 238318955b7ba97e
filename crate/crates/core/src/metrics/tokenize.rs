//! Word tokenizers compatible with the community-standard BLEU scorer.
//!
//! `13a` reproduces the mteval-v13a rules used at WMT; the Chinese
//! tokenizer splits every CJK character into its own token and applies
//! the same punctuation rules to the remainder.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Tokenization {
    /// mteval-v13a punctuation splitting.
    #[serde(rename = "13a")]
    Mteval13a,
    /// Character-level segmentation of CJK text.
    #[serde(rename = "zh")]
    CjkCharacters,
}

impl Tokenization {
    /// Picks the tokenizer for a target language code.
    pub fn for_language(code: &str) -> Self {
        if code.eq_ignore_ascii_case("zh") {
            Tokenization::CjkCharacters
        } else {
            Tokenization::Mteval13a
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Tokenization::Mteval13a => "13a",
            Tokenization::CjkCharacters => "zh",
        }
    }

    /// Tokenizes a segment and returns the space-joined token string.
    pub fn tokenize(self, line: &str) -> String {
        let line = line.trim_end_matches(is_py_whitespace);
        match self {
            Tokenization::Mteval13a => tokenize_13a(line),
            Tokenization::CjkCharacters => tokenize_zh(line),
        }
    }
}

/// Whitespace as understood by Python's `str.split()`.
pub(crate) fn is_py_whitespace(c: char) -> bool {
    c.is_whitespace() || ('\u{1c}'..='\u{1f}').contains(&c)
}

pub(crate) fn split_py_whitespace(s: &str) -> impl Iterator<Item = &str> {
    s.split(is_py_whitespace).filter(|t| !t.is_empty())
}

fn tokenize_13a(line: &str) -> String {
    let mut line = line
        .replace("<skipped>", "")
        .replace("-\n", "")
        .replace('\n', " ");
    if line.contains('&') {
        line = line
            .replace("&quot;", "\"")
            .replace("&amp;", "&")
            .replace("&lt;", "<")
            .replace("&gt;", ">");
    }
    let mut padded = String::with_capacity(line.len() + 2);
    padded.push(' ');
    padded.push_str(&line);
    padded.push(' ');
    post_tokenize(&padded)
}

fn tokenize_zh(line: &str) -> String {
    let line = line.trim_matches(is_py_whitespace);
    let mut spaced = String::with_capacity(line.len() * 3);
    for c in line.chars() {
        if is_chinese_char(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    post_tokenize(&spaced)
}

fn is_13a_punct(c: char) -> bool {
    matches!(c, '{'..='~' | '['..='`' | ' '..='&' | '('..='+' | ':'..='@' | '/')
}

fn is_ascii_digit(c: char) -> bool {
    c.is_ascii_digit()
}

fn is_period_or_comma(c: char) -> bool {
    c == '.' || c == ','
}

/// Left-to-right, non-overlapping substitution of a two-character pattern.
fn sub_pairs(
    input: &[char],
    first: impl Fn(char) -> bool,
    second: impl Fn(char) -> bool,
    emit: impl Fn(char, char, &mut Vec<char>),
) -> Vec<char> {
    let mut out = Vec::with_capacity(input.len() + input.len() / 4);
    let mut i = 0;
    while i < input.len() {
        if i + 1 < input.len() && first(input[i]) && second(input[i + 1]) {
            emit(input[i], input[i + 1], &mut out);
            i += 2;
        } else {
            out.push(input[i]);
            i += 1;
        }
    }
    out
}

fn post_tokenize(line: &str) -> String {
    let mut chars: Vec<char> = Vec::with_capacity(line.len() * 2);
    for c in line.chars() {
        if is_13a_punct(c) {
            chars.extend([' ', c, ' ']);
        } else {
            chars.push(c);
        }
    }
    // period and comma unless preceded by a digit
    let chars = sub_pairs(
        &chars,
        |c| !is_ascii_digit(c),
        is_period_or_comma,
        |a, b, out| out.extend([a, ' ', b, ' ']),
    );
    // period and comma unless followed by a digit
    let chars = sub_pairs(
        &chars,
        is_period_or_comma,
        |c| !is_ascii_digit(c),
        |a, b, out| out.extend([' ', a, ' ', b]),
    );
    // dash preceded by a digit
    let chars = sub_pairs(
        &chars,
        is_ascii_digit,
        |c| c == '-',
        |a, b, out| out.extend([a, ' ', b, ' ']),
    );
    let joined: String = chars.into_iter().collect();
    let mut out = String::with_capacity(joined.len());
    for (k, tok) in split_py_whitespace(&joined).enumerate() {
        if k > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

// Ranges as evaluated by the reference scorer. Two of its entries are
// written with five-digit `\u` escapes that Python reads as a BMP character
// followed by a digit, so they effectively cover U+2001..=U+2A6D and
// U+2F81..=U+2FA1. They are kept that way for score compatibility.
const CJK_RANGES: &[(char, char)] = &[
    ('\u{3400}', '\u{4db5}'),
    ('\u{4e00}', '\u{9fa5}'),
    ('\u{9fa6}', '\u{9fbb}'),
    ('\u{f900}', '\u{fa2d}'),
    ('\u{fa30}', '\u{fa6a}'),
    ('\u{fa70}', '\u{fad9}'),
    ('\u{2001}', '\u{2a6d}'),
    ('\u{2f81}', '\u{2fa1}'),
    ('\u{ff00}', '\u{ffef}'),
    ('\u{2e80}', '\u{2eff}'),
    ('\u{3000}', '\u{303f}'),
    ('\u{31c0}', '\u{31ef}'),
    ('\u{2f00}', '\u{2fdf}'),
    ('\u{2ff0}', '\u{2fff}'),
    ('\u{3100}', '\u{312f}'),
    ('\u{31a0}', '\u{31bf}'),
    ('\u{fe10}', '\u{fe1f}'),
    ('\u{fe30}', '\u{fe4f}'),
    ('\u{2600}', '\u{26ff}'),
    ('\u{2700}', '\u{27bf}'),
    ('\u{3200}', '\u{32ff}'),
    ('\u{3300}', '\u{33ff}'),
];

fn is_chinese_char(c: char) -> bool {
    CJK_RANGES.iter().any(|&(lo, hi)| lo <= c && c <= hi)
}
