//! Tokenizer, special-token registry and frequency vocabulary.
//!
//! The tokenizer is rule based and fully deterministic: text is split on
//! whitespace, then each chunk is split into runs of word characters
//! (alphanumeric or `_`) and single punctuation characters. Special tokens
//! such as `[CLS]` are recognised verbatim and never split.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Marker and control tokens. Their declaration order is their vocabulary id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SpecialToken {
    Cls,
    Msg,
    Sep,
    Edge,
    Add,
    Del,
    Keep,
    Mask,
    Pad,
    Unk,
    Bos,
    Eos,
}

impl SpecialToken {
    pub const ALL: [SpecialToken; 12] = [
        SpecialToken::Cls,
        SpecialToken::Msg,
        SpecialToken::Sep,
        SpecialToken::Edge,
        SpecialToken::Add,
        SpecialToken::Del,
        SpecialToken::Keep,
        SpecialToken::Mask,
        SpecialToken::Pad,
        SpecialToken::Unk,
        SpecialToken::Bos,
        SpecialToken::Eos,
    ];

    pub const COUNT: usize = 12;

    pub fn as_str(self) -> &'static str {
        match self {
            SpecialToken::Cls => "[CLS]",
            SpecialToken::Msg => "[MSG]",
            SpecialToken::Sep => "[SEP]",
            SpecialToken::Edge => "[EDGE]",
            SpecialToken::Add => "[ADD]",
            SpecialToken::Del => "[DEL]",
            SpecialToken::Keep => "[KEEP]",
            SpecialToken::Mask => "[MASK]",
            SpecialToken::Pad => "[PAD]",
            SpecialToken::Unk => "[UNK]",
            SpecialToken::Bos => "[BOS]",
            SpecialToken::Eos => "[EOS]",
        }
    }

    /// Fixed vocabulary id.
    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn parse(s: &str) -> Option<SpecialToken> {
        SpecialToken::ALL.iter().copied().find(|t| t.as_str() == s)
    }

    pub fn is_special(s: &str) -> bool {
        Self::parse(s).is_some()
    }
}

impl fmt::Display for SpecialToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Case policy for [`tokenize_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CaseMode {
    #[default]
    Preserve,
    Lower,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

fn special_prefix(s: &str) -> Option<&'static str> {
    if !s.starts_with('[') {
        return None;
    }
    SpecialToken::ALL
        .iter()
        .map(|t| t.as_str())
        .find(|t| s.starts_with(t))
}

/// Splits `text` into tokens, preserving case.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with(text, CaseMode::Preserve)
}

/// Splits `text` into tokens and lowercases them (special tokens excepted).
pub fn tokenize_lower(text: &str) -> Vec<String> {
    tokenize_with(text, CaseMode::Lower)
}

pub fn tokenize_with(text: &str, mode: CaseMode) -> Vec<String> {
    let (tokens, _) = tokenize_spaced(text);
    match mode {
        CaseMode::Preserve => tokens,
        CaseMode::Lower => tokens
            .into_iter()
            .map(|t| if SpecialToken::is_special(&t) { t } else { t.to_lowercase() })
            .collect(),
    }
}

/// Whitespace that surrounded each token, so that tokenization can be inverted.
///
/// `before[i]` is the whitespace preceding token `i`; `trailing` follows the
/// last token (or is the whole input when there are no tokens).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Spacing {
    pub before: Vec<String>,
    pub trailing: String,
}

/// Tokenizes `text` and records the whitespace map needed by [`detokenize`].
pub fn tokenize_spaced(text: &str) -> (Vec<String>, Spacing) {
    let mut tokens = Vec::new();
    let mut spacing = Spacing::default();
    let mut pending_ws = String::new();
    let mut rest = text;

    while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            pending_ws.push(c);
            rest = &rest[c.len_utf8()..];
            continue;
        }
        let len = if let Some(sp) = special_prefix(rest) {
            sp.len()
        } else if is_word_char(c) {
            rest.char_indices()
                .find(|&(_, ch)| !is_word_char(ch))
                .map(|(i, _)| i)
                .unwrap_or(rest.len())
        } else {
            c.len_utf8()
        };
        tokens.push(rest[..len].to_string());
        spacing.before.push(std::mem::take(&mut pending_ws));
        rest = &rest[len..];
    }
    spacing.trailing = pending_ws;
    (tokens, spacing)
}

/// Inverse of [`tokenize_spaced`].
pub fn detokenize(tokens: &[String], spacing: &Spacing) -> String {
    let mut out = String::new();
    for (tok, ws) in tokens.iter().zip(&spacing.before) {
        out.push_str(ws);
        out.push_str(tok);
    }
    out.push_str(&spacing.trailing);
    out
}

/// Token/id bijection. Ids `0..12` are always the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, u32>,
    min_freq: usize,
}

impl Vocabulary {
    /// Vocabulary containing only the special tokens.
    pub fn specials_only() -> Self {
        Self::from_tokens(Vec::new(), 1).expect("special tokens are valid")
    }

    /// Builds a vocabulary from a token stream. Tokens with frequency at least
    /// `min_freq` are kept and ordered by descending frequency, ties broken
    /// lexicographically.
    pub fn build<I, S>(corpus: I, min_freq: usize) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if min_freq < 1 {
            return Err(Error::Vocab("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for tok in corpus {
            let tok = tok.as_ref();
            if SpecialToken::is_special(tok) {
                continue;
            }
            *counts.entry(tok.to_string()).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(ranked.into_iter().map(|(t, _)| t).collect(), min_freq)
    }

    fn from_tokens(regular: Vec<String>, min_freq: usize) -> Result<Self> {
        let mut id_to_token: Vec<String> =
            SpecialToken::ALL.iter().map(|t| t.as_str().to_string()).collect();
        id_to_token.extend(regular);
        let mut token_to_id = HashMap::with_capacity(id_to_token.len());
        for (i, t) in id_to_token.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::Vocab(format!("invalid token {t:?} at id {i}")));
            }
            if token_to_id.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            id_to_token,
            token_to_id,
            min_freq,
        })
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.id_to_token
    }

    /// Number of non-special entries.
    pub fn regular_count(&self) -> usize {
        self.len() - SpecialToken::COUNT
    }

    /// Maps tokens to ids; unknown tokens become `[UNK]`.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(SpecialToken::Unk.id()))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&id| {
                self.token(id)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Vocab(format!("id {id} out of range (size {})", self.len())))
            })
            .collect()
    }

    /// One token per line, line number = id.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.id_to_token {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SpecialToken::COUNT {
            return Err(Error::Vocab("vocabulary file shorter than the special-token block".into()));
        }
        for (i, sp) in SpecialToken::ALL.iter().enumerate() {
            if lines[i] != sp.as_str() {
                return Err(Error::Vocab(format!(
                    "line {} should be {} but is {:?}",
                    i + 1,
                    sp,
                    lines[i]
                )));
            }
        }
        let regular = lines[SpecialToken::COUNT..].iter().map(|s| s.to_string()).collect();
        Self::from_tokens(regular, 1)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_text().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut text = String::new();
        for line in f.lines() {
            text.push_str(&line?);
            text.push('\n');
        }
        Self::from_text(&text)
    }
}
