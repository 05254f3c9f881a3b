//! Unified-diff parsing and the marker-token change encoding.
//!
//! A commit's diff text may touch several files; [`parse_unified_diff`]
//! returns a [`Patch`] holding one [`CodeDiff`] per file in export order.
//! Encodings concatenate the files' hunks in that order.

use serde::{Deserialize, Serialize};

use crate::error::DiffError;
use crate::tokens::{tokenize, SpecialToken};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LineKind {
    Add,
    Del,
    Keep,
}

impl LineKind {
    pub fn marker(self) -> SpecialToken {
        match self {
            LineKind::Add => SpecialToken::Add,
            LineKind::Del => SpecialToken::Del,
            LineKind::Keep => SpecialToken::Keep,
        }
    }

    pub fn from_marker(token: &str) -> Option<LineKind> {
        match SpecialToken::parse(token)? {
            SpecialToken::Add => Some(LineKind::Add),
            SpecialToken::Del => Some(LineKind::Del),
            SpecialToken::Keep => Some(LineKind::Keep),
            _ => None,
        }
    }

    fn prefix(self) -> char {
        match self {
            LineKind::Add => '+',
            LineKind::Del => '-',
            LineKind::Keep => ' ',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffLine {
    pub kind: LineKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffHunk {
    pub old_start: usize,
    pub old_len: usize,
    pub new_start: usize,
    pub new_len: usize,
    pub lines: Vec<DiffLine>,
}

impl DiffHunk {
    pub fn header(&self) -> String {
        format!(
            "@@ -{},{} +{},{} @@",
            self.old_start, self.old_len, self.new_start, self.new_len
        )
    }

    fn check(&self) -> Result<(), DiffError> {
        let count = |k: LineKind| self.lines.iter().filter(|l| l.kind == k).count();
        let (adds, dels, keeps) = (count(LineKind::Add), count(LineKind::Del), count(LineKind::Keep));
        if self.lines.is_empty() {
            return Err(DiffError::InconsistentHunk {
                header: self.header(),
                message: "hunk has no lines".into(),
            });
        }
        if dels + keeps != self.old_len || adds + keeps != self.new_len {
            return Err(DiffError::InconsistentHunk {
                header: self.header(),
                message: format!(
                    "body has {dels} deleted, {adds} added, {keeps} context lines"
                ),
            });
        }
        Ok(())
    }
}

/// Changes to one file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeDiff {
    pub old_path: String,
    pub new_path: String,
    pub hunks: Vec<DiffHunk>,
}

impl CodeDiff {
    pub fn lines(&self) -> impl Iterator<Item = &DiffLine> {
        self.hunks.iter().flat_map(|h| h.lines.iter())
    }

    pub fn old_view(&self) -> Vec<String> {
        view(self.lines(), LineKind::Add)
    }

    pub fn new_view(&self) -> Vec<String> {
        view(self.lines(), LineKind::Del)
    }
}

fn view<'a>(lines: impl Iterator<Item = &'a DiffLine>, skip: LineKind) -> Vec<String> {
    lines
        .filter(|l| l.kind != skip)
        .map(|l| l.text.clone())
        .collect()
}

/// All file diffs of one commit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub files: Vec<CodeDiff>,
}

impl Patch {
    pub fn lines(&self) -> impl Iterator<Item = &DiffLine> {
        self.files.iter().flat_map(|f| f.lines())
    }

    pub fn line_count(&self) -> usize {
        self.lines().count()
    }

    /// Deleted and context lines in order.
    pub fn old_view(&self) -> Vec<String> {
        view(self.lines(), LineKind::Add)
    }

    /// Added and context lines in order.
    pub fn new_view(&self) -> Vec<String> {
        view(self.lines(), LineKind::Del)
    }

    /// Every old and new path mentioned, excluding `/dev/null` and empty names.
    pub fn paths(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for f in &self.files {
            for p in [&f.old_path, &f.new_path] {
                if !p.is_empty() && p != "/dev/null" && !out.contains(&p.as_str()) {
                    out.push(p.as_str());
                }
            }
        }
        out
    }

    /// Number of tokenizer tokens across all hunk payload lines.
    pub fn payload_token_count(&self) -> usize {
        self.lines().map(|l| tokenize(&l.text).len()).sum()
    }

    /// Renders the patch back into unified-diff text.
    pub fn to_unified(&self) -> String {
        let mut s = String::new();
        for f in &self.files {
            s.push_str(&format!("--- {}\n+++ {}\n", f.old_path, f.new_path));
            for h in &f.hunks {
                s.push_str(&h.header());
                s.push('\n');
                for l in &h.lines {
                    s.push(l.kind.prefix());
                    s.push_str(&l.text);
                    s.push('\n');
                }
            }
        }
        s
    }
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_header(line: &str) -> Result<(usize, usize, usize, usize), DiffError> {
    let bad = || DiffError::BadHeader(line.to_string());
    let rest = line.strip_prefix("@@ ").ok_or_else(bad)?;
    let end = rest.find(" @@").ok_or_else(bad)?;
    let mut parts = rest[..end].split_whitespace();
    let old = parts.next().and_then(|p| p.strip_prefix('-')).ok_or_else(bad)?;
    let new = parts.next().and_then(|p| p.strip_prefix('+')).ok_or_else(bad)?;
    if parts.next().is_some() {
        return Err(bad());
    }
    let (os, ol) = parse_range(old).ok_or_else(bad)?;
    let (ns, nl) = parse_range(new).ok_or_else(bad)?;
    Ok((os, ol, ns, nl))
}

fn strip_path(p: &str) -> String {
    let p = p.split('\t').next().unwrap_or(p).trim();
    if p == "/dev/null" {
        return p.to_string();
    }
    p.strip_prefix("a/")
        .or_else(|| p.strip_prefix("b/"))
        .unwrap_or(p)
        .to_string()
}

struct FileBuilder {
    diff: CodeDiff,
    mode_change: bool,
    header_line: String,
}

impl FileBuilder {
    fn new(header_line: &str) -> Self {
        Self {
            diff: CodeDiff {
                old_path: String::new(),
                new_path: String::new(),
                hunks: Vec::new(),
            },
            mode_change: false,
            header_line: header_line.to_string(),
        }
    }

    fn finish(self, out: &mut Vec<CodeDiff>) -> Result<(), DiffError> {
        if self.diff.hunks.is_empty() {
            if self.mode_change {
                return Err(DiffError::ModeOnly(self.header_line));
            }
            // a header without hunks (e.g. pure rename) contributes nothing
            return Ok(());
        }
        out.push(self.diff);
        Ok(())
    }
}

/// Parses git-style unified diff text.
pub fn parse_unified_diff(text: &str) -> Result<Patch, DiffError> {
    let mut files: Vec<CodeDiff> = Vec::new();
    let mut current: Option<FileBuilder> = None;
    let mut lines = text.lines().enumerate().peekable();

    while let Some((idx, line)) = lines.next() {
        if line.starts_with("diff --git ") {
            if let Some(b) = current.take() {
                b.finish(&mut files)?;
            }
            let mut b = FileBuilder::new(line);
            // `diff --git a/x b/y`: provisional paths until ---/+++ appear
            let rest = &line["diff --git ".len()..];
            if let Some((a, bpath)) = rest.split_once(" b/") {
                b.diff.old_path = strip_path(a);
                b.diff.new_path = bpath.to_string();
            }
            current = Some(b);
        } else if line.starts_with("Binary files ") || line.starts_with("GIT binary patch") {
            return Err(DiffError::Binary(line.to_string()));
        } else if line.starts_with("old mode ")
            || line.starts_with("new mode ")
            || line.starts_with("new file mode ")
            || line.starts_with("deleted file mode ")
        {
            let b = current.get_or_insert_with(|| FileBuilder::new(line));
            if line.starts_with("old mode ") || line.starts_with("new mode ") {
                b.mode_change = true;
            }
        } else if let Some(p) = line.strip_prefix("--- ") {
            let b = current.get_or_insert_with(|| FileBuilder::new(line));
            if !b.diff.hunks.is_empty() {
                // new file section without a `diff --git` line
                let prev = current.take().expect("builder present");
                prev.finish(&mut files)?;
                current = Some(FileBuilder::new(line));
            }
            current.as_mut().expect("builder present").diff.old_path = strip_path(p);
        } else if let Some(p) = line.strip_prefix("+++ ") {
            let b = current.get_or_insert_with(|| FileBuilder::new(line));
            b.diff.new_path = strip_path(p);
        } else if line.starts_with("@@") {
            let (old_start, old_len, new_start, new_len) = parse_header(line)?;
            let mut hunk = DiffHunk {
                old_start,
                old_len,
                new_start,
                new_len,
                lines: Vec::new(),
            };
            let (mut old_left, mut new_left) = (old_len, new_len);
            while old_left > 0 || new_left > 0 {
                let Some(&(_, body)) = lines.peek() else { break };
                let (kind, payload) = match body.chars().next() {
                    Some('+') => (LineKind::Add, &body[1..]),
                    Some('-') => (LineKind::Del, &body[1..]),
                    Some(' ') => (LineKind::Keep, &body[1..]),
                    // some tools strip the single space of empty context lines
                    None => (LineKind::Keep, ""),
                    Some('\\') => {
                        lines.next();
                        continue;
                    }
                    _ => break,
                };
                let fits = match kind {
                    LineKind::Add => new_left > 0,
                    LineKind::Del => old_left > 0,
                    LineKind::Keep => old_left > 0 && new_left > 0,
                };
                if !fits {
                    break;
                }
                match kind {
                    LineKind::Add => new_left -= 1,
                    LineKind::Del => old_left -= 1,
                    LineKind::Keep => {
                        old_left -= 1;
                        new_left -= 1;
                    }
                }
                hunk.lines.push(DiffLine {
                    kind,
                    text: payload.to_string(),
                });
                lines.next();
            }
            // "\ No newline at end of file" may trail the last body line
            while matches!(lines.peek(), Some((_, l)) if l.starts_with('\\')) {
                lines.next();
            }
            if old_left > 0 || new_left > 0 {
                return Err(DiffError::InconsistentHunk {
                    header: line.to_string(),
                    message: format!(
                        "body ended with {old_left} old and {new_left} new lines still expected"
                    ),
                });
            }
            hunk.check()?;
            let b = current.get_or_insert_with(|| FileBuilder::new(line));
            if let Some(prev) = b.diff.hunks.last() {
                let prev_end = prev.old_start + prev.old_len;
                if hunk.old_start <= prev.old_start || hunk.old_start < prev_end {
                    return Err(DiffError::InconsistentHunk {
                        header: line.to_string(),
                        message: format!("overlaps or precedes previous hunk `{}`", prev.header()),
                    });
                }
            }
            b.diff.hunks.push(hunk);
        } else if matches!(line.chars().next(), Some('+' | '-' | ' ')) && current
            .as_ref()
            .is_some_and(|b| !b.diff.hunks.is_empty())
        {
            return Err(DiffError::InconsistentHunk {
                header: current
                    .as_ref()
                    .and_then(|b| b.diff.hunks.last())
                    .map(DiffHunk::header)
                    .unwrap_or_default(),
                message: format!("extra body line {} beyond declared length: `{line}`", idx + 1),
            });
        }
        // anything else (index lines, similarity, commit preamble) is ignored
    }
    if let Some(b) = current.take() {
        b.finish(&mut files)?;
    }
    if files.is_empty() {
        return Err(DiffError::Empty);
    }
    Ok(Patch { files })
}

/// Token sequence of a change: `[CLS]` then marker-prefixed lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeEncoding {
    pub tokens: Vec<String>,
}

impl ChangeEncoding {
    /// Code tokens only, markers and `[CLS]` removed.
    pub fn code_tokens(&self) -> impl Iterator<Item = &String> {
        self.tokens.iter().filter(|t| !SpecialToken::is_special(t))
    }
}

/// Appends one line's marker and tokens to `out`.
pub fn push_line(out: &mut Vec<String>, line: &DiffLine) {
    out.push(line.kind.marker().as_str().to_string());
    out.extend(tokenize(&line.text));
}

pub fn serialize_change(patch: &Patch) -> ChangeEncoding {
    let mut tokens = vec![SpecialToken::Cls.as_str().to_string()];
    for line in patch.lines() {
        push_line(&mut tokens, line);
    }
    ChangeEncoding { tokens }
}

/// `serialize_change(patch) ++ [MSG] ++ tokenize(message)`.
pub fn serialize_change_with_message(patch: &Patch, message: &str) -> Vec<String> {
    let mut tokens = serialize_change(patch).tokens;
    tokens.push(SpecialToken::Msg.as_str().to_string());
    tokens.extend(tokenize(message));
    tokens
}

/// Groups a marker-prefixed token sequence back into lines. A leading
/// `[CLS]` is skipped; tokens before the first marker are rejected.
pub fn group_by_markers(tokens: &[String]) -> Option<Vec<(LineKind, Vec<String>)>> {
    let body = match tokens.first() {
        Some(t) if t == SpecialToken::Cls.as_str() => &tokens[1..],
        _ => tokens,
    };
    let mut out: Vec<(LineKind, Vec<String>)> = Vec::new();
    for tok in body {
        if let Some(kind) = LineKind::from_marker(tok) {
            out.push((kind, Vec::new()));
        } else {
            out.last_mut()?.1.push(tok.clone());
        }
    }
    Some(out)
}
