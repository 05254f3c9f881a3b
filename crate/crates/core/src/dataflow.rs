//! "Where-the-value-comes-from" graphs over a small imperative line language.
//!
//! Each source line is tokenized and examined on its own:
//!
//! - a line of the form `IDENT = <expr>` defines `IDENT` at token 0;
//! - every identifier inside `<expr>` (or anywhere on a non-assignment line)
//!   is a use, unless it is a keyword, a literal, inside a string, or a call
//!   name directly followed by `(`;
//! - a use gets an edge to the most recent definition of the same name on
//!   an earlier line, if there is one;
//! - on an assignment line each use additionally gets an edge to the line's
//!   definition.
//!
//! Code that does not fit simply yields fewer edges.

use serde::{Deserialize, Serialize};

use crate::tokens::{tokenize, SpecialToken};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarOccurrence {
    pub name: String,
    pub line_index: usize,
    pub token_index: usize,
}

impl VarOccurrence {
    fn pos(&self) -> (usize, usize) {
        (self.line_index, self.token_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataFlowEdge {
    pub user: VarOccurrence,
    pub source: VarOccurrence,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataFlowGraph {
    pub edges: Vec<DataFlowEdge>,
}

impl DataFlowGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }
}

const KEYWORDS: &[&str] = &[
    "True", "False", "None", "true", "false", "null", "nil", "undefined", "if", "else", "elif",
    "for", "while", "return", "def", "func", "function", "class", "import", "from", "as", "in",
    "not", "and", "or", "is", "new", "var", "let", "const", "public", "private", "protected",
    "static", "final", "void", "int", "float", "double", "bool", "boolean", "string", "String",
    "char", "long", "this", "self", "end", "do", "then", "lambda", "pass", "break", "continue",
    "try", "catch", "except", "finally", "throw", "raise", "with", "yield", "package", "type",
    "struct", "interface", "switch", "case", "default", "go", "defer", "range", "echo", "use",
];

pub fn is_identifier(tok: &str) -> bool {
    let mut chars = tok.chars();
    match chars.next() {
        Some(c) if c.is_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_alphanumeric() || c == '_')
        && !KEYWORDS.contains(&tok)
        && !SpecialToken::is_special(tok)
}

fn is_quote(tok: &str) -> bool {
    matches!(tok, "\"" | "'" | "`")
}

/// Token indices in `tokens[from..]` that count as variable uses.
fn uses(tokens: &[String], from: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut open_quote: Option<&str> = None;
    for i in from..tokens.len() {
        let t = tokens[i].as_str();
        if let Some(q) = open_quote {
            if t == q {
                open_quote = None;
            }
            continue;
        }
        if is_quote(t) {
            open_quote = Some(t);
            continue;
        }
        if !is_identifier(t) {
            continue;
        }
        if tokens.get(i + 1).is_some_and(|n| n == "(") {
            continue;
        }
        out.push(i);
    }
    out
}

fn is_assignment(tokens: &[String]) -> bool {
    tokens.len() >= 2
        && is_identifier(&tokens[0])
        && tokens[1] == "="
        && tokens.get(2).is_none_or(|t| t != "=")
}

/// Extracts the data-flow graph of `code_lines`.
pub fn extract_dataflow<S: AsRef<str>>(code_lines: &[S]) -> DataFlowGraph {
    let tokenized: Vec<Vec<String>> = code_lines.iter().map(|l| tokenize(l.as_ref())).collect();
    extract_dataflow_tokens(&tokenized)
}

/// Same as [`extract_dataflow`] on pre-tokenized lines.
pub fn extract_dataflow_tokens(lines: &[Vec<String>]) -> DataFlowGraph {
    use std::collections::HashMap;

    let mut last_def: HashMap<&str, VarOccurrence> = HashMap::new();
    let mut edges = Vec::new();

    for (li, tokens) in lines.iter().enumerate() {
        let assign = is_assignment(tokens);
        let start = if assign { 2 } else { 0 };
        let def = assign.then(|| VarOccurrence {
            name: tokens[0].clone(),
            line_index: li,
            token_index: 0,
        });
        for ti in uses(tokens, start) {
            let user = VarOccurrence {
                name: tokens[ti].clone(),
                line_index: li,
                token_index: ti,
            };
            let mut sources: Vec<VarOccurrence> = Vec::with_capacity(2);
            if let Some(prev) = last_def.get(tokens[ti].as_str()) {
                sources.push(prev.clone());
            }
            if let Some(d) = &def {
                sources.push(d.clone());
            }
            sources.sort_by_key(VarOccurrence::pos);
            for source in sources {
                edges.push(DataFlowEdge {
                    user: user.clone(),
                    source,
                });
            }
        }
        if let Some(d) = def {
            last_def.insert(tokens[0].as_str(), d);
        }
    }
    DataFlowGraph { edges }
}

/// `use src [EDGE] use src ...` with bare variable names.
pub fn serialize_edges(graph: &DataFlowGraph) -> Vec<String> {
    let mut out = Vec::with_capacity(graph.edges.len() * 3);
    for (i, e) in graph.edges.iter().enumerate() {
        if i > 0 {
            out.push(SpecialToken::Edge.as_str().to_string());
        }
        out.push(e.user.name.clone());
        out.push(e.source.name.clone());
    }
    out
}

/// Positions of the two `[SEP]` tokens in a CDG input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CdgLayout {
    pub first_sep: usize,
    pub second_sep: usize,
}

/// `[CLS] old-code [SEP] old-edges [SEP] new-edges`, plus the separator positions.
pub fn build_cdg_input<S: AsRef<str>>(
    old_code: &[S],
    old_df: &DataFlowGraph,
    new_df: &DataFlowGraph,
) -> (Vec<String>, CdgLayout) {
    let mut out = vec![SpecialToken::Cls.as_str().to_string()];
    for line in old_code {
        out.extend(tokenize(line.as_ref()));
    }
    let first_sep = out.len();
    out.push(SpecialToken::Sep.as_str().to_string());
    out.extend(serialize_edges(old_df));
    let second_sep = out.len();
    out.push(SpecialToken::Sep.as_str().to_string());
    out.extend(serialize_edges(new_df));
    (
        out,
        CdgLayout {
            first_sep,
            second_sep,
        },
    )
}
