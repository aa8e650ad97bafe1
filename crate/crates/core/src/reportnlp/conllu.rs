//! Dependency parses and the CoNLL-U reader/writer.
//!
//! Only the ID, FORM, HEAD and DEPREL columns are used. Multi-word token
//! ranges (`3-4`) and empty nodes (`5.1`) are skipped, `#` lines are
//! comments, and a blank line ends a sentence.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseTreeError {
    #[error("sentence has no root token")]
    NoRoot,
    #[error("sentence has more than one root (tokens {0} and {1})")]
    MultipleRoots(usize, usize),
    #[error("token {token} has head {head} outside 0..={len}")]
    HeadOutOfRange { token: usize, head: usize, len: usize },
    #[error("token {0} is part of a head cycle")]
    Cycle(usize),
    #[error("empty sentence")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConlluError {
    #[error("line {line}: expected 10 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("line {line}: bad {column} value {value:?}")]
    Field {
        line: usize,
        column: &'static str,
        value: String,
    },
    #[error("line {line}: token id {found} out of sequence (expected {expected})")]
    Sequence {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("sentence ending at line {line}: {source}")]
    Tree {
        line: usize,
        #[source]
        source: ParseTreeError,
    },
}

/// One token of a parsed sentence. `head` is 1-based; 0 marks the root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepToken {
    pub form: String,
    pub head: usize,
    pub deprel: String,
}

impl DepToken {
    pub fn new(form: impl Into<String>, head: usize, deprel: impl Into<String>) -> Self {
        Self {
            form: form.into(),
            head,
            deprel: deprel.into(),
        }
    }

    /// Relation without its subtype (`nmod:in` → `nmod`).
    pub fn base_relation(&self) -> &str {
        self.deprel.split(':').next().unwrap_or("")
    }
}

/// A validated dependency tree: exactly one root, heads in range, acyclic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    tokens: Vec<DepToken>,
}

impl ParsedSentence {
    pub fn new(tokens: Vec<DepToken>) -> Result<Self, ParseTreeError> {
        let len = tokens.len();
        if len == 0 {
            return Err(ParseTreeError::Empty);
        }
        let mut root = None;
        for (i, t) in tokens.iter().enumerate() {
            if t.head > len {
                return Err(ParseTreeError::HeadOutOfRange {
                    token: i + 1,
                    head: t.head,
                    len,
                });
            }
            if t.head == 0 {
                if let Some(r) = root {
                    return Err(ParseTreeError::MultipleRoots(r, i + 1));
                }
                root = Some(i + 1);
            }
        }
        if root.is_none() {
            return Err(ParseTreeError::NoRoot);
        }
        for start in 0..len {
            let mut cur = start;
            let mut steps = 0;
            while tokens[cur].head != 0 {
                cur = tokens[cur].head - 1;
                steps += 1;
                if steps > len {
                    return Err(ParseTreeError::Cycle(start + 1));
                }
            }
        }
        Ok(Self { tokens })
    }

    pub fn tokens(&self) -> &[DepToken] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Head of the 0-based token `i`, as a 0-based index (`None` for the root).
    pub fn head_of(&self, i: usize) -> Option<usize> {
        match self.tokens[i].head {
            0 => None,
            h => Some(h - 1),
        }
    }

    /// 0-based dependents of the 0-based token `i`, in sentence order.
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.tokens
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.head == i + 1)
            .map(|(j, _)| j)
    }

    /// Number of edges on the undirected tree path between two tokens.
    pub fn path_length(&self, a: usize, b: usize) -> usize {
        let ancestors = |mut x: usize| {
            let mut chain = vec![x];
            while let Some(h) = self.head_of(x) {
                chain.push(h);
                x = h;
            }
            chain
        };
        let ca = ancestors(a);
        let cb = ancestors(b);
        for (da, x) in ca.iter().enumerate() {
            if let Some(db) = cb.iter().position(|y| y == x) {
                return da + db;
            }
        }
        // Unreachable for a validated tree: both chains end at the root.
        ca.len() + cb.len()
    }

    /// The token of `span` whose head lies outside it (the first, if several).
    pub fn span_head(&self, span: std::ops::Range<usize>) -> usize {
        span.clone()
            .find(|&i| self.head_of(i).is_none_or(|h| !span.contains(&h)))
            .unwrap_or(span.start)
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form.as_str()).collect()
    }
}

/// Reads every sentence of a CoNLL-U document.
pub fn read_conllu(text: &str) -> Result<Vec<ParsedSentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut current: Vec<DepToken> = Vec::new();
    let mut last_line = 0;

    let flush = |current: &mut Vec<DepToken>,
                 sentences: &mut Vec<ParsedSentence>,
                 line: usize|
     -> Result<(), ConlluError> {
        if current.is_empty() {
            return Ok(());
        }
        let s = ParsedSentence::new(std::mem::take(current))
            .map_err(|source| ConlluError::Tree { line, source })?;
        sentences.push(s);
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let raw = raw.trim_end_matches('\r');
        if raw.trim().is_empty() {
            flush(&mut current, &mut sentences, line)?;
            continue;
        }
        if raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 10 {
            return Err(ConlluError::Columns {
                line,
                found: cols.len(),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| ConlluError::Field {
            line,
            column: "ID",
            value: id.to_string(),
        })?;
        if id != current.len() + 1 {
            return Err(ConlluError::Sequence {
                line,
                expected: current.len() + 1,
                found: id,
            });
        }
        let head: usize = cols[6].parse().map_err(|_| ConlluError::Field {
            line,
            column: "HEAD",
            value: cols[6].to_string(),
        })?;
        current.push(DepToken::new(cols[1], head, cols[7]));
    }
    flush(&mut current, &mut sentences, last_line)?;
    Ok(sentences)
}

/// Writes sentences as CoNLL-U; unused columns are `_`.
pub fn write_conllu(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, t) in s.tokens.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                t.form,
                t.head,
                t.deprel
            );
        }
        out.push('\n');
    }
    out
}
