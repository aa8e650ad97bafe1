//! Finding lexicon: surface phrases mapped to graph categories.

use std::collections::HashMap;
use std::ops::Range;

use crate::chestkg::ChestGraph;

use super::NlpError;

/// The shipped lexicon, in the tab-separated file format.
pub const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.tsv");

/// Longest phrase, in tokens.
pub const MAX_PHRASE_TOKENS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub phrase: String,
    pub category: String,
    pub source: String,
}

/// A validated phrase table. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
}

/// One lexicon hit inside a sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseMatch {
    pub span: Range<usize>,
    pub category: String,
}

/// Lowercases and drops a trailing plural `s` (but not `-ss`, `-is`, `-us`).
pub fn normalize_token(token: &str) -> String {
    let lower = token.to_lowercase();
    let strip = lower.chars().count() > 3
        && lower.ends_with('s')
        && !(lower.ends_with("ss") || lower.ends_with("is") || lower.ends_with("us"));
    if strip {
        lower[..lower.len() - 1].to_string()
    } else {
        lower
    }
}

fn phrase_key<S: AsRef<str>>(tokens: &[S]) -> String {
    tokens
        .iter()
        .map(|t| normalize_token(t.as_ref()))
        .collect::<Vec<_>>()
        .join(" ")
}

impl Lexicon {
    /// The shipped lexicon, validated against `graph`.
    pub fn default_for(graph: &ChestGraph) -> Result<Self, NlpError> {
        Self::parse(DEFAULT_LEXICON, "default", graph)
    }

    /// Parses `phrase<TAB>category` lines; `#` starts a comment line.
    pub fn parse(text: &str, source: &str, graph: &ChestGraph) -> Result<Self, NlpError> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let Some((phrase, category)) = line.split_once('\t') else {
                return Err(NlpError::Lexicon {
                    line: lineno + 1,
                    message: "expected `phrase<TAB>category`".into(),
                });
            };
            entries.push(LexiconEntry {
                phrase: phrase.trim().to_lowercase(),
                category: category.trim().to_string(),
                source: format!("{source}:{}", lineno + 1),
            });
        }
        Self::from_entries(entries, graph)
    }

    pub fn from_entries(entries: Vec<LexiconEntry>, graph: &ChestGraph) -> Result<Self, NlpError> {
        let mut index = HashMap::new();
        let mut kept: Vec<LexiconEntry> = Vec::with_capacity(entries.len());
        for entry in entries {
            let tokens: Vec<&str> = entry.phrase.split_whitespace().collect();
            if tokens.is_empty() || tokens.len() > MAX_PHRASE_TOKENS {
                return Err(NlpError::InvalidPhrase {
                    phrase: entry.phrase.clone(),
                    source_tag: entry.source.clone(),
                });
            }
            if !graph.contains_category(&entry.category) {
                return Err(NlpError::UnknownCategory {
                    category: entry.category.clone(),
                    source_tag: entry.source.clone(),
                });
            }
            let key = phrase_key(&tokens);
            match index.get(&key) {
                Some(&existing) => {
                    let prev: &LexiconEntry = &kept[existing];
                    if prev.category != entry.category {
                        return Err(NlpError::ConflictingPhrase {
                            phrase: entry.phrase.clone(),
                            first: prev.category.clone(),
                            second: entry.category.clone(),
                        });
                    }
                }
                None => {
                    index.insert(key, kept.len());
                    kept.push(entry);
                }
            }
        }
        Ok(Self {
            entries: kept,
            index,
        })
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup<S: AsRef<str>>(&self, tokens: &[S]) -> Option<&LexiconEntry> {
        self.index.get(&phrase_key(tokens)).map(|&i| &self.entries[i])
    }

    /// Left-to-right, longest-first, non-overlapping matches.
    pub fn find_matches<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<PhraseMatch> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let longest = MAX_PHRASE_TOKENS.min(tokens.len() - i);
            let hit = (1..=longest)
                .rev()
                .find_map(|len| self.lookup(&tokens[i..i + len]).map(|e| (len, e)));
            match hit {
                Some((len, entry)) => {
                    out.push(PhraseMatch {
                        span: i..i + len,
                        category: entry.category.clone(),
                    });
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}
