//! Report text → entity sub-graph.
//!
//! The pipeline tokenizes a report, finds finding mentions with the
//! [`Lexicon`], decides each mention's [`Polarity`] and collects its
//! attributes, either from a supplied dependency parse or with a shallow
//! window fallback. Mentions are then summarized per category.

pub mod attributes;
pub mod conllu;
pub mod lexicon;
pub mod polarity;
pub mod tokenize;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use attributes::extract_attributes;
pub use conllu::{read_conllu, write_conllu, ConlluError, DepToken, ParseTreeError, ParsedSentence};
pub use lexicon::{Lexicon, LexiconEntry, PhraseMatch, DEFAULT_LEXICON};
pub use polarity::{detect_polarity, Polarity, PolarityRules};
pub use tokenize::{tokenize, tokenize_flat};

#[derive(Debug, Error)]
pub enum NlpError {
    #[error("lexicon line {line}: {message}")]
    Lexicon { line: usize, message: String },
    #[error("lexicon phrase {phrase:?} ({source_tag}) must have 1-4 tokens")]
    InvalidPhrase { phrase: String, source_tag: String },
    #[error("lexicon category {category:?} ({source_tag}) is not in the graph")]
    UnknownCategory { category: String, source_tag: String },
    #[error("lexicon phrase {phrase:?} maps to both {first:?} and {second:?}")]
    ConflictingPhrase {
        phrase: String,
        first: String,
        second: String,
    },
    #[error("report has {sentences} sentences but {parses} parses were supplied")]
    ParseCountMismatch { sentences: usize, parses: usize },
    #[error("sentence {sentence}: parse tokens {found:?} do not match text tokens {expected:?}")]
    TokenAlignment {
        sentence: usize,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error(transparent)]
    Tree(#[from] ParseTreeError),
}

/// One finding mention.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Surface form as it appears in the sentence.
    pub word: String,
    pub category: String,
    pub polarity: Polarity,
    pub attributes: BTreeSet<String>,
    pub sentence_index: usize,
    pub span: Range<usize>,
}

/// Resolved state of one category across all of its mentions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub polarity: Polarity,
    pub attributes: BTreeSet<String>,
}

/// Entities of one report and their per-category summary.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityGraph {
    pub entities: Vec<Entity>,
    pub summary: BTreeMap<String, CategorySummary>,
}

/// Fig-4 style record: `[word, category, negation, attributes]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord(pub String, pub String, pub Polarity, pub Vec<String>);

impl EntityGraph {
    /// Builds the summary. A category is positive if any mention is
    /// positive, else uncertain if any is uncertain, else negative; its
    /// attributes are merged over the mentions with the resolved polarity.
    pub fn from_entities(entities: Vec<Entity>) -> Self {
        let mut resolved: BTreeMap<String, Polarity> = BTreeMap::new();
        for e in &entities {
            let slot = resolved.entry(e.category.clone()).or_insert(e.polarity);
            if rank(e.polarity) > rank(*slot) {
                *slot = e.polarity;
            }
        }
        let summary = resolved
            .into_iter()
            .map(|(cat, polarity)| {
                let attributes = entities
                    .iter()
                    .filter(|e| e.category == cat && e.polarity == polarity)
                    .flat_map(|e| e.attributes.iter().cloned())
                    .collect();
                (cat, CategorySummary { polarity, attributes })
            })
            .collect();
        Self { entities, summary }
    }

    /// Summary built directly, without mentions (synthetic graphs, tests).
    pub fn from_summary(summary: BTreeMap<String, CategorySummary>) -> Self {
        Self {
            entities: Vec::new(),
            summary,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty() && self.summary.is_empty()
    }

    pub fn records(&self) -> Vec<EntityRecord> {
        self.entities
            .iter()
            .map(|e| {
                EntityRecord(
                    e.word.clone(),
                    e.category.clone(),
                    e.polarity,
                    e.attributes.iter().cloned().collect(),
                )
            })
            .collect()
    }

    /// One JSON array per entity per line.
    pub fn write_records<W: Write>(&self, mut w: W) -> io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn rank(p: Polarity) -> u8 {
    match p {
        Polarity::Negative => 0,
        Polarity::Uncertain => 1,
        Polarity::Positive => 2,
    }
}

/// Finding mentions of tokenized sentences, all marked positive.
pub fn extract_entities(sentences: &[Vec<String>], lexicon: &Lexicon) -> Vec<Entity> {
    let mut out = Vec::new();
    for (si, sentence) in sentences.iter().enumerate() {
        for m in lexicon.find_matches(sentence) {
            out.push(Entity {
                word: sentence[m.span.clone()].join(" "),
                category: m.category,
                polarity: Polarity::Positive,
                attributes: BTreeSet::new(),
                sentence_index: si,
                span: m.span,
            });
        }
    }
    out
}

/// Lexicon plus polarity rules: everything needed to parse reports.
#[derive(Debug, Clone)]
pub struct ReportParser {
    lexicon: Lexicon,
    rules: PolarityRules,
}

impl ReportParser {
    pub fn new(lexicon: Lexicon, rules: PolarityRules) -> Self {
        Self { lexicon, rules }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn rules(&self) -> &PolarityRules {
        &self.rules
    }

    /// Runs the full pipeline. When `parses` is given it must hold one
    /// tree per sentence whose forms match the tokenizer output.
    pub fn parse(&self, text: &str, parses: Option<&[ParsedSentence]>) -> Result<EntityGraph, NlpError> {
        let sentences = tokenize(text);
        if let Some(parses) = parses {
            if parses.len() != sentences.len() {
                return Err(NlpError::ParseCountMismatch {
                    sentences: sentences.len(),
                    parses: parses.len(),
                });
            }
            for (i, (s, p)) in sentences.iter().zip(parses).enumerate() {
                let aligned = s.len() == p.len()
                    && s.iter().zip(p.forms()).all(|(a, b)| *a == b.to_lowercase());
                if !aligned {
                    return Err(NlpError::TokenAlignment {
                        sentence: i,
                        expected: s.clone(),
                        found: p.forms().iter().map(|f| f.to_string()).collect(),
                    });
                }
            }
        }

        let mut entities = extract_entities(&sentences, &self.lexicon);
        for (si, sentence) in sentences.iter().enumerate() {
            let parse = parses.map(|p| &p[si]);
            let blocked: Vec<Range<usize>> = entities
                .iter()
                .filter(|e| e.sentence_index == si)
                .map(|e| e.span.clone())
                .collect();
            for e in entities.iter_mut().filter(|e| e.sentence_index == si) {
                e.polarity = detect_polarity(sentence, e.span.clone(), parse, &self.rules);
                e.attributes =
                    extract_attributes(sentence, e.span.clone(), parse, &blocked, &self.rules);
            }
        }
        Ok(EntityGraph::from_entities(entities))
    }
}

/// Free-function form of [`ReportParser::parse`].
pub fn parse_report(
    text: &str,
    lexicon: &Lexicon,
    parses: Option<&[ParsedSentence]>,
    rules: &PolarityRules,
) -> Result<EntityGraph, NlpError> {
    ReportParser::new(lexicon.clone(), rules.clone()).parse(text, parses)
}
