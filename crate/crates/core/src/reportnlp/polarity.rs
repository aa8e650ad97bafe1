//! Rule-based negation and uncertainty detection.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::conllu::ParsedSentence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Uncertain,
}

impl Polarity {
    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Positive => "positive",
            Polarity::Negative => "negative",
            Polarity::Uncertain => "uncertain",
        }
    }
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Trigger phrases and scope limits.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarityRules {
    /// Negation triggers that precede the finding.
    pub negation_pre: Vec<Vec<String>>,
    /// Negation triggers that follow the finding.
    pub negation_post: Vec<Vec<String>>,
    /// Uncertainty triggers, on either side.
    pub uncertainty: Vec<Vec<String>>,
    /// Tokens that end a trigger's scope.
    pub scope_cuts: Vec<String>,
    /// Maximum tokens between trigger and finding on raw tokens.
    pub window: usize,
    /// Maximum dependency-path length between trigger and finding head.
    pub max_path: usize,
}

fn phrases(list: &[&str]) -> Vec<Vec<String>> {
    list.iter()
        .map(|p| p.split_whitespace().map(str::to_string).collect())
        .collect()
}

impl Default for PolarityRules {
    fn default() -> Self {
        Self {
            negation_pre: phrases(&[
                "no",
                "without",
                "free of",
                "negative for",
                "clear of",
                "absence of",
                "rather than",
            ]),
            negation_post: phrases(&["is absent", "has resolved"]),
            uncertainty: phrases(&[
                "may",
                "possible",
                "cannot exclude",
                "suspicious for",
                "question of",
            ]),
            scope_cuts: vec!["but".into(), "however".into(), ";".into()],
            window: 6,
            max_path: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Before,
    After,
    Either,
}

impl PolarityRules {
    /// Every word that belongs to a negation trigger.
    pub fn negation_words(&self) -> BTreeSet<&str> {
        self.negation_pre
            .iter()
            .chain(&self.negation_post)
            .flatten()
            .map(String::as_str)
            .collect()
    }

    /// Every word that belongs to any trigger.
    pub fn trigger_words(&self) -> BTreeSet<&str> {
        let mut words = self.negation_words();
        words.extend(self.uncertainty.iter().flatten().map(String::as_str));
        words
    }

    fn governs(
        &self,
        triggers: &[Vec<String>],
        side: Side,
        tokens: &[String],
        span: &Range<usize>,
        parse: Option<&ParsedSentence>,
    ) -> bool {
        occurrences(triggers, tokens)
            .into_iter()
            .any(|t| self.in_scope(&t, side, tokens, span, parse))
    }

    fn in_scope(
        &self,
        trigger: &Range<usize>,
        side: Side,
        tokens: &[String],
        span: &Range<usize>,
        parse: Option<&ParsedSentence>,
    ) -> bool {
        let between = if trigger.end <= span.start {
            if side == Side::After {
                return false;
            }
            trigger.end..span.start
        } else if trigger.start >= span.end {
            if side == Side::Before {
                return false;
            }
            span.end..trigger.start
        } else {
            // overlaps the finding itself
            return false;
        };
        if tokens[between.clone()]
            .iter()
            .any(|t| self.scope_cuts.iter().any(|c| c == t))
        {
            return false;
        }
        match parse {
            None => between.len() <= self.window,
            Some(tree) => {
                let head = tree.span_head(span.clone());
                trigger
                    .clone()
                    .any(|t| tree.path_length(t, head) <= self.max_path)
            }
        }
    }
}

fn occurrences(triggers: &[Vec<String>], tokens: &[String]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    for phrase in triggers {
        let n = phrase.len();
        if n == 0 || n > tokens.len() {
            continue;
        }
        for start in 0..=tokens.len() - n {
            if tokens[start..start + n] == phrase[..] {
                out.push(start..start + n);
            }
        }
    }
    out
}

/// Polarity of the finding at `span` within one sentence.
///
/// With a parse, a trigger is in scope when its tree distance to the
/// finding's head is within `max_path`; otherwise within `window` tokens.
/// Negation takes precedence over uncertainty.
pub fn detect_polarity(
    tokens: &[String],
    span: Range<usize>,
    parse: Option<&ParsedSentence>,
    rules: &PolarityRules,
) -> Polarity {
    let negated = rules.governs(&rules.negation_pre, Side::Before, tokens, &span, parse)
        || rules.governs(&rules.negation_post, Side::After, tokens, &span, parse);
    if negated {
        Polarity::Negative
    } else if rules.governs(&rules.uncertainty, Side::Either, tokens, &span, parse) {
        Polarity::Uncertain
    } else {
        Polarity::Positive
    }
}
