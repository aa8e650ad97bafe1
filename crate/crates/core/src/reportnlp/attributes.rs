//! Attribute (modifier) extraction for finding mentions.

use std::collections::BTreeSet;
use std::ops::Range;

use super::conllu::ParsedSentence;
use super::lexicon::normalize_token;
use super::polarity::PolarityRules;

/// Relations whose direct dependents of the finding head are attributes.
const DIRECT_RELATIONS: [&str; 6] = ["amod", "neg", "dobj", "obj", "nsubj", "compound"];
/// Nominal-modifier relations followed through the tree ("vmod" is the
/// older Stanford label for the same family).
const NOUN_RELATIONS: [&str; 4] = ["nmod", "vmod", "obl", "pobj"];
const MAX_NOUN_HOPS: usize = 2;

const FOLLOWING_PREPOSITIONS: [&str; 3] = ["in", "of", "at"];
const DETERMINERS: [&str; 3] = ["the", "a", "an"];

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "there", "here", "is", "are", "was",
    "were", "be", "been", "being", "am", "has", "have", "had", "do", "does", "did", "will",
    "would", "should", "could", "can", "may", "might", "must", "and", "or", "nor", "but",
    "however", "with", "without", "of", "in", "at", "on", "by", "for", "from", "to", "into",
    "onto", "over", "under", "as", "than", "then", "it", "its", "they", "their", "which",
    "who", "whom", "what", "not", "no", "any", "some", "evidence", "finding", "findings",
    "seen", "noted", "identified", "again", "also", "very", "both", "each", "per",
];

fn is_content_word(token: &str, rules: &PolarityRules) -> bool {
    token.chars().any(char::is_alphabetic)
        && token.chars().all(|c| c.is_alphanumeric() || c == '-')
        && !STOPWORDS.contains(&token)
        && !rules.trigger_words().contains(token)
}

/// Attributes of the finding at `span`.
///
/// With a parse: dependents of the finding head related by amod, neg,
/// dobj/obj, nsubj or compound, plus nouns reached through up to two
/// nominal-modifier hops (nmod/vmod/obl, or prep→pobj). Without a parse:
/// the run of content words directly before the span (at most three) and
/// the head noun of an `in/of/at [the] X` phrase right after it.
///
/// Tokens inside `span` or any `blocked` range (fallback only) and polarity
/// trigger words are never attributes. Attributes are normalized with
/// [`normalize_token`].
pub fn extract_attributes(
    tokens: &[String],
    span: Range<usize>,
    parse: Option<&ParsedSentence>,
    blocked: &[Range<usize>],
    rules: &PolarityRules,
) -> BTreeSet<String> {
    let triggers = rules.trigger_words();
    let excluded = |i: usize| {
        span.contains(&i)
            || triggers.contains(tokens[i].as_str())
            || !tokens[i].chars().any(char::is_alphanumeric)
    };
    let mut out = BTreeSet::new();
    match parse {
        Some(tree) => {
            let head = tree.span_head(span.clone());
            collect_tree(tree, head, 0, true, &excluded, tokens, &mut out);
        }
        None => {
            let is_blocked = |i: usize| blocked.iter().any(|r| r.contains(&i));
            let usable = |i: usize| {
                !excluded(i) && !is_blocked(i) && is_content_word(&tokens[i], rules)
            };
            let mut j = span.start;
            while j > 0 && span.start - j < 3 {
                j -= 1;
                if !usable(j) {
                    break;
                }
                out.insert(normalize_token(&tokens[j]));
            }
            let mut k = span.end;
            if k < tokens.len() && FOLLOWING_PREPOSITIONS.contains(&tokens[k].as_str()) {
                k += 1;
                while k < tokens.len() && DETERMINERS.contains(&tokens[k].as_str()) {
                    k += 1;
                }
                let mut last = None;
                while k < tokens.len() && usable(k) {
                    last = Some(k);
                    k += 1;
                }
                if let Some(h) = last {
                    out.insert(normalize_token(&tokens[h]));
                }
            }
        }
    }
    out
}

fn collect_tree(
    tree: &ParsedSentence,
    node: usize,
    hops: usize,
    top: bool,
    excluded: &dyn Fn(usize) -> bool,
    tokens: &[String],
    out: &mut BTreeSet<String>,
) {
    for child in tree.children(node) {
        let rel = tree.tokens()[child].base_relation();
        if rel == "prep" {
            collect_tree(tree, child, hops, false, excluded, tokens, out);
            continue;
        }
        let noun = NOUN_RELATIONS.contains(&rel);
        if noun && hops < MAX_NOUN_HOPS {
            if !excluded(child) {
                out.insert(normalize_token(&tokens[child]));
            }
            collect_tree(tree, child, hops + 1, false, excluded, tokens, out);
        } else if top && DIRECT_RELATIONS.contains(&rel) && !excluded(child) {
            out.insert(normalize_token(&tokens[child]));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reportnlp::conllu::DepToken;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn set(v: &[&str]) -> BTreeSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn lingula_tree() -> ParsedSentence {
        ParsedSentence::new(vec![
            DepToken::new("there", 2, "expl"),
            DepToken::new("is", 0, "root"),
            DepToken::new("minimal", 6, "amod"),
            DepToken::new("patchy", 6, "amod"),
            DepToken::new("airspace", 6, "compound"),
            DepToken::new("disease", 2, "nsubj"),
            DepToken::new("in", 9, "case"),
            DepToken::new("the", 9, "det"),
            DepToken::new("lingula", 6, "nmod"),
        ])
        .unwrap()
    }

    const LINGULA: &str = "there is minimal patchy airspace disease in the lingula";

    #[test]
    fn parse_mode_lingula() {
        let attrs = extract_attributes(
            &toks(LINGULA),
            4..6,
            Some(&lingula_tree()),
            &[],
            &PolarityRules::default(),
        );
        assert_eq!(attrs, set(&["minimal", "patchy", "lingula"]));
    }

    #[test]
    fn fallback_lingula() {
        let attrs = extract_attributes(&toks(LINGULA), 4..6, None, &[], &PolarityRules::default());
        assert!(attrs.is_superset(&set(&["minimal", "patchy"])));
        assert_eq!(attrs, set(&["minimal", "patchy", "lingula"]));
    }

    #[test]
    fn trivial_sentence_has_no_attributes() {
        let tree = ParsedSentence::new(vec![
            DepToken::new("pneumothorax", 0, "root"),
            DepToken::new(".", 1, "punct"),
        ])
        .unwrap();
        let t = toks("pneumothorax .");
        let rules = PolarityRules::default();
        assert!(extract_attributes(&t, 0..1, Some(&tree), &[], &rules).is_empty());
        assert!(extract_attributes(&t, 0..1, None, &[], &rules).is_empty());
    }

    #[test]
    fn stanford_prep_pobj_chain_and_depth_limit() {
        // disease -prep-> in -pobj-> lobe -prep-> of -pobj-> lung -prep-> near -pobj-> hilum
        let t = toks("disease in lobe of lung near hilum");
        let tree = ParsedSentence::new(vec![
            DepToken::new("disease", 0, "root"),
            DepToken::new("in", 1, "prep"),
            DepToken::new("lobe", 2, "pobj"),
            DepToken::new("of", 3, "prep"),
            DepToken::new("lung", 4, "pobj"),
            DepToken::new("near", 5, "prep"),
            DepToken::new("hilum", 6, "pobj"),
        ])
        .unwrap();
        let attrs = extract_attributes(&t, 0..1, Some(&tree), &[], &PolarityRules::default());
        assert_eq!(attrs, set(&["lobe", "lung"]));
    }

    #[test]
    fn negation_words_and_blocked_spans_excluded() {
        let rules = PolarityRules::default();
        let t = toks("no focal airspace disease");
        let tree = ParsedSentence::new(vec![
            DepToken::new("no", 4, "neg"),
            DepToken::new("focal", 4, "amod"),
            DepToken::new("airspace", 4, "compound"),
            DepToken::new("disease", 0, "root"),
        ])
        .unwrap();
        assert_eq!(
            extract_attributes(&t, 2..4, Some(&tree), &[], &rules),
            set(&["focal"])
        );
        assert_eq!(extract_attributes(&t, 2..4, None, &[], &rules), set(&["focal"]));

        let t = toks("effusion pneumothorax");
        assert!(extract_attributes(&t, 1..2, None, &[0..1], &rules).is_empty());
    }

    #[test]
    fn fallback_stops_at_function_words() {
        let rules = PolarityRules::default();
        let t = toks("no evidence of focal airspace disease");
        assert_eq!(extract_attributes(&t, 4..6, None, &[], &rules), set(&["focal"]));
        let t = toks("small bilateral pleural effusions at the bases");
        assert_eq!(
            extract_attributes(&t, 2..4, None, &[], &rules),
            set(&["small", "bilateral", "base"])
        );
    }
}
