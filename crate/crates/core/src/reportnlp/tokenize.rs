//! Sentence splitting and word tokenization for report text.

const TERMINATORS: [char; 3] = ['.', '?', '!'];
const DETACHED: [char; 12] = [',', ';', ':', '(', ')', '[', ']', '{', '}', '"', '\'', '`'];

/// Splits `text` into sentences of lowercase tokens.
///
/// Whitespace separates chunks. Leading and trailing punctuation is split off
/// each chunk into standalone tokens; a standalone `.`, `?` or `!` closes the
/// sentence. A trailing period stays attached when the chunk already contains
/// a period (`e.g.`) or is a single letter (an initial), so abbreviations do
/// not break sentences. Periods inside a chunk (`2.5`) never split.
pub fn tokenize(text: &str) -> Vec<Vec<String>> {
    let mut sentences = Vec::new();
    let mut current: Vec<String> = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        for token in split_chunk(&lower) {
            let ends = token.len() == 1 && token.starts_with(TERMINATORS);
            if ends && current.is_empty() {
                // Stray terminator with nothing before it.
                continue;
            }
            current.push(token);
            if ends {
                sentences.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    sentences
}

/// Concatenated tokens of every sentence.
pub fn tokenize_flat(text: &str) -> Vec<String> {
    tokenize(text).into_iter().flatten().collect()
}

fn split_chunk(chunk: &str) -> Vec<String> {
    let mut leading = Vec::new();
    let mut rest = chunk;
    while let Some(c) = rest.chars().next() {
        if DETACHED.contains(&c) || TERMINATORS.contains(&c) {
            leading.push(c.to_string());
            rest = &rest[c.len_utf8()..];
        } else {
            break;
        }
    }

    let mut trailing = Vec::new();
    while let Some(c) = rest.chars().next_back() {
        let body = &rest[..rest.len() - c.len_utf8()];
        let detach = if DETACHED.contains(&c) {
            true
        } else if TERMINATORS.contains(&c) {
            !(c == '.' && is_abbreviation(body))
        } else {
            false
        };
        if !detach {
            break;
        }
        trailing.push(c.to_string());
        rest = body;
    }

    let mut out = leading;
    if !rest.is_empty() {
        out.push(rest.to_string());
    }
    out.extend(trailing.into_iter().rev());
    out
}

fn is_abbreviation(body: &str) -> bool {
    if body.is_empty() {
        return false;
    }
    let mut chars = body.chars();
    let single_letter = matches!((chars.next(), chars.next()), (Some(c), None) if c.is_alphabetic());
    single_letter || (body.contains('.') && !body.ends_with('.'))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_sentence() {
        assert_eq!(
            tokenize("No acute cardiopulmonary abnormality."),
            vec![toks(&["no", "acute", "cardiopulmonary", "abnormality", "."])]
        );
    }

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \n\t").is_empty());
    }

    #[test]
    fn two_sentences() {
        assert_eq!(
            tokenize("Heart is normal. Lungs are clear."),
            vec![
                toks(&["heart", "is", "normal", "."]),
                toks(&["lungs", "are", "clear", "."]),
            ]
        );
    }

    #[test]
    fn punctuation_detached() {
        assert_eq!(
            tokenize("Effusion, (small); stable?"),
            vec![toks(&["effusion", ",", "(", "small", ")", ";", "stable", "?"])]
        );
    }

    #[test]
    fn abbreviations_do_not_split() {
        assert_eq!(
            tokenize("Seen by Dr. J. Smith e.g. yesterday. Size 2.5 cm"),
            vec![
                toks(&["seen", "by", "dr", "."]),
                toks(&["j.", "smith", "e.g.", "yesterday", "."]),
                toks(&["size", "2.5", "cm"]),
            ]
        );
    }

    #[test]
    fn terminator_needs_whitespace_or_end() {
        assert_eq!(tokenize("a.b c"), vec![toks(&["a.b", "c"])]);
        assert_eq!(tokenize("stable!"), vec![toks(&["stable", "!"])]);
    }

    #[test]
    fn ellipsis_and_stray_terminators() {
        assert_eq!(tokenize(". . clear"), vec![toks(&["clear"])]);
        assert_eq!(
            tokenize("stable..."),
            vec![toks(&["stable", "."])]
        );
    }
}
