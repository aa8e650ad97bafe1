//! Paired-report corpora.
//!
//! Two line-oriented layouts are accepted:
//!
//! ```text
//! {"id": "r1", "gt": "no effusion.", "gen": "small effusion.", "gt_parse": "r1.gt.conllu"}
//! r1<TAB>no effusion.<TAB>small effusion.[<TAB>gt_parse<TAB>gen_parse]
//! ```
//!
//! `gt_report` and `gen_report` are accepted as spellings of `gt` and `gen`.
//! Blank lines are skipped; a tab-separated first line `id<TAB>gt<TAB>gen…`
//! is treated as a header.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::Result;
use serde::{Deserialize, Serialize};

use crate::input_error;

#[derive(Debug, Clone, PartialEq, Eq, Deserialize, Serialize)]
pub struct Record {
    pub id: String,
    #[serde(alias = "gt_report")]
    pub gt: String,
    #[serde(alias = "gen_report")]
    pub gen: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_parse: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_parse: Option<String>,
    /// 1-based line number in the corpus file.
    #[serde(skip)]
    pub line: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CorpusFormat {
    /// JSON lines when the first non-blank line starts with `{`, else tab-separated.
    #[default]
    Auto,
    JsonLines,
    Tsv,
}

fn parse_json_line(text: &str, line: usize) -> Result<Record> {
    match serde_json::from_str::<Record>(text) {
        Ok(mut r) => {
            r.line = line;
            Ok(r)
        }
        Err(e) => input_error(format!("line {line}: malformed record: {e}")),
    }
}

fn non_empty(field: &str) -> Option<String> {
    let f = field.trim();
    (!f.is_empty()).then(|| f.to_string())
}

fn parse_tsv_line(text: &str, line: usize) -> Result<Record> {
    let fields: Vec<&str> = text.split('\t').collect();
    if fields.len() < 3 {
        let missing = ["id", "gt", "gen"][fields.len()];
        return input_error(format!(
            "line {line}: malformed record: missing field `{missing}` (expected id, gt, gen separated by tabs)"
        ));
    }
    if fields.len() > 5 {
        return input_error(format!("line {line}: malformed record: {} fields, at most 5 allowed", fields.len()));
    }
    Ok(Record {
        id: fields[0].trim().to_string(),
        gt: fields[1].to_string(),
        gen: fields[2].to_string(),
        gt_parse: fields.get(3).and_then(|f| non_empty(f)),
        gen_parse: fields.get(4).and_then(|f| non_empty(f)),
        line,
    })
}

fn is_header(fields: &str) -> bool {
    let mut it = fields.split('\t').map(str::trim);
    it.next() == Some("id") && matches!(it.next(), Some("gt" | "gt_report"))
}

/// Parses corpus text; errors carry the offending line number.
pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Vec<Record>> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let format = match format {
        CorpusFormat::Auto => match lines.first() {
            Some((_, l)) if l.trim_start().starts_with('{') => CorpusFormat::JsonLines,
            _ => CorpusFormat::Tsv,
        },
        f => f,
    };
    let mut records = Vec::with_capacity(lines.len());
    for (k, &(line, text)) in lines.iter().enumerate() {
        let record = match format {
            CorpusFormat::JsonLines => parse_json_line(text, line)?,
            _ if k == 0 && is_header(text) => continue,
            _ => parse_tsv_line(text, line)?,
        };
        records.push(record);
    }
    validate(&records)?;
    Ok(records)
}

fn validate(records: &[Record]) -> Result<()> {
    if records.is_empty() {
        return input_error("empty corpus");
    }
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for r in records {
        if r.id.is_empty() {
            return input_error(format!("line {}: malformed record: empty id", r.line));
        }
        if let Some(first) = seen.insert(&r.id, r.line) {
            return input_error(format!("line {}: duplicate id {:?} (first seen on line {first})", r.line, r.id));
        }
    }
    Ok(())
}

pub fn read_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<Record>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return input_error(format!("cannot read corpus {}: {e}", path.display())),
    };
    parse_corpus(&text, format)
}

/// Locates parse files for a record.
///
/// Explicit paths are resolved against `parses_dir` when given, else
/// against `corpus_dir`. Without explicit paths, `parses_dir` is searched
/// for `<id>.gt.conllu` and `<id>.gen.conllu`; missing files there mean
/// the fallback attribute extraction is used.
pub fn parse_paths(record: &Record, corpus_dir: &Path, parses_dir: Option<&Path>) -> (Option<PathBuf>, Option<PathBuf>) {
    let base = parses_dir.unwrap_or(corpus_dir);
    let resolve = |explicit: &Option<String>, side: &str| match explicit {
        Some(p) => Some(base.join(p)),
        None => parses_dir
            .map(|d| d.join(format!("{}.{side}.conllu", record.id)))
            .filter(|p| p.is_file()),
    };
    (resolve(&record.gt_parse, "gt"), resolve(&record.gen_parse, "gen"))
}
