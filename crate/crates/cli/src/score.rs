//! Corpus scoring: MIRQI next to BLEU, ROUGE-L and CIDEr.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use radgraph_core::captionmetrics::{bleu, cider, rouge_l, CiderVariant, CorpusStats, Smoothing};
use radgraph_core::mirqi::{score_pair, ConfusionCounts, F1Mode, UncertainAs};
use radgraph_core::reportnlp::{tokenize_flat, ParsedSentence, PolarityRules};
use radgraph_core::{ChestGraph, EntityGraph, MirqiConfig, ReportParser};
use rayon::prelude::*;
use serde::Serialize;

use crate::corpus::{parse_paths, Record};
use crate::input_error;
use crate::resources::{load_conllu, Provenance};

/// Tokens used by the captioning metrics: the report tokens without
/// punctuation-only tokens.
pub fn caption_tokens(text: &str) -> Vec<String> {
    tokenize_flat(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub mirqi: MirqiConfig,
    pub bleu_smoothing: Smoothing,
    pub cider: CiderVariant,
    pub seed: u64,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            mirqi: MirqiConfig::default(),
            bleu_smoothing: Smoothing::AddOne,
            cider: CiderVariant::D,
            seed: 0,
        }
    }
}

/// Everything a scoring run reads besides the corpus.
#[derive(Debug, Clone)]
pub struct Scorer {
    pub graph: ChestGraph,
    pub parser: ReportParser,
    pub graph_source: Provenance,
    pub lexicon_source: Provenance,
    pub options: ScoreOptions,
    /// Base directory for relative parse paths.
    pub corpus_dir: PathBuf,
    pub parses_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordScore {
    pub id: String,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub mirqi_r: f64,
    pub mirqi_p: f64,
    pub mirqi_f1: f64,
    pub counts: ConfusionCounts,
}

/// Means of the per-record values; `counts` are summed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub records: usize,
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub cider: f64,
    pub mirqi_r: f64,
    pub mirqi_p: f64,
    pub mirqi_f1: f64,
    /// `2rp/(r+p)` of the mean recall and precision, for comparison with
    /// the mean F1.
    pub mirqi_f1_of_means: f64,
    pub counts: ConfusionCounts,
}

/// The settings a run used, enough to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigEcho {
    pub w_pos: f64,
    pub w_attr: f64,
    pub f1_mode: &'static str,
    pub uncertain_as: &'static str,
    pub bleu_smoothing: &'static str,
    pub cider: &'static str,
    pub graph: Provenance,
    pub lexicon: Provenance,
    pub parses: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreReport {
    pub config: ConfigEcho,
    pub records: Vec<RecordScore>,
    pub aggregate: Aggregate,
}

struct Prepared {
    gt_tokens: Vec<String>,
    gen_tokens: Vec<String>,
    gt: EntityGraph,
    gen: EntityGraph,
}

fn load_parse(path: Option<PathBuf>) -> Result<Option<Vec<ParsedSentence>>> {
    path.map(|p| load_conllu(&p)).transpose()
}

impl Scorer {
    /// Built-in graph and lexicon, default options, no parse directory.
    pub fn with_defaults(corpus_dir: PathBuf) -> Result<Self> {
        let (graph, graph_source) = crate::resources::load_graph(None)?;
        let (lexicon, lexicon_source) = crate::resources::load_lexicon(None, &graph)?;
        Ok(Self {
            graph,
            parser: ReportParser::new(lexicon, PolarityRules::default()),
            graph_source,
            lexicon_source,
            options: ScoreOptions::default(),
            corpus_dir,
            parses_dir: None,
        })
    }

    pub fn config_echo(&self) -> ConfigEcho {
        let o = &self.options;
        ConfigEcho {
            w_pos: o.mirqi.weights.w_pos,
            w_attr: o.mirqi.weights.w_attr,
            f1_mode: match o.mirqi.f1_mode {
                F1Mode::Harmonic => "harmonic",
                F1Mode::Literal => "literal",
            },
            uncertain_as: match o.mirqi.uncertain_as {
                UncertainAs::Positive => "positive",
                UncertainAs::Negative => "negative",
            },
            bleu_smoothing: match o.bleu_smoothing {
                Smoothing::None => "none",
                Smoothing::AddOne => "add-one",
            },
            cider: match o.cider {
                CiderVariant::D => "cider-d",
                CiderVariant::Plain => "cider",
            },
            graph: self.graph_source.clone(),
            lexicon: self.lexicon_source.clone(),
            parses: self.parses_dir.as_ref().map(|p| p.display().to_string()),
            seed: o.seed,
        }
    }

    /// Parses both reports of a record.
    pub fn entity_graphs(&self, record: &Record) -> Result<(EntityGraph, EntityGraph)> {
        let (gt_path, gen_path) = parse_paths(record, &self.corpus_dir, self.parses_dir.as_deref());
        let gt_parse = load_parse(gt_path)?;
        let gen_parse = load_parse(gen_path)?;
        let parse = |text: &str, parses: Option<&[ParsedSentence]>, side: &str| match self.parser.parse(text, parses) {
            Ok(g) => Ok(g),
            Err(e) => input_error(format!("line {}: record {:?}: {side} report: {e}", record.line, record.id)),
        };
        Ok((
            parse(&record.gt, gt_parse.as_deref(), "gt")?,
            parse(&record.gen, gen_parse.as_deref(), "gen")?,
        ))
    }

    fn prepare(&self, record: &Record) -> Result<Prepared> {
        let (gt, gen) = self.entity_graphs(record)?;
        Ok(Prepared {
            gt_tokens: caption_tokens(&record.gt),
            gen_tokens: caption_tokens(&record.gen),
            gt,
            gen,
        })
    }

    fn score_one(&self, id: &str, p: &Prepared, cider_value: f64) -> Result<RecordScore> {
        let bleus = bleu(&p.gen_tokens, std::slice::from_ref(&p.gt_tokens), 4, self.options.bleu_smoothing)
            .unwrap_or_else(|_| vec![0.0; 4]);
        let rouge = rouge_l(&p.gen_tokens, &p.gt_tokens).unwrap_or(0.0);
        let m = score_pair(&p.gt, &p.gen, &self.graph, &self.options.mirqi)
            .with_context(|| format!("scoring record {id:?}"))?;
        Ok(RecordScore {
            id: id.to_string(),
            bleu1: bleus[0],
            bleu2: bleus[1],
            bleu3: bleus[2],
            bleu4: bleus[3],
            rouge_l: rouge,
            cider: cider_value,
            mirqi_r: m.recall,
            mirqi_p: m.precision,
            mirqi_f1: m.f1,
            counts: m.counts,
        })
    }

    /// Scores every record, in input order. Work is spread over the
    /// current rayon pool.
    pub fn score(&self, records: &[Record]) -> Result<ScoreReport> {
        if records.is_empty() {
            return input_error("empty corpus");
        }
        let prepared: Vec<Prepared> = records.par_iter().map(|r| self.prepare(r)).collect::<Result<_>>()?;
        let refs: Vec<Vec<Vec<String>>> = prepared.iter().map(|p| vec![p.gt_tokens.clone()]).collect();
        let cands: Vec<Vec<String>> = prepared.iter().map(|p| p.gen_tokens.clone()).collect();
        let stats = CorpusStats::from_references(&refs);
        let ciders = cider(&cands, &refs, &stats, self.options.cider)
            .context("computing CIDEr")?
            .per_item;
        let scores: Vec<RecordScore> = records
            .par_iter()
            .zip(&prepared)
            .zip(&ciders)
            .map(|((r, p), &c)| self.score_one(&r.id, p, c))
            .collect::<Result<_>>()?;
        let aggregate = aggregate(&scores);
        Ok(ScoreReport {
            config: self.config_echo(),
            records: scores,
            aggregate,
        })
    }
}

/// Mean of every metric over `scores`; counts are summed.
pub fn aggregate(scores: &[RecordScore]) -> Aggregate {
    let n = scores.len().max(1) as f64;
    let mean = |f: fn(&RecordScore) -> f64| scores.iter().map(f).sum::<f64>() / n;
    let mut counts = ConfusionCounts::default();
    for s in scores {
        counts.add(&s.counts);
    }
    let (r, p) = (mean(|s| s.mirqi_r), mean(|s| s.mirqi_p));
    Aggregate {
        records: scores.len(),
        bleu1: mean(|s| s.bleu1),
        bleu2: mean(|s| s.bleu2),
        bleu3: mean(|s| s.bleu3),
        bleu4: mean(|s| s.bleu4),
        rouge_l: mean(|s| s.rouge_l),
        cider: mean(|s| s.cider),
        mirqi_r: r,
        mirqi_p: p,
        mirqi_f1: mean(|s| s.mirqi_f1),
        mirqi_f1_of_means: if r + p > 0.0 { 2.0 * r * p / (r + p) } else { 0.0 },
        counts,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum OutputFormat {
    #[default]
    Text,
    JsonLines,
}

#[derive(Serialize)]
struct Tagged<'a, T: Serialize> {
    #[serde(rename = "type")]
    kind: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

fn json_line<W: Write, T: Serialize>(w: &mut W, kind: &str, body: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, &Tagged { kind, body })?;
    w.write_all(b"\n")?;
    Ok(())
}

fn counts_text(c: &ConfusionCounts) -> String {
    format!(
        "tp={} tp_attr={:.4} tn={} fp={} fn={}",
        c.tp_keywords, c.tp_attributes, c.tn, c.fp, c.fn_
    )
}

/// Writes a report: JSON lines (`config`, one `record` per input record,
/// `aggregate`) at full precision, or a fixed 4-decimal text table.
pub fn write_report<W: Write>(w: &mut W, report: &ScoreReport, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::JsonLines => {
            json_line(w, "config", &report.config)?;
            for r in &report.records {
                json_line(w, "record", r)?;
            }
            json_line(w, "aggregate", &report.aggregate)?;
        }
        OutputFormat::Text => {
            let c = &report.config;
            writeln!(
                w,
                "# w_pos={} w_attr={} f1={} uncertain_as={} bleu_smoothing={} cider={} seed={}",
                c.w_pos, c.w_attr, c.f1_mode, c.uncertain_as, c.bleu_smoothing, c.cider, c.seed
            )?;
            writeln!(w, "# graph={} sha256={}", c.graph.source, c.graph.sha256)?;
            writeln!(w, "# lexicon={} sha256={}", c.lexicon.source, c.lexicon.sha256)?;
            if let Some(p) = &c.parses {
                writeln!(w, "# parses={p}")?;
            }
            writeln!(
                w,
                "id\tbleu1\tbleu2\tbleu3\tbleu4\trouge_l\tcider\tmirqi_r\tmirqi_p\tmirqi_f1\tcounts"
            )?;
            for r in &report.records {
                writeln!(
                    w,
                    "{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
                    r.id,
                    r.bleu1,
                    r.bleu2,
                    r.bleu3,
                    r.bleu4,
                    r.rouge_l,
                    r.cider,
                    r.mirqi_r,
                    r.mirqi_p,
                    r.mirqi_f1,
                    counts_text(&r.counts)
                )?;
            }
            let a = &report.aggregate;
            writeln!(
                w,
                "mean({})\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{}",
                a.records,
                a.bleu1,
                a.bleu2,
                a.bleu3,
                a.bleu4,
                a.rouge_l,
                a.cider,
                a.mirqi_r,
                a.mirqi_p,
                a.mirqi_f1,
                counts_text(&a.counts)
            )?;
            writeln!(w, "# mirqi_f1_of_means={:.4}", a.mirqi_f1_of_means)?;
        }
    }
    Ok(())
}

/// Directory a corpus path lives in, for resolving relative parse paths.
pub fn corpus_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}
