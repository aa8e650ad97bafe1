//! MIRQI: recall, precision and F1 over matched finding graphs.
//!
//! Ground-truth and generated reports are compared category by category:
//!
//! | ground truth      | generated         | counted as |
//! |-------------------|-------------------|------------|
//! | positive          | positive          | TP (+ attribute credit) |
//! | negative          | negative          | TN |
//! | negative / absent | positive          | FP |
//! | positive          | negative / absent | FN |
//! | absent            | negative          | nothing |
//!
//! With `TP = (1 - w_attr)·TP_kw + w_attr·TP_attr` and `w_neg = 1 - w_pos`:
//!
//! ```text
//! r  = w_pos·TP/(TP+FN) + w_neg·TN/(TN+FP)
//! p  = w_pos·TP/(TP+FP) + w_neg·TN/(TN+FN)
//! F1 = 2rp/(r+p)
//! ```
//!
//! Every ratio with a zero denominator is taken as 1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chestkg::ChestGraph;
use crate::reportnlp::{EntityGraph, Polarity};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MirqiError {
    #[error("weight {name} = {value} is outside [0, 1]")]
    WeightOutOfRange { name: &'static str, value: f64 },
    #[error("category {0:?} is not part of the graph")]
    UnknownCategory(String),
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirqiWeights {
    pub w_pos: f64,
    pub w_attr: f64,
}

impl Default for MirqiWeights {
    fn default() -> Self {
        Self {
            w_pos: 0.8,
            w_attr: 0.2,
        }
    }
}

impl MirqiWeights {
    pub fn new(w_pos: f64, w_attr: f64) -> Result<Self, MirqiError> {
        let w = Self { w_pos, w_attr };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), MirqiError> {
        for (name, value) in [("w_pos", self.w_pos), ("w_attr", self.w_attr)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(MirqiError::WeightOutOfRange { name, value });
            }
        }
        Ok(())
    }

    pub fn w_neg(&self) -> f64 {
        1.0 - self.w_pos
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum F1Mode {
    /// `2rp / (r + p)`.
    #[default]
    Harmonic,
    /// `rp / (r + p)`, exactly as printed in the original formulation.
    Literal,
}

/// How uncertain mentions are scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertainAs {
    #[default]
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MirqiConfig {
    pub weights: MirqiWeights,
    pub f1_mode: F1Mode,
    pub uncertain_as: UncertainAs,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp_keywords: u32,
    /// Fractional attribute credit, at most `tp_keywords`.
    pub tp_attributes: f64,
    pub tn: u32,
    pub fp: u32,
    #[serde(rename = "fn")]
    pub fn_: u32,
}

impl ConfusionCounts {
    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp_keywords += other.tp_keywords;
        self.tp_attributes += other.tp_attributes;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirqiScore {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

fn scored(p: Polarity, uncertain_as: UncertainAs) -> bool {
    match p {
        Polarity::Positive => true,
        Polarity::Negative => false,
        Polarity::Uncertain => uncertain_as == UncertainAs::Positive,
    }
}

/// Node-by-node matching of two report graphs.
pub fn match_graphs(
    gt: &EntityGraph,
    gen: &EntityGraph,
    graph: &ChestGraph,
    uncertain_as: UncertainAs,
) -> Result<ConfusionCounts, MirqiError> {
    for cat in gt.summary.keys().chain(gen.summary.keys()) {
        if !graph.contains_category(cat) {
            return Err(MirqiError::UnknownCategory(cat.clone()));
        }
    }
    let mut counts = ConfusionCounts::default();
    for cat in graph.categories() {
        let g = gt.summary.get(&cat.name);
        let p = gen.summary.get(&cat.name);
        let g_pos = g.map(|s| scored(s.polarity, uncertain_as));
        let p_pos = p.map(|s| scored(s.polarity, uncertain_as));
        match (g_pos, p_pos) {
            (Some(true), Some(true)) => {
                counts.tp_keywords += 1;
                let gt_attrs = &g.expect("matched").attributes;
                let gen_attrs = &p.expect("matched").attributes;
                counts.tp_attributes += if gt_attrs.is_empty() {
                    1.0
                } else {
                    gt_attrs.intersection(gen_attrs).count() as f64 / gt_attrs.len() as f64
                };
            }
            (Some(false), Some(false)) => counts.tn += 1,
            (Some(false) | None, Some(true)) => counts.fp += 1,
            (Some(true), Some(false) | None) => counts.fn_ += 1,
            (None, Some(false)) | (Some(false), None) | (None, None) => {}
        }
    }
    Ok(counts)
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        1.0
    } else {
        num / den
    }
}

/// Scores from confusion counts.
pub fn score_counts(
    counts: &ConfusionCounts,
    weights: &MirqiWeights,
    f1_mode: F1Mode,
) -> Result<MirqiScore, MirqiError> {
    weights.validate()?;
    let tp = (1.0 - weights.w_attr) * counts.tp_keywords as f64 + weights.w_attr * counts.tp_attributes;
    let tn = counts.tn as f64;
    let fp = counts.fp as f64;
    let fn_ = counts.fn_ as f64;
    let recall = weights.w_pos * ratio(tp, tp + fn_) + weights.w_neg() * ratio(tn, tn + fp);
    let precision = weights.w_pos * ratio(tp, tp + fp) + weights.w_neg() * ratio(tn, tn + fn_);
    Ok(MirqiScore {
        recall,
        precision,
        f1: f1(recall, precision, f1_mode),
        counts: *counts,
    })
}

pub fn f1(recall: f64, precision: f64, mode: F1Mode) -> f64 {
    let sum = recall + precision;
    if sum == 0.0 {
        return 0.0;
    }
    let product = recall * precision;
    match mode {
        F1Mode::Harmonic => 2.0 * product / sum,
        F1Mode::Literal => product / sum,
    }
}

pub fn score_pair(
    gt: &EntityGraph,
    gen: &EntityGraph,
    graph: &ChestGraph,
    config: &MirqiConfig,
) -> Result<MirqiScore, MirqiError> {
    config.weights.validate()?;
    let counts = match_graphs(gt, gen, graph, config.uncertain_as)?;
    score_counts(&counts, &config.weights, config.f1_mode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    /// Macro average of the per-pair scores; `counts` is the summed tally.
    pub aggregate: MirqiScore,
    pub pairs: Vec<MirqiScore>,
}

/// Per-pair scores plus their macro average.
pub fn score_corpus(
    pairs: &[(EntityGraph, EntityGraph)],
    graph: &ChestGraph,
    config: &MirqiConfig,
) -> Result<CorpusScore, MirqiError> {
    let scores = pairs
        .iter()
        .map(|(gt, gen)| score_pair(gt, gen, graph, config))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate(scores)
}

/// Macro-averages already computed pair scores, in order.
pub fn aggregate(pairs: Vec<MirqiScore>) -> Result<CorpusScore, MirqiError> {
    if pairs.is_empty() {
        return Err(MirqiError::EmptyCorpus);
    }
    let n = pairs.len() as f64;
    let mut counts = ConfusionCounts::default();
    let (mut r, mut p, mut f) = (0.0, 0.0, 0.0);
    for s in &pairs {
        r += s.recall;
        p += s.precision;
        f += s.f1;
        counts.add(&s.counts);
    }
    Ok(CorpusScore {
        aggregate: MirqiScore {
            recall: r / n,
            precision: p / n,
            f1: f / n,
            counts,
        },
        pairs,
    })
}
