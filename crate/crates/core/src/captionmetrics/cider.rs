//! CIDEr and CIDEr-D.

use std::collections::{BTreeMap, BTreeSet};

use super::ngram::{NGram, NGramProfile};
use super::MetricError;

const ORDERS: usize = 4;
const SIGMA: f64 = 6.0;
const SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum CiderVariant {
    /// Clipped tf-idf, gaussian length penalty (σ = 6), scaled by 10.
    #[default]
    D,
    /// Plain cosine of tf-idf vectors, scaled by 10.
    Plain,
}

/// Document frequencies over the reference sets (one document per item).
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    df: BTreeMap<NGram, usize>,
    documents: usize,
}

impl CorpusStats {
    pub fn from_references<S: AsRef<str>>(references: &[Vec<Vec<S>>]) -> Self {
        let mut df = BTreeMap::new();
        for refs in references {
            let mut seen: BTreeSet<NGram> = BTreeSet::new();
            for r in refs {
                seen.extend(NGramProfile::new(r, ORDERS).counts.into_keys());
            }
            for g in seen {
                *df.entry(g).or_insert(0) += 1;
            }
        }
        Self {
            df,
            documents: references.len(),
        }
    }

    pub fn documents(&self) -> usize {
        self.documents
    }

    pub fn document_frequency(&self, gram: &[String]) -> usize {
        self.df.get(gram).copied().unwrap_or(0)
    }

    /// `ln(documents / max(1, df))`.
    pub fn idf(&self, gram: &[String]) -> f64 {
        (self.documents as f64).ln() - (self.document_frequency(gram).max(1) as f64).ln()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiderScores {
    pub corpus: f64,
    pub per_item: Vec<f64>,
}

struct TfIdf {
    vecs: [BTreeMap<NGram, f64>; ORDERS],
    norms: [f64; ORDERS],
    length: usize,
}

fn tfidf<S: AsRef<str>>(tokens: &[S], stats: &CorpusStats) -> TfIdf {
    let profile = NGramProfile::new(tokens, ORDERS);
    let mut vecs: [BTreeMap<NGram, f64>; ORDERS] = Default::default();
    let mut norms = [0.0; ORDERS];
    for (gram, &count) in &profile.counts {
        let k = gram.len() - 1;
        let w = count as f64 * stats.idf(gram);
        norms[k] += w * w;
        vecs[k].insert(gram.clone(), w);
    }
    for n in &mut norms {
        *n = n.sqrt();
    }
    TfIdf {
        vecs,
        norms,
        length: profile.length,
    }
}

fn similarity(hyp: &TfIdf, reference: &TfIdf, variant: CiderVariant) -> [f64; ORDERS] {
    let mut out = [0.0; ORDERS];
    let delta = hyp.length as f64 - reference.length as f64;
    for k in 0..ORDERS {
        let mut val = 0.0;
        for (gram, &h) in &hyp.vecs[k] {
            if let Some(&r) = reference.vecs[k].get(gram) {
                val += match variant {
                    CiderVariant::D => h.min(r) * r,
                    CiderVariant::Plain => h * r,
                };
            }
        }
        if hyp.norms[k] != 0.0 && reference.norms[k] != 0.0 {
            val /= hyp.norms[k] * reference.norms[k];
        }
        if variant == CiderVariant::D {
            val *= (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
        }
        out[k] = val;
    }
    out
}

/// Scores each candidate against its reference set.
pub fn cider<S: AsRef<str>>(
    candidates: &[Vec<S>],
    references: &[Vec<Vec<S>>],
    stats: &CorpusStats,
    variant: CiderVariant,
) -> Result<CiderScores, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            candidates: candidates.len(),
            references: references.len(),
        });
    }
    let mut per_item = Vec::with_capacity(candidates.len());
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(MetricError::NoReferences);
        }
        let hyp = tfidf(cand, stats);
        let mut total = 0.0;
        for r in refs {
            let sim = similarity(&hyp, &tfidf(r, stats), variant);
            total += sim.iter().sum::<f64>() / ORDERS as f64;
        }
        per_item.push(SCALE * total / refs.len() as f64);
    }
    let corpus = per_item.iter().sum::<f64>() / per_item.len() as f64;
    Ok(CiderScores { corpus, per_item })
}
