//! BLEU-N with clipped n-gram precision and brevity penalty.

use super::ngram::NGramProfile;
use super::MetricError;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Smoothing {
    /// An order with no matches makes the score exactly zero.
    #[default]
    None,
    /// Adds one to numerator and denominator for orders n ≥ 2.
    AddOne,
}

/// Sufficient statistics of one candidate against its references.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    pub reference_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// BLEU-1 ..= BLEU-`max_n`.
    pub fn scores(&self, max_n: usize, smoothing: Smoothing) -> Vec<f64> {
        let bp = brevity_penalty(self.candidate_len, self.reference_len);
        let mut log_sum = 0.0;
        let mut zero = false;
        (0..max_n)
            .map(|k| {
                let (mut m, mut t) = (self.matches[k] as f64, self.totals[k] as f64);
                if smoothing == Smoothing::AddOne && k > 0 {
                    m += 1.0;
                    t += 1.0;
                }
                if m == 0.0 || t == 0.0 {
                    zero = true;
                } else {
                    log_sum += (m / t).ln();
                }
                if zero {
                    0.0
                } else {
                    bp * (log_sum / (k + 1) as f64).exp()
                }
            })
            .collect()
    }
}

fn brevity_penalty(c: usize, r: usize) -> f64 {
    if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    }
}

fn check_order(max_n: usize) -> Result<(), MetricError> {
    if (1..=MAX_ORDER).contains(&max_n) {
        Ok(())
    } else {
        Err(MetricError::InvalidOrder(max_n))
    }
}

pub fn bleu_stats<S: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<S>],
) -> Result<BleuStats, MetricError> {
    if candidate.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if references.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let cand = NGramProfile::new(candidate, MAX_ORDER);
    let refs: Vec<NGramProfile> = references
        .iter()
        .map(|r| NGramProfile::new(r, MAX_ORDER))
        .collect();
    let mut stats = BleuStats {
        candidate_len: candidate.len(),
        // closest reference length, shorter on ties
        reference_len: references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(candidate.len()), r))
            .unwrap_or(0),
        ..Default::default()
    };
    for (gram, &count) in &cand.counts {
        let k = gram.len() - 1;
        let max_ref = refs.iter().map(|r| r.get(gram)).max().unwrap_or(0);
        stats.matches[k] += count.min(max_ref);
        stats.totals[k] += count;
    }
    Ok(stats)
}

/// Sentence-level BLEU-1 ..= BLEU-`max_n`.
pub fn bleu<S: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<S>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<Vec<f64>, MetricError> {
    check_order(max_n)?;
    Ok(bleu_stats(candidate, references)?.scores(max_n, smoothing))
}

/// Corpus BLEU: statistics pooled over all pairs before combining.
pub fn corpus_bleu<S: AsRef<str>>(
    pairs: &[(Vec<S>, Vec<Vec<S>>)],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<Vec<f64>, MetricError> {
    check_order(max_n)?;
    if pairs.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut total = BleuStats::default();
    for (cand, refs) in pairs {
        total.add(&bleu_stats(cand, refs)?);
    }
    Ok(total.scores(max_n, smoothing))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn negation_contrast() {
        let cand = toks("there are increased interstitial markings with evidence of focal airspace disease");
        let reference = toks("there are increased interstitial markings without evidence of focal airspace disease");
        let s = bleu(&cand, &[reference], 1, Smoothing::None).unwrap();
        assert!((s[0] - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn identity_is_one() {
        let c = toks("the heart size is normal and the lungs are clear");
        let s = bleu(&c, std::slice::from_ref(&c), 4, Smoothing::None).unwrap();
        for v in s {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_is_zero() {
        let s = bleu(&toks("a b c"), &[toks("d e f")], 4, Smoothing::None).unwrap();
        assert_eq!(s, vec![0.0; 4]);
    }

    #[test]
    fn clipping_and_brevity() {
        // "the the the" vs "the cat": clipped unigram precision 1/3, c > r so bp = 1
        let s = bleu(&toks("the the the"), &[toks("the cat")], 1, Smoothing::None).unwrap();
        assert!((s[0] - 1.0 / 3.0).abs() < 1e-12);
        // short candidate: bp = exp(1 - 4/2)
        let s = bleu(&toks("a b"), &[toks("a b c d")], 1, Smoothing::None).unwrap();
        assert!((s[0] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn smoothing_rescues_missing_orders() {
        let c = toks("a b c d");
        let r = toks("a b x d");
        let plain = bleu(&c, std::slice::from_ref(&r), 4, Smoothing::None).unwrap();
        assert_eq!(plain[3], 0.0);
        let smooth = bleu(&c, &[r], 4, Smoothing::AddOne).unwrap();
        // p1 = 3/4, p2 = (1+1)/(3+1), p3 = 1/3, p4 = 1/2
        let expected = ((0.75f64).ln() + 0.5f64.ln() + (1.0f64 / 3.0).ln() + 0.5f64.ln()) / 4.0;
        assert!((smooth[3] - expected.exp()).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let empty: Vec<String> = vec![];
        assert_eq!(bleu(&empty, &[toks("a")], 1, Smoothing::None), Err(MetricError::EmptyCandidate));
        assert_eq!(bleu(&toks("a"), &[], 1, Smoothing::None), Err(MetricError::NoReferences));
        assert_eq!(bleu(&toks("a"), &[toks("a")], 5, Smoothing::None), Err(MetricError::InvalidOrder(5)));
        let none: Vec<(Vec<String>, Vec<Vec<String>>)> = vec![];
        assert_eq!(corpus_bleu(&none, 4, Smoothing::None), Err(MetricError::EmptyCorpus));
    }

    #[test]
    fn corpus_pools_counts() {
        let pairs = vec![
            (toks("a b"), vec![toks("a b")]),
            (toks("c d e f"), vec![toks("c x e f")]),
        ];
        let s = corpus_bleu(&pairs, 1, Smoothing::None).unwrap();
        assert!((s[0] - 5.0 / 6.0).abs() < 1e-12);
    }
}
