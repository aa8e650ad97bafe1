use std::collections::BTreeMap;

pub type NGram = Vec<String>;

/// n-gram counts for n = 1..=`max_n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile {
    pub counts: BTreeMap<NGram, usize>,
    pub length: usize,
}

impl NGramProfile {
    pub fn new<S: AsRef<str>>(tokens: &[S], max_n: usize) -> Self {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
        let mut counts = BTreeMap::new();
        for n in 1..=max_n {
            for w in tokens.windows(n) {
                *counts.entry(w.to_vec()).or_insert(0) += 1;
            }
        }
        Self {
            counts,
            length: tokens.len(),
        }
    }

    pub fn order(&self, n: usize) -> impl Iterator<Item = (&NGram, &usize)> {
        self.counts.iter().filter(move |(g, _)| g.len() == n)
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unigram_counts_sum_to_length() {
        let p = NGramProfile::new(&["a", "b", "a", "c"], 4);
        let total: usize = p.order(1).map(|(_, c)| *c).sum();
        assert_eq!(total, p.length);
        assert_eq!(p.get(&["a".to_string()]), 2);
        assert_eq!(p.order(4).count(), 1);
        assert_eq!(p.order(3).count(), 2);
    }
}
