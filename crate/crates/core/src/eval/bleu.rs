//! Corpus-level 4-gram BLEU over whitespace tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of one or more sentence pairs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    pub fn sentence(hyp: &str, reference: &str) -> Self {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let mut s = BleuStats {
            hyp_len: h.len(),
            ref_len: r.len(),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            s.totals[n - 1] = h.len().saturating_sub(n - 1);
            s.matches[n - 1] = hc
                .iter()
                .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    /// Clipped n-gram precision (unsmoothed); 0 when there are no n-grams.
    pub fn precision(&self, n: usize) -> f64 {
        let t = self.totals[n - 1];
        if t == 0 {
            0.0
        } else {
            self.matches[n - 1] as f64 / t as f64
        }
    }

    /// Score in [0, 100]. `add_one` adds one to the matches and totals of
    /// orders 2 to 4.
    pub fn score(&self, add_one: bool) -> f64 {
        if self.matches.iter().all(|&m| m == 0) {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let k = if add_one && n > 0 { 1.0 } else { 0.0 };
            let (m, t) = (self.matches[n] as f64 + k, self.totals[n] as f64 + k);
            if t == 0.0 || m == 0.0 {
                return 0.0;
            }
            log_sum += (m / t).ln();
        }
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        100.0 * bp * (log_sum / MAX_ORDER as f64).exp()
    }
}

pub fn corpus_stats<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R]) -> Result<Vec<BleuStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::input(format!(
            "{} hypotheses for {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::input("empty corpus"));
    }
    Ok(hyps
        .iter()
        .zip(refs)
        .map(|(h, r)| BleuStats::sentence(h.as_ref(), r.as_ref()))
        .collect())
}

/// Corpus BLEU of pre-tokenized hypotheses against one reference each.
pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[H], refs: &[R], add_one: bool) -> Result<f64> {
    let mut total = BleuStats::default();
    for s in corpus_stats(hyps, refs)? {
        total += s;
    }
    Ok(total.score(add_one))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_corpus_scores_100() {
        let c = ["a b c d e", "x y z w v u"];
        assert!((bleu(&c, &c, false).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn no_four_gram_overlap_scores_zero() {
        assert_eq!(bleu(&["a b c d e"], &["a b c x d e"], false).unwrap(), 0.0);
        assert!(bleu(&["a b c d e"], &["a b c x d e"], true).unwrap() > 0.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let s = BleuStats::sentence("the the the the the the the", "the cat is on the mat");
        assert_eq!(s.matches[0], 2);
        assert_eq!(s.totals[0], 7);
        assert!((s.precision(1) - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn brevity_penalty_applies() {
        let s = BleuStats::sentence("a b c d", "a b c d e f g h");
        let expected = 100.0 * (1.0f64 - 2.0).exp();
        assert!((s.score(false) - expected).abs() < 1e-9);
    }

    #[test]
    fn bad_corpora_rejected() {
        assert!(bleu::<&str, &str>(&[], &[], false).is_err());
        assert!(bleu(&["a"], &["a", "b"], false).is_err());
    }

    proptest! {
        #[test]
        fn order_does_not_matter(
            pairs in prop::collection::vec(("[a-d]( [a-d]){0,8}", "[a-d]( [a-d]){0,8}"), 1..8),
            seed in 0u64..100,
        ) {
            let (h, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
            let mut idx: Vec<usize> = (0..h.len()).collect();
            crate::rng::Rng::new(seed).shuffle(&mut idx);
            let hs: Vec<&String> = idx.iter().map(|&i| &h[i]).collect();
            let rs: Vec<&String> = idx.iter().map(|&i| &r[i]).collect();
            let a = bleu(&h, &r, false).unwrap();
            let b = bleu(&hs, &rs, false).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            prop_assert!((0.0..=100.0 + 1e-9).contains(&a));
        }
    }
}
