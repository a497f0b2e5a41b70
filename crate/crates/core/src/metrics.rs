//! Corpus-level coverage diagnostics.
//!
//! - REP counts n-grams and immediate word repetitions that the hypothesis
//!   produces more often than the reference, per 100 reference words.
//! - DROP is the percentage of source words that are linked to the
//!   reference but to nothing in the hypothesis.
//! - The coverage penalty `beta * sum_j log max(eps, min(1, sum_t alpha_jt))`
//!   scores how fully an attention matrix covers the source.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::{AlignmentSet, AttentionMatrix, Corpus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("sentence counts differ: {0:?}")]
    SentenceCountMismatch(Vec<usize>),
    #[error("the reference corpus has no words")]
    EmptyReference,
    #[error("sentence {sentence}: source index {index} but the sentence has {len} tokens")]
    IndexOutOfRange {
        sentence: usize,
        index: usize,
        len: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Weights of the REP score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepParams {
    pub n: usize,
    pub ngram_weight: f64,
    pub repeat_weight: f64,
}

impl Default for RepParams {
    fn default() -> Self {
        Self {
            n: 2,
            ngram_weight: 1.0,
            repeat_weight: 2.0,
        }
    }
}

/// Sentence-level repetition score `sigma(t, r)`.
pub fn sentence_rep(hyp: &[String], reference: &[String], params: &RepParams) -> f64 {
    let t = ngram_counts(hyp, params.n);
    let r = ngram_counts(reference, params.n);
    let ngram_excess: usize = t
        .iter()
        .filter(|(_, &count)| count >= 2)
        .map(|(gram, &count)| count.saturating_sub(r.get(gram).copied().unwrap_or(0)))
        .sum();

    let t = immediate_repeats(hyp);
    let r = immediate_repeats(reference);
    let repeat_excess: usize = t
        .iter()
        .map(|(w, &count)| count.saturating_sub(r.get(w).copied().unwrap_or(0)))
        .sum();

    params.ngram_weight * ngram_excess as f64 + params.repeat_weight * repeat_excess as f64
}

/// REP score: `100 * sum_sentences sigma / reference word count`.
pub fn rep_score(
    hyp: &Corpus,
    reference: &Corpus,
    params: &RepParams,
) -> Result<f64, MetricsError> {
    if params.n == 0 {
        return Err(MetricsError::InvalidParameter(
            "n must be at least 1".into(),
        ));
    }
    if hyp.len() != reference.len() {
        return Err(MetricsError::SentenceCountMismatch(vec![
            hyp.len(),
            reference.len(),
        ]));
    }
    let words = reference.token_count();
    if words == 0 {
        return Err(MetricsError::EmptyReference);
    }
    let total = compensated_sum(
        hyp.sentences()
            .iter()
            .zip(reference.sentences())
            .map(|(h, r)| sentence_rep(h, r, params)),
    );
    Ok(100.0 * total / words as f64)
}

/// DROP score: percentage of source tokens linked in `ref_align` but in
/// none of `hyp_align`. An empty alignment set means no links anywhere.
pub fn drop_score(
    source: &Corpus,
    ref_align: &AlignmentSet,
    hyp_align: &AlignmentSet,
) -> Result<f64, MetricsError> {
    if !ref_align.pairs_with(source.len()) || !hyp_align.pairs_with(source.len()) {
        return Err(MetricsError::SentenceCountMismatch(vec![
            source.len(),
            ref_align.len(),
            hyp_align.len(),
        ]));
    }
    let mut dropped = 0usize;
    for (k, sentence) in source.sentences().iter().enumerate() {
        let in_ref = ref_align.aligned_sources(k);
        let in_hyp = hyp_align.aligned_sources(k);
        for &i in in_ref.iter().chain(&in_hyp) {
            if i >= sentence.len() {
                return Err(MetricsError::IndexOutOfRange {
                    sentence: k,
                    index: i,
                    len: sentence.len(),
                });
            }
        }
        dropped += in_ref.difference(&in_hyp).count();
    }
    let words = source.token_count();
    if words == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * dropped as f64 / words as f64)
}

/// Default floor of the coverage penalty.
pub const DEFAULT_COVERAGE_EPS: f64 = 0.1;

/// Coverage penalty of an attention matrix (natural logarithm).
pub fn coverage_penalty(att: &AttentionMatrix, beta: f64, eps: f64) -> Result<f64, MetricsError> {
    coverage_penalty_from_totals(&att.column_sums(), beta, eps)
}

/// Coverage penalty from the total attention each source word received.
pub fn coverage_penalty_from_totals(
    totals: &[f64],
    beta: f64,
    eps: f64,
) -> Result<f64, MetricsError> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(MetricsError::InvalidParameter(format!(
            "beta must be >= 0, got {beta}"
        )));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(MetricsError::InvalidParameter(format!(
            "eps must lie in (0, 1], got {eps}"
        )));
    }
    let sum = compensated_sum(totals.iter().map(|&s| s.min(1.0).max(eps).ln()));
    Ok(beta * sum)
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Number of positions `i` with `tokens[i] == tokens[i + 1]`, per word.
fn immediate_repeats(tokens: &[String]) -> HashMap<&str, usize> {
    let mut counts = HashMap::new();
    for pair in tokens.windows(2) {
        if pair[0] == pair[1] {
            *counts.entry(pair[0].as_str()).or_insert(0) += 1;
        }
    }
    counts
}

/// Neumaier summation.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(text: &str) -> Corpus {
        Corpus::parse(text)
    }

    #[test]
    fn rep_counts_immediate_repetition_only_once_for_single_bigram() {
        let s = rep_score(
            &corpus("the the cat sat"),
            &corpus("the cat sat"),
            &RepParams::default(),
        )
        .unwrap();
        assert!((s - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(format!("{s:.2}"), "66.67");
    }

    #[test]
    fn rep_counts_overlapping_ngrams_and_runs() {
        let s = rep_score(&corpus("a a a"), &corpus("b"), &RepParams::default()).unwrap();
        assert_eq!(s, 600.0);
    }

    #[test]
    fn rep_is_zero_for_identical_corpora() {
        let c = corpus("a a b a a\nx y x y\n");
        assert_eq!(rep_score(&c, &c, &RepParams::default()).unwrap(), 0.0);
    }

    #[test]
    fn rep_unigram_variant() {
        // n = 1: "a" occurs 3 times vs once in the reference
        let p = RepParams {
            n: 1,
            ..RepParams::default()
        };
        let s = rep_score(&corpus("a b a a"), &corpus("a b c d"), &p).unwrap();
        // unigram excess 2, repeat excess 1 (positions 2-3)
        assert_eq!(s, 100.0 * (2.0 + 2.0) / 4.0);
    }

    #[test]
    fn rep_errors() {
        let p = RepParams::default();
        assert!(matches!(
            rep_score(&corpus("a\nb\n"), &corpus("a\n"), &p),
            Err(MetricsError::SentenceCountMismatch(_))
        ));
        assert_eq!(
            rep_score(&corpus("a\n"), &corpus("\n"), &p),
            Err(MetricsError::EmptyReference)
        );
        let zero = RepParams { n: 0, ..p };
        assert!(rep_score(&corpus("a"), &corpus("a"), &zero).is_err());
    }

    #[test]
    fn drop_example() {
        let src = corpus("x y z");
        let r = AlignmentSet::parse("0-0 1-1").unwrap();
        let h = AlignmentSet::parse("0-0").unwrap();
        let s = drop_score(&src, &r, &h).unwrap();
        assert_eq!(format!("{s:.2}"), "33.33");
        assert_eq!(drop_score(&src, &r, &r).unwrap(), 0.0);
        assert_eq!(drop_score(&src, &AlignmentSet::default(), &h).unwrap(), 0.0);
    }

    #[test]
    fn drop_errors() {
        let src = corpus("x y");
        let r = AlignmentSet::parse("0-0\n1-1").unwrap();
        assert!(matches!(
            drop_score(&src, &r, &r),
            Err(MetricsError::SentenceCountMismatch(_))
        ));
        let r = AlignmentSet::parse("5-0").unwrap();
        assert!(matches!(
            drop_score(&src, &r, &AlignmentSet::default()),
            Err(MetricsError::IndexOutOfRange { index: 5, .. })
        ));
    }

    #[test]
    fn coverage_penalty_examples() {
        let full = AttentionMatrix::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(
            coverage_penalty(&full, 0.7, DEFAULT_COVERAGE_EPS).unwrap(),
            0.0
        );

        let cp = coverage_penalty_from_totals(&[1.0, 0.5], 0.2, 0.1).unwrap();
        assert!((cp - 0.2 * 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(format!("{cp:.4}"), "-0.1386");

        let cp = coverage_penalty_from_totals(&[1.0, 0.0], 1.0, 0.1).unwrap();
        assert!((cp - 0.1f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn coverage_penalty_rejects_bad_parameters() {
        assert!(coverage_penalty_from_totals(&[1.0], -1.0, 0.1).is_err());
        assert!(coverage_penalty_from_totals(&[1.0], 1.0, 0.0).is_err());
        assert!(coverage_penalty_from_totals(&[1.0], 1.0, 1.5).is_err());
    }

    #[test]
    fn neumaier_recovers_small_terms() {
        let s = compensated_sum([1e16, 1.0, -1e16]);
        assert_eq!(s, 1.0);
    }
}
