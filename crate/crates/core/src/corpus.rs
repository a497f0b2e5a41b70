//! Tokenized corpora, word alignments and attention matrices.

use std::collections::BTreeSet;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("line {line}: cannot parse alignment pair '{token}'")]
    BadAlignment { line: usize, token: String },
    #[error("attention matrix: {0}")]
    BadMatrix(String),
}

/// Pre-tokenized sentences, one token list per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    sentences: Vec<Vec<String>>,
}

impl Corpus {
    pub fn new(sentences: Vec<Vec<String>>) -> Self {
        Self { sentences }
    }

    /// One sentence per line, whitespace-tokenized. Blank lines are empty
    /// sentences.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(|l| l.split_whitespace().map(str::to_owned).collect())
                .collect(),
        )
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Per-sentence `(source, target)` alignment links, 0-indexed.
///
/// A set with no sentences at all (an empty alignment file) stands for "no
/// links in any sentence" and pairs with a corpus of any size.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AlignmentSet {
    sentences: Vec<BTreeSet<(usize, usize)>>,
}

impl AlignmentSet {
    pub fn new(sentences: Vec<BTreeSet<(usize, usize)>>) -> Self {
        Self { sentences }
    }

    /// fast_align format: one line per sentence pair, space-separated `i-j`.
    pub fn parse(text: &str) -> Result<Self, DataError> {
        let mut sentences = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let mut links = BTreeSet::new();
            for token in line.split_whitespace() {
                let bad = || DataError::BadAlignment {
                    line: n + 1,
                    token: token.to_owned(),
                };
                let (i, j) = token.split_once('-').ok_or_else(bad)?;
                let i = i.parse().map_err(|_| bad())?;
                let j = j.parse().map_err(|_| bad())?;
                links.insert((i, j));
            }
            sentences.push(links);
        }
        Ok(Self { sentences })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Links of sentence `k`; empty for a sentence-less set.
    pub fn links(&self, k: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.sentences.get(k).into_iter().flatten().copied()
    }

    /// Whether this set can be paired with `n` sentences.
    pub fn pairs_with(&self, n: usize) -> bool {
        self.sentences.is_empty() || self.sentences.len() == n
    }

    /// Source positions with at least one link in sentence `k`.
    pub fn aligned_sources(&self, k: usize) -> BTreeSet<usize> {
        self.links(k).map(|(i, _)| i).collect()
    }
}

/// A `T x J` matrix of attention weights, one row per decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMatrix {
    rows: Vec<Vec<f64>>,
}

impl AttentionMatrix {
    /// Row sums may deviate from 1 by at most this much.
    pub const ROW_TOL: f64 = 1e-6;

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        if let Some(first) = rows.first() {
            let width = first.len();
            for (t, row) in rows.iter().enumerate() {
                if row.len() != width {
                    return Err(DataError::BadMatrix(format!(
                        "row {t} has {} columns, expected {width}",
                        row.len()
                    )));
                }
                if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(DataError::BadMatrix(format!(
                        "row {t} has entry {v} outside [0, 1]"
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > Self::ROW_TOL {
                    return Err(DataError::BadMatrix(format!("row {t} sums to {sum}")));
                }
            }
        }
        Ok(Self { rows })
    }

    /// Parses a JSON array of rows.
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let rows: Vec<Vec<f64>> =
            serde_json::from_str(text).map_err(|e| DataError::BadMatrix(e.to_string()))?;
        Self::new(rows)
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn steps(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    /// Total attention received by each source position.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.width()];
        for row in &self.rows {
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        sums
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_counts_tokens() {
        let c = Corpus::parse("the cat  sat\n\na b\n");
        assert_eq!(c.len(), 3);
        assert_eq!(c.token_count(), 5);
        assert!(c.sentences()[1].is_empty());
    }

    #[test]
    fn alignments_parse_fast_align_lines() {
        let a = AlignmentSet::parse("0-0 0-1 2-1\n\n1-0\n").unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a.links(0).collect::<Vec<_>>(), vec![(0, 0), (0, 1), (2, 1)]);
        assert_eq!(a.links(1).count(), 0);
        assert_eq!(
            a.aligned_sources(0).into_iter().collect::<Vec<_>>(),
            vec![0, 2]
        );
        assert!(AlignmentSet::parse("").unwrap().pairs_with(10));
        assert!(!a.pairs_with(2));
    }

    #[test]
    fn alignments_reject_garbage() {
        assert_eq!(
            AlignmentSet::parse("0-0\n1:2\n"),
            Err(DataError::BadAlignment {
                line: 2,
                token: "1:2".into()
            })
        );
        assert!(AlignmentSet::parse("-1-0").is_err());
    }

    #[test]
    fn matrix_validation() {
        let m = AttentionMatrix::from_json("[[0.5, 0.5], [1.0, 0.0]]").unwrap();
        assert_eq!(m.column_sums(), vec![1.5, 0.5]);
        assert!(AttentionMatrix::from_json("[[0.5, 0.4]]").is_err());
        assert!(AttentionMatrix::from_json("[[1.0], [0.5, 0.5]]").is_err());
        assert!(AttentionMatrix::from_json("[[1.5, -0.5]]").is_err());
        assert_eq!(AttentionMatrix::from_json("[]").unwrap().width(), 0);
    }
}
