//! Fertility tables and per-sentence fertility assignment.
//!
//! A fertility is the total amount of attention a source word may receive
//! over a whole decoding run. Every assigned vector ends with an infinite
//! entry for the sink token so that the per-step bounds always stay feasible.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::corpus::{AlignmentSet, Corpus};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FertilityError {
    #[error("the {0} strategy needs a fertility table")]
    MissingTable(&'static str),
    #[error("fertility must be a non-negative number, got {0}")]
    InvalidFertility(f64),
    #[error("{corpus} sentences but {alignments} alignment lines")]
    SentenceCountMismatch { corpus: usize, alignments: usize },
    #[error("sentence {sentence}: source index {index} but the sentence has {len} tokens")]
    LengthMismatch {
        sentence: usize,
        index: usize,
        len: usize,
    },
    #[error("line {line}: {reason}")]
    BadTableLine { line: usize, reason: String },
}

/// Type-level fertilities with a fallback for unknown tokens.
///
/// Stored entries are final values. Unknown tokens get
/// `default + additive`.
#[derive(Debug, Clone, PartialEq)]
pub struct FertilityTable {
    entries: HashMap<String, f64>,
    default: f64,
    additive: f64,
}

impl FertilityTable {
    pub fn new(
        entries: HashMap<String, f64>,
        default: f64,
        additive: f64,
    ) -> Result<Self, FertilityError> {
        for v in entries.values().copied().chain([default, additive]) {
            check_fertility(v)?;
        }
        Ok(Self {
            entries,
            default,
            additive,
        })
    }

    pub fn lookup(&self, token: &str) -> f64 {
        self.entries
            .get(token)
            .copied()
            .unwrap_or(self.default + self.additive)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn default_fertility(&self) -> f64 {
        self.default + self.additive
    }

    /// Reads `token<TAB>fertility` lines. Blank lines are skipped.
    pub fn parse_tsv(text: &str, default: f64, additive: f64) -> Result<Self, FertilityError> {
        let mut entries = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |reason: String| FertilityError::BadTableLine {
                line: n + 1,
                reason,
            };
            let (token, value) = line
                .split_once('\t')
                .ok_or_else(|| bad("expected token<TAB>fertility".into()))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| bad(format!("cannot parse fertility '{}'", value.trim())))?;
            check_fertility(value).map_err(|e| bad(e.to_string()))?;
            entries.insert(token.to_owned(), value);
        }
        Self::new(entries, default, additive)
    }

    /// Writes the entries as TSV, sorted by token.
    pub fn to_tsv(&self) -> String {
        let sorted: BTreeMap<_, _> = self.entries.iter().collect();
        let mut out = String::new();
        for (token, value) in sorted {
            writeln!(out, "{token}\t{value}").unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FertilityStrategy {
    /// The same fertility for every source word.
    Constant(f64),
    /// Maximum aligned count per word type, from word alignments.
    Guided,
    /// Expected fertilities produced by an external predictor.
    Predicted,
}

/// Fertility vector for one source sentence, with the sink entry (`+inf`)
/// appended.
pub fn assign_fertilities(
    strategy: FertilityStrategy,
    tokens: &[impl AsRef<str>],
    table: Option<&FertilityTable>,
) -> Result<Vec<f64>, FertilityError> {
    let mut f: Vec<f64> = match strategy {
        FertilityStrategy::Constant(value) => {
            check_fertility(value)?;
            vec![value; tokens.len()]
        }
        FertilityStrategy::Guided | FertilityStrategy::Predicted => {
            let name = if strategy == FertilityStrategy::Guided {
                "guided"
            } else {
                "predicted"
            };
            let table = table.ok_or(FertilityError::MissingTable(name))?;
            tokens.iter().map(|t| table.lookup(t.as_ref())).collect()
        }
    };
    f.push(f64::INFINITY);
    Ok(f)
}

/// Builds a GUIDED table: for each source word type, the largest number of
/// target positions linked to any single occurrence, floored at 1, plus
/// `additive`. Unseen words default to `1 + additive`.
pub fn build_guided_table(
    source: &Corpus,
    alignments: &AlignmentSet,
    additive: f64,
) -> Result<FertilityTable, FertilityError> {
    check_fertility(additive)?;
    if !alignments.pairs_with(source.len()) {
        return Err(FertilityError::SentenceCountMismatch {
            corpus: source.len(),
            alignments: alignments.len(),
        });
    }

    let mut max_degree: HashMap<&str, usize> = HashMap::new();
    for (k, sentence) in source.sentences().iter().enumerate() {
        let mut degree = vec![0usize; sentence.len()];
        for (i, _) in alignments.links(k) {
            if i >= sentence.len() {
                return Err(FertilityError::LengthMismatch {
                    sentence: k,
                    index: i,
                    len: sentence.len(),
                });
            }
            degree[i] += 1;
        }
        for (token, &d) in sentence.iter().zip(&degree) {
            let best = max_degree.entry(token.as_str()).or_insert(0);
            *best = (*best).max(d);
        }
    }

    let entries = max_degree
        .into_iter()
        .map(|(token, d)| (token.to_owned(), d.max(1) as f64 + additive))
        .collect();
    FertilityTable::new(entries, 1.0, additive)
}

fn check_fertility(value: f64) -> Result<(), FertilityError> {
    if value.is_nan() || value < 0.0 {
        Err(FertilityError::InvalidFertility(value))
    } else {
        Ok(())
    }
}
