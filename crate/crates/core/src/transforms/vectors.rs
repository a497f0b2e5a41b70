use std::ops::Deref;

use super::TransformError;

/// Raw attention scores `z` over `J` source positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TransformError> {
        if values.is_empty() {
            return Err(TransformError::Empty);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(TransformError::NonFiniteScore { index, value });
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Adds `c` to every score.
    pub fn shifted(&self, c: f64) -> Result<Self, TransformError> {
        Self::new(self.0.iter().map(|z| z + c).collect())
    }
}

impl Deref for ScoreVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Elementwise upper bounds `u`. Entries are non-negative; `+inf` marks an
/// unbounded position such as the sink token.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundVector(Vec<f64>);

impl BoundVector {
    pub fn new(values: Vec<f64>) -> Result<Self, TransformError> {
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| v.is_nan() || **v < 0.0)
        {
            return Err(TransformError::InvalidBound { index, value });
        }
        Ok(Self(values))
    }

    pub fn unbounded(len: usize) -> Self {
        Self(vec![f64::INFINITY; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Total credit; `+inf` as soon as one entry is unbounded.
    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub(crate) fn check_against(&self, z: &ScoreVector) -> Result<(), TransformError> {
        if self.len() != z.len() {
            return Err(TransformError::LengthMismatch {
                scores: z.len(),
                bounds: self.len(),
            });
        }
        let total = self.total();
        if total < 1.0 {
            return Err(TransformError::Infeasible { total });
        }
        Ok(())
    }
}

impl Deref for BoundVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights(Vec<f64>);

impl AttentionWeights {
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// Indices with nonzero weight.
    pub fn support(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, a)| **a > 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}

impl Deref for AttentionWeights {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scores_reject_empty_and_non_finite() {
        assert_eq!(ScoreVector::new(vec![]), Err(TransformError::Empty));
        assert!(matches!(
            ScoreVector::new(vec![0.0, f64::NAN]),
            Err(TransformError::NonFiniteScore { index: 1, .. })
        ));
        assert!(ScoreVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn bounds_accept_infinity_but_not_negative() {
        assert!(BoundVector::new(vec![0.0, f64::INFINITY]).is_ok());
        assert!(matches!(
            BoundVector::new(vec![0.5, -0.1]),
            Err(TransformError::InvalidBound { index: 1, .. })
        ));
        assert!(BoundVector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn feasibility_uses_total_credit() {
        let z = ScoreVector::new(vec![0.0, 0.0]).unwrap();
        let tight = BoundVector::new(vec![0.5, 0.5]).unwrap();
        assert!(tight.check_against(&z).is_ok());
        let short = BoundVector::new(vec![0.5, 0.4]).unwrap();
        assert!(matches!(
            short.check_against(&z),
            Err(TransformError::Infeasible { .. })
        ));
        let sink = BoundVector::new(vec![0.0, f64::INFINITY]).unwrap();
        assert!(sink.check_against(&z).is_ok());
        let wrong_len = BoundVector::new(vec![1.0]).unwrap();
        assert!(matches!(
            wrong_len.check_against(&z),
            Err(TransformError::LengthMismatch { .. })
        ));
    }
}
