//! Fertility-bounded decoding sessions.
//!
//! At step `t` every source word may receive at most the credit it has left,
//! `u_t = f - beta_{t-1}`, where `beta` is the attention accumulated so far.
//! The last position is the sink token with infinite fertility, which keeps
//! `sum u_t` infinite and therefore every step feasible.

use thiserror::Error;

use crate::transforms::{AttentionWeights, BoundVector, ScoreVector, Transform, TransformError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SessionError {
    #[error("fertility vector must end with the infinite sink entry")]
    MissingSink,
    #[error("fertility {index} is invalid ({value})")]
    InvalidFertility { index: usize, value: f64 },
    #[error("exhaustion coefficient must be a non-negative number, got {0}")]
    InvalidExhaustion(f64),
    #[error("step {step}: {got} scores for {expected} positions")]
    LengthMismatch {
        step: usize,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Decoding state for one source sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    fertility: Vec<f64>,
    cumulative: Vec<f64>,
    step: usize,
    exhaustion: f64,
    transform: Transform,
}

impl SessionState {
    /// `fertility` has `J + 1` entries, the last being the sink (`+inf`).
    pub fn new(
        fertility: Vec<f64>,
        transform: Transform,
        exhaustion: f64,
    ) -> Result<Self, SessionError> {
        if fertility.last() != Some(&f64::INFINITY) {
            return Err(SessionError::MissingSink);
        }
        if let Some((index, &value)) = fertility
            .iter()
            .enumerate()
            .find(|(_, f)| f.is_nan() || **f < 0.0)
        {
            return Err(SessionError::InvalidFertility { index, value });
        }
        if !(exhaustion >= 0.0 && exhaustion.is_finite()) {
            return Err(SessionError::InvalidExhaustion(exhaustion));
        }
        let n = fertility.len();
        Ok(Self {
            fertility,
            cumulative: vec![0.0; n],
            step: 0,
            exhaustion,
            transform,
        })
    }

    pub fn fertility(&self) -> &[f64] {
        &self.fertility
    }

    /// Attention accumulated so far (`beta`).
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn exhaustion(&self) -> f64 {
        self.exhaustion
    }

    /// Remaining credit `max(0, f - beta)`.
    pub fn remaining_credit(&self) -> Vec<f64> {
        self.fertility
            .iter()
            .zip(&self.cumulative)
            .map(|(f, b)| if f.is_finite() { (f - b).max(0.0) } else { *f })
            .collect()
    }

    /// Scores after the exhaustion bonus `z + c u`, applied only where the
    /// fertility is finite.
    pub fn adjusted_scores(&self, z: &[f64], credit: &[f64]) -> Vec<f64> {
        if self.exhaustion == 0.0 {
            return z.to_vec();
        }
        z.iter()
            .zip(credit)
            .zip(&self.fertility)
            .map(|((zj, uj), fj)| {
                if fj.is_finite() {
                    zj + self.exhaustion * uj
                } else {
                    *zj
                }
            })
            .collect()
    }

    /// Computes the attention for one step and returns it with the next
    /// state.
    pub fn step(&self, z: &[f64]) -> Result<(AttentionWeights, SessionState), SessionError> {
        if z.len() != self.fertility.len() {
            return Err(SessionError::LengthMismatch {
                step: self.step + 1,
                expected: self.fertility.len(),
                got: z.len(),
            });
        }
        let credit = self.remaining_credit();
        let scores = ScoreVector::new(self.adjusted_scores(z, &credit))?;
        let bounds = BoundVector::new(credit)?;
        let projection = self.transform.forward(&scores, Some(&bounds))?;

        let mut next = self.clone();
        for (b, a) in next.cumulative.iter_mut().zip(projection.weights.iter()) {
            *b += a;
        }
        next.step += 1;
        Ok((projection.weights, next))
    }

    /// In-place variant of [`SessionState::step`].
    pub fn advance(&mut self, z: &[f64]) -> Result<AttentionWeights, SessionError> {
        let (alpha, next) = self.step(z)?;
        *self = next;
        Ok(alpha)
    }
}

/// Output of [`run_session`]: one attention row per step and the final
/// cumulative attention.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRun {
    pub attention: Vec<Vec<f64>>,
    pub cumulative: Vec<f64>,
}

/// Runs a whole session over a sequence of score vectors.
pub fn run_session(
    fertility: Vec<f64>,
    scores: &[Vec<f64>],
    transform: Transform,
    exhaustion: f64,
) -> Result<SessionRun, SessionError> {
    let mut state = SessionState::new(fertility, transform, exhaustion)?;
    let mut attention = Vec::with_capacity(scores.len());
    for z in scores {
        attention.push(state.advance(z)?.into_vec());
    }
    Ok(SessionRun {
        attention,
        cumulative: state.cumulative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{csparsemax_forward, softmax_forward};

    const INF: f64 = f64::INFINITY;

    #[test]
    fn first_step_is_the_plain_transform() {
        let state = SessionState::new(vec![1.0, 1.0, INF], Transform::Csparsemax, 0.0).unwrap();
        let z = [1.2, 0.8, -0.2];
        let (alpha, next) = state.step(&z).unwrap();
        let (expected, _) = csparsemax_forward(
            &ScoreVector::new(z.to_vec()).unwrap(),
            &BoundVector::new(vec![1.0, 1.0, INF]).unwrap(),
        )
        .unwrap();
        assert_eq!(alpha, expected);
        assert_eq!(next.cumulative(), expected.as_slice());
        assert_eq!(next.step_index(), 1);
    }

    #[test]
    fn exhausted_word_gets_nothing() {
        let state = SessionState::new(vec![1.0, 1.0, INF], Transform::Csparsemax, 0.0).unwrap();
        let (a1, state) = state.step(&[5.0, 0.0, 0.0]).unwrap();
        assert_eq!(a1.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(state.remaining_credit(), vec![0.0, 1.0, INF]);
        let (a2, _) = state.step(&[5.0, 0.0, 0.0]).unwrap();
        assert_eq!(a2[0], 0.0);
    }

    #[test]
    fn exhaustion_bonus_skips_the_sink() {
        let mut state = SessionState::new(vec![2.0, 2.0, INF], Transform::Csparsemax, 0.2).unwrap();
        state.cumulative = vec![1.0, 0.0, 0.0];
        let credit = state.remaining_credit();
        assert_eq!(credit, vec![1.0, 2.0, INF]);
        let adjusted = state.adjusted_scores(&[0.0, 0.0, 0.0], &credit);
        assert!((adjusted[0] - 0.2).abs() < 1e-15);
        assert!((adjusted[1] - 0.4).abs() < 1e-15);
        assert_eq!(adjusted[2], 0.0);
        let (alpha, _) = state.step(&[0.0, 0.0, 0.0]).unwrap();
        let (expected, _) = csparsemax_forward(
            &ScoreVector::new(adjusted).unwrap(),
            &BoundVector::new(credit).unwrap(),
        )
        .unwrap();
        assert_eq!(alpha, expected);
    }

    #[test]
    fn softmax_ignores_fertility() {
        let run = run_session(
            vec![0.1, 0.1, INF],
            &[vec![1.0, 2.0, 0.0], vec![1.0, 2.0, 0.0]],
            Transform::Softmax,
            0.0,
        )
        .unwrap();
        let expected = softmax_forward(&ScoreVector::new(vec![1.0, 2.0, 0.0]).unwrap());
        assert_eq!(run.attention[0], expected.as_slice());
        assert_eq!(run.attention[1], expected.as_slice());
    }

    #[test]
    fn empty_run() {
        let run = run_session(vec![1.0, INF], &[], Transform::Csparsemax, 0.2).unwrap();
        assert!(run.attention.is_empty());
        assert_eq!(run.cumulative, vec![0.0, 0.0]);
    }

    #[test]
    fn column_sums_respect_fertility() {
        let scores: Vec<Vec<f64>> = (0..5)
            .map(|t| vec![1.0 + t as f64 * 0.1, 0.5, 0.9 - t as f64 * 0.2, -0.3])
            .collect();
        for transform in [Transform::Csparsemax, Transform::Csoftmax] {
            let run = run_session(vec![1.0, 1.0, 1.0, INF], &scores, transform, 0.0).unwrap();
            for j in 0..3 {
                let col: f64 = run.attention.iter().map(|r| r[j]).sum();
                assert!(col <= 1.0 + 1e-9, "{transform} column {j} = {col}");
            }
        }
    }

    #[test]
    fn invalid_sessions() {
        assert_eq!(
            SessionState::new(vec![1.0, 1.0], Transform::Csparsemax, 0.0),
            Err(SessionError::MissingSink)
        );
        assert!(SessionState::new(vec![-1.0, INF], Transform::Csparsemax, 0.0).is_err());
        assert!(SessionState::new(vec![1.0, INF], Transform::Csparsemax, -0.1).is_err());
        let state = SessionState::new(vec![1.0, INF], Transform::Csparsemax, 0.0).unwrap();
        assert!(matches!(
            state.step(&[0.0, 0.0, 0.0]),
            Err(SessionError::LengthMismatch {
                step: 1,
                expected: 2,
                got: 3
            })
        ));
    }
}
