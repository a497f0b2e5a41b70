//! Attention transformations `rho(z, u)` onto the probability simplex.
//!
//! Every forward pass returns a [`Projection`]: the attention weights plus,
//! for the sparse and bounded transforms, a [`ProjectionCertificate`] holding
//! the active-set partition. The backward passes only read the certificate
//! (and the weights, for the softmax family), which is what makes
//! constrained sparsemax backpropagation cost `O(|A| + |A_R|)`.

mod certificate;
mod csoftmax;
mod csparsemax;
mod softmax;
mod sparsemax;
mod vectors;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use certificate::{verify_certificate, ProjectionCertificate, CERTIFICATE_TOL, CLASSIFY_TOL};
pub use csoftmax::{csoftmax_backward, csoftmax_forward};
pub use csparsemax::{csparsemax_backward, csparsemax_forward};
pub use softmax::{softmax_backward, softmax_forward};
pub use sparsemax::{sparsemax_backward, sparsemax_forward};
pub use vectors::{AttentionWeights, BoundVector, ScoreVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransformError {
    #[error("score vector is empty")]
    Empty,
    #[error("score {index} is not finite ({value})")]
    NonFiniteScore { index: usize, value: f64 },
    #[error("bound {index} must be a non-negative number, got {value}")]
    InvalidBound { index: usize, value: f64 },
    #[error("{bounds} bounds given for {scores} scores")]
    LengthMismatch { scores: usize, bounds: usize },
    #[error("infeasible bounds: sum of upper bounds is {total} (Σu < 1)")]
    Infeasible { total: f64 },
    #[error("{0} requires upper bounds")]
    MissingBounds(Transform),
    #[error("cotangent has length {got}, expected {expected}")]
    CotangentLength { expected: usize, got: usize },
    #[error("projection carries no certificate")]
    MissingCertificate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Softmax,
    Sparsemax,
    Csoftmax,
    Csparsemax,
}

impl Transform {
    pub const ALL: [Transform; 4] = [
        Transform::Softmax,
        Transform::Sparsemax,
        Transform::Csoftmax,
        Transform::Csparsemax,
    ];

    /// Whether the transform honours upper bounds.
    pub fn is_constrained(self) -> bool {
        matches!(self, Transform::Csoftmax | Transform::Csparsemax)
    }

    pub fn name(self) -> &'static str {
        match self {
            Transform::Softmax => "softmax",
            Transform::Sparsemax => "sparsemax",
            Transform::Csoftmax => "csoftmax",
            Transform::Csparsemax => "csparsemax",
        }
    }

    /// Runs the forward pass. Bounds are required by the constrained
    /// transforms and ignored by the others.
    pub fn forward(
        self,
        z: &ScoreVector,
        bounds: Option<&BoundVector>,
    ) -> Result<Projection, TransformError> {
        let bounds = || bounds.ok_or(TransformError::MissingBounds(self));
        let (weights, certificate) = match self {
            Transform::Softmax => (softmax_forward(z), None),
            Transform::Sparsemax => {
                let (w, c) = sparsemax_forward(z);
                (w, Some(c))
            }
            Transform::Csoftmax => {
                let (w, c) = csoftmax_forward(z, bounds()?)?;
                (w, Some(c))
            }
            Transform::Csparsemax => {
                let (w, c) = csparsemax_forward(z, bounds()?)?;
                (w, Some(c))
            }
        };
        Ok(Projection {
            weights,
            certificate,
        })
    }

    /// Backpropagates the cotangent `d_alpha` through a projection produced
    /// by [`Transform::forward`]. `du` is all zeros for the unbounded
    /// transforms.
    pub fn backward(
        self,
        projection: &Projection,
        d_alpha: &[f64],
    ) -> Result<InputGrads, TransformError> {
        let n = projection.weights.len();
        if d_alpha.len() != n {
            return Err(TransformError::CotangentLength {
                expected: n,
                got: d_alpha.len(),
            });
        }
        let cert = || {
            projection
                .certificate
                .as_ref()
                .ok_or(TransformError::MissingCertificate)
        };
        Ok(match self {
            Transform::Softmax => InputGrads {
                dz: softmax_backward(&projection.weights, d_alpha),
                du: vec![0.0; n],
                degenerate: false,
            },
            Transform::Sparsemax => InputGrads {
                dz: sparsemax_backward(cert()?, d_alpha),
                du: vec![0.0; n],
                degenerate: false,
            },
            Transform::Csoftmax => csoftmax_backward(cert()?, &projection.weights, d_alpha),
            Transform::Csparsemax => csparsemax_backward(cert()?, d_alpha),
        })
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Transform {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "softmax" => Ok(Transform::Softmax),
            "sparsemax" => Ok(Transform::Sparsemax),
            "csoftmax" => Ok(Transform::Csoftmax),
            "csparsemax" => Ok(Transform::Csparsemax),
            other => Err(format!(
                "unknown transform '{other}' (expected softmax, sparsemax, csoftmax or csparsemax)"
            )),
        }
    }
}

/// Output of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub weights: AttentionWeights,
    pub certificate: Option<ProjectionCertificate>,
}

/// Gradients with respect to the scores and the upper bounds.
///
/// `degenerate` is set when the free set is empty (a fully saturated
/// solution), where the Jacobian is undefined; `dz` is then zero and `du`
/// passes the cotangent straight through on the clipped coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGrads {
    pub dz: Vec<f64>,
    pub du: Vec<f64>,
    pub degenerate: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transform_names_round_trip() {
        for t in Transform::ALL {
            assert_eq!(t.name().parse::<Transform>().unwrap(), t);
        }
        assert!("entmax".parse::<Transform>().is_err());
    }

    #[test]
    fn constrained_transforms_require_bounds() {
        let z = ScoreVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(
            Transform::Csparsemax.forward(&z, None),
            Err(TransformError::MissingBounds(Transform::Csparsemax))
        );
        assert!(Transform::Sparsemax.forward(&z, None).is_ok());
    }

    #[test]
    fn backward_checks_cotangent_length() {
        let z = ScoreVector::new(vec![0.0, 1.0]).unwrap();
        let p = Transform::Softmax.forward(&z, None).unwrap();
        assert!(matches!(
            Transform::Softmax.backward(&p, &[1.0]),
            Err(TransformError::CotangentLength { .. })
        ));
    }
}
