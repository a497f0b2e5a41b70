use super::certificate::clamp_projection;
use super::TransformError;
use super::{AttentionWeights, BoundVector, InputGrads, ProjectionCertificate, ScoreVector};
use crate::qk::{map_csparsemax, QkSolver};

/// Constrained sparsemax: the Euclidean projection of `z` onto
/// `{alpha in simplex : alpha <= u}`.
///
/// The problem is rewritten as a singly-constrained separable QP with
/// `x = (alpha - z) / 2` and solved in expected linear time; the shared
/// clamp level `y` of that QP gives the threshold `tau = -2y`.
pub fn csparsemax_forward(
    z: &ScoreVector,
    u: &BoundVector,
) -> Result<(AttentionWeights, ProjectionCertificate), TransformError> {
    u.check_against(z)?;
    let problem = map_csparsemax(z, u);
    let solution = QkSolver::default()
        .solve(&problem)
        .expect("feasible bounds always give a solvable problem");
    let (alpha, cert) = clamp_projection(z, Some(u), -2.0 * solution.level);
    Ok((AttentionWeights::from_raw(alpha), cert))
}

/// `dz_j = 1(j in A)(d_alpha_j - m)`, `du_j = 1(j in A_R)(d_alpha_j - m)`
/// with `m` the mean of `d_alpha` over the free set. Touches only the free
/// and clipped coordinates.
pub fn csparsemax_backward(cert: &ProjectionCertificate, d_alpha: &[f64]) -> InputGrads {
    let n = d_alpha.len();
    let mut dz = vec![0.0; n];
    let mut du = vec![0.0; n];
    if cert.free.is_empty() {
        for &j in &cert.clipped {
            du[j] = d_alpha[j];
        }
        return InputGrads {
            dz,
            du,
            degenerate: true,
        };
    }
    let m = cert.free.iter().map(|&j| d_alpha[j]).sum::<f64>() / cert.free.len() as f64;
    for &j in &cert.free {
        dz[j] = d_alpha[j] - m;
    }
    for &j in &cert.clipped {
        du[j] = d_alpha[j] - m;
    }
    InputGrads {
        dz,
        du,
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::sparsemax_forward;

    fn z(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    fn u(v: &[f64]) -> BoundVector {
        BoundVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn toy_scores_with_a_half_bound() {
        let (a, cert) = csparsemax_forward(&z(&[1.2, 0.8, -0.2]), &u(&[0.5, 1.0, 1.0])).unwrap();
        assert!((a[0] - 0.5).abs() < 1e-12);
        assert!((a[1] - 0.5).abs() < 1e-12);
        assert_eq!(a[2], 0.0);
        assert!((cert.tau - 0.3).abs() < 1e-12);
        assert_eq!(cert.free, vec![1]);
        assert_eq!(cert.clipped, vec![0]);
        assert_eq!(cert.zero, vec![2]);
    }

    #[test]
    fn first_coordinate_saturates() {
        let (a, cert) = csparsemax_forward(&z(&[0.0, 0.0]), &u(&[0.3, 1.0])).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-15);
        assert!((a[1] - 0.7).abs() < 1e-15);
        assert_eq!(cert.clipped, vec![0]);
    }

    #[test]
    fn unbounded_matches_sparsemax() {
        let scores = z(&[1.2, 0.8, -0.2, 0.75]);
        let (a, c) = csparsemax_forward(&scores, &BoundVector::unbounded(4)).unwrap();
        let (b, d) = sparsemax_forward(&scores);
        assert!(c.same_partition(&d));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn infeasible_and_single_coordinate() {
        assert!(matches!(
            csparsemax_forward(&z(&[0.0, 1.0]), &u(&[0.2, 0.7])),
            Err(TransformError::Infeasible { .. })
        ));
        let (a, cert) = csparsemax_forward(&z(&[3.0]), &u(&[1.0])).unwrap();
        assert_eq!(a.as_slice(), &[1.0]);
        assert_eq!(cert.clipped, vec![0]);
        assert!(cert.free.is_empty());
    }

    #[test]
    fn backward_example() {
        let cert = ProjectionCertificate {
            tau: 0.3,
            free: vec![1],
            zero: vec![2],
            clipped: vec![0],
        };
        let g = csparsemax_backward(&cert, &[0.1, 0.3, -0.2]);
        assert_eq!(g.dz, vec![0.0, 0.0, 0.0]);
        assert!((g.du[0] + 0.2).abs() < 1e-15);
        assert_eq!(&g.du[1..], &[0.0, 0.0]);
        assert!(!g.degenerate);

        let g = csparsemax_backward(&cert, &[0.7, 0.7, 0.7]);
        assert_eq!(g.dz, vec![0.0; 3]);
        assert_eq!(g.du, vec![0.0; 3]);
    }

    #[test]
    fn saturated_backward_flags_degeneracy() {
        let (_, cert) = csparsemax_forward(&z(&[2.0, 1.0, 0.0]), &u(&[0.5, 0.5, 0.0])).unwrap();
        assert!(cert.free.is_empty());
        let g = csparsemax_backward(&cert, &[1.0, 2.0, 3.0]);
        assert!(g.degenerate);
        assert_eq!(g.dz, vec![0.0; 3]);
        assert_eq!(g.du[0], 1.0);
        assert_eq!(g.du[1], 2.0);
    }
}
