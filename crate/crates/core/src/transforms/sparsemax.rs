use super::certificate::clamp_projection;
use super::{AttentionWeights, ProjectionCertificate, ScoreVector};

/// Euclidean projection of `z` onto the simplex, by sorting.
pub fn sparsemax_forward(z: &ScoreVector) -> (AttentionWeights, ProjectionCertificate) {
    let mut sorted = z.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));

    // support size k is the largest k with 1 + k z_(k) > sum_{i<=k} z_(i)
    let mut cumsum = 0.0;
    let mut tau = sorted[0] - 1.0;
    for (i, &zi) in sorted.iter().enumerate() {
        cumsum += zi;
        let k = (i + 1) as f64;
        if 1.0 + k * zi > cumsum {
            tau = (cumsum - 1.0) / k;
        }
    }

    let (alpha, cert) = clamp_projection(z, None, tau);
    (AttentionWeights::from_raw(alpha), cert)
}

/// `dz_j = 1(j in A) (d_alpha_j - mean_{A} d_alpha)`.
pub fn sparsemax_backward(cert: &ProjectionCertificate, d_alpha: &[f64]) -> Vec<f64> {
    let mut dz = vec![0.0; d_alpha.len()];
    if cert.free.is_empty() {
        return dz;
    }
    let m = cert.free.iter().map(|&j| d_alpha[j]).sum::<f64>() / cert.free.len() as f64;
    for &j in &cert.free {
        dz[j] = d_alpha[j] - m;
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(v: &[f64]) -> ScoreVector {
        ScoreVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn toy_scores_project_to_seventy_thirty() {
        let (a, cert) = sparsemax_forward(&z(&[1.2, 0.8, -0.2]));
        assert!((a[0] - 0.7).abs() < 1e-12);
        assert!((a[1] - 0.3).abs() < 1e-12);
        assert_eq!(a[2], 0.0);
        assert!((cert.tau - 0.5).abs() < 1e-12);
        assert_eq!(cert.free, vec![0, 1]);
        assert_eq!(cert.zero, vec![2]);
        assert!(cert.clipped.is_empty());
    }

    #[test]
    fn equal_scores_split_evenly() {
        let (a, _) = sparsemax_forward(&z(&[4.0, 4.0]));
        assert_eq!(a.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn unit_margin_gives_one_hot() {
        // z_1 - z_2 = 3 >= 1: tau = 2 and the others sit at z - tau = -2
        let (a, cert) = sparsemax_forward(&z(&[3.0, 0.0, 0.0]));
        assert_eq!(a.as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(cert.free, vec![0]);
        // exactly at the margin the runner-up ties at zero and goes to A_L
        let (a, cert) = sparsemax_forward(&z(&[1.0, 0.0]));
        assert_eq!(a.as_slice(), &[1.0, 0.0]);
        assert_eq!(cert.zero, vec![1]);
    }

    #[test]
    fn single_coordinate() {
        let (a, cert) = sparsemax_forward(&z(&[-5.0]));
        assert_eq!(a.as_slice(), &[1.0]);
        assert_eq!(cert.free, vec![0]);
    }

    #[test]
    fn backward_on_free_set() {
        let cert = ProjectionCertificate {
            tau: 0.5,
            free: vec![0, 1],
            zero: vec![2],
            clipped: vec![],
        };
        assert_eq!(
            sparsemax_backward(&cert, &[1.0, 0.0, 0.0]),
            vec![0.5, -0.5, 0.0]
        );
        assert_eq!(
            sparsemax_backward(&cert, &[2.0, 2.0, 2.0]),
            vec![0.0, 0.0, 0.0]
        );
    }
}
