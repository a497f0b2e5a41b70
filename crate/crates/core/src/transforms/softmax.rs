use super::{AttentionWeights, ScoreVector};

/// `alpha_j = exp(z_j - max z) / sum_k exp(z_k - max z)`.
pub fn softmax_forward(z: &ScoreVector) -> AttentionWeights {
    let all: Vec<usize> = (0..z.len()).collect();
    let mut out = vec![0.0; z.len()];
    scaled_softmax(z, &all, 1.0, &mut out);
    AttentionWeights::from_raw(out)
}

/// `dz_j = alpha_j (d_alpha_j - <alpha, d_alpha>)`.
pub fn softmax_backward(alpha: &[f64], d_alpha: &[f64]) -> Vec<f64> {
    let inner: f64 = alpha.iter().zip(d_alpha).map(|(a, d)| a * d).sum();
    alpha
        .iter()
        .zip(d_alpha)
        .map(|(a, d)| a * (d - inner))
        .collect()
}

/// Writes `mass * softmax(z restricted to idx)` into `out[idx]`.
pub(crate) fn scaled_softmax(z: &[f64], idx: &[usize], mass: f64, out: &mut [f64]) {
    let m = idx.iter().map(|&j| z[j]).fold(f64::NEG_INFINITY, f64::max);
    let mut norm = 0.0;
    for &j in idx {
        let e = (z[j] - m).exp();
        out[j] = e;
        norm += e;
    }
    for &j in idx {
        out[j] = mass * out[j] / norm;
    }
}
