use super::softmax::scaled_softmax;
use super::TransformError;
use super::{AttentionWeights, BoundVector, InputGrads, ProjectionCertificate, ScoreVector};

/// Constrained softmax: the KL projection of `softmax(z)` onto
/// `{alpha in simplex : alpha <= u}`.
///
/// Coordinates are visited in decreasing order of `exp(z_j) / u_j`; the
/// clipped set is always a prefix of that order, so the first coordinate that
/// stays below its bound ends the scan. The normaliser of every suffix is
/// precomputed in log space so that no mass is ever subtracted from a running
/// sum.
pub fn csoftmax_forward(
    z: &ScoreVector,
    u: &BoundVector,
) -> Result<(AttentionWeights, ProjectionCertificate), TransformError> {
    u.check_against(z)?;
    let n = z.len();

    let key = |j: usize| z[j] - u[j].ln();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));

    // suffix_lse[k] = log sum_{i >= k} exp(z[order[i]])
    let mut suffix_lse = vec![f64::NEG_INFINITY; n + 1];
    for k in (0..n).rev() {
        suffix_lse[k] = log_add_exp(z[order[k]], suffix_lse[k + 1]);
    }

    let mut mass = 1.0;
    let mut n_clipped = 0;
    for (k, &j) in order.iter().enumerate() {
        if !u[j].is_finite() {
            break;
        }
        let candidate = mass * (z[j] - suffix_lse[k]).exp();
        if candidate < u[j] {
            break;
        }
        mass -= u[j];
        n_clipped = k + 1;
    }
    let mass = mass.max(0.0);

    let mut clipped = order[..n_clipped].to_vec();
    let mut free = order[n_clipped..].to_vec();
    clipped.sort_unstable();
    free.sort_unstable();

    let mut alpha = vec![0.0; n];
    for &j in &clipped {
        alpha[j] = u[j];
    }
    if !free.is_empty() {
        scaled_softmax(z, &free, mass, &mut alpha);
    }
    Ok((
        AttentionWeights::from_raw(alpha),
        ProjectionCertificate {
            tau: mass,
            free,
            zero: Vec::new(),
            clipped,
        },
    ))
}

/// Backward pass of constrained softmax.
///
/// On the free set the map is `s * softmax(z_A)` with
/// `s = 1 - sum_{A_R} u`, so with `m = <alpha_A, d_alpha_A> / s`:
/// `dz_j = 1(j in A) alpha_j (d_alpha_j - m)` and
/// `du_j = 1(j in A_R) (d_alpha_j - m)`.
pub fn csoftmax_backward(
    cert: &ProjectionCertificate,
    alpha: &[f64],
    d_alpha: &[f64],
) -> InputGrads {
    let n = d_alpha.len();
    let mass = cert.tau;
    let mut dz = vec![0.0; n];
    let mut du = vec![0.0; n];

    if cert.free.is_empty() || mass <= 0.0 {
        for &j in &cert.clipped {
            du[j] = d_alpha[j];
        }
        return InputGrads {
            dz,
            du,
            degenerate: true,
        };
    }

    let m = cert
        .free
        .iter()
        .map(|&j| alpha[j] * d_alpha[j])
        .sum::<f64>()
        / mass;
    for &j in &cert.free {
        dz[j] = alpha[j] * (d_alpha[j] - m);
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

fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}
