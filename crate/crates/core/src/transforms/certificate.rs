use serde::{Deserialize, Serialize};

use super::Transform;

/// Absolute slack used when reading the active-set partition off a solver
/// output.
pub const CLASSIFY_TOL: f64 = 1e-12;

/// Slack used by [`verify_certificate`].
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// Active-set partition of a projection together with its threshold.
///
/// For the sparse transforms `tau` is the shared shift in
/// `alpha_j = max(0, min(u_j, z_j - tau))`. For constrained softmax `tau`
/// holds the mass `s = 1 - sum_{clipped} u_j` left for the free coordinates
/// and `zero` is always empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionCertificate {
    pub tau: f64,
    /// Coordinates strictly between their bounds (`A`).
    pub free: Vec<usize>,
    /// Coordinates clamped at zero (`A_L`).
    pub zero: Vec<usize>,
    /// Coordinates clamped at their upper bound (`A_R`).
    pub clipped: Vec<usize>,
}

impl ProjectionCertificate {
    pub fn same_partition(&self, other: &Self) -> bool {
        self.free == other.free && self.zero == other.zero && self.clipped == other.clipped
    }

    pub fn len(&self) -> usize {
        self.free.len() + self.zero.len() + self.clipped.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Builds the clamp-form solution `max(0, min(u_j, z_j - tau))` from an
/// approximate threshold, classifies every coordinate and re-solves `tau`
/// exactly on the resulting free set. Ties go to the closed sets.
pub(crate) fn clamp_projection(
    z: &[f64],
    bounds: Option<&[f64]>,
    tau_hint: f64,
) -> (Vec<f64>, ProjectionCertificate) {
    let mut free = Vec::new();
    let mut zero = Vec::new();
    let mut clipped = Vec::new();
    for (j, &zj) in z.iter().enumerate() {
        let v = zj - tau_hint;
        let u = bounds.map_or(f64::INFINITY, |b| b[j]);
        if v <= CLASSIFY_TOL {
            zero.push(j);
        } else if v >= u - CLASSIFY_TOL {
            clipped.push(j);
        } else {
            free.push(j);
        }
    }

    let tau = if free.is_empty() {
        tau_hint
    } else {
        let u = bounds.unwrap_or(&[]);
        let sum_free: f64 = free.iter().map(|&j| z[j]).sum();
        let sum_clipped: f64 = clipped.iter().map(|&j| u[j]).sum();
        (sum_free + sum_clipped - 1.0) / free.len() as f64
    };

    let mut alpha = vec![0.0; z.len()];
    for &j in &free {
        alpha[j] = z[j] - tau;
    }
    if let Some(u) = bounds {
        for &j in &clipped {
            alpha[j] = u[j];
        }
    }
    (
        alpha,
        ProjectionCertificate {
            tau,
            free,
            zero,
            clipped,
        },
    )
}

/// Checks a forward output against the optimality conditions of its
/// transform and returns a description of every violated condition.
pub fn verify_certificate(
    transform: Transform,
    z: &[f64],
    bounds: Option<&[f64]>,
    alpha: &[f64],
    cert: &ProjectionCertificate,
) -> Vec<String> {
    let tol = CERTIFICATE_TOL;
    let n = z.len();
    let mut violations = Vec::new();
    let upper = |j: usize| bounds.map_or(f64::INFINITY, |b| b[j]);

    if alpha.len() != n {
        violations.push(format!("output length {} != {}", alpha.len(), n));
        return violations;
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > tol {
        violations.push(format!("weights sum to {total}"));
    }
    for (j, &a) in alpha.iter().enumerate() {
        if a < -tol {
            violations.push(format!("alpha[{j}] = {a} is negative"));
        }
        if a > upper(j) + tol {
            violations.push(format!("alpha[{j}] = {a} exceeds bound {}", upper(j)));
        }
    }

    let mut seen = vec![0u8; n];
    for &j in cert.free.iter().chain(&cert.zero).chain(&cert.clipped) {
        if j >= n {
            violations.push(format!("index {j} out of range"));
        } else {
            seen[j] += 1;
        }
    }
    for (j, &count) in seen.iter().enumerate() {
        if count != 1 {
            violations.push(format!("index {j} appears {count} times in the partition"));
        }
    }
    if !violations.is_empty() {
        return violations;
    }

    match transform {
        Transform::Softmax => {
            if !cert.zero.is_empty() || !cert.clipped.is_empty() {
                violations.push("softmax partition must be all free".into());
            }
        }
        Transform::Sparsemax | Transform::Csparsemax => {
            if transform == Transform::Sparsemax && !cert.clipped.is_empty() {
                violations.push("sparsemax cannot clip at an upper bound".into());
            }
            let tau = cert.tau;
            for &j in &cert.free {
                let a = alpha[j];
                if !(a > 0.0 && a < upper(j)) {
                    violations.push(format!("free index {j} has alpha {a} outside (0, u)"));
                }
                if (a - (z[j] - tau)).abs() > tol {
                    violations.push(format!("free index {j}: alpha {a} != z - tau"));
                }
            }
            for &j in &cert.zero {
                if alpha[j].abs() > tol {
                    violations.push(format!("zero index {j} has alpha {}", alpha[j]));
                }
                if !cert.free.is_empty() && z[j] - tau > tol {
                    violations.push(format!("zero index {j} has z - tau = {}", z[j] - tau));
                }
            }
            for &j in &cert.clipped {
                let u = upper(j);
                if !u.is_finite() || (alpha[j] - u).abs() > tol {
                    violations.push(format!("clipped index {j} has alpha {} != u {u}", alpha[j]));
                }
                if !cert.free.is_empty() && z[j] - tau < u - tol {
                    violations.push(format!("clipped index {j} has z - tau below its bound"));
                }
            }
            if cert.free.is_empty() {
                let saturated: f64 = cert.clipped.iter().map(|&j| upper(j)).sum();
                if (saturated - 1.0).abs() > tol {
                    violations.push(format!(
                        "empty free set but clipped bounds sum to {saturated}"
                    ));
                }
            }
        }
        Transform::Csoftmax => {
            if !cert.zero.is_empty() {
                violations.push("constrained softmax has no zero set".into());
            }
            let clipped_mass: f64 = cert.clipped.iter().map(|&j| upper(j)).sum();
            let s = cert.tau;
            if (s - (1.0 - clipped_mass).max(0.0)).abs() > tol {
                violations.push(format!("stored mass {s} != 1 - sum of clipped bounds"));
            }
            for &j in &cert.clipped {
                if (alpha[j] - upper(j)).abs() > tol {
                    violations.push(format!("clipped index {j} has alpha {} != u", alpha[j]));
                }
            }
            for &j in &cert.free {
                if alpha[j] >= upper(j) + tol {
                    violations.push(format!("free index {j} reaches its bound"));
                }
            }
            if !cert.free.is_empty() {
                // free weights must be s * softmax restricted to the free set,
                // and every clipped coordinate would exceed its bound there.
                let m = cert
                    .free
                    .iter()
                    .map(|&j| z[j])
                    .fold(f64::NEG_INFINITY, f64::max);
                let norm: f64 = cert.free.iter().map(|&j| (z[j] - m).exp()).sum();
                let unclipped = |j: usize| s * (z[j] - m).exp() / norm;
                for &j in &cert.free {
                    if (alpha[j] - unclipped(j)).abs() > tol {
                        violations.push(format!("free index {j} not proportional to exp(z)"));
                    }
                }
                for &j in &cert.clipped {
                    if unclipped(j) < upper(j) - tol {
                        violations.push(format!("clipped index {j} would not reach its bound"));
                    }
                }
            }
        }
    }
    violations
}
