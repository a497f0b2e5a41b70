//! Independent correctness oracles.
//!
//! Nothing here shares a code path with the solvers it checks:
//!
//! - [`oracle_csparsemax`] enumerates all `3^J` partitions into
//!   `(A_L, A, A_R)` and keeps the one satisfying the KKT conditions.
//! - [`oracle_csoftmax`] enumerates all `2^J` clipped sets.
//! - [`reference_solve_qk`] solves the QK problem by sorting breakpoints and
//!   sweeping the piecewise-linear constraint function.
//! - [`finite_diff_check`] compares backward passes against central
//!   differences of the forward pass.
//!
//! The `*_suite` functions draw seeded random instances and aggregate the
//! results into an [`OracleReport`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::qk::{QkError, QkProblem, QkSolution};
use crate::transforms::{
    verify_certificate, AttentionWeights, BoundVector, InputGrads, Projection, ScoreVector,
    Transform, TransformError,
};

/// Largest `J` accepted by the enumeration oracles.
pub const MAX_ORACLE_LEN: usize = 12;

/// Slack on the KKT inequalities checked by the enumeration oracles.
pub const KKT_SLACK: f64 = 1e-10;

/// Forward oracle tolerance (max-abs).
pub const FORWARD_TOL: f64 = 1e-8;

/// Finite-difference step and tolerance.
pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-5;

/// Resampling budget for active-set-stable points.
pub const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no partition satisfies the optimality conditions")]
    NoFeasiblePartition,
    #[error("{0} coordinates is too many for enumeration (max {MAX_ORACLE_LEN})")]
    TooLarge(usize),
    #[error("active set changed under perturbation after {0} attempts")]
    UnstableActiveSet(usize),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Aggregated comparison result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub max_abs_error: f64,
    pub instances: usize,
    pub tolerance: f64,
    pub failures: Vec<OracleFailure>,
}

/// A failing instance, serialised so that it can be replayed. Infinite
/// bounds are written as the string `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleFailure {
    pub input: Value,
    pub expected: Vec<f64>,
    pub got: Vec<f64>,
}

impl OracleReport {
    pub fn empty(tolerance: f64) -> Self {
        Self {
            max_abs_error: 0.0,
            instances: 0,
            tolerance,
            failures: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Records one comparison.
    pub fn record(&mut self, input: impl FnOnce() -> Value, expected: &[f64], got: &[f64]) {
        let err = match max_abs_diff(expected, got) {
            e if e.is_nan() => f64::INFINITY,
            e => e,
        };
        self.instances += 1;
        self.max_abs_error = self.max_abs_error.max(err);
        if err > self.tolerance {
            self.failures.push(OracleFailure {
                input: input(),
                expected: expected.to_vec(),
                got: got.to_vec(),
            });
        }
    }

    pub fn merge(&mut self, other: OracleReport) {
        self.instances += other.instances;
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
        self.failures.extend(other.failures);
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| if x == y { 0.0 } else { (x - y).abs() })
        .fold(0.0, |m, e| {
            if e.is_nan() || m.is_nan() {
                f64::NAN
            } else {
                m.max(e)
            }
        })
}

/// JSON form of bounds, with `"inf"` for unbounded entries.
pub fn bounds_to_json(u: &[f64]) -> Value {
    Value::Array(
        u.iter()
            .map(|&v| {
                if v.is_finite() {
                    json!(v)
                } else {
                    json!("inf")
                }
            })
            .collect(),
    )
}

fn instance_json(transform: Transform, z: &[f64], u: &[f64]) -> Value {
    json!({ "transform": transform.name(), "scores": z, "bounds": bounds_to_json(u) })
}

// ---------------------------------------------------------------------------
// enumeration oracles

/// Constrained sparsemax by exhaustive search over `(A_L, A, A_R)`.
pub fn oracle_csparsemax(
    z: &ScoreVector,
    u: &BoundVector,
) -> Result<AttentionWeights, OracleError> {
    kkt_partitions(z, u, true)?
        .into_iter()
        .next()
        .map(AttentionWeights::from_raw)
        .ok_or(OracleError::NoFeasiblePartition)
}

/// Number of partitions passing the KKT filter (1 for generic inputs).
pub fn csparsemax_partition_count(z: &ScoreVector, u: &BoundVector) -> Result<usize, OracleError> {
    Ok(kkt_partitions(z, u, false)?.len())
}

fn kkt_partitions(
    z: &ScoreVector,
    u: &BoundVector,
    first_only: bool,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let n = z.len();
    if n > MAX_ORACLE_LEN {
        return Err(OracleError::TooLarge(n));
    }
    u.check_against(z)?;
    const ZERO: u8 = 0;
    const FREE: u8 = 1;
    const CLIP: u8 = 2;

    let mut found = Vec::new();
    let mut labels = vec![ZERO; n];
    let total = 3usize.pow(n as u32);
    'codes: for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = (c % 3) as u8;
            c /= 3;
        }
        let mut n_free = 0usize;
        let mut sum = -1.0;
        for j in 0..n {
            match labels[j] {
                FREE => {
                    n_free += 1;
                    sum += z[j];
                }
                CLIP => {
                    if !u[j].is_finite() {
                        continue 'codes;
                    }
                    sum += u[j];
                }
                _ => {}
            }
        }

        let alpha: Vec<f64> = if n_free > 0 {
            let tau = sum / n_free as f64;
            for j in 0..n {
                let v = z[j] - tau;
                let ok = match labels[j] {
                    FREE => v > -KKT_SLACK && v < u[j] + KKT_SLACK,
                    CLIP => v >= u[j] - KKT_SLACK,
                    _ => v <= KKT_SLACK,
                };
                if !ok {
                    continue 'codes;
                }
            }
            (0..n)
                .map(|j| match labels[j] {
                    FREE => z[j] - tau,
                    CLIP => u[j],
                    _ => 0.0,
                })
                .collect()
        } else {
            // fully saturated: the clipped bounds must carry all the mass and
            // some threshold must separate the two closed sets
            if sum.abs() > KKT_SLACK {
                continue;
            }
            let lowest_clipped = (0..n)
                .filter(|&j| labels[j] == CLIP)
                .map(|j| z[j] - u[j])
                .fold(f64::INFINITY, f64::min);
            let highest_zero = (0..n)
                .filter(|&j| labels[j] == ZERO)
                .map(|j| z[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if highest_zero > lowest_clipped + KKT_SLACK {
                continue;
            }
            (0..n)
                .map(|j| if labels[j] == CLIP { u[j] } else { 0.0 })
                .collect()
        };
        found.push(alpha);
        if first_only {
            break;
        }
    }
    Ok(found)
}

/// Constrained softmax by exhaustive search over the clipped set.
pub fn oracle_csoftmax(z: &ScoreVector, u: &BoundVector) -> Result<AttentionWeights, OracleError> {
    let n = z.len();
    if n > MAX_ORACLE_LEN {
        return Err(OracleError::TooLarge(n));
    }
    u.check_against(z)?;

    'subsets: for mask in 0usize..(1 << n) {
        let clipped = |j: usize| mask >> j & 1 == 1;
        if (0..n).any(|j| clipped(j) && !u[j].is_finite()) {
            continue;
        }
        let mass = 1.0 - (0..n).filter(|&j| clipped(j)).map(|j| u[j]).sum::<f64>();
        let free: Vec<usize> = (0..n).filter(|&j| !clipped(j)).collect();

        if free.is_empty() {
            if mass.abs() <= KKT_SLACK {
                return Ok(AttentionWeights::from_raw(u.to_vec()));
            }
            continue;
        }
        if mass < -KKT_SLACK {
            continue;
        }
        let top = free.iter().map(|&j| z[j]).fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = free.iter().map(|&j| (z[j] - top).exp()).sum();
        let unclipped = |j: usize| mass.max(0.0) * (z[j] - top).exp() / norm;

        let mut alpha = vec![0.0; n];
        for j in 0..n {
            let w = unclipped(j);
            if clipped(j) {
                if w < u[j] - KKT_SLACK {
                    continue 'subsets;
                }
                alpha[j] = u[j];
            } else {
                if w > u[j] + KKT_SLACK {
                    continue 'subsets;
                }
                alpha[j] = w;
            }
        }
        return Ok(AttentionWeights::from_raw(alpha));
    }
    Err(OracleError::NoFeasiblePartition)
}

// ---------------------------------------------------------------------------
// QK reference

/// Sort-and-sweep QK solver, `O(J log J)`.
pub fn reference_solve_qk(p: &QkProblem) -> Result<QkSolution, QkError> {
    let (a, b, c, d) = (p.lower(), p.upper(), p.weights(), p.budget());
    let active: Vec<usize> = (0..p.len()).filter(|&j| c[j] > 0.0).collect();
    let min: f64 = active.iter().map(|&j| c[j] * a[j]).sum();
    let max: f64 = active.iter().map(|&j| c[j] * b[j]).sum();
    let tol = p.budget_tolerance();
    if d < min - tol || d > max + tol {
        return Err(QkError::InfeasibleBudget {
            budget: d,
            min,
            max,
        });
    }
    let clamp = |y: f64, j: usize| a[j].max(b[j].min(y));
    let finish = |y: f64| QkSolution {
        x: (0..p.len()).map(|j| clamp(y, j)).collect(),
        level: y,
    };
    if active.is_empty() {
        return Ok(finish(0.0));
    }
    if d >= max {
        return Ok(finish(
            active
                .iter()
                .map(|&j| b[j])
                .fold(f64::NEG_INFINITY, f64::max),
        ));
    }
    if d <= min {
        return Ok(finish(
            active.iter().map(|&j| a[j]).fold(f64::INFINITY, f64::min),
        ));
    }

    // g(y) = constant + slope * y between consecutive breakpoints
    let mut constant = 0.0;
    let mut slope = 0.0;
    let mut events: Vec<(f64, f64, f64)> = Vec::with_capacity(2 * active.len());
    for &j in &active {
        if a[j].is_finite() {
            constant += c[j] * a[j];
            events.push((a[j], c[j], -c[j] * a[j]));
        } else {
            slope += c[j];
        }
        if b[j].is_finite() {
            events.push((b[j], -c[j], c[j] * b[j]));
        }
    }
    events.sort_by(|x, y| x.0.total_cmp(&y.0));

    for &(point, d_slope, d_constant) in &events {
        if constant + slope * point >= d {
            let y = if slope > 0.0 {
                (d - constant) / slope
            } else {
                point
            };
            return Ok(finish(y.min(point)));
        }
        slope += d_slope;
        constant += d_constant;
    }
    if slope > 0.0 {
        let last = events.last().map_or(f64::NEG_INFINITY, |e| e.0);
        Ok(finish(((d - constant) / slope).max(last)))
    } else {
        Err(QkError::DegenerateWeights {
            tight: constant,
            budget: d,
        })
    }
}

/// Random feasible QK problem of size `n`: boxes inside `[-1, 3]` with
/// occasional infinite sides, weights in `[0.1, 2]`, and a budget generated
/// from a random level so that it is always attainable.
pub fn random_qk_problem(rng: &mut impl Rng, n: usize) -> QkProblem {
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b = a + rng.random_range(0.0..2.0);
        lower.push(if rng.random_bool(0.1) {
            f64::NEG_INFINITY
        } else {
            a
        });
        upper.push(if rng.random_bool(0.1) {
            f64::INFINITY
        } else {
            b
        });
        weights.push(rng.random_range(0.1..2.0));
    }
    let level: f64 = rng.random_range(-1.5..2.5);
    let budget = (0..n)
        .map(|j| weights[j] * lower[j].max(upper[j].min(level)))
        .sum();
    QkProblem::new(lower, upper, weights, budget).expect("generated problem is valid")
}

// ---------------------------------------------------------------------------
// random instances

/// Seeded generator of transform inputs: scores uniform in `[-2, 2]`,
/// bounds uniform in `[0.1, 1.5]`, and in half of the instances an infinite
/// last bound standing in for the sink token. Instances without a sink are
/// resampled until `sum u >= 1`.
#[derive(Debug, Clone)]
pub struct InstanceSampler {
    rng: ChaCha8Rng,
}

impl InstanceSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn scores(&mut self, n: usize) -> ScoreVector {
        ScoreVector::new((0..n).map(|_| self.rng.random_range(-2.0..2.0)).collect())
            .expect("finite scores")
    }

    pub fn bounds(&mut self, n: usize) -> BoundVector {
        let sink = self.rng.random_bool(0.5);
        loop {
            let mut u: Vec<f64> = (0..n).map(|_| self.rng.random_range(0.1..1.5)).collect();
            if sink {
                u[n - 1] = f64::INFINITY;
            }
            if u.iter().sum::<f64>() >= 1.0 {
                return BoundVector::new(u).expect("positive bounds");
            }
        }
    }

    pub fn instance(&mut self, n: usize) -> (ScoreVector, BoundVector) {
        let z = self.scores(n);
        let u = self.bounds(n);
        (z, u)
    }
}

// ---------------------------------------------------------------------------
// suites

/// Anything with a forward and a backward pass; [`Transform`] is the
/// production implementation. Tests plug in deliberately broken ones.
pub trait Differentiable {
    fn forward(&self, z: &ScoreVector, u: &BoundVector) -> Result<Projection, TransformError>;
    fn backward(&self, p: &Projection, d_alpha: &[f64]) -> Result<InputGrads, TransformError>;
}

impl Differentiable for Transform {
    fn forward(&self, z: &ScoreVector, u: &BoundVector) -> Result<Projection, TransformError> {
        Transform::forward(*self, z, Some(u))
    }

    fn backward(&self, p: &Projection, d_alpha: &[f64]) -> Result<InputGrads, TransformError> {
        Transform::backward(*self, p, d_alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    /// Instances per problem size for the forward suite; total points for
    /// the gradient suite.
    pub trials: usize,
    /// Problem sizes run from 1 to `jmax`.
    pub jmax: usize,
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            trials: 100,
            jmax: 8,
            seed: 42,
        }
    }
}

/// The reference for `transform` at `(z, u)`. The unbounded transforms are
/// checked through their constrained counterparts with `u = +inf`.
pub fn oracle_forward(
    transform: Transform,
    z: &ScoreVector,
    u: &BoundVector,
) -> Result<AttentionWeights, OracleError> {
    let open = BoundVector::unbounded(z.len());
    match transform {
        Transform::Softmax => oracle_csoftmax(z, &open),
        Transform::Sparsemax => oracle_csparsemax(z, &open),
        Transform::Csoftmax => oracle_csoftmax(z, u),
        Transform::Csparsemax => oracle_csparsemax(z, u),
    }
}

/// Compares the forward pass against the enumeration oracle on
/// `trials` instances for every size `1..=jmax`.
pub fn forward_suite(transform: Transform, cfg: &SuiteConfig) -> Result<OracleReport, OracleError> {
    forward_suite_with(transform, &transform, cfg)
}

pub fn forward_suite_with(
    transform: Transform,
    imp: &impl Differentiable,
    cfg: &SuiteConfig,
) -> Result<OracleReport, OracleError> {
    let mut sampler = InstanceSampler::new(cfg.seed);
    let mut report = OracleReport::empty(FORWARD_TOL);
    for n in 1..=cfg.jmax {
        for _ in 0..cfg.trials {
            let (z, u) = sampler.instance(n);
            let expected = oracle_forward(transform, &z, &u)?;
            let got = imp.forward(&z, &u)?;
            report.record(|| instance_json(transform, &z, &u), &expected, &got.weights);
        }
    }
    Ok(report)
}

/// Runs the certificate checks on the same instances as [`forward_suite`]
/// and returns every violation found.
pub fn certificate_suite(
    transform: Transform,
    cfg: &SuiteConfig,
) -> Result<Vec<String>, OracleError> {
    let mut sampler = InstanceSampler::new(cfg.seed);
    let mut violations = Vec::new();
    for n in 1..=cfg.jmax {
        for _ in 0..cfg.trials {
            let (z, u) = sampler.instance(n);
            let p = transform.forward(&z, Some(&u))?;
            let bounds = transform.is_constrained().then_some(u.as_slice());
            if let Some(cert) = &p.certificate {
                for v in verify_certificate(transform, &z, bounds, &p.weights, cert) {
                    violations.push(format!("{}: {v}", instance_json(transform, &z, &u)));
                }
            }
        }
    }
    Ok(violations)
}

/// Central-difference check of the backward pass at `(z, u)` in both the
/// scores and the finite bounds. Fails with
/// [`OracleError::UnstableActiveSet`] if a perturbation of size `h` changes
/// the active set or makes the problem infeasible.
pub fn finite_diff_check(
    transform: Transform,
    z: &ScoreVector,
    u: &BoundVector,
    h: f64,
    tol: f64,
) -> Result<OracleReport, OracleError> {
    finite_diff_check_with(transform, &transform, z, u, h, tol)
}

pub fn finite_diff_check_with(
    transform: Transform,
    imp: &impl Differentiable,
    z: &ScoreVector,
    u: &BoundVector,
    h: f64,
    tol: f64,
) -> Result<OracleReport, OracleError> {
    let n = z.len();
    let base = imp.forward(z, u)?;
    let unstable = || OracleError::UnstableActiveSet(1);
    if base.certificate.as_ref().is_some_and(|c| c.free.is_empty()) {
        return Err(unstable());
    }

    // probe(point) must keep the partition and stay feasible
    let probe = |z: &ScoreVector, u: &BoundVector| -> Result<Vec<f64>, OracleError> {
        let p = imp.forward(z, u).map_err(|_| unstable())?;
        match (&p.certificate, &base.certificate) {
            (Some(a), Some(b)) if !a.same_partition(b) => Err(unstable()),
            _ => Ok(p.weights.into_vec()),
        }
    };

    // jac_z[i][j] = d alpha_i / d z_j
    let mut jac_z = vec![vec![0.0; n]; n];
    let mut jac_u = vec![vec![0.0; n]; n];
    for j in 0..n {
        let mut plus = z.to_vec();
        let mut minus = z.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let ap = probe(&ScoreVector::new(plus)?, u)?;
        let am = probe(&ScoreVector::new(minus)?, u)?;
        for i in 0..n {
            jac_z[i][j] = (ap[i] - am[i]) / (2.0 * h);
        }

        if u[j].is_finite() {
            let mut plus = u.to_vec();
            let mut minus = u.to_vec();
            plus[j] += h;
            minus[j] -= h;
            if minus[j] < 0.0 {
                return Err(unstable());
            }
            let ap = probe(z, &BoundVector::new(plus)?)?;
            let am = probe(z, &BoundVector::new(minus)?)?;
            for i in 0..n {
                jac_u[i][j] = (ap[i] - am[i]) / (2.0 * h);
            }
        }
    }

    let mut report = OracleReport::empty(tol);
    for i in 0..n {
        let mut cotangent = vec![0.0; n];
        cotangent[i] = 1.0;
        let grads = imp.backward(&base, &cotangent)?;
        if grads.degenerate {
            return Err(unstable());
        }
        let expected: Vec<f64> = jac_z[i].iter().chain(&jac_u[i]).copied().collect();
        let got: Vec<f64> = grads.dz.iter().chain(&grads.du).copied().collect();
        report.record(
            || json!({ "instance": instance_json(transform, z, u), "output": i }),
            &expected,
            &got,
        );
    }
    Ok(report)
}

/// Finite-difference checks at `cfg.trials` random active-set-stable points,
/// cycling the size through `1..=jmax`.
pub fn gradient_suite(
    transform: Transform,
    cfg: &SuiteConfig,
) -> Result<OracleReport, OracleError> {
    gradient_suite_with(transform, &transform, cfg)
}

pub fn gradient_suite_with(
    transform: Transform,
    imp: &impl Differentiable,
    cfg: &SuiteConfig,
) -> Result<OracleReport, OracleError> {
    let mut sampler = InstanceSampler::new(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut report = OracleReport::empty(FD_TOL);
    for k in 0..cfg.trials {
        let n = 1 + k % cfg.jmax.max(1);
        let mut attempts = 0;
        loop {
            attempts += 1;
            let (z, u) = sampler.instance(n);
            match finite_diff_check_with(transform, imp, &z, &u, FD_STEP, FD_TOL) {
                Ok(r) => {
                    report.merge(r);
                    break;
                }
                Err(OracleError::UnstableActiveSet(_)) if attempts < MAX_RESAMPLES => continue,
                Err(OracleError::UnstableActiveSet(_)) => {
                    return Err(OracleError::UnstableActiveSet(attempts))
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(report)
}
