//! Singly-constrained separable quadratic programs
//!
//! ```text
//! minimize   sum_j c_j x_j^2
//! subject to sum_j c_j x_j = d,   a_j <= x_j <= b_j
//! ```
//!
//! The minimiser has the clamp form `x_j = max(a_j, min(b_j, y))` for a shared
//! level `y`, the root of the nondecreasing piecewise-linear function
//! `g(y) = sum_j c_j clamp(y, a_j, b_j) - d`. [`QkSolver`] locates `y` with
//! the median-of-breakpoints interval search of Pardalos and Kovoor: each
//! round evaluates `g` at the median of the breakpoints still inside the
//! bracket `(lo, hi)`, halves the bracket's breakpoint count, and retires every
//! coordinate whose breakpoints have left the bracket into either a constant
//! ("tight") sum or a linear ("slack") weight. Expected work is `O(J)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::transforms::{BoundVector, ScoreVector};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QkError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("budget {budget} lies outside the attainable range [{min}, {max}]")]
    InfeasibleBudget { budget: f64, min: f64, max: f64 },
    #[error("no slack weight left at termination (tight sum {tight}, budget {budget})")]
    DegenerateWeights { tight: f64, budget: f64 },
}

/// Problem data `(a, b, c, d)`. Lower bounds may be `-inf`, upper bounds
/// `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct QkProblem {
    lower: Vec<f64>,
    upper: Vec<f64>,
    weights: Vec<f64>,
    budget: f64,
}

impl QkProblem {
    pub fn new(
        lower: Vec<f64>,
        upper: Vec<f64>,
        weights: Vec<f64>,
        budget: f64,
    ) -> Result<Self, QkError> {
        let n = lower.len();
        if upper.len() != n || weights.len() != n {
            return Err(QkError::InvalidProblem(format!(
                "lengths differ: {} lower, {} upper, {} weights",
                n,
                upper.len(),
                weights.len()
            )));
        }
        if !budget.is_finite() {
            return Err(QkError::InvalidProblem(format!(
                "budget {budget} is not finite"
            )));
        }
        for j in 0..n {
            let (a, b, c) = (lower[j], upper[j], weights[j]);
            if a.is_nan() || b.is_nan() || a == f64::INFINITY || b == f64::NEG_INFINITY || a > b {
                return Err(QkError::InvalidProblem(format!(
                    "coordinate {j} has bounds [{a}, {b}]"
                )));
            }
            if !(c >= 0.0 && c.is_finite()) {
                return Err(QkError::InvalidProblem(format!(
                    "coordinate {j} has weight {c}"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            weights,
            budget,
        })
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// `sum_j c_j clamp(y, a_j, b_j)`.
    pub fn weighted_clamp_sum(&self, y: f64) -> f64 {
        (0..self.len())
            .filter(|&j| self.weights[j] > 0.0)
            .map(|j| self.weights[j] * clamp(y, self.lower[j], self.upper[j]))
            .sum()
    }

    /// Rounding allowance for budget comparisons, scaled by the magnitudes
    /// that enter the sums.
    pub(crate) fn budget_tolerance(&self) -> f64 {
        let mut scale = 1.0 + self.budget.abs();
        for j in 0..self.len() {
            let c = self.weights[j];
            if c > 0.0 {
                for v in [self.lower[j], self.upper[j]] {
                    if v.is_finite() {
                        scale += (c * v).abs();
                    }
                }
            }
        }
        1e-12 * scale
    }
}

/// Minimiser `x` and its clamp level `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct QkSolution {
    pub x: Vec<f64>,
    pub level: f64,
}

/// Work counters for one solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QkStats {
    pub rounds: usize,
    /// Breakpoints examined across all rounds.
    pub inspected: usize,
}

/// How the trial level is picked from the breakpoints inside the bracket.
/// Only the running time depends on this choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PivotRule {
    /// Median by randomized quickselect (expected linear).
    RandomizedMedian { seed: u64 },
    /// Median by `select_nth_unstable`, which has a linear worst case.
    ExactMedian,
    /// A uniformly random breakpoint; correct but not linear.
    RandomBreakpoint { seed: u64 },
}

impl Default for PivotRule {
    fn default() -> Self {
        PivotRule::RandomizedMedian { seed: 0x5eed }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct QkSolver {
    pub pivot: PivotRule,
}

impl QkSolver {
    pub fn new(pivot: PivotRule) -> Self {
        Self { pivot }
    }

    pub fn solve(&self, problem: &QkProblem) -> Result<QkSolution, QkError> {
        self.solve_with_stats(problem).map(|(s, _)| s)
    }

    pub fn solve_with_stats(&self, p: &QkProblem) -> Result<(QkSolution, QkStats), QkError> {
        let (a, b, c, d) = (&p.lower, &p.upper, &p.weights, p.budget);
        let mut stats = QkStats::default();

        let mut work: Vec<usize> = (0..p.len()).filter(|&j| c[j] > 0.0).collect();
        let min: f64 = work.iter().map(|&j| c[j] * a[j]).sum();
        let max: f64 = work.iter().map(|&j| c[j] * b[j]).sum();
        let tol = p.budget_tolerance();
        if d < min - tol || d > max + tol {
            return Err(QkError::InfeasibleBudget {
                budget: d,
                min,
                max,
            });
        }
        if work.is_empty() {
            return Ok((finish(p, 0.0), stats));
        }
        // saturated at either end: every positive-weight coordinate is pinned
        if d >= max {
            let level = work.iter().map(|&j| b[j]).fold(f64::NEG_INFINITY, f64::max);
            return Ok((finish(p, level), stats));
        }
        if d <= min {
            let level = work.iter().map(|&j| a[j]).fold(f64::INFINITY, f64::min);
            return Ok((finish(p, level), stats));
        }

        let mut rng = match self.pivot {
            PivotRule::RandomizedMedian { seed } | PivotRule::RandomBreakpoint { seed } => {
                Some(ChaCha8Rng::seed_from_u64(seed))
            }
            PivotRule::ExactMedian => None,
        };

        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut tight = 0.0;
        let mut slack = 0.0;
        let mut points = Vec::with_capacity(2 * work.len());

        loop {
            // retire coordinates with no breakpoint strictly inside (lo, hi)
            work.retain(|&j| {
                let (aj, bj) = (a[j], b[j]);
                let inside = (lo < aj && aj < hi) || (lo < bj && bj < hi);
                if !inside {
                    if bj <= lo {
                        tight += c[j] * bj;
                    } else if aj >= hi {
                        tight += c[j] * aj;
                    } else {
                        slack += c[j];
                    }
                }
                inside
            });
            if work.is_empty() {
                break;
            }

            points.clear();
            for &j in &work {
                for v in [a[j], b[j]] {
                    if lo < v && v < hi {
                        points.push(v);
                    }
                }
            }
            stats.rounds += 1;
            stats.inspected += points.len();

            let t = match self.pivot {
                PivotRule::ExactMedian => {
                    let k = points.len() / 2;
                    *points.select_nth_unstable_by(k, f64::total_cmp).1
                }
                PivotRule::RandomizedMedian { .. } => {
                    let k = points.len() / 2;
                    quickselect(&mut points, k, rng.as_mut().unwrap())
                }
                PivotRule::RandomBreakpoint { .. } => {
                    let i = rng.as_mut().unwrap().random_range(0..points.len());
                    points[i]
                }
            };

            let mut s = tight + slack * t;
            for &j in &work {
                s += c[j] * clamp(t, a[j], b[j]);
            }
            if s <= d {
                lo = t;
            }
            if s >= d {
                hi = t;
            }
        }

        let level = if slack > 0.0 {
            ((d - tight) / slack).clamp(lo, hi)
        } else if (tight - d).abs() <= tol {
            if lo.is_finite() {
                lo
            } else if hi.is_finite() {
                hi
            } else {
                0.0
            }
        } else {
            return Err(QkError::DegenerateWeights { tight, budget: d });
        };
        Ok((finish(p, level), stats))
    }
}

/// Solves with the default (randomized median) pivot rule.
pub fn solve_qk(problem: &QkProblem) -> Result<QkSolution, QkError> {
    QkSolver::default().solve(problem)
}

/// Rewrites constrained sparsemax as a QK problem: `a_j = -z_j/2`,
/// `b_j = (u_j - z_j)/2`, `c_j = 1`, `d = (1 - sum z)/2`.
pub fn map_csparsemax(z: &ScoreVector, u: &BoundVector) -> QkProblem {
    let lower = z.iter().map(|&zj| -zj / 2.0).collect();
    let upper = z
        .iter()
        .zip(u.iter())
        .map(|(&zj, &uj)| {
            if uj.is_finite() {
                (uj - zj) / 2.0
            } else {
                f64::INFINITY
            }
        })
        .collect();
    QkProblem {
        lower,
        upper,
        weights: vec![1.0; z.len()],
        budget: (1.0 - z.iter().sum::<f64>()) / 2.0,
    }
}

/// Inverse of the [`map_csparsemax`] change of variables: `alpha = z + 2x`.
pub fn csparsemax_from_qk(z: &[f64], x: &[f64]) -> Vec<f64> {
    z.iter().zip(x).map(|(zj, xj)| zj + 2.0 * xj).collect()
}

fn finish(p: &QkProblem, level: f64) -> QkSolution {
    let x = (0..p.len())
        .map(|j| clamp(level, p.lower[j], p.upper[j]))
        .collect();
    QkSolution { x, level }
}

#[inline]
fn clamp(y: f64, lo: f64, hi: f64) -> f64 {
    lo.max(hi.min(y))
}

/// k-th smallest element by randomized three-way quickselect. Reorders `v`.
fn quickselect(v: &mut [f64], mut k: usize, rng: &mut impl Rng) -> f64 {
    let mut v = v;
    loop {
        if v.len() == 1 {
            return v[0];
        }
        let pivot = v[rng.random_range(0..v.len())];
        // [0, lt) < pivot, [lt, i) == pivot, (gt, len) > pivot
        let (mut lt, mut i, mut gt) = (0, 0, v.len());
        while i < gt {
            if v[i] < pivot {
                v.swap(lt, i);
                lt += 1;
                i += 1;
            } else if v[i] > pivot {
                gt -= 1;
                v.swap(i, gt);
            } else {
                i += 1;
            }
        }
        if k < lt {
            v = &mut v[..lt];
        } else if k < gt {
            return pivot;
        } else {
            k -= gt;
            v = &mut v[gt..];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(a: &[f64], b: &[f64], c: &[f64], d: f64) -> QkProblem {
        QkProblem::new(a.to_vec(), b.to_vec(), c.to_vec(), d).unwrap()
    }

    const RULES: [PivotRule; 3] = [
        PivotRule::RandomizedMedian { seed: 1 },
        PivotRule::ExactMedian,
        PivotRule::RandomBreakpoint { seed: 9 },
    ];

    #[test]
    fn mapped_toy_example() {
        let z = ScoreVector::new(vec![1.2, 0.8, -0.2]).unwrap();
        let u = BoundVector::new(vec![0.5, 1.0, 1.0]).unwrap();
        let p = map_csparsemax(&z, &u);
        for (got, want) in p.lower().iter().zip([-0.6, -0.4, 0.1]) {
            assert!((got - want).abs() < 1e-15);
        }
        for (got, want) in p.upper().iter().zip([-0.35, 0.1, 0.6]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert_eq!(p.weights(), &[1.0, 1.0, 1.0]);
        assert!((p.budget() + 0.4).abs() < 1e-15);

        for rule in RULES {
            let s = QkSolver::new(rule).solve(&p).unwrap();
            for (got, want) in s.x.iter().zip([-0.35, -0.15, 0.1]) {
                assert!((got - want).abs() < 1e-12, "{rule:?}: {:?}", s.x);
            }
            let alpha = csparsemax_from_qk(&z, &s.x);
            for (got, want) in alpha.iter().zip([0.5, 0.5, 0.0]) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_scores_unit_bounds_mapping() {
        let z = ScoreVector::new(vec![0.0, 0.0]).unwrap();
        let u = BoundVector::new(vec![1.0, 1.0]).unwrap();
        let p = map_csparsemax(&z, &u);
        assert_eq!(p.lower(), &[0.0, 0.0]);
        assert_eq!(p.upper(), &[0.5, 0.5]);
        assert_eq!(p.budget(), 0.5);
    }

    #[test]
    fn pinned_coordinates() {
        let p = problem(&[0.2, -1.0], &[0.2, -1.0], &[1.0, 2.0], -1.8);
        let s = solve_qk(&p).unwrap();
        assert_eq!(s.x, vec![0.2, -1.0]);
        let p = problem(&[0.2, -1.0], &[0.2, -1.0], &[1.0, 2.0], 0.0);
        assert!(matches!(
            solve_qk(&p),
            Err(QkError::InfeasibleBudget { .. })
        ));
    }

    #[test]
    fn unconstrained_gives_mean() {
        let n = 5;
        let p = problem(
            &vec![f64::NEG_INFINITY; n],
            &vec![f64::INFINITY; n],
            &vec![1.0; n],
            3.0,
        );
        for rule in RULES {
            let s = QkSolver::new(rule).solve(&p).unwrap();
            assert!(s.x.iter().all(|&x| (x - 0.6).abs() < 1e-15));
            assert!((s.level - 0.6).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_budget_returns_upper_bounds() {
        let p = problem(
            &[0.0, -1.0, 2.0],
            &[1.0, 0.5, 3.0],
            &[1.0, 2.0, 0.5],
            1.0 + 1.0 + 1.5,
        );
        let s = solve_qk(&p).unwrap();
        assert_eq!(s.x, vec![1.0, 0.5, 3.0]);
        let p = problem(&[0.0, -1.0, 2.0], &[1.0, 0.5, 3.0], &[1.0, 2.0, 0.5], -1.0);
        let s = solve_qk(&p).unwrap();
        assert_eq!(s.x, vec![0.0, -1.0, 2.0]);
    }

    #[test]
    fn zero_weights_follow_the_level_without_budget() {
        let p = problem(&[0.0, 0.0, -5.0], &[1.0, 1.0, 5.0], &[1.0, 1.0, 0.0], 1.0);
        let s = solve_qk(&p).unwrap();
        assert!((s.level - 0.5).abs() < 1e-15);
        assert_eq!(s.x, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn invalid_problems() {
        assert!(QkProblem::new(vec![1.0], vec![0.0], vec![1.0], 0.0).is_err());
        assert!(QkProblem::new(vec![0.0], vec![1.0], vec![-1.0], 0.0).is_err());
        assert!(QkProblem::new(vec![0.0], vec![1.0, 2.0], vec![1.0], 0.0).is_err());
        assert!(QkProblem::new(vec![f64::INFINITY], vec![f64::INFINITY], vec![1.0], 0.0).is_err());
        assert!(QkProblem::new(vec![0.0], vec![1.0], vec![1.0], f64::NAN).is_err());
    }

    #[test]
    fn one_sided_infinite_bounds() {
        // x_1 in (-inf, 0], x_2 in [1, inf): sum = 3 forces y = 2 on the second
        let p = problem(
            &[f64::NEG_INFINITY, 1.0],
            &[0.0, f64::INFINITY],
            &[1.0, 1.0],
            3.0,
        );
        let s = solve_qk(&p).unwrap();
        assert_eq!(s.x, vec![0.0, 3.0]);
        let p = problem(
            &[f64::NEG_INFINITY, 1.0],
            &[0.0, f64::INFINITY],
            &[1.0, 1.0],
            -4.0,
        );
        let s = solve_qk(&p).unwrap();
        assert_eq!(s.x, vec![-5.0, 1.0]);
    }

    #[test]
    fn quickselect_matches_sorting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in 1..40 {
            let v: Vec<f64> = (0..len)
                .map(|_| (rng.random_range(0..7) as f64) - 3.0)
                .collect();
            let mut sorted = v.clone();
            sorted.sort_by(f64::total_cmp);
            for (k, want) in sorted.iter().enumerate() {
                let mut w = v.clone();
                assert_eq!(quickselect(&mut w, k, &mut rng), *want);
            }
        }
    }
}
