//! Laplacian-adjusted maximum-likelihood correction of a batch of predictions.
//!
//! Given source predictions `q_i` and an affinity `W`, the corrected
//! assignments minimize
//!
//! ```text
//! L(Z) = Σ_i KL(z_i ‖ q_i) − ½ Σ_{i,j} w_ij z_iᵀ z_j
//! ```
//!
//! over rows on the simplex. The quadratic term is concave for PSD `W`, so
//! linearizing it at the current iterate gives a tight upper bound whose
//! minimizer has the closed form
//!
//! ```text
//! z_ik ∝ q_ik · exp(Σ_j w_ij z_jk)
//! ```
//!
//! Iterating that update never increases `L` when `W` is PSD. The ½ makes
//! each unordered pair count once; with it the update above is exactly the
//! minimizer of the bound, and its fixed points are stationary points of `L`.
//!
//! Updates are Jacobi-style: every row of iterate `n + 1` is computed from
//! iterate `n` only.

use serde::{Deserialize, Serialize};

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::numerics::{exact_sum_with, kl_divergence, SimplexVector};

/// Lower bound applied to source probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Slack allowed when deciding whether the objective went up.
pub const MONOTONE_TOL: f64 = 1e-9;

/// Corrected per-sample class assignments.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignments {
    rows: Vec<SimplexVector>,
}

impl Assignments {
    pub fn new(rows: Vec<SimplexVector>) -> Result<Self> {
        let k = rows.first().map_or(0, SimplexVector::len);
        if let Some(r) = rows.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, actual: r.len() });
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[SimplexVector] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<SimplexVector> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.rows.first().map_or(0, SimplexVector::len)
    }

    /// Row-major `N·K` view.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.as_slice().iter().copied()).collect()
    }

    /// Argmax of every row.
    pub fn predictions(&self) -> Vec<usize> {
        self.rows.iter().map(SimplexVector::argmax).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the largest per-row L1 change drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config(format!(
                "solver needs tol > 0 and max_iter >= 1, got tol={} max_iter={}",
                self.tol, self.max_iter
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    /// Objective at the initial point and after each iteration.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// False if any iteration raised the objective by more than [`MONOTONE_TOL`].
    pub monotone: bool,
    /// Largest per-row L1 change of the last iteration.
    pub final_delta: f64,
}

/// Validated solver inputs: floored log-probabilities and a sparse view of `W`.
struct Problem {
    k: usize,
    probs: Vec<SimplexVector>,
    log_probs: Vec<Vec<f64>>,
    neighbors: Vec<Vec<(usize, f64)>>,
    self_weight: f64,
}

impl Problem {
    fn new(q: &[SimplexVector], w: &AffinityMatrix) -> Result<Self> {
        let n = q.len();
        if w.size() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: w.size() });
        }
        let k = q.first().map_or(0, SimplexVector::len);
        if let Some(r) = q.iter().find(|r| r.len() != k) {
            return Err(Error::DimensionMismatch { expected: k, actual: r.len() });
        }
        let probs: Vec<SimplexVector> = q.iter().map(floor_probs).collect();
        let log_probs = probs.iter().map(|p| p.as_slice().iter().map(|v| v.ln()).collect()).collect();
        // Neighbor contributions are summed in an order fixed by weight and
        // by the sorted entries of q_j, not by index, so relabeling samples or
        // classes permutes the output exactly.
        let keys: Vec<Vec<f64>> = probs
            .iter()
            .map(|p| {
                let mut v = p.as_slice().to_vec();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let neighbors = (0..n)
            .map(|i| {
                let mut row: Vec<(usize, f64)> = w
                    .row(i)
                    .iter()
                    .enumerate()
                    .filter(|&(j, &v)| j != i && v != 0.0)
                    .map(|(j, &v)| (j, v))
                    .collect();
                row.sort_by(|a, b| {
                    b.1.total_cmp(&a.1).then_with(|| {
                        keys[a.0]
                            .iter()
                            .zip(&keys[b.0])
                            .map(|(x, y)| x.total_cmp(y))
                            .find(|o| o.is_ne())
                            .unwrap_or(std::cmp::Ordering::Equal)
                    })
                });
                row
            })
            .collect();
        Ok(Self { k, probs, log_probs, neighbors, self_weight: w.self_weight() })
    }

    fn check_assignments(&self, z: &Assignments) -> Result<()> {
        if z.len() != self.probs.len() {
            return Err(Error::DimensionMismatch { expected: self.probs.len(), actual: z.len() });
        }
        if !z.is_empty() && z.class_count() != self.k {
            return Err(Error::DimensionMismatch { expected: self.k, actual: z.class_count() });
        }
        Ok(())
    }

    /// `Σ_j w_ij z_j + s z_i`.
    fn pull(&self, i: usize, z: &[SimplexVector]) -> Option<Vec<f64>> {
        if self.neighbors[i].is_empty() && self.self_weight == 0.0 {
            return None;
        }
        let mut acc = vec![0.0; self.k];
        for &(j, w) in &self.neighbors[i] {
            for (a, &zj) in acc.iter_mut().zip(z[j].as_slice()) {
                *a += w * zj;
            }
        }
        if self.self_weight != 0.0 {
            for (a, &zi) in acc.iter_mut().zip(z[i].as_slice()) {
                *a += self.self_weight * zi;
            }
        }
        Some(acc)
    }

    fn step(&self, z: &[SimplexVector]) -> Vec<SimplexVector> {
        let mut scratch = Vec::new();
        (0..z.len())
            .map(|i| match self.pull(i, z) {
                // No coupling: the bound is minimized by q_i itself.
                None => self.probs[i].clone(),
                Some(mut exponent) => {
                    for (e, &lq) in exponent.iter_mut().zip(&self.log_probs[i]) {
                        *e += lq;
                    }
                    let max = exponent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let total =
                        exact_sum_with(exponent.iter().map(|&e| (e - max).exp()), &mut scratch);
                    let norm = max + total.ln();
                    SimplexVector::from_normalized(
                        exponent.into_iter().map(|e| (e - norm).exp()).collect(),
                    )
                }
            })
            .collect()
    }

    fn objective(&self, z: &[SimplexVector]) -> f64 {
        let mut kl = 0.0;
        for (zi, qi) in z.iter().zip(&self.probs) {
            kl += kl_divergence(zi, qi).expect("dimensions checked at intake");
        }
        let mut quad = 0.0;
        for (i, zi) in z.iter().enumerate() {
            for &(j, w) in &self.neighbors[i] {
                quad += w * dot(zi.as_slice(), z[j].as_slice());
            }
            if self.self_weight != 0.0 {
                quad += self.self_weight * dot(zi.as_slice(), zi.as_slice());
            }
        }
        kl - 0.5 * quad
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Floors entries at [`PROB_FLOOR`], renormalizing only when something moved.
fn floor_probs(q: &SimplexVector) -> SimplexVector {
    if q.as_slice().iter().all(|&v| v >= PROB_FLOOR) {
        q.clone()
    } else {
        q.floored(PROB_FLOOR)
    }
}

fn max_l1_change(a: &[SimplexVector], b: &[SimplexVector]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.as_slice().iter().zip(y.as_slice()).map(|(u, v)| (u - v).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// The correction objective `Σ KL(z_i‖q_i) − ½ Σ_{i,j} w_ij z_iᵀz_j`, with
/// the self weight of `W` on the diagonal.
pub fn lame_objective(z: &Assignments, q: &[SimplexVector], w: &AffinityMatrix) -> Result<f64> {
    let problem = Problem::new(q, w)?;
    problem.check_assignments(z)?;
    Ok(problem.objective(z.rows()))
}

/// One bound-minimizing update of every row.
pub fn cccp_step(z: &Assignments, q: &[SimplexVector], w: &AffinityMatrix) -> Result<Assignments> {
    let problem = Problem::new(q, w)?;
    problem.check_assignments(z)?;
    Ok(Assignments { rows: problem.step(z.rows()) })
}

/// Runs the update from `Z = Q` until the largest per-row L1 change falls
/// below `cfg.tol` or `cfg.max_iter` updates have been made.
pub fn lame_correct(
    q: &[SimplexVector],
    w: &AffinityMatrix,
    cfg: &SolverConfig,
) -> Result<(Assignments, SolveDiagnostics)> {
    cfg.validate()?;
    let problem = Problem::new(q, w)?;
    let mut z = problem.probs.clone();
    let mut trace = vec![problem.objective(&z)];
    let mut monotone = true;
    let mut converged = false;
    let mut final_delta = 0.0;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = problem.step(&z);
        final_delta = max_l1_change(&next, &z);
        z = next;
        iterations += 1;
        let value = problem.objective(&z);
        if value > trace[trace.len() - 1] + MONOTONE_TOL {
            monotone = false;
        }
        trace.push(value);
        if final_delta < cfg.tol {
            converged = true;
            break;
        }
    }
    if !monotone {
        log::debug!("objective increased during correction; affinity is likely not PSD");
    }
    let diagnostics =
        SolveDiagnostics { iterations, objective_trace: trace, converged, monotone, final_delta };
    Ok((Assignments { rows: z }, diagnostics))
}
