//! Pairwise affinity matrices over a batch of feature rows.
//!
//! Three kernels are provided: a symmetrized k-nearest-neighbor indicator,
//! the (optionally cosine-normalized) linear kernel, and a Gaussian kernel
//! whose bandwidth is the mean distance to the k-th neighbor. All of them
//! exclude self-affinity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_distances, DenseMatrix};

/// Symmetry tolerance for affinity matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Largest size for which [`psd_shift`] uses a full Jacobi eigensolve.
pub const EXACT_EIGEN_LIMIT: usize = 256;

/// Symmetric N x N affinity with zero diagonal.
///
/// `self_weight` is a constant added to every diagonal entry when the matrix
/// is used as a quadratic form. Kernels leave it at zero; [`psd_shift`]
/// raises it to make the form positive semi-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    values: DenseMatrix,
    self_weight: f64,
}

impl AffinityMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { values: DenseMatrix::zeros(n, n), self_weight: 0.0 }
    }

    /// Wraps a symmetric matrix. A constant diagonal is moved into
    /// `self_weight`; a non-constant one is rejected.
    pub fn from_dense(mut m: DenseMatrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: m.cols() });
        }
        if let Some((index, value)) = m.first_non_finite() {
            return Err(Error::NonFinite { index, value });
        }
        check_symmetric(&m)?;
        let diag = if n > 0 { m.get(0, 0) } else { 0.0 };
        for i in 0..n {
            if m.get(i, i) != diag {
                return Err(Error::Config(format!(
                    "affinity diagonal must be constant, found {} and {}",
                    diag,
                    m.get(i, i)
                )));
            }
            m.set(i, i, 0.0);
        }
        Ok(Self { values: m, self_weight: diag })
    }

    pub fn size(&self) -> usize {
        self.values.rows()
    }

    /// Off-diagonal affinity; zero on the diagonal.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn self_weight(&self) -> f64 {
        self.self_weight
    }

    /// The zero-diagonal part.
    pub fn off_diagonal(&self) -> &DenseMatrix {
        &self.values
    }

    /// The matrix as a quadratic form, `self_weight` on the diagonal.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut m = self.values.clone();
        for i in 0..m.rows() {
            m.set(i, i, self.self_weight);
        }
        m
    }

    /// True when every off-diagonal entry and the self weight are zero.
    pub fn is_zero(&self) -> bool {
        self.self_weight == 0.0 && self.values.values().iter().all(|&v| v == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Knn,
    Linear,
    Rbf,
}

impl std::str::FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Self::Knn),
            "linear" => Ok(Self::Linear),
            "rbf" => Ok(Self::Rbf),
            other => Err(Error::Config(format!("unknown kernel `{other}`"))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Knn => "knn",
            Self::Linear => "linear",
            Self::Rbf => "rbf",
        })
    }
}

/// Which kernel to build and how.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Neighbor count (kNN) or bandwidth neighbor rank (rbf). Unused by linear.
    pub k: usize,
    pub normalize_features: bool,
}

impl KernelSpec {
    /// Kernel with its default normalization: on for linear, off otherwise.
    pub fn new(kind: KernelKind, k: usize) -> Self {
        Self { kind, k, normalize_features: kind == KernelKind::Linear }
    }

    pub fn knn(k: usize) -> Self {
        Self::new(KernelKind::Knn, k)
    }

    /// Builds the affinity for `features`. For batches too small to hold `k`
    /// neighbors the neighbor count is reduced to `N - 1`; a single sample,
    /// or kNN with `k = 0`, gets the zero matrix.
    pub fn build(&self, features: &DenseMatrix) -> Result<AffinityMatrix> {
        let n = features.rows();
        if n <= 1 || (self.kind == KernelKind::Knn && self.k == 0) {
            return Ok(AffinityMatrix::zeros(n));
        }
        let k = self.k.clamp(1, n - 1);
        let normalized;
        let x = if self.normalize_features && self.kind != KernelKind::Linear {
            normalized = l2_normalize_rows(features)?;
            &normalized
        } else {
            features
        };
        match self.kind {
            KernelKind::Knn => knn_affinity(x, k),
            KernelKind::Linear => linear_affinity(x, self.normalize_features),
            KernelKind::Rbf => rbf_affinity(x, k),
        }
    }
}

impl std::fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.kind {
            KernelKind::Linear => write!(f, "linear(normalize={})", self.normalize_features),
            kind => write!(f, "{kind}(k={}, normalize={})", self.k, self.normalize_features),
        }
    }
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if n < 2 || k == 0 || k > n - 1 {
        return Err(Error::NeighborCount { k, n });
    }
    Ok(())
}

fn check_symmetric(m: &DenseMatrix) -> Result<()> {
    let n = m.rows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m.get(i, j) - m.get(j, i)).abs();
            if !(gap <= SYMMETRY_TOL) {
                return Err(Error::Asymmetric { i, j, gap });
            }
        }
    }
    Ok(())
}

/// For each row, the indices of all other rows sorted by increasing distance,
/// ties broken by lower index.
fn neighbor_order(dist: &DenseMatrix) -> Vec<Vec<usize>> {
    let n = dist.rows();
    (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| dist.get(i, a).total_cmp(&dist.get(i, b)).then(a.cmp(&b)));
            others
        })
        .collect()
}

/// Symmetrized k-nearest-neighbor indicator `(A + Aᵀ) / 2`, entries in
/// {0, 0.5, 1}.
pub fn knn_affinity(features: &DenseMatrix, k: usize) -> Result<AffinityMatrix> {
    let n = features.rows();
    check_k(k, n)?;
    let order = neighbor_order(&pairwise_sq_distances(features));
    let mut w = DenseMatrix::zeros(n, n);
    for (i, neighbors) in order.iter().enumerate() {
        for &j in &neighbors[..k] {
            w.set(i, j, w.get(i, j) + 0.5);
            w.set(j, i, w.get(j, i) + 0.5);
        }
    }
    Ok(AffinityMatrix { values: w, self_weight: 0.0 })
}

fn l2_normalize_rows(features: &DenseMatrix) -> Result<DenseMatrix> {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        for v in row {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Dot-product affinity; cosine similarity when `normalize` is set.
pub fn linear_affinity(features: &DenseMatrix, normalize: bool) -> Result<AffinityMatrix> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::NeighborCount { k: 1, n });
    }
    let normalized;
    let x = if normalize {
        normalized = l2_normalize_rows(features)?;
        &normalized
    } else {
        features
    };
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dot: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| a * b).sum();
            w.set(i, j, dot);
            w.set(j, i, dot);
        }
    }
    Ok(AffinityMatrix { values: w, self_weight: 0.0 })
}

/// Gaussian affinity `exp(-‖xi - xj‖² / 2σ²)` with σ the mean distance from
/// each point to its k-th nearest neighbor.
pub fn rbf_affinity(features: &DenseMatrix, k: usize) -> Result<AffinityMatrix> {
    let n = features.rows();
    check_k(k, n)?;
    let dist = pairwise_sq_distances(features);
    let order = neighbor_order(&dist);
    let sigma = order.iter().enumerate().map(|(i, nb)| dist.get(i, nb[k - 1]).sqrt()).sum::<f64>()
        / n as f64;
    if sigma == 0.0 {
        return Err(Error::ZeroBandwidth);
    }
    let denom = 2.0 * sigma * sigma;
    let mut w = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (-dist.get(i, j) / denom).exp();
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    Ok(AffinityMatrix { values: w, self_weight: 0.0 })
}

/// Outcome of [`psd_shift`].
#[derive(Debug, Clone, PartialEq)]
pub struct PsdShift {
    /// Input matrix with its self weight raised by `max(0, -min_eigenvalue)`.
    pub matrix: AffinityMatrix,
    /// Smallest eigenvalue of the input quadratic form.
    pub min_eigenvalue: f64,
    /// Whether the eigenvalue came from a full eigensolve.
    pub exact: bool,
}

/// Estimates the smallest eigenvalue of `W` and, when negative, shifts the
/// quadratic form by `-λ_min · I`. The off-diagonal entries are returned
/// untouched; the shift lives in the self weight.
pub fn psd_shift(w: &AffinityMatrix) -> Result<PsdShift> {
    let dense = w.to_dense();
    check_symmetric(&dense)?;
    let n = dense.rows();
    let (min_eigenvalue, exact) = if n == 0 {
        (0.0, true)
    } else if n <= EXACT_EIGEN_LIMIT {
        let eig = jacobi_eigenvalues(&dense);
        (eig.into_iter().fold(f64::INFINITY, f64::min), true)
    } else {
        (power_min_eigenvalue(&dense), false)
    };
    let mut matrix = w.clone();
    if min_eigenvalue < 0.0 {
        matrix.self_weight -= min_eigenvalue;
    }
    Ok(PsdShift { matrix, min_eigenvalue, exact })
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub(crate) fn jacobi_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.clone();
    let frob: f64 = a.values().iter().map(|v| v * v).sum();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        if off <= frob * 1e-30 || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (a.get(q, q) - a.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a.get(r, p);
                    let arq = a.get(r, q);
                    a.set(r, p, c * arp - s * arq);
                    a.set(r, q, s * arp + c * arq);
                }
                for r in 0..n {
                    let apr = a.get(p, r);
                    let aqr = a.get(q, r);
                    a.set(p, r, c * apr - s * aqr);
                    a.set(q, r, s * apr + c * aqr);
                }
            }
        }
    }
    (0..n).map(|i| a.get(i, i)).collect()
}

/// Smallest eigenvalue via power iteration on `cI - W`, with `c` a
/// Gershgorin bound on the spectrum.
fn power_min_eigenvalue(m: &DenseMatrix) -> f64 {
    let n = m.rows();
    let c = (0..n).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_749_895).fract()).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut mu = 0.0;
    for _ in 0..20_000 {
        let mut next: Vec<f64> = (0..n)
            .map(|i| c * v[i] - m.row(i).iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let new_mu: f64 = next.iter().zip(&v).map(|(a, b)| a * b).sum();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return c;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
        if (new_mu - mu).abs() <= 1e-13 * c.max(1.0) {
            mu = new_mu;
            break;
        }
        mu = new_mu;
    }
    c - mu
}
