//! Small affine + linear-head model with the usual test-time adaptation
//! baselines: entropy minimization, pseudo-labeling, SHOT-IM and statistics
//! re-estimation.
//!
//! The model is `q(x) = softmax(V (γ ⊙ s + β) + b)` where `s` is `x`
//! standardized with running statistics. Parameters are flattened in the
//! order `γ, β, V (row-major), b`.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{argmax, entropy_of, log_sum_exp, softmax_unchecked, DenseMatrix, SimplexVector};
use crate::rng_for;
use crate::streams::{column_moments, Dataset, LinearSource, Stream};

/// Added to variances before taking square roots.
pub const VAR_EPS: f64 = 1e-5;

const SALT_TOY_TEST: u64 = 11;
const SALT_TOY_TRAIN: u64 = 12;
const TOY_TRAIN_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    /// γ, length d.
    pub scale: Vec<f64>,
    /// β, length d.
    pub bias: Vec<f64>,
    /// V, K x d.
    pub head_weights: DenseMatrix,
    /// b, length K.
    pub head_bias: Vec<f64>,
}

impl ToyModel {
    /// Re-expresses `logits = A x + c` over standardized inputs: with
    /// `s = (x − μ) / sqrt(σ² + eps)` and `γ = 1, β = 0` the model
    /// reproduces the source scores when fed the source moments.
    pub fn from_source(source: &LinearSource) -> Self {
        let d = source.weights.cols();
        let std: Vec<f64> = source.feature_var.iter().map(|v| (v + VAR_EPS).sqrt()).collect();
        let mut v = source.weights.clone();
        let mut head_bias = source.bias.clone();
        for k in 0..v.rows() {
            let row = v.row_mut(k);
            head_bias[k] += row.iter().zip(&source.feature_mean).map(|(a, m)| a * m).sum::<f64>();
            row.iter_mut().zip(&std).for_each(|(a, s)| *a *= s);
        }
        Self { scale: vec![1.0; d], bias: vec![0.0; d], head_weights: v, head_bias }
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn class_count(&self) -> usize {
        self.head_bias.len()
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim() + self.head_weights.values().len() + self.class_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(&self.scale);
        p.extend_from_slice(&self.bias);
        p.extend_from_slice(self.head_weights.values());
        p.extend_from_slice(&self.head_bias);
        p
    }

    pub fn with_params(&self, p: &[f64]) -> Self {
        assert_eq!(p.len(), self.param_count(), "parameter vector length");
        let (d, k) = (self.dim(), self.class_count());
        Self {
            scale: p[..d].to_vec(),
            bias: p[d..2 * d].to_vec(),
            head_weights: DenseMatrix::new(k, d, p[2 * d..2 * d + k * d].to_vec())
                .expect("shape matches"),
            head_bias: p[2 * d + k * d..].to_vec(),
        }
    }

    fn partition_range(&self, partition: Partition) -> Range<usize> {
        let pre = 2 * self.dim();
        match partition {
            Partition::PreTransformOnly => 0..pre,
            Partition::HeadOnly => pre..self.param_count(),
            Partition::All => 0..self.param_count(),
        }
    }

    /// Logits for one standardized input.
    pub fn logits(&self, s: &[f64]) -> Vec<f64> {
        let h: Vec<f64> =
            s.iter().zip(&self.scale).zip(&self.bias).map(|((x, g), b)| g * x + b).collect();
        (0..self.class_count())
            .map(|k| {
                self.head_bias[k]
                    + self.head_weights.row(k).iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict_standardized(&self, s: &DenseMatrix) -> Vec<SimplexVector> {
        s.row_iter().map(|row| SimplexVector::from_normalized(softmax_unchecked(&self.logits(row)))).collect()
    }

    fn first_non_finite(&self) -> Option<f64> {
        self.params().into_iter().find(|v| !v.is_finite())
    }
}

/// Feature statistics used for standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub initialized: bool,
}

impl RunningStats {
    pub fn from_moments(mean: Vec<f64>, var: Vec<f64>) -> Self {
        Self { mean, var, initialized: true }
    }

    pub fn from_source(source: &LinearSource) -> Self {
        Self::from_moments(source.feature_mean.clone(), source.feature_var.clone())
    }

    /// Statistics that adopt the first batch's moments whatever the momentum.
    pub fn uninitialized(d: usize) -> Self {
        Self { mean: vec![0.0; d], var: vec![1.0; d], initialized: false }
    }

    /// `(1 − m)·self + m·batch`, elementwise for mean and variance.
    pub fn blend(&self, batch: &DenseMatrix, momentum: f64) -> Self {
        let (bm, bv) = column_moments(batch);
        if !self.initialized {
            return Self::from_moments(bm, bv);
        }
        let mix = |old: &[f64], new: &[f64]| -> Vec<f64> {
            old.iter().zip(new).map(|(o, n)| (1.0 - momentum) * o + momentum * n).collect()
        };
        Self { mean: mix(&self.mean, &bm), var: mix(&self.var, &bv), initialized: true }
    }

    pub fn standardize(&self, x: &DenseMatrix) -> DenseMatrix {
        let mut out = x.clone();
        let inv: Vec<f64> = self.var.iter().map(|v| 1.0 / (v.max(0.0) + VAR_EPS).sqrt()).collect();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&inv) {
                *v = (*v - m) * s;
            }
        }
        out
    }
}

/// Blends `stats` with the batch moments, standardizes `x` with the result
/// and predicts.
pub fn toy_predict(
    model: &ToyModel,
    x: &DenseMatrix,
    stats: &RunningStats,
    stat_momentum: f64,
) -> Result<(Vec<SimplexVector>, RunningStats)> {
    check_dims(model, x, stats)?;
    let stats = stats.blend(x, stat_momentum);
    Ok((model.predict_standardized(&stats.standardize(x)), stats))
}

fn check_dims(model: &ToyModel, x: &DenseMatrix, stats: &RunningStats) -> Result<()> {
    if x.cols() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), actual: x.cols() });
    }
    if stats.mean.len() != model.dim() || stats.var.len() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), actual: stats.mean.len() });
    }
    Ok(())
}

/// Which parameters a step may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// γ and β.
    PreTransformOnly,
    /// V and b.
    HeadOnly,
    All,
}

impl Partition {
    pub const ALL: [Partition; 3] = [Self::PreTransformOnly, Self::HeadOnly, Self::All];
}

impl std::fmt::Display for Partition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PreTransformOnly => "pre_transform_only",
            Self::HeadOnly => "head_only",
            Self::All => "all",
        })
    }
}

impl std::str::FromStr for Partition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre_transform_only" => Ok(Self::PreTransformOnly),
            "head_only" => Ok(Self::HeadOnly),
            "all" => Ok(Self::All),
            other => Err(Error::Config(format!("unknown partition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptConfig {
    pub lr: f64,
    /// Heavy-ball coefficient μ: `v ← μ v + g`, `θ ← θ − lr v`.
    pub momentum: f64,
    /// Weight of the current batch in the running statistics.
    pub stat_momentum: f64,
    pub partition: Partition,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self { lr: 0.01, momentum: 0.0, stat_momentum: 0.0, partition: Partition::All }
    }
}

impl AdaptConfig {
    pub const LRS: [f64; 3] = [0.001, 0.01, 0.1];
    pub const MOMENTA: [f64; 2] = [0.0, 0.9];
    pub const STAT_MOMENTA: [f64; 3] = [0.0, 0.1, 1.0];

    /// Every combination of the standard values, lr varying slowest.
    pub fn grid() -> Vec<AdaptConfig> {
        let mut out = Vec::with_capacity(54);
        for lr in Self::LRS {
            for momentum in Self::MOMENTA {
                for stat_momentum in Self::STAT_MOMENTA {
                    for partition in Partition::ALL {
                        out.push(AdaptConfig { lr, momentum, stat_momentum, partition });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.momentum)
            && (0.0..=1.0).contains(&self.stat_momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid adaptation config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptLoss {
    /// Mean prediction entropy.
    EntropyMin,
    /// Cross-entropy against the model's own argmax.
    PseudoLabel,
    /// Mean prediction entropy minus entropy of the mean prediction.
    ShotIm,
}

impl AdaptLoss {
    pub const ALL: [AdaptLoss; 3] = [Self::EntropyMin, Self::PseudoLabel, Self::ShotIm];
}

impl std::fmt::Display for AdaptLoss {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::EntropyMin => "entropy_min",
            Self::PseudoLabel => "pseudo_label",
            Self::ShotIm => "shot_im",
        })
    }
}

impl std::str::FromStr for AdaptLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy_min" => Ok(Self::EntropyMin),
            "pseudo_label" => Ok(Self::PseudoLabel),
            "shot_im" => Ok(Self::ShotIm),
            other => Err(Error::Config(format!("unknown adaptation loss `{other}`"))),
        }
    }
}

/// Loss value and its gradient with respect to [`ToyModel::params`], on
/// standardized inputs `s`.
pub fn loss_and_gradient(model: &ToyModel, s: &DenseMatrix, loss: AdaptLoss) -> (f64, Vec<f64>) {
    let (n, d, k) = (s.rows(), model.dim(), model.class_count());
    let mut grad = vec![0.0; model.param_count()];
    if n == 0 {
        return (0.0, grad);
    }
    let inv_n = 1.0 / n as f64;
    let hidden: Vec<Vec<f64>> = s
        .row_iter()
        .map(|row| row.iter().zip(&model.scale).zip(&model.bias).map(|((x, g), b)| g * x + b).collect())
        .collect();
    let log_q: Vec<Vec<f64>> = s
        .row_iter()
        .map(|row| {
            let l = model.logits(row);
            let lse = log_sum_exp(&l);
            l.into_iter().map(|v| v - lse).collect()
        })
        .collect();
    let q: Vec<Vec<f64>> = log_q.iter().map(|r| r.iter().map(|v| v.exp()).collect()).collect();
    let ent: Vec<f64> = q
        .iter()
        .zip(&log_q)
        .map(|(p, lp)| -p.iter().zip(lp).map(|(a, b)| if *a > 0.0 { a * b } else { 0.0 }).sum::<f64>())
        .collect();

    // dL/dlogits per sample.
    let mut value = 0.0;
    let mut dlogits = vec![vec![0.0; k]; n];
    match loss {
        AdaptLoss::EntropyMin | AdaptLoss::ShotIm => {
            for i in 0..n {
                value += inv_n * ent[i];
                for j in 0..k {
                    dlogits[i][j] = -inv_n * q[i][j] * (log_q[i][j] + ent[i]);
                }
            }
            if loss == AdaptLoss::ShotIm {
                let mean: Vec<f64> = (0..k).map(|j| inv_n * q.iter().map(|r| r[j]).sum::<f64>()).collect();
                let log_mean: Vec<f64> = mean.iter().map(|m| m.max(f64::MIN_POSITIVE).ln()).collect();
                value -= -mean.iter().zip(&log_mean).map(|(m, l)| m * l).sum::<f64>();
                for i in 0..n {
                    let avg: f64 = q[i].iter().zip(&log_mean).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dlogits[i][j] += inv_n * q[i][j] * (log_mean[j] - avg);
                    }
                }
            }
        }
        AdaptLoss::PseudoLabel => {
            for i in 0..n {
                let y = argmax(&q[i]);
                value -= inv_n * log_q[i][y];
                for j in 0..k {
                    dlogits[i][j] = inv_n * (q[i][j] - if j == y { 1.0 } else { 0.0 });
                }
            }
        }
    }

    let (gamma, rest) = grad.split_at_mut(d);
    let (beta, rest) = rest.split_at_mut(d);
    let (dv, db) = rest.split_at_mut(k * d);
    for i in 0..n {
        let si = s.row(i);
        for j in 0..k {
            let g = dlogits[i][j];
            db[j] += g;
            let vrow = model.head_weights.row(j);
            for c in 0..d {
                dv[j * d + c] += g * hidden[i][c];
                let dh = g * vrow[c];
                gamma[c] += dh * si[c];
                beta[c] += dh;
            }
        }
    }
    (value, grad)
}

/// Heavy-ball velocity carried between steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentumState {
    pub velocity: Vec<f64>,
}

/// `v ← μ v + g`, `θ ← θ − lr v` on the parameters selected by
/// `cfg.partition`; everything else is left untouched.
pub fn apply_gradient(model: &ToyModel, grad: &[f64], cfg: &AdaptConfig, state: &mut MomentumState) -> ToyModel {
    let mut p = model.params();
    if state.velocity.len() != p.len() {
        state.velocity = vec![0.0; p.len()];
    }
    for i in model.partition_range(cfg.partition) {
        state.velocity[i] = cfg.momentum * state.velocity[i] + grad[i];
        p[i] -= cfg.lr * state.velocity[i];
    }
    model.with_params(&p)
}

/// One gradient step of `loss` on standardized inputs `s`.
pub fn adapt_step(
    model: &ToyModel,
    s: &DenseMatrix,
    loss: AdaptLoss,
    cfg: &AdaptConfig,
    state: &mut MomentumState,
) -> ToyModel {
    let (_, grad) = loss_and_gradient(model, s, loss);
    apply_gradient(model, &grad, cfg, state)
}

pub fn entropy_min_step(model: &ToyModel, s: &DenseMatrix, cfg: &AdaptConfig, state: &mut MomentumState) -> ToyModel {
    adapt_step(model, s, AdaptLoss::EntropyMin, cfg, state)
}

pub fn pseudo_label_step(model: &ToyModel, s: &DenseMatrix, cfg: &AdaptConfig, state: &mut MomentumState) -> ToyModel {
    adapt_step(model, s, AdaptLoss::PseudoLabel, cfg, state)
}

pub fn shot_im_step(model: &ToyModel, s: &DenseMatrix, cfg: &AdaptConfig, state: &mut MomentumState) -> ToyModel {
    adapt_step(model, s, AdaptLoss::ShotIm, cfg, state)
}

/// Online state of an adapted model: statistics, parameters and velocity.
/// `loss = None` only re-estimates statistics.
#[derive(Debug, Clone)]
pub struct OnlineAdapter {
    pub model: ToyModel,
    pub stats: RunningStats,
    pub cfg: AdaptConfig,
    pub loss: Option<AdaptLoss>,
    state: MomentumState,
}

impl OnlineAdapter {
    pub fn new(model: ToyModel, stats: RunningStats, cfg: AdaptConfig, loss: Option<AdaptLoss>) -> Result<Self> {
        cfg.validate()?;
        if stats.mean.len() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), actual: stats.mean.len() });
        }
        Ok(Self { model, stats, cfg, loss, state: MomentumState::default() })
    }

    /// Updates the statistics with the batch and returns it standardized.
    pub fn prepare(&mut self, x: &DenseMatrix) -> Result<DenseMatrix> {
        check_dims(&self.model, x, &self.stats)?;
        self.stats = self.stats.blend(x, self.cfg.stat_momentum);
        Ok(self.stats.standardize(x))
    }

    pub fn step(&mut self, s: &DenseMatrix) -> Result<()> {
        if let Some(loss) = self.loss {
            let next = adapt_step(&self.model, s, loss, &self.cfg, &mut self.state);
            if let Some(v) = next.first_non_finite() {
                return Err(Error::NonFinite { index: 0, value: v });
            }
            self.model = next;
        }
        Ok(())
    }

    pub fn predict(&self, s: &DenseMatrix) -> Vec<SimplexVector> {
        self.model.predict_standardized(s)
    }

    /// prepare, step, predict.
    pub fn process(&mut self, x: &DenseMatrix) -> Result<Vec<SimplexVector>> {
        let s = self.prepare(x)?;
        self.step(&s)?;
        Ok(self.predict(&s))
    }
}

/// Label of the sinusoid toy problem: 1 iff the point lies above `sin x₁`.
pub fn toy2d_label(x1: f64, x2: f64) -> usize {
    usize::from(x2 > x1.sin())
}

/// The sinusoid toy problem and its source model.
#[derive(Debug, Clone, PartialEq)]
pub struct Toy2d {
    pub dataset: Dataset,
    /// Logistic regression fit on `x₁ ∈ [−π/2, π/2]` only.
    pub source: LinearSource,
}

impl Toy2d {
    pub fn model(&self) -> ToyModel {
        ToyModel::from_source(&self.source)
    }

    pub fn stats(&self) -> RunningStats {
        RunningStats::from_source(&self.source)
    }
}

fn toy_points(rng: &mut impl Rng, n: usize, x1_range: f64) -> (Vec<f64>, Vec<usize>) {
    let mut xs = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x1 = rng.random_range(-x1_range..=x1_range);
        let x2 = rng.random_range(-2.0..=2.0);
        xs.extend([x1, x2]);
        labels.push(toy2d_label(x1, x2));
    }
    (xs, labels)
}

/// `n` points uniform on `[−2π, 2π] × [−2, 2]` labeled by [`toy2d_label`],
/// scored by a logistic regression trained on the central strip.
pub fn generate_toy2d(n: usize, seed: u64) -> Result<Toy2d> {
    if n < 2 {
        return Err(Error::Config(format!("toy2d needs at least 2 samples, got {n}")));
    }
    let (train_x, train_y) =
        toy_points(&mut rng_for(seed, SALT_TOY_TRAIN), TOY_TRAIN_SAMPLES, std::f64::consts::FRAC_PI_2);
    let train = DenseMatrix::new(TOY_TRAIN_SAMPLES, 2, train_x)?;
    let w = fit_logistic(&train, &train_y);
    let (feature_mean, feature_var) = column_moments(&train);
    // Class-1 log-odds split symmetrically across the two logits.
    let source = LinearSource {
        weights: DenseMatrix::new(2, 2, vec![-0.5 * w[0], -0.5 * w[1], 0.5 * w[0], 0.5 * w[1]])?,
        bias: vec![-0.5 * w[2], 0.5 * w[2]],
        feature_mean,
        feature_var,
    };
    let (xs, labels) = toy_points(&mut rng_for(seed, SALT_TOY_TEST), n, 2.0 * std::f64::consts::PI);
    let features = DenseMatrix::new(n, 2, xs)?;
    let logits = source.logits_matrix(&features);
    Ok(Toy2d { dataset: Dataset::new(features, logits, Some(labels), None)?, source })
}

/// Ridge-stabilized logistic regression by Newton iterations. Returns
/// `[w₁, w₂, c]` for the class-1 log-odds `w·x + c`.
fn fit_logistic(x: &DenseMatrix, y: &[usize]) -> [f64; 3] {
    // Strong enough that the fit stays unsaturated on the nearly separable
    // training strip.
    const RIDGE: f64 = 100.0;
    let mut w = [0.0; 3];
    for _ in 0..50 {
        let mut grad = [0.0; 3];
        let mut hess = [[0.0; 3]; 3];
        for (row, &label) in x.row_iter().zip(y) {
            let f = [row[0], row[1], 1.0];
            let z: f64 = (0..3).map(|i| w[i] * f[i]).sum();
            let p = 1.0 / (1.0 + (-z).exp());
            let r = p - label as f64;
            let c = p * (1.0 - p);
            for i in 0..3 {
                grad[i] += r * f[i];
                for j in 0..3 {
                    hess[i][j] += c * f[i] * f[j];
                }
            }
        }
        for i in 0..3 {
            grad[i] += RIDGE * w[i];
            hess[i][i] += RIDGE;
        }
        let step = solve3(hess, grad);
        for i in 0..3 {
            w[i] -= step[i];
        }
        if step.iter().map(|s| s.abs()).fold(0.0, f64::max) < 1e-12 {
            break;
        }
    }
    w
}

/// Gaussian elimination with partial pivoting on a 3 x 3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let tail: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    x
}

/// Per-batch series for one learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseCurve {
    pub lr: f64,
    /// Mean entropy of the predictions made on each batch.
    pub entropy: Vec<f64>,
    /// Online accuracy accumulated up to and including each batch.
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseDemo {
    /// The unadapted model's curve (its `lr` is 0).
    pub baseline: CollapseCurve,
    pub curves: Vec<CollapseCurve>,
}

fn run_curve(
    lr: f64,
    model: &ToyModel,
    stats: &RunningStats,
    stream: &Stream,
    steps: usize,
    cfg: &AdaptConfig,
    loss: Option<AdaptLoss>,
) -> Result<CollapseCurve> {
    let mut adapter = OnlineAdapter::new(model.clone(), stats.clone(), AdaptConfig { lr, ..*cfg }, loss)?;
    let (mut entropy, mut accuracy) = (Vec::new(), Vec::new());
    let (mut correct, mut seen) = (0usize, 0usize);
    for batch in stream.batches.iter().take(steps) {
        let labels = batch
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config("the collapse demo needs labeled batches".into()))?;
        let preds = adapter.process(&batch.features)?;
        entropy.push(preds.iter().map(|p| entropy_of(p.as_slice())).sum::<f64>() / preds.len() as f64);
        correct += preds.iter().zip(labels).filter(|(p, &y)| p.argmax() == y).count();
        seen += preds.len();
        accuracy.push(correct as f64 / seen as f64);
    }
    Ok(CollapseCurve { lr, entropy, accuracy })
}

/// Runs online entropy minimization over the first `steps` batches of
/// `stream` for every learning rate, alongside the frozen model (source
/// statistics, no updates).
pub fn collapse_demo(
    model: &ToyModel,
    stats: &RunningStats,
    stream: &Stream,
    lrs: &[f64],
    steps: usize,
    cfg: &AdaptConfig,
) -> Result<CollapseDemo> {
    let frozen = AdaptConfig { stat_momentum: 0.0, ..*cfg };
    let baseline = run_curve(0.0, model, stats, stream, steps, &frozen, None)?;
    let curves = lrs
        .iter()
        .map(|&lr| run_curve(lr, model, stats, stream, steps, cfg, Some(AdaptLoss::EntropyMin)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CollapseDemo { baseline, curves })
}
