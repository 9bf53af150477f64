//! Evaluation streams.
//!
//! A [`Dataset`] holds features, source-model logits and (optionally) labels.
//! [`make_stream`] turns one into an ordered list of batches: optional Zipf
//! prior shift by per-class subsampling, then an i.i.d. shuffle or a
//! class/task-grouped ordering, then fixed-size batches with the source
//! predictions converted to probabilities and pooled into target classes.
//!
//! Datasets come from [`generate_synthetic`] (Gaussian classes with a
//! rotation/noise likelihood shift) or from the binary embedding container
//! read by [`load_embeddings`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{ClassMapping, Pooling};
use crate::numerics::{argmax, softmax, Batch, DenseMatrix, SimplexVector};
use crate::rng_for;

const SALT_CLUSTERS: u64 = 1;
const SALT_ZIPF: u64 = 2;
const SALT_SUBSAMPLE: u64 = 3;
const SALT_ORDER: u64 = 4;

/// Gaussian-mixture stand-in for a source model meeting a shifted target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    /// Standard deviation of each class cluster.
    pub spread: f64,
    /// Rotation (radians) applied to target features in a random plane.
    pub rotation: f64,
    /// Standard deviation of isotropic noise added to target features.
    pub noise: f64,
}

impl Default for SyntheticConfig {
    /// The K = 8, d = 16 benchmark used by the acceptance suite.
    fn default() -> Self {
        Self { classes: 8, dim: 16, per_class: 300, spread: 0.35, rotation: 1.1, noise: 0.3 }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.dim < 2 || self.per_class < 1 {
            return Err(Error::Config(format!(
                "synthetic data needs classes >= 2, dim >= 2, per_class >= 1 (got {}, {}, {})",
                self.classes, self.dim, self.per_class
            )));
        }
        if !(self.spread > 0.0) || !(self.noise >= 0.0) || !self.rotation.is_finite() {
            return Err(Error::Config(format!(
                "synthetic data needs spread > 0, noise >= 0, finite rotation (got {}, {}, {})",
                self.spread, self.noise, self.rotation
            )));
        }
        Ok(())
    }
}

/// A linear classifier `logits = W x + b` together with the per-feature
/// moments of the data it was fit on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSource {
    /// K x d.
    pub weights: DenseMatrix,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_var: Vec<f64>,
}

impl LinearSource {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.rows())
            .map(|k| self.bias[k] + self.weights.row(k).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    pub fn logits_matrix(&self, features: &DenseMatrix) -> DenseMatrix {
        let rows: Vec<Vec<f64>> = features.row_iter().map(|x| self.logits(x)).collect();
        DenseMatrix::from_rows(&rows).expect("rows share the class count")
    }
}

/// Target samples with source-model scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: DenseMatrix,
    /// Source-model scores, N x K.
    pub logits: DenseMatrix,
    pub labels: Option<Vec<usize>>,
    pub task_ids: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(
        features: DenseMatrix,
        logits: DenseMatrix,
        labels: Option<Vec<usize>>,
        task_ids: Option<Vec<u32>>,
    ) -> Result<Self> {
        let n = features.rows();
        if logits.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: logits.rows() });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: l.len() });
            }
        }
        if let Some(t) = &task_ids {
            if t.len() != n {
                return Err(Error::DimensionMismatch { expected: n, actual: t.len() });
            }
        }
        Ok(Self { features, logits, labels, task_ids })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn class_count(&self) -> usize {
        self.logits.cols()
    }

    /// Fraction of samples whose source argmax equals the label.
    pub fn source_accuracy(&self) -> Option<f64> {
        let labels = self.labels.as_ref()?;
        if labels.is_empty() {
            return None;
        }
        let correct =
            self.logits.row_iter().zip(labels).filter(|(row, &y)| argmax(row) == y).count();
        Some(correct as f64 / labels.len() as f64)
    }
}

/// Output of [`generate_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Shifted target samples scored by the source model.
    pub dataset: Dataset,
    pub source: LinearSource,
    /// Source accuracy on the same samples before the shift.
    pub unshifted_accuracy: f64,
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws `classes` Gaussian clusters around zero-centered random unit means,
/// fits the Bayes-optimal linear classifier for the unshifted clusters, then
/// rotates the features in a random plane and adds noise.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = rng_for(seed, SALT_CLUSTERS);
    let (k, d) = (cfg.classes, cfg.dim);

    let mut means: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let v = gaussian_vec(&mut rng, d);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let centroid: Vec<f64> = (0..d).map(|c| means.iter().map(|m| m[c]).sum::<f64>() / k as f64).collect();
    for m in &mut means {
        for (x, c) in m.iter_mut().zip(&centroid) {
            *x -= c;
        }
    }

    let n = k * cfg.per_class;
    let mut clean = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..cfg.per_class {
            clean.extend(mean.iter().map(|&m| m + cfg.spread * rng.sample::<f64, _>(StandardNormal)));
            labels.push(class);
        }
    }
    let clean = DenseMatrix::new(n, d, clean)?;

    // Equal priors, shared isotropic covariance σ²I: logit_k = (μ_kᵀx − ½‖μ_k‖²) / σ².
    let inv_var = 1.0 / (cfg.spread * cfg.spread);
    let weights = DenseMatrix::from_rows(
        &means.iter().map(|m| m.iter().map(|v| v * inv_var).collect::<Vec<_>>()).collect::<Vec<_>>(),
    )?;
    let bias = means.iter().map(|m| -0.5 * m.iter().map(|v| v * v).sum::<f64>() * inv_var).collect();
    let (feature_mean, feature_var) = column_moments(&clean);
    let source = LinearSource { weights, bias, feature_mean, feature_var };

    let clean_logits = source.logits_matrix(&clean);
    let unshifted_correct =
        clean_logits.row_iter().zip(&labels).filter(|(row, &y)| argmax(row) == y).count();

    // Orthonormal pair spanning the rotation plane.
    let u = normalize(gaussian_vec(&mut rng, d));
    let mut v = gaussian_vec(&mut rng, d);
    let proj: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
    v.iter_mut().zip(&u).for_each(|(x, ui)| *x -= proj * ui);
    let v = normalize(v);
    let (sin, cos) = cfg.rotation.sin_cos();

    let mut shifted = clean.clone();
    for i in 0..n {
        let row = shifted.row_mut(i);
        let a: f64 = row.iter().zip(&u).map(|(x, y)| x * y).sum();
        let b: f64 = row.iter().zip(&v).map(|(x, y)| x * y).sum();
        let (a2, b2) = (a * cos - b * sin, a * sin + b * cos);
        for c in 0..d {
            row[c] += (a2 - a) * u[c] + (b2 - b) * v[c];
        }
        if cfg.noise > 0.0 {
            for x in row.iter_mut() {
                *x += cfg.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let logits = source.logits_matrix(&shifted);
    Ok(SyntheticData {
        dataset: Dataset::new(shifted, logits, Some(labels), None)?,
        source,
        unshifted_accuracy: unshifted_correct as f64 / n as f64,
    })
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Per-column mean and population variance.
pub fn column_moments(m: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows().max(1) as f64;
    let d = m.cols();
    let mut mean = vec![0.0; d];
    for row in m.row_iter() {
        for (acc, &x) in mean.iter_mut().zip(row) {
            *acc += x;
        }
    }
    mean.iter_mut().for_each(|x| *x /= n);
    let mut var = vec![0.0; d];
    for row in m.row_iter() {
        for ((acc, &x), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *acc += (x - mu) * (x - mu);
        }
    }
    var.iter_mut().for_each(|x| *x /= n);
    (mean, var)
}

/// Normalized `rank^{-s}` weights for ranks `1..=k`, in rank order.
pub fn zipf_rank_weights(k: usize, s: f64) -> Vec<f64> {
    let raw: Vec<f64> = (1..=k).map(|r| (r as f64).powf(-s)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Zipf class proportions with ranks assigned to classes by a seeded
/// permutation.
pub fn zipf_priors(k: usize, s: f64, seed: u64) -> Result<SimplexVector> {
    if k == 0 {
        return Err(Error::Empty);
    }
    if !(s > 0.0) || !s.is_finite() {
        return Err(Error::Config(format!("zipf exponent must be positive, got {s}")));
    }
    let weights = zipf_rank_weights(k, s);
    let mut by_rank: Vec<usize> = (0..k).collect();
    by_rank.shuffle(&mut rng_for(seed, SALT_ZIPF));
    let mut priors = vec![0.0; k];
    for (rank, &class) in by_rank.iter().enumerate() {
        priors[class] = weights[rank];
    }
    SimplexVector::new(priors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    Iid,
    NonIid,
}

impl std::str::FromStr for Sampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "non_iid" | "non-iid" => Ok(Self::NonIid),
            other => Err(Error::Config(format!("unknown sampling `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorShift {
    None,
    Zipf { s: f64 },
}

/// Where a scenario's samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceSpec {
    Synthetic(SyntheticConfig),
    /// The two-class sinusoid toy problem with `samples` points.
    Toy2d { samples: usize },
    Embeddings(PathBuf),
}

/// Declarative description of one evaluation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub source: SourceSpec,
    pub sampling: Sampling,
    pub prior_shift: PriorShift,
    pub batch_size: usize,
    pub seed: u64,
    pub mapping: Option<PathBuf>,
    #[serde(default)]
    pub pooling: Pooling,
}

impl ScenarioSpec {
    pub fn synthetic(cfg: SyntheticConfig, sampling: Sampling, prior_shift: PriorShift) -> Self {
        Self {
            source: SourceSpec::Synthetic(cfg),
            sampling,
            prior_shift,
            batch_size: 64,
            seed: 0,
            mapping: None,
            pooling: Pooling::Average,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let PriorShift::Zipf { s } = self.prior_shift {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::Config(format!("zipf exponent must be positive, got {s}")));
            }
        }
        if let SourceSpec::Synthetic(cfg) = &self.source {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Short legend label: A = i.i.d., B = non-i.i.d., C = i.i.d. + prior
    /// shift, D = non-i.i.d. + prior shift.
    pub fn legend(&self) -> &'static str {
        match (self.sampling, self.prior_shift) {
            (Sampling::Iid, PriorShift::None) => "A",
            (Sampling::NonIid, PriorShift::None) => "B",
            (Sampling::Iid, PriorShift::Zipf { .. }) => "C",
            (Sampling::NonIid, PriorShift::Zipf { .. }) => "D",
        }
    }
}

/// Splits `key = value` lines. Blank lines and `#` comments are skipped;
/// later keys override earlier ones.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (key, value) = (key.trim().to_string(), value.trim().to_string());
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        out.retain(|(k, _)| *k != key);
        out.push((key, value));
    }
    Ok(out)
}

const SCENARIO_KEYS: &[&str] = &[
    "source", "sampling", "zipf_s", "batch_size", "seed", "mapping", "pooling", "classes", "dim",
    "per_class", "spread", "rotation", "noise", "samples",
];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ScenarioSpec {
    /// Builds a scenario from `key = value` pairs. `source` is `synthetic`,
    /// `toy2d` or an embedding file path; `zipf_s` is absent or `none` for no
    /// prior shift.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut synth = SyntheticConfig::default();
        let mut samples = 2000;
        let mut source = "synthetic".to_string();
        let mut spec = ScenarioSpec::synthetic(synth, Sampling::Iid, PriorShift::None);
        for (key, value) in pairs {
            let v = value.as_str();
            match key.as_str() {
                "source" => source = v.to_string(),
                "sampling" => spec.sampling = v.parse()?,
                "zipf_s" => {
                    spec.prior_shift = match v {
                        "none" | "" => PriorShift::None,
                        _ => PriorShift::Zipf { s: parse_value(key, v)? },
                    }
                }
                "batch_size" => spec.batch_size = parse_value(key, v)?,
                "seed" => spec.seed = parse_value(key, v)?,
                "mapping" => spec.mapping = (!v.is_empty()).then(|| PathBuf::from(v)),
                "pooling" => spec.pooling = v.parse()?,
                "classes" => synth.classes = parse_value(key, v)?,
                "dim" => synth.dim = parse_value(key, v)?,
                "per_class" => synth.per_class = parse_value(key, v)?,
                "spread" => synth.spread = parse_value(key, v)?,
                "rotation" => synth.rotation = parse_value(key, v)?,
                "noise" => synth.noise = parse_value(key, v)?,
                "samples" => samples = parse_value(key, v)?,
                other => {
                    return Err(Error::Config(format!(
                        "unknown key `{other}` (expected one of {})",
                        SCENARIO_KEYS.join(", ")
                    )))
                }
            }
        }
        spec.source = match source.as_str() {
            "synthetic" => SourceSpec::Synthetic(synth),
            "toy2d" => SourceSpec::Toy2d { samples },
            path => SourceSpec::Embeddings(PathBuf::from(path)),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_key_values(text)?)
    }

    /// The `key = value` form accepted by [`ScenarioSpec::parse`].
    pub fn to_config_text(&self) -> String {
        let mut out = String::new();
        match &self.source {
            SourceSpec::Synthetic(c) => {
                out.push_str("source = synthetic\n");
                out.push_str(&format!(
                    "classes = {}\ndim = {}\nper_class = {}\nspread = {}\nrotation = {}\nnoise = {}\n",
                    c.classes, c.dim, c.per_class, c.spread, c.rotation, c.noise
                ));
            }
            SourceSpec::Toy2d { samples } => {
                out.push_str(&format!("source = toy2d\nsamples = {samples}\n"))
            }
            SourceSpec::Embeddings(p) => out.push_str(&format!("source = {}\n", p.display())),
        }
        let sampling = match self.sampling {
            Sampling::Iid => "iid",
            Sampling::NonIid => "non_iid",
        };
        out.push_str(&format!("sampling = {sampling}\n"));
        match self.prior_shift {
            PriorShift::None => out.push_str("zipf_s = none\n"),
            PriorShift::Zipf { s } => out.push_str(&format!("zipf_s = {s}\n")),
        }
        out.push_str(&format!("batch_size = {}\nseed = {}\n", self.batch_size, self.seed));
        if let Some(m) = &self.mapping {
            out.push_str(&format!("mapping = {}\n", m.display()));
        }
        out.push_str(&format!("pooling = {}\n", self.pooling));
        out
    }
}

/// Ordered batches plus what was done to produce them.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub batches: Vec<Batch>,
    /// Target class count.
    pub class_count: usize,
    /// Dataset row of every streamed sample, in stream order.
    pub order: Vec<usize>,
    /// Realized class proportions under a prior shift.
    pub priors: Option<SimplexVector>,
    /// Classes with no samples left after subsampling.
    pub dropped_classes: Vec<usize>,
}

impl Stream {
    pub fn sample_count(&self) -> usize {
        self.order.len()
    }
}

/// Per-class sample counts matching `priors` as closely as the available
/// samples allow: the largest total every class can supply, split by largest
/// remainder (ties to the lower class index).
pub fn prior_counts(priors: &[f64], available: &[usize]) -> Vec<usize> {
    let total = priors
        .iter()
        .zip(available)
        .filter(|(&p, _)| p > 0.0)
        .map(|(&p, &a)| a as f64 / p)
        .fold(f64::INFINITY, f64::min);
    if !total.is_finite() {
        return vec![0; priors.len()];
    }
    let total = (total + 1e-9).floor() as usize;
    let exact: Vec<f64> = priors.iter().map(|&p| p * total as f64).collect();
    let mut counts: Vec<usize> =
        exact.iter().zip(available).map(|(&e, &a)| (e.floor() as usize).min(a)).collect();
    let mut left = total.saturating_sub(counts.iter().sum());
    let mut by_remainder: Vec<usize> = (0..priors.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b))
    });
    for &c in &by_remainder {
        if left == 0 {
            break;
        }
        if counts[c] < available[c] && priors[c] > 0.0 {
            counts[c] += 1;
            left -= 1;
        }
    }
    counts
}

/// Builds the batch sequence for `spec` over `data`.
pub fn make_stream(
    data: &Dataset,
    spec: &ScenarioSpec,
    mapping: Option<&ClassMapping>,
) -> Result<Stream> {
    spec.validate()?;
    if let Some(m) = mapping {
        if m.source_count() != data.class_count() {
            return Err(Error::Config(format!(
                "mapping covers {} source classes but the data has {}",
                m.source_count(),
                data.class_count()
            )));
        }
    }
    let class_count = mapping.map_or(data.class_count(), ClassMapping::target_count);
    if let Some(labels) = &data.labels {
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::Config(format!("label {bad} out of range for {class_count} classes")));
        }
    }

    let mut priors = None;
    let mut dropped_classes = Vec::new();
    let mut selected: Vec<usize> = (0..data.len()).collect();
    if let PriorShift::Zipf { s } = spec.prior_shift {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Error::Config("a prior shift needs labeled data".into()))?;
        let mut by_class = vec![Vec::new(); class_count];
        for (i, &y) in labels.iter().enumerate() {
            by_class[y].push(i);
        }
        let mut p = zipf_priors(class_count, s, spec.seed)?.into_vec();
        for (c, members) in by_class.iter().enumerate() {
            if members.is_empty() {
                log::warn!("class {c} has no samples; dropping it from the priors");
                p[c] = 0.0;
            }
        }
        let available: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let counts = prior_counts(&p, &available);
        let mut rng = rng_for(spec.seed, SALT_SUBSAMPLE);
        selected.clear();
        for (c, members) in by_class.iter_mut().enumerate() {
            if counts[c] == 0 {
                if !members.is_empty() {
                    log::warn!("class {c} receives no samples under the prior shift; dropping it");
                }
                dropped_classes.push(c);
                continue;
            }
            members.shuffle(&mut rng);
            selected.extend_from_slice(&members[..counts[c]]);
        }
        priors = Some(SimplexVector::from_weights(counts.iter().map(|&c| c as f64).collect())?);
    }

    let mut rng = rng_for(spec.seed, SALT_ORDER);
    let order = match spec.sampling {
        Sampling::Iid => {
            selected.shuffle(&mut rng);
            selected
        }
        Sampling::NonIid => {
            let keys: Vec<u64> = match (&data.task_ids, &data.labels) {
                (Some(t), _) => t.iter().map(|&v| v as u64).collect(),
                (None, Some(l)) => l.iter().map(|&v| v as u64).collect(),
                (None, None) => {
                    return Err(Error::Config(
                        "non-i.i.d. ordering needs labels or task ids".into(),
                    ))
                }
            };
            let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for i in selected {
                groups.entry(keys[i]).or_default().push(i);
            }
            let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
            groups.shuffle(&mut rng);
            for g in &mut groups {
                g.shuffle(&mut rng);
            }
            groups.concat()
        }
    };

    let mut batches = Vec::with_capacity(order.len().div_ceil(spec.batch_size));
    for chunk in order.chunks(spec.batch_size) {
        let features = data.features.select_rows(chunk);
        let logits = data.logits.select_rows(chunk);
        let probs = logits
            .row_iter()
            .map(|row| {
                let p = softmax(row)?;
                match mapping {
                    Some(m) => m.pool(&p, spec.pooling),
                    None => Ok(p),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = data.labels.as_ref().map(|l| chunk.iter().map(|&i| l[i]).collect());
        let task_id = data.task_ids.as_ref().and_then(|t| {
            let first = t[chunk[0]];
            chunk.iter().all(|&i| t[i] == first).then_some(first)
        });
        batches.push(Batch::new(features, logits, probs, labels, task_id)?);
    }
    Ok(Stream { batches, class_count, order, priors, dropped_classes })
}

const MAGIC: &[u8; 4] = b"LAME";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 28;
const FLAG_LABELS: u32 = 1;
const FLAG_TASKS: u32 = 2;

/// Serializes `data` in the embedding container format. Values are narrowed
/// to `f32`.
pub fn encode_embeddings(data: &Dataset) -> Result<Vec<u8>> {
    let (n, d, k) = (data.len(), data.features.cols(), data.class_count());
    let as_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit in u32")))
    };
    let mut flags = 0;
    if data.labels.is_some() {
        flags |= FLAG_LABELS;
    }
    if data.task_ids.is_some() {
        flags |= FLAG_TASKS;
    }
    let record = 4 * (d + k) + 4 * (flags.count_ones() as usize);
    let mut out = Vec::with_capacity(HEADER_LEN as usize + n * record);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&as_u32(d, "feature dimension")?.to_le_bytes());
    out.extend_from_slice(&as_u32(k, "class count")?.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    for i in 0..n {
        for &v in data.features.row(i).iter().chain(data.logits.row(i)) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(l) = &data.labels {
            out.extend_from_slice(&as_u32(l[i], "label")?.to_le_bytes());
        }
        if let Some(t) = &data.task_ids {
            out.extend_from_slice(&t[i].to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_embeddings(path: &Path, data: &Dataset) -> Result<()> {
    std::fs::write(path, encode_embeddings(data)?)?;
    Ok(())
}

/// Parses the embedding container. When `mapping` is given its source class
/// count must equal the header's K, and labels are checked against its
/// target classes; otherwise against K.
pub fn decode_embeddings(bytes: &[u8], mapping: Option<&ClassMapping>) -> Result<Dataset> {
    let fail = |offset: u64, message: String| Error::Format { offset, message };
    let len = bytes.len() as u64;
    if len < HEADER_LEN {
        return Err(fail(len, format!("header needs {HEADER_LEN} bytes, file has {len}")));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32_at(16) as u64;
    let k = u32_at(20) as u64;
    let flags = u32_at(24);
    if flags & !(FLAG_LABELS | FLAG_TASKS) != 0 {
        return Err(fail(24, format!("unknown flag bits {flags:#x}")));
    }
    if k == 0 {
        return Err(fail(20, "class count is zero".into()));
    }
    if let Some(m) = mapping {
        if m.source_count() as u64 != k {
            return Err(fail(
                20,
                format!("header has {k} classes but the mapping covers {}", m.source_count()),
            ));
        }
    }
    let has_labels = flags & FLAG_LABELS != 0;
    let has_tasks = flags & FLAG_TASKS != 0;
    let record = 4 * (d + k) + 4 * (has_labels as u64 + has_tasks as u64);
    let expected = n
        .checked_mul(record)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| fail(8, "declared size overflows".into()))?;
    if len != expected {
        return Err(fail(
            len.min(expected),
            format!("expected {expected} bytes for {n} records, file has {len}"),
        ));
    }
    let label_limit = mapping.map_or(k as usize, ClassMapping::target_count);
    let (n, d, k) = (n as usize, d as usize, k as usize);
    let mut features = Vec::with_capacity(n * d);
    let mut logits = Vec::with_capacity(n * k);
    let mut labels = has_labels.then(|| Vec::with_capacity(n));
    let mut tasks = has_tasks.then(|| Vec::with_capacity(n));
    let mut at = HEADER_LEN as usize;
    for _ in 0..n {
        for j in 0..d + k {
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(fail(at as u64, format!("non-finite value {v}")));
            }
            if j < d {
                features.push(v as f64);
            } else {
                logits.push(v as f64);
            }
            at += 4;
        }
        if let Some(l) = &mut labels {
            let y = u32_at(at) as usize;
            if y >= label_limit {
                return Err(fail(at as u64, format!("label {y} out of range for {label_limit} classes")));
            }
            l.push(y);
            at += 4;
        }
        if let Some(t) = &mut tasks {
            t.push(u32_at(at));
            at += 4;
        }
    }
    Dataset::new(DenseMatrix::new(n, d, features)?, DenseMatrix::new(n, k, logits)?, labels, tasks)
}

pub fn load_embeddings(path: &Path, mapping: Option<&ClassMapping>) -> Result<Dataset> {
    decode_embeddings(&std::fs::read(path)?, mapping)
}
