//! Online evaluation: run a method over a stream while predicting, search
//! hyperparameter grids across scenarios, and summarize the results.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::KernelSpec;
use crate::error::{Error, Result};
use crate::mapping::{ClassMapping, Pooling};
use crate::numerics::{exact_sum, softmax, SimplexVector};
use crate::solver::{lame_correct, SolverConfig};
use crate::streams::{
    generate_synthetic, load_embeddings, make_stream, parse_key_values, LinearSource, PriorShift,
    Sampling, ScenarioSpec, SourceSpec, Stream,
};
use crate::toy::{generate_toy2d, AdaptConfig, AdaptLoss, OnlineAdapter, RunningStats, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    Baseline,
    Lame,
    EntropyMin,
    PseudoLabel,
    ShotIm,
    RestandardizeOnly,
}

impl MethodKind {
    /// The declared hyperparameter grid, in tie-breaking order.
    pub fn grid(self) -> Vec<MethodSpec> {
        match self {
            Self::Baseline => vec![MethodSpec::Baseline],
            Self::Lame => [1, 3, 5].map(|k| MethodSpec::lame(KernelSpec::knn(k))).to_vec(),
            Self::EntropyMin | Self::PseudoLabel | Self::ShotIm => {
                let loss = self.loss().expect("adaptation kinds have a loss");
                AdaptConfig::grid().into_iter().map(|cfg| MethodSpec::Nam { loss, cfg }).collect()
            }
            Self::RestandardizeOnly => AdaptConfig::STAT_MOMENTA
                .iter()
                .map(|&stat_momentum| MethodSpec::Restandardize { stat_momentum })
                .collect(),
        }
    }

    fn loss(self) -> Option<AdaptLoss> {
        match self {
            Self::EntropyMin => Some(AdaptLoss::EntropyMin),
            Self::PseudoLabel => Some(AdaptLoss::PseudoLabel),
            Self::ShotIm => Some(AdaptLoss::ShotIm),
            _ => None,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Baseline => "baseline",
            Self::Lame => "lame",
            Self::EntropyMin => "entropy_min",
            Self::PseudoLabel => "pseudo_label",
            Self::ShotIm => "shot_im",
            Self::RestandardizeOnly => "restandardize_only",
        })
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Self::Baseline),
            "lame" => Ok(Self::Lame),
            "entropy_min" => Ok(Self::EntropyMin),
            "pseudo_label" => Ok(Self::PseudoLabel),
            "shot_im" => Ok(Self::ShotIm),
            "restandardize_only" => Ok(Self::RestandardizeOnly),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Baseline,
    Lame { kernel: KernelSpec, solver: SolverConfig },
    Nam { loss: AdaptLoss, cfg: AdaptConfig },
    Restandardize { stat_momentum: f64 },
}

impl MethodSpec {
    pub fn lame(kernel: KernelSpec) -> Self {
        Self::Lame { kernel, solver: SolverConfig::default() }
    }

    pub fn kind(&self) -> MethodKind {
        match self {
            Self::Baseline => MethodKind::Baseline,
            Self::Lame { .. } => MethodKind::Lame,
            Self::Nam { loss: AdaptLoss::EntropyMin, .. } => MethodKind::EntropyMin,
            Self::Nam { loss: AdaptLoss::PseudoLabel, .. } => MethodKind::PseudoLabel,
            Self::Nam { loss: AdaptLoss::ShotIm, .. } => MethodKind::ShotIm,
            Self::Restandardize { .. } => MethodKind::RestandardizeOnly,
        }
    }

    /// Flattened `key=value;...` form used in result tables.
    pub fn hyperparameters(&self) -> String {
        match self {
            Self::Baseline => String::new(),
            Self::Lame { kernel, solver } => format!(
                "kernel={};k={};normalize={};tol={};max_iter={}",
                kernel.kind, kernel.k, kernel.normalize_features, solver.tol, solver.max_iter
            ),
            Self::Nam { cfg, .. } => format!(
                "lr={};momentum={};stat_momentum={};partition={}",
                cfg.lr, cfg.momentum, cfg.stat_momentum, cfg.partition
            ),
            Self::Restandardize { stat_momentum } => format!("stat_momentum={stat_momentum}"),
        }
    }
}

/// Wall time spent per stage, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    /// Turning stored scores into (pooled) probabilities, or standardizing
    /// and scoring features for adapted models.
    pub forward_emulation: f64,
    /// Affinity construction and solving, or the gradient step.
    pub optimization: f64,
    /// Re-scoring the batch after an update. Never incurred by the baseline
    /// or by output correction.
    pub second_forward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: String,
    pub method: MethodKind,
    pub hyperparameters: String,
    pub seed: u64,
    pub batch_accuracy: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub predictions: Vec<usize>,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub timings: StageTimings,
}

impl RunResult {
    /// Accuracy recomputed from the stored per-batch values.
    pub fn recomputed_accuracy(&self) -> f64 {
        let correct: f64 =
            self.batch_accuracy.iter().zip(&self.batch_sizes).map(|(a, &n)| (a * n as f64).round()).sum();
        correct / self.total as f64
    }
}

/// One realized scenario: its stream plus what the adaptation baselines need.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub spec: ScenarioSpec,
    pub stream: Stream,
    /// Source classifier, when the data came from a generator.
    pub source: Option<LinearSource>,
    pub mapping: Option<ClassMapping>,
}

/// Generates or loads the data for `spec` under `seed` and builds its stream.
pub fn prepare_scenario(id: &str, spec: &ScenarioSpec, seed: u64) -> Result<Scenario> {
    let spec = ScenarioSpec { seed, ..spec.clone() };
    spec.validate()?;
    let mapping = spec.mapping.as_deref().map(ClassMapping::load).transpose()?;
    let (dataset, source) = match &spec.source {
        SourceSpec::Synthetic(cfg) => {
            let data = generate_synthetic(cfg, seed)?;
            (data.dataset, Some(data.source))
        }
        SourceSpec::Toy2d { samples } => {
            let toy = generate_toy2d(*samples, seed)?;
            (toy.dataset, Some(toy.source))
        }
        SourceSpec::Embeddings(path) => (load_embeddings(path, mapping.as_ref())?, None),
    };
    let mapping = match mapping {
        Some(m) => Some(m.with_source_count(dataset.class_count())?),
        None => None,
    };
    let stream = make_stream(&dataset, &spec, mapping.as_ref())?;
    Ok(Scenario { id: id.to_string(), spec, stream, source, mapping })
}

fn toy_model_for(scenario: &Scenario) -> Result<(ToyModel, RunningStats)> {
    let source = scenario.source.as_ref().ok_or_else(|| {
        Error::Unsupported("adaptation baselines need a generated source model".into())
    })?;
    if scenario.mapping.as_ref().is_some_and(|m| !m.is_bijective()) {
        return Err(Error::Unsupported(
            "adaptation baselines do not support class pooling".into(),
        ));
    }
    let model = ToyModel::from_source(source);
    if model.class_count() != scenario.stream.class_count {
        return Err(Error::DimensionMismatch {
            expected: scenario.stream.class_count,
            actual: model.class_count(),
        });
    }
    Ok((model, RunningStats::from_source(source)))
}

fn score_probs(
    logits: &crate::numerics::DenseMatrix,
    mapping: Option<&ClassMapping>,
    pooling: Pooling,
) -> Result<Vec<SimplexVector>> {
    logits
        .row_iter()
        .map(|row| {
            let p = softmax(row)?;
            match mapping {
                Some(m) => m.pool(&p, pooling),
                None => Ok(p),
            }
        })
        .collect()
}

/// Streams every batch through `method`, predicting as it goes.
pub fn run_online(scenario: &Scenario, method: &MethodSpec, seed: u64) -> Result<RunResult> {
    let stream = &scenario.stream;
    let feature_dim = stream.batches.first().map_or(0, |b| b.features.cols());
    let mut adapter = match method {
        MethodSpec::Baseline => None,
        MethodSpec::Lame { solver, .. } => {
            solver.validate()?;
            None
        }
        MethodSpec::Nam { loss, cfg } => {
            let (model, stats) = toy_model_for(scenario)?;
            Some(OnlineAdapter::new(model, stats, *cfg, Some(*loss))?)
        }
        MethodSpec::Restandardize { stat_momentum } => {
            let (model, stats) = toy_model_for(scenario)?;
            let cfg = AdaptConfig { lr: 0.0, stat_momentum: *stat_momentum, ..AdaptConfig::default() };
            Some(OnlineAdapter::new(model, stats, cfg, None)?)
        }
    };
    if let Some(a) = &adapter {
        if a.model.dim() != feature_dim && !stream.batches.is_empty() {
            return Err(Error::DimensionMismatch { expected: a.model.dim(), actual: feature_dim });
        }
    }

    let mut timings = StageTimings::default();
    let mut result = RunResult {
        scenario: scenario.id.clone(),
        method: method.kind(),
        hyperparameters: method.hyperparameters(),
        seed,
        batch_accuracy: Vec::with_capacity(stream.batches.len()),
        batch_sizes: Vec::with_capacity(stream.batches.len()),
        predictions: Vec::with_capacity(stream.sample_count()),
        correct: 0,
        total: 0,
        accuracy: 0.0,
        timings,
    };
    let (mut forward, mut optimize, mut second) = (Duration::ZERO, Duration::ZERO, Duration::ZERO);
    for (index, batch) in stream.batches.iter().enumerate() {
        let labels = batch.labels.as_ref().ok_or_else(|| {
            Error::Config(format!("batch {index} has no labels; online accuracy needs them"))
        })?;
        let preds: Vec<usize> = match (method, adapter.as_mut()) {
            (MethodSpec::Baseline, _) => {
                let t = Instant::now();
                let probs = score_probs(&batch.logits, scenario.mapping.as_ref(), scenario.spec.pooling)?;
                forward += t.elapsed();
                probs.iter().map(SimplexVector::argmax).collect()
            }
            (MethodSpec::Lame { kernel, solver }, _) => {
                let t = Instant::now();
                let probs = score_probs(&batch.logits, scenario.mapping.as_ref(), scenario.spec.pooling)?;
                forward += t.elapsed();
                let t = Instant::now();
                let w = kernel.build(&batch.features)?;
                let (z, _) = lame_correct(&probs, &w, solver)?;
                optimize += t.elapsed();
                z.predictions()
            }
            (_, Some(adapter)) => {
                let t = Instant::now();
                let s = adapter.prepare(&batch.features)?;
                forward += t.elapsed();
                let t = Instant::now();
                adapter.step(&s)?;
                optimize += t.elapsed();
                let t = Instant::now();
                let probs = adapter.predict(&s);
                if adapter.loss.is_some() {
                    second += t.elapsed();
                } else {
                    forward += t.elapsed();
                }
                probs.iter().map(SimplexVector::argmax).collect()
            }
            (_, None) => unreachable!("adaptation methods always build an adapter"),
        };
        let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        result.batch_accuracy.push(correct as f64 / preds.len() as f64);
        result.batch_sizes.push(preds.len());
        result.correct += correct;
        result.total += preds.len();
        result.predictions.extend(preds);
    }
    if result.total == 0 {
        return Err(Error::Empty);
    }
    timings.forward_emulation = forward.as_secs_f64();
    timings.optimization = optimize.as_secs_f64();
    timings.second_forward = second.as_secs_f64();
    result.timings = timings;
    result.accuracy = result.correct as f64 / result.total as f64;
    Ok(result)
}

/// Scenario list plus seeds for a grid or sweep run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// `(id, scenario)` in declaration order.
    pub scenarios: Vec<(String, ScenarioSpec)>,
    pub seeds: Vec<u64>,
}

const FAMILY: [(&str, Sampling, bool); 4] = [
    ("A", Sampling::Iid, false),
    ("B", Sampling::NonIid, false),
    ("C", Sampling::Iid, true),
    ("D", Sampling::NonIid, true),
];

/// The four variants of `base`: i.i.d. / non-i.i.d., with and without a
/// Zipf prior shift (exponent taken from `base`, else 1).
pub fn scenario_family(base: &ScenarioSpec) -> Vec<(String, ScenarioSpec)> {
    let s = match base.prior_shift {
        PriorShift::Zipf { s } => s,
        PriorShift::None => 1.0,
    };
    FAMILY
        .iter()
        .map(|&(id, sampling, zipf)| {
            let prior_shift = if zipf { PriorShift::Zipf { s } } else { PriorShift::None };
            (id.to_string(), ScenarioSpec { sampling, prior_shift, ..base.clone() })
        })
        .collect()
}

/// Parses `a,b,c` and `a..b` (exclusive) lists.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>> {
    let bad = |v: &str| Error::Config(format!("invalid list entry `{v}`"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((lo, hi)) = part.split_once("..") {
            let lo: u64 = lo.trim().parse().map_err(|_| bad(part))?;
            let hi: u64 = hi.trim().parse().map_err(|_| bad(part))?;
            for v in lo..hi {
                out.push(v.to_string().parse().map_err(|_| bad(part))?);
            }
        } else {
            out.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Scenario keys describe the base scenario; `scenarios` picks members
    /// of its A/B/C/D family (default all four) and `seeds` lists run seeds
    /// (default `0..10`).
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut members: Vec<String> = FAMILY.iter().map(|f| f.0.to_string()).collect();
        let mut seeds: Vec<u64> = (0..10).collect();
        let mut base = Vec::new();
        for (key, value) in pairs {
            match key.as_str() {
                "scenarios" => members = parse_list(value)?,
                "seeds" => seeds = parse_list(value)?,
                _ => base.push((key.clone(), value.clone())),
            }
        }
        if seeds.is_empty() || members.is_empty() {
            return Err(Error::Config("need at least one seed and one scenario".into()));
        }
        let family = scenario_family(&ScenarioSpec::from_pairs(&base)?);
        let scenarios = members
            .iter()
            .map(|m| {
                family
                    .iter()
                    .find(|(id, _)| id == m)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown scenario `{m}` (expected A, B, C or D)")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scenarios, seeds })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_key_values(text)?)
    }
}

fn prepare_all(cfg: &ExperimentConfig) -> Result<Vec<Scenario>> {
    let cells: Vec<(usize, u64)> =
        (0..cfg.scenarios.len()).flat_map(|s| cfg.seeds.iter().map(move |&seed| (s, seed))).collect();
    cells
        .par_iter()
        .map(|&(s, seed)| {
            let (id, spec) = &cfg.scenarios[s];
            prepare_scenario(id, spec, seed)
                .map_err(|e| Error::Cell { cell: format!("scenario {id} seed {seed}"), source: Box::new(e) })
        })
        .collect()
}

/// Runs every method on every prepared scenario, in parallel, returning
/// results in `(method, scenario)` order.
fn run_all(prepared: &[Scenario], methods: &[MethodSpec]) -> Result<Vec<RunResult>> {
    let jobs: Vec<(usize, usize)> =
        (0..methods.len()).flat_map(|m| (0..prepared.len()).map(move |s| (m, s))).collect();
    jobs.par_iter()
        .map(|&(m, s)| {
            let sc = &prepared[s];
            run_online(sc, &methods[m], sc.spec.seed).map_err(|e| Error::Cell {
                cell: format!(
                    "scenario {} seed {} method {} [{}]",
                    sc.id,
                    sc.spec.seed,
                    methods[m].kind(),
                    methods[m].hyperparameters()
                ),
                source: Box::new(e),
            })
        })
        .collect()
}

/// Unweighted means, order independent.
fn mean(values: &[f64]) -> f64 {
    exact_sum(values) / values.len() as f64
}

/// `(index of the best row, row means)`: the row with the highest mean, ties
/// to the earliest.
pub fn select_best(table: &[Vec<f64>]) -> (usize, Vec<f64>) {
    let means: Vec<f64> = table.iter().map(|row| mean(row)).collect();
    let mut best = 0;
    for (i, &m) in means.iter().enumerate() {
        if m > means[best] {
            best = i;
        }
    }
    (best, means)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOutcome {
    pub grid: Vec<MethodSpec>,
    pub scenarios: Vec<String>,
    pub seeds: Vec<u64>,
    /// Grid point x scenario, mean accuracy over seeds.
    pub table: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub best: usize,
    /// Baseline accuracy per scenario, mean over seeds.
    pub baseline: Vec<f64>,
    /// Every run: baseline runs first, then grid point by grid point.
    pub runs: Vec<RunResult>,
}

impl GridOutcome {
    pub fn best_spec(&self) -> &MethodSpec {
        &self.grid[self.best]
    }

    pub fn cross_shift(&self) -> CrossShiftMatrix {
        cross_shift_matrix(&self.scenarios, &self.table, &self.baseline)
    }
}

fn seed_means(runs: &[RunResult], scenarios: usize, seeds: usize) -> Vec<f64> {
    (0..scenarios)
        .map(|s| mean(&runs[s * seeds..(s + 1) * seeds].iter().map(|r| r.accuracy).collect::<Vec<_>>()))
        .collect()
}

/// Evaluates every grid point on every scenario and seed and selects the
/// point with the best unweighted mean over scenarios.
pub fn grid_search(cfg: &ExperimentConfig, grid: &[MethodSpec]) -> Result<GridOutcome> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let prepared = prepare_all(cfg)?;
    let (s, n) = (cfg.scenarios.len(), cfg.seeds.len());
    let mut methods = vec![MethodSpec::Baseline];
    methods.extend_from_slice(grid);
    let runs = run_all(&prepared, &methods)?;
    let per_method = s * n;
    let baseline = seed_means(&runs[..per_method], s, n);
    let table: Vec<Vec<f64>> = (0..grid.len())
        .map(|g| seed_means(&runs[(g + 1) * per_method..(g + 2) * per_method], s, n))
        .collect();
    let (best, means) = select_best(&table);
    Ok(GridOutcome {
        grid: grid.to_vec(),
        scenarios: cfg.scenarios.iter().map(|(id, _)| id.clone()).collect(),
        seeds: cfg.seeds.clone(),
        table,
        means,
        best,
        baseline,
        runs,
    })
}

/// Accuracy change when tuning on one scenario and testing on another.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossShiftMatrix {
    pub scenarios: Vec<String>,
    /// `values[i][j]`: tuned on `i`, evaluated on `j`, minus the baseline on `j`.
    pub values: Vec<Vec<f64>>,
    /// Grid row chosen for each scenario.
    pub selected: Vec<usize>,
}

impl CrossShiftMatrix {
    /// Whether every diagonal entry is the largest in its column.
    pub fn diagonal_is_column_max(&self) -> bool {
        let n = self.values.len();
        (0..n).all(|j| (0..n).all(|i| self.values[j][j] >= self.values[i][j]))
    }

    pub fn min_off_diagonal(&self) -> f64 {
        let n = self.values.len();
        (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| self.values[i][j])
            .fold(f64::INFINITY, f64::min)
    }
}

/// `M[i][j] = acc[h*_i][j] − baseline[j]` with `h*_i` the first row
/// maximizing column `i`.
pub fn cross_shift_matrix(scenarios: &[String], acc: &[Vec<f64>], baseline: &[f64]) -> CrossShiftMatrix {
    let n = baseline.len();
    let selected: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for h in 0..acc.len() {
                if acc[h][i] > acc[best][i] {
                    best = h;
                }
            }
            best
        })
        .collect();
    let values = selected
        .iter()
        .map(|&h| (0..n).map(|j| acc[h][j] - baseline[j]).collect())
        .collect();
    CrossShiftMatrix { scenarios: scenarios.to_vec(), values, selected }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub batch_size: usize,
    /// Mean over scenarios and seeds.
    pub method_accuracy: f64,
    pub baseline_accuracy: f64,
}

/// Reruns every scenario at each batch size with the same seeds.
pub fn batch_size_sweep(
    cfg: &ExperimentConfig,
    method: &MethodSpec,
    sizes: &[usize],
) -> Result<Vec<SweepPoint>> {
    sizes
        .iter()
        .map(|&batch_size| {
            if batch_size == 0 {
                return Err(Error::Config("batch sizes must be at least 1".into()));
            }
            let sized = ExperimentConfig {
                scenarios: cfg
                    .scenarios
                    .iter()
                    .map(|(id, s)| (id.clone(), ScenarioSpec { batch_size, ..s.clone() }))
                    .collect(),
                seeds: cfg.seeds.clone(),
            };
            let prepared = prepare_all(&sized)?;
            let runs = run_all(&prepared, &[MethodSpec::Baseline, *method])?;
            let accs: Vec<f64> = runs.iter().map(|r| r.accuracy).collect();
            let (base, meth) = accs.split_at(prepared.len());
            Ok(SweepPoint { batch_size, method_accuracy: mean(meth), baseline_accuracy: mean(base) })
        })
        .collect()
}

/// One row of an aggregated report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub hyperparameters: String,
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

/// Mean, sample std, min and max of accuracy per (scenario, method,
/// hyperparameters), sorted by that key.
pub fn aggregate_report(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(&str, &str, &str), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.scenario.as_str(), r.method.as_str(), r.hyperparameters.as_str()))
            .or_default()
            .push(r.accuracy);
    }
    groups
        .into_iter()
        .map(|((scenario, method, hp), accs)| {
            let n = accs.len();
            let m = mean(&accs);
            let std = if n > 1 {
                let sq: Vec<f64> = accs.iter().map(|a| (a - m) * (a - m)).collect();
                (exact_sum(&sq) / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                scenario: scenario.to_string(),
                method: method.to_string(),
                hyperparameters: hp.to_string(),
                runs: n,
                mean: m,
                std,
                min: accs.iter().copied().fold(f64::INFINITY, f64::min),
                max: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// Flat CSV form of a [`RunResult`], without timings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub method: String,
    pub hyperparameters: String,
    pub seed: u64,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    /// Per-batch accuracies joined with `;`.
    pub batch_accuracy: String,
}

impl From<&RunResult> for ResultRow {
    fn from(r: &RunResult) -> Self {
        Self {
            scenario: r.scenario.clone(),
            method: r.method.to_string(),
            hyperparameters: r.hyperparameters.clone(),
            seed: r.seed,
            correct: r.correct,
            total: r.total,
            accuracy: r.accuracy,
            batch_accuracy: r.batch_accuracy.iter().map(f64::to_string).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TimingRow<'a> {
    scenario: &'a str,
    method: String,
    hyperparameters: &'a str,
    seed: u64,
    forward_emulation_s: f64,
    optimization_s: f64,
    second_forward_s: f64,
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    write_rows(path, runs.iter().map(ResultRow::from))
}

pub fn write_timings_csv(path: &Path, runs: &[RunResult]) -> Result<()> {
    write_rows(
        path,
        runs.iter().map(|r| TimingRow {
            scenario: &r.scenario,
            method: r.method.to_string(),
            hyperparameters: &r.hyperparameters,
            seed: r.seed,
            forward_emulation_s: r.timings.forward_emulation,
            optimization_s: r.timings.optimization,
            second_forward_s: r.timings.second_forward,
        }),
    )
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_rows(path, rows)
}

/// Accuracy table and per-scenario baseline rebuilt from a results file
/// written by a grid run: hyperparameter rows in first-appearance order,
/// scenario columns likewise, each cell the mean over seeds.
pub fn table_from_rows(rows: &[ResultRow]) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut scenarios: Vec<String> = Vec::new();
    let mut points: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut base: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let index_of = |list: &mut Vec<String>, v: &str| -> usize {
        list.iter().position(|x| x == v).unwrap_or_else(|| {
            list.push(v.to_string());
            list.len() - 1
        })
    };
    for r in rows {
        let s = index_of(&mut scenarios, &r.scenario);
        if r.method == MethodKind::Baseline.to_string() {
            base.entry(s).or_default().push(r.accuracy);
        } else {
            let key = format!("{}|{}", r.method, r.hyperparameters);
            let p = index_of(&mut points, &key);
            cells.entry((p, s)).or_default().push(r.accuracy);
        }
    }
    if points.is_empty() {
        return Err(Error::Config("results contain no non-baseline runs".into()));
    }
    let baseline = (0..scenarios.len())
        .map(|s| {
            base.get(&s)
                .map(|v| mean(v))
                .ok_or_else(|| Error::Config(format!("no baseline runs for scenario {}", scenarios[s])))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = (0..points.len())
        .map(|p| {
            (0..scenarios.len())
                .map(|s| {
                    cells.get(&(p, s)).map(|v| mean(v)).ok_or_else(|| {
                        Error::Config(format!("missing cell for {} on scenario {}", points[p], scenarios[s]))
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((scenarios, points, table, baseline))
}

/// Matrix as CSV with scenario ids as row and column headers.
pub fn write_matrix_csv(path: &Path, m: &CrossShiftMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["tuned_on".to_string()];
    header.extend(m.scenarios.iter().cloned());
    w.write_record(&header)?;
    for (id, row) in m.scenarios.iter().zip(&m.values) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Two-column `x,y` series for external plotting.
pub fn write_series_csv(path: &Path, x_name: &str, y_name: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([x_name, y_name])?;
    for (x, y) in points {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::SyntheticConfig;

    fn small_spec(sampling: Sampling, prior_shift: PriorShift, batch_size: usize) -> ScenarioSpec {
        let cfg = SyntheticConfig { per_class: 30, ..SyntheticConfig::default() };
        ScenarioSpec { batch_size, ..ScenarioSpec::synthetic(cfg, sampling, prior_shift) }
    }

    fn rows(accs: &[(&str, f64)]) -> Vec<ResultRow> {
        accs.iter()
            .enumerate()
            .map(|(i, &(scenario, accuracy))| ResultRow {
                scenario: scenario.into(),
                method: "lame".into(),
                hyperparameters: String::new(),
                seed: i as u64,
                correct: 0,
                total: 1,
                accuracy,
                batch_accuracy: String::new(),
            })
            .collect()
    }

    #[test]
    fn select_best_examples() {
        assert_eq!(select_best(&[vec![0.3, 0.9]]).0, 0);
        let (best, means) = select_best(&[vec![0.6, 0.2], vec![0.4, 0.5]]);
        assert_eq!(best, 1);
        assert!((means[0] - 0.4).abs() < 1e-15 && (means[1] - 0.45).abs() < 1e-15);
        assert_eq!(select_best(&[vec![0.5, 0.5], vec![0.9, 0.8], vec![0.9, 0.8]]).0, 1);
        assert_eq!(select_best(&[vec![0.5], vec![0.5]]).0, 0);
    }

    #[test]
    fn cross_shift_examples() {
        let ids = vec!["A".to_string(), "B".to_string()];
        let m = cross_shift_matrix(&ids, &[vec![0.7, 0.3], vec![0.5, 0.6]], &[0.5, 0.5]);
        let want = [[0.2, -0.2], [0.0, 0.1]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m.values[i][j] - want[i][j]).abs() < 1e-15);
            }
        }
        assert!(m.diagonal_is_column_max());

        let single = cross_shift_matrix(&ids, &[vec![0.7, 0.3]], &[0.5, 0.5]);
        assert_eq!(single.values[0], single.values[1]);
        let zero = cross_shift_matrix(&ids, &[vec![0.5, 0.5], vec![0.5, 0.5]], &[0.5, 0.5]);
        assert!(zero.values.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn report_statistics() {
        let one = aggregate_report(&rows(&[("A", 0.7)]));
        assert_eq!(one[0].std, 0.0);
        let two = aggregate_report(&rows(&[("A", 0.4), ("A", 0.6)]));
        assert!((two[0].mean - 0.5).abs() < 1e-15);
        assert!((two[0].std - 0.1414213562373095).abs() < 1e-12);
        let mut shuffled = rows(&[("B", 0.1), ("A", 0.4), ("B", 0.3), ("A", 0.6), ("A", 0.35)]);
        let a = aggregate_report(&shuffled);
        shuffled.reverse();
        let b = aggregate_report(&shuffled);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mean, y.mean);
            assert_eq!(x.runs, y.runs);
        }
        assert_eq!(a.iter().map(|r| r.runs).sum::<usize>(), 5);
    }

    #[test]
    fn baseline_matches_source_accuracy() {
        let spec = small_spec(Sampling::Iid, PriorShift::None, 16);
        let sc = prepare_scenario("A", &spec, 1).unwrap();
        let data = generate_synthetic(match &spec.source {
            SourceSpec::Synthetic(c) => c,
            _ => unreachable!(),
        }, 1)
        .unwrap();
        let r = run_online(&sc, &MethodSpec::Baseline, 1).unwrap();
        assert_eq!(r.accuracy, data.dataset.source_accuracy().unwrap());
        assert_eq!(r.recomputed_accuracy(), r.accuracy);
        assert_eq!(r.timings.second_forward, 0.0);
    }

    #[test]
    fn baseline_is_order_and_size_invariant() {
        let mut accs = Vec::new();
        for sampling in [Sampling::Iid, Sampling::NonIid] {
            for batch in [1, 7, 64] {
                let sc = prepare_scenario("x", &small_spec(sampling, PriorShift::None, batch), 2).unwrap();
                accs.push(run_online(&sc, &MethodSpec::Baseline, 2).unwrap().accuracy);
            }
        }
        assert!(accs.windows(2).all(|w| w[0] == w[1]), "{accs:?}");
    }

    #[test]
    fn lame_with_single_sample_batches_is_baseline() {
        let sc = prepare_scenario("x", &small_spec(Sampling::NonIid, PriorShift::None, 1), 3).unwrap();
        let base = run_online(&sc, &MethodSpec::Baseline, 3).unwrap();
        let lame = run_online(&sc, &MethodSpec::lame(KernelSpec::knn(5)), 3).unwrap();
        assert_eq!(base.predictions, lame.predictions);
        assert_eq!(lame.timings.second_forward, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let sc = prepare_scenario("x", &small_spec(Sampling::NonIid, PriorShift::Zipf { s: 1.0 }, 16), 4).unwrap();
        for method in [
            MethodSpec::lame(KernelSpec::knn(3)),
            MethodSpec::Nam { loss: AdaptLoss::ShotIm, cfg: AdaptConfig { lr: 0.1, ..AdaptConfig::default() } },
        ] {
            let mut a = run_online(&sc, &method, 4).unwrap();
            let mut b = run_online(&sc, &method, 4).unwrap();
            a.timings = StageTimings::default();
            b.timings = StageTimings::default();
            assert_eq!(a, b);
            assert_eq!(a.recomputed_accuracy(), a.accuracy);
        }
    }

    #[test]
    fn grid_search_returns_member_and_consistent_means() {
        let base = small_spec(Sampling::Iid, PriorShift::None, 16);
        let cfg = ExperimentConfig { scenarios: scenario_family(&base), seeds: vec![0, 1] };
        let grid = MethodKind::Lame.grid();
        let out = grid_search(&cfg, &grid[..3]).unwrap();
        assert!(out.best < 3);
        let (best, means) = select_best(&out.table);
        assert_eq!(best, out.best);
        for (m, row) in means.iter().zip(&out.table) {
            assert!((m - row.iter().sum::<f64>() / row.len() as f64).abs() < 1e-12);
        }
        assert!(out.cross_shift().diagonal_is_column_max());
        let single = grid_search(&cfg, &grid[..1]).unwrap();
        assert_eq!(single.best, 0);
    }

    #[test]
    fn results_round_trip_through_csv() {
        let base = small_spec(Sampling::Iid, PriorShift::None, 32);
        let cfg = ExperimentConfig { scenarios: scenario_family(&base)[..2].to_vec(), seeds: vec![5] };
        let out = grid_search(&cfg, &MethodKind::Lame.grid()[..2]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_results_csv(&path, &out.runs).unwrap();
        let rows = read_results_csv(&path).unwrap();
        assert_eq!(rows.len(), out.runs.len());
        let (scenarios, _, table, baseline) = table_from_rows(&rows).unwrap();
        assert_eq!(scenarios, out.scenarios);
        assert_eq!(table, out.table);
        assert_eq!(baseline, out.baseline);
        write_timings_csv(&dir.path().join("t.csv"), &out.runs).unwrap();
    }

    #[test]
    fn experiment_config_parsing() {
        let cfg = ExperimentConfig::parse("scenarios = B, D\nseeds = 0..3\nzipf_s = 2\nper_class = 10").unwrap();
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.scenarios.len(), 2);
        assert_eq!(cfg.scenarios[1].1.prior_shift, PriorShift::Zipf { s: 2.0 });
        assert_eq!(cfg.scenarios[0].1.legend(), "B");
        assert!(ExperimentConfig::parse("scenarios = E").is_err());
        assert!(ExperimentConfig::parse("seeds = x").is_err());
    }

    #[test]
    fn method_grids() {
        assert_eq!(MethodKind::Lame.grid().len(), 3);
        assert_eq!(MethodKind::EntropyMin.grid().len(), 54);
        assert!(MethodKind::ShotIm.grid().iter().all(|m| m.kind() == MethodKind::ShotIm));
        for kind in ["baseline", "lame", "entropy_min", "pseudo_label", "shot_im", "restandardize_only"] {
            assert_eq!(kind.parse::<MethodKind>().unwrap().to_string(), kind);
        }
    }
}
