use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lame_core::affinity::{KernelKind, KernelSpec};
use lame_core::harness::{
    aggregate_report, batch_size_sweep, cross_shift_matrix, grid_search, parse_list, prepare_scenario,
    read_results_csv, table_from_rows, write_matrix_csv, write_results_csv, write_summary_csv,
    write_timings_csv, ExperimentConfig, MethodKind, MethodSpec,
};
use lame_core::mapping::{ClassMapping, Pooling};
use lame_core::numerics::{softmax, DenseMatrix, SimplexVector};
use lame_core::solver::{lame_correct, SolveDiagnostics, SolverConfig};
use lame_core::streams::{
    load_embeddings, make_stream, parse_key_values, save_embeddings, Dataset, Sampling, ScenarioSpec,
    SourceSpec, SyntheticConfig, PriorShift,
};
use lame_core::toy::{collapse_demo, generate_toy2d, AdaptConfig};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "lame", version, about = "Laplacian-adjusted output correction and test-time adaptation experiments")]
struct Cli {
    /// Seed override: the scenario seed for `simulate`, the single run seed for
    /// `grid` and `sweep`, the demo seed for `toy2d` when `--seeds` is absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; relative paths inside resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Extra `key=value` entries applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Correct the predictions stored in an embedding file, batch by batch.
    Correct {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "knn")]
        kernel: KernelKind,
        /// Neighbor count (kNN; 0 disables the affinity) or bandwidth rank (rbf).
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// L2-normalize features before building the affinity.
        #[arg(long)]
        normalize: Option<bool>,
        #[arg(long)]
        mapping: Option<PathBuf>,
        #[arg(long, default_value = "average")]
        pooling: Pooling,
        /// Consecutive samples per batch; samples are never reordered.
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        /// Expected number of output classes; checked against the file and mapping.
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a scenario stream and write it as an embedding file.
    Simulate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Entropy-minimization collapse demo on the 2-D toy problem.
    Toy2d {
        #[arg(long, default_value = "0.001,0.01,0.1")]
        lrs: String,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 20)]
        batch_size: usize,
        #[arg(long, default_value = "non_iid")]
        sampling: Sampling,
        #[arg(long, default_value_t = 0.0)]
        momentum: f64,
        #[arg(long, default_value_t = 0.0)]
        stat_momentum: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a method's hyperparameter grid on every scenario and seed.
    Grid {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        method: MethodKind,
        /// Keep only these grid indices (`a,b` or `a..b`).
        #[arg(long)]
        points: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-shift matrix from a grid results file.
    Matrix {
        #[arg(long)]
        grid_results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy against batch size for one method configuration.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "8,16,32,64,128")]
        sizes: String,
        #[arg(long, default_value = "lame")]
        method: MethodKind,
        /// Grid index of the configuration (default: kNN k=5 for lame, else 0).
        #[arg(long)]
        point: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean and spread per scenario and method from a results file.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the invocation recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// A fully resolved run: everything needed to reproduce it, nothing tied to
/// the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
enum Invocation {
    Correct {
        input: PathBuf,
        kernel: KernelSpec,
        solver: SolverConfig,
        mapping: Option<PathBuf>,
        pooling: Pooling,
        batch_size: usize,
        classes: Option<usize>,
    },
    Simulate {
        scenario: ScenarioSpec,
    },
    Toy2d {
        lrs: Vec<f64>,
        seeds: Vec<u64>,
        samples: usize,
        batch_size: usize,
        sampling: Sampling,
        adapt: AdaptConfig,
    },
    Grid {
        experiment: ExperimentConfig,
        method: MethodKind,
        grid: Vec<MethodSpec>,
    },
    Matrix {
        grid_results: PathBuf,
    },
    Sweep {
        experiment: ExperimentConfig,
        method: MethodSpec,
        sizes: Vec<usize>,
    },
    Report {
        results: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    invocation: Invocation,
    outputs: Vec<String>,
}

fn absolute(path: &Path) -> Result<PathBuf> {
    std::path::absolute(path).with_context(|| format!("resolving {}", path.display()))
}

/// Config file plus overrides as `key = value` pairs, with path-valued keys
/// made absolute.
fn load_pairs(args: &ConfigArgs) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    let base = absolute(&args.config)?.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut pairs = parse_key_values(&text).with_context(|| format!("in {}", args.config.display()))?;
    let cwd = std::env::current_dir()?;
    for pair in pairs.iter_mut() {
        resolve_path_value(pair, &base);
    }
    for raw in &args.overrides {
        let (k, v) = raw.split_once('=').with_context(|| format!("override `{raw}` is not key=value"))?;
        let mut pair = (k.trim().to_string(), v.trim().to_string());
        resolve_path_value(&mut pair, &cwd);
        pairs.retain(|(key, _)| *key != pair.0);
        pairs.push(pair);
    }
    Ok(pairs)
}

fn resolve_path_value((key, value): &mut (String, String), base: &Path) {
    let is_path = match key.as_str() {
        "mapping" => !value.is_empty(),
        "source" => !matches!(value.as_str(), "synthetic" | "toy2d"),
        _ => false,
    };
    if is_path && Path::new(value.as_str()).is_relative() {
        *value = base.join(&*value).display().to_string();
    }
}

fn experiment(args: &ConfigArgs, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_pairs(&load_pairs(args)?)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn resolve(command: Command, seed: Option<u64>) -> Result<(Invocation, PathBuf)> {
    Ok(match command {
        Command::Correct { input, kernel, k, normalize, mapping, pooling, batch_size, classes, tol, max_iter, out } => {
            if batch_size == 0 {
                bail!(lame_core::Error::Config("batch size must be at least 1".into()));
            }
            if !(tol > 0.0) || max_iter == 0 {
                bail!(lame_core::Error::Config("need tol > 0 and max_iter >= 1".into()));
            }
            let mut spec = KernelSpec::new(kernel, k);
            if let Some(n) = normalize {
                spec.normalize_features = n;
            }
            let inv = Invocation::Correct {
                input: absolute(&input)?,
                kernel: spec,
                solver: SolverConfig { tol, max_iter },
                mapping: mapping.as_deref().map(absolute).transpose()?,
                pooling,
                batch_size,
                classes,
            };
            (inv, out)
        }
        Command::Simulate { config, out } => {
            let mut scenario = ScenarioSpec::from_pairs(&load_pairs(&config)?)?;
            if let Some(s) = seed {
                scenario.seed = s;
            }
            (Invocation::Simulate { scenario }, out)
        }
        Command::Toy2d { lrs, seeds, samples, batch_size, sampling, momentum, stat_momentum, out } => {
            let seeds = match (seeds, seed) {
                (Some(list), _) => parse_list(&list)?,
                (None, Some(s)) => vec![s],
                (None, None) => vec![0],
            };
            let lrs: Vec<f64> = parse_list(&lrs)?;
            let adapt = AdaptConfig { momentum, stat_momentum, ..AdaptConfig::default() };
            adapt.validate()?;
            if lrs.is_empty() || seeds.is_empty() {
                bail!(lame_core::Error::Config("need at least one learning rate and one seed".into()));
            }
            (Invocation::Toy2d { lrs, seeds, samples, batch_size, sampling, adapt }, out)
        }
        Command::Grid { config, method, points, out } => {
            let full = method.grid();
            let grid = match points {
                None => full,
                Some(list) => parse_list::<usize>(&list)?
                    .into_iter()
                    .map(|i| {
                        full.get(i).copied().ok_or_else(|| {
                            lame_core::Error::Config(format!("grid index {i} out of range (grid has {})", full.len()))
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?,
            };
            (Invocation::Grid { experiment: experiment(&config, seed)?, method, grid }, out)
        }
        Command::Matrix { grid_results, out } => (Invocation::Matrix { grid_results: absolute(&grid_results)? }, out),
        Command::Sweep { config, sizes, method, point, out } => {
            let spec = match (method, point) {
                (MethodKind::Lame, None) => MethodSpec::lame(KernelSpec::knn(5)),
                (kind, p) => {
                    let grid = kind.grid();
                    let i = p.unwrap_or(0);
                    *grid.get(i).ok_or_else(|| {
                        lame_core::Error::Config(format!("grid index {i} out of range (grid has {})", grid.len()))
                    })?
                }
            };
            let inv = Invocation::Sweep { experiment: experiment(&config, seed)?, method: spec, sizes: parse_list(&sizes)? };
            (inv, out)
        }
        Command::Report { results, out } => (Invocation::Report { results: absolute(&results)? }, out),
        Command::Replay { manifest, out } => {
            let text = fs::read_to_string(&manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let m: Manifest = serde_json::from_str(&text)
                .map_err(lame_core::Error::from)
                .with_context(|| format!("parsing manifest {}", manifest.display()))?;
            (m.invocation, out)
        }
    })
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn create(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self { dir, written: Vec::new() })
    }

    /// Registers `name` as an output and returns its path.
    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn text(&mut self, name: &str, content: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, content).with_context(|| format!("writing {}", p.display()))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(lame_core::Error::from)?;
        s.push('\n');
        self.text(name, &s)
    }
}

fn csv_line(fields: impl IntoIterator<Item = String>) -> String {
    let mut s = fields.into_iter().collect::<Vec<_>>().join(",");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct BatchDiagnostics<'a> {
    batch: usize,
    size: usize,
    #[serde(flatten)]
    diagnostics: &'a SolveDiagnostics,
}

fn run_correct(
    out: &mut Outputs,
    input: &Path,
    kernel: &KernelSpec,
    solver: &SolverConfig,
    mapping: Option<&Path>,
    pooling: Pooling,
    batch_size: usize,
    classes: Option<usize>,
) -> Result<()> {
    let mapping = mapping.map(ClassMapping::load).transpose()?;
    let data = load_embeddings(input, mapping.as_ref()).with_context(|| format!("loading {}", input.display()))?;
    let mapping = mapping.map(|m| m.with_source_count(data.class_count())).transpose()?;
    let target = mapping.as_ref().map_or(data.class_count(), ClassMapping::target_count);
    if let Some(expected) = classes {
        if expected != target {
            let hint = if mapping.is_none() { "; pass --mapping to pool source classes" } else { "" };
            bail!(lame_core::Error::Config(format!(
                "{} holds {} classes but {expected} were expected{hint}",
                input.display(),
                target
            )));
        }
    }
    let labels: Vec<String> = match &mapping {
        Some(m) => m.target_labels().to_vec(),
        None => (0..target).map(|k| k.to_string()).collect(),
    };
    let mut header = vec!["index".to_string(), "batch".into(), "prediction".into()];
    header.extend(labels.iter().map(|l| format!("p_{l}")));
    let mut csv = csv_line(header);
    let mut diags = Vec::new();
    for (b, start) in (0..data.len()).step_by(batch_size).enumerate() {
        let rows: Vec<usize> = (start..(start + batch_size).min(data.len())).collect();
        let features = data.features.select_rows(&rows);
        let q = rows
            .iter()
            .map(|&i| {
                let p = softmax(data.logits.row(i))?;
                match &mapping {
                    Some(m) => m.pool(&p, pooling),
                    None => Ok(p),
                }
            })
            .collect::<lame_core::Result<Vec<SimplexVector>>>()?;
        let w = kernel.build(&features)?;
        let (z, diag) = lame_correct(&q, &w, solver).with_context(|| format!("batch {b}"))?;
        for (&i, zi) in rows.iter().zip(z.rows()) {
            let mut rec = vec![i.to_string(), b.to_string(), labels[zi.argmax()].clone()];
            rec.extend(zi.as_slice().iter().map(f64::to_string));
            csv.push_str(&csv_line(rec));
        }
        diags.push((b, rows.len(), diag));
    }
    out.text("predictions.csv", &csv)?;
    let report: Vec<BatchDiagnostics> =
        diags.iter().map(|(batch, size, d)| BatchDiagnostics { batch: *batch, size: *size, diagnostics: d }).collect();
    out.json("diagnostics.json", &report)
}

#[derive(Serialize)]
struct StreamSummary {
    batches: usize,
    samples: usize,
    class_count: usize,
    dropped_classes: Vec<usize>,
    priors: Option<Vec<f64>>,
}

fn run_simulate(out: &mut Outputs, spec: &ScenarioSpec) -> Result<()> {
    let sc = prepare_scenario(spec.legend(), spec, spec.seed)?;
    let batches = &sc.stream.batches;
    let stack = |pick: &dyn Fn(&lame_core::numerics::Batch) -> &DenseMatrix| -> Result<DenseMatrix> {
        let cols = batches.first().map_or(0, |b| pick(b).cols());
        let values: Vec<f64> = batches.iter().flat_map(|b| pick(b).values().iter().copied()).collect();
        Ok(DenseMatrix::new(values.len() / cols.max(1), cols, values)?)
    };
    let labels: Option<Vec<usize>> =
        batches.iter().map(|b| b.labels.clone()).collect::<Option<Vec<_>>>().map(|v| v.concat());
    let tasks: Option<Vec<u32>> = batches
        .iter()
        .map(|b| b.task_id.map(|t| vec![t; b.features.rows()]))
        .collect::<Option<Vec<_>>>()
        .map(|v| v.concat());
    let data = Dataset::new(stack(&|b| &b.features)?, stack(&|b| &b.logits)?, labels, tasks)?;
    save_embeddings(&out.path("stream.lame"), &data)?;
    let mut order = csv_line(["position", "batch", "source_index"].map(String::from));
    let mut pos = 0;
    for (b, batch) in batches.iter().enumerate() {
        for _ in 0..batch.features.rows() {
            order.push_str(&csv_line([pos.to_string(), b.to_string(), sc.stream.order[pos].to_string()]));
            pos += 1;
        }
    }
    out.text("order.csv", &order)?;
    out.json(
        "stream.json",
        &StreamSummary {
            batches: batches.len(),
            samples: sc.stream.sample_count(),
            class_count: sc.stream.class_count,
            dropped_classes: sc.stream.dropped_classes.clone(),
            priors: sc.stream.priors.as_ref().map(|p| p.as_slice().to_vec()),
        },
    )
}

fn run_toy2d(
    out: &mut Outputs,
    lrs: &[f64],
    seeds: &[u64],
    samples: usize,
    batch_size: usize,
    sampling: Sampling,
    adapt: &AdaptConfig,
) -> Result<()> {
    let mut csv = csv_line(["seed", "series", "lr", "step", "entropy", "accuracy"].map(String::from));
    for &seed in seeds {
        let toy = generate_toy2d(samples, seed)?;
        let spec = ScenarioSpec {
            source: SourceSpec::Toy2d { samples },
            batch_size,
            seed,
            ..ScenarioSpec::synthetic(SyntheticConfig::default(), sampling, PriorShift::None)
        };
        let stream = make_stream(&toy.dataset, &spec, None)?;
        let demo = collapse_demo(&toy.model(), &toy.stats(), &stream, lrs, stream.batches.len(), adapt)?;
        let curves = std::iter::once(("baseline", &demo.baseline)).chain(demo.curves.iter().map(|c| ("adapted", c)));
        for (series, c) in curves {
            for (step, (e, a)) in c.entropy.iter().zip(&c.accuracy).enumerate() {
                csv.push_str(&csv_line([
                    seed.to_string(),
                    series.to_string(),
                    c.lr.to_string(),
                    (step + 1).to_string(),
                    e.to_string(),
                    a.to_string(),
                ]));
            }
        }
    }
    out.text("collapse.csv", &csv)
}

#[derive(Serialize)]
struct GridSummary<'a> {
    method: MethodKind,
    scenarios: &'a [String],
    seeds: &'a [u64],
    best: &'a MethodSpec,
    best_mean_accuracy: f64,
    baseline: &'a [f64],
}

fn run_grid(out: &mut Outputs, cfg: &ExperimentConfig, method: MethodKind, grid: &[MethodSpec]) -> Result<Vec<lame_core::harness::RunResult>> {
    let outcome = grid_search(cfg, grid)?;
    write_results_csv(&out.path("results.csv"), &outcome.runs)?;
    let mut header = vec!["hyperparameters".to_string()];
    header.extend(outcome.scenarios.iter().cloned());
    let mut table = csv_line(header);
    for (spec, row) in outcome.grid.iter().zip(&outcome.table) {
        let mut rec = vec![format!("\"{}\"", spec.hyperparameters())];
        rec.extend(row.iter().map(f64::to_string));
        table.push_str(&csv_line(rec));
    }
    out.text("grid.csv", &table)?;
    out.json(
        "best.json",
        &GridSummary {
            method,
            scenarios: &outcome.scenarios,
            seeds: &outcome.seeds,
            best: outcome.best_spec(),
            best_mean_accuracy: outcome.means[outcome.best],
            baseline: &outcome.baseline,
        },
    )?;
    Ok(outcome.runs)
}

fn run_matrix(out: &mut Outputs, results: &Path) -> Result<()> {
    let rows = read_results_csv(results).with_context(|| format!("reading {}", results.display()))?;
    let (scenarios, _, table, baseline) = table_from_rows(&rows)?;
    let m = cross_shift_matrix(&scenarios, &table, &baseline);
    write_matrix_csv(&out.path("matrix.csv"), &m)?;
    Ok(())
}

fn run_sweep(out: &mut Outputs, cfg: &ExperimentConfig, method: &MethodSpec, sizes: &[usize]) -> Result<()> {
    let points = batch_size_sweep(cfg, method, sizes)?;
    let mut csv = csv_line(["batch_size", "method_accuracy", "baseline_accuracy", "gain"].map(String::from));
    for p in &points {
        csv.push_str(&csv_line([
            p.batch_size.to_string(),
            p.method_accuracy.to_string(),
            p.baseline_accuracy.to_string(),
            (p.method_accuracy - p.baseline_accuracy).to_string(),
        ]));
    }
    out.text("sweep.csv", &csv)
}

fn run_report(out: &mut Outputs, results: &Path) -> Result<()> {
    let rows = read_results_csv(results).with_context(|| format!("reading {}", results.display()))?;
    if rows.is_empty() {
        bail!(lame_core::Error::Config(format!("{} has no result rows", results.display())));
    }
    write_summary_csv(&out.path("summary.csv"), &aggregate_report(&rows))?;
    Ok(())
}

fn execute(inv: &Invocation, dir: PathBuf) -> Result<()> {
    let start = Instant::now();
    let mut out = Outputs::create(dir)?;
    let mut runs = Vec::new();
    match inv {
        Invocation::Correct { input, kernel, solver, mapping, pooling, batch_size, classes } => {
            run_correct(&mut out, input, kernel, solver, mapping.as_deref(), *pooling, *batch_size, *classes)?
        }
        Invocation::Simulate { scenario } => run_simulate(&mut out, scenario)?,
        Invocation::Toy2d { lrs, seeds, samples, batch_size, sampling, adapt } => {
            run_toy2d(&mut out, lrs, seeds, *samples, *batch_size, *sampling, adapt)?
        }
        Invocation::Grid { experiment, method, grid } => runs = run_grid(&mut out, experiment, *method, grid)?,
        Invocation::Matrix { grid_results } => run_matrix(&mut out, grid_results)?,
        Invocation::Sweep { experiment, method, sizes } => run_sweep(&mut out, experiment, method, sizes)?,
        Invocation::Report { results } => run_report(&mut out, results)?,
    }
    let elapsed = start.elapsed().as_secs_f64();
    if !runs.is_empty() {
        write_timings_csv(&out.dir.join("timings.csv"), &runs)?;
    }
    fs::write(out.dir.join("timings.json"), format!("{{\n  \"wall_seconds\": {elapsed}\n}}\n"))?;
    let manifest = Manifest {
        tool: "lame".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: inv.clone(),
        outputs: out.written.clone(),
    };
    out.json("manifest.json", &manifest)?;
    log::info!("wrote {} files to {} in {elapsed:.2}s", out.written.len(), out.dir.display());
    Ok(())
}

/// 2 for filesystem failures, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lame_core::Error>() {
            return if e.is_io() { 2 } else { 1 };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = resolve(cli.command, cli.seed).and_then(|(inv, out)| execute(&inv, out));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
