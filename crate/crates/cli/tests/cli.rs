use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use lame_core::numerics::softmax;
use lame_core::streams::{load_embeddings, save_embeddings, Dataset};
use tempfile::TempDir;

fn lame(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lame")).current_dir(cwd).args(args).output().unwrap()
}

fn ok(cwd: &Path, args: &[&str]) {
    let out = lame(cwd, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

const SCENARIO: &str = "source = synthetic\nper_class = 20\nsampling = non_iid\nzipf_s = 1\n";

fn simulated(dir: &Path) {
    fs::write(dir.join("scen.cfg"), SCENARIO).unwrap();
    ok(dir, &["simulate", "--config", "scen.cfg", "--out", "sim"]);
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path).unwrap()
}

#[test]
fn zero_affinity_returns_softmax_of_logits() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulated(d);
    ok(d, &["correct", "--input", "sim/stream.lame", "--k", "0", "--out", "cor"]);
    let data = load_embeddings(&d.join("sim/stream.lame"), None).unwrap();
    let text = read(d.join("cor/predictions.csv"));
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), data.len());
    for (i, line) in rows.iter().enumerate() {
        let probs: Vec<f64> = line.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
        let expected = softmax(data.logits.row(i)).unwrap();
        for (a, b) in probs.iter().zip(expected.as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulated(d);
    for out in ["a", "b"] {
        ok(d, &["correct", "--input", "sim/stream.lame", "--kernel", "rbf", "--k", "3", "--out", out]);
    }
    for f in ["predictions.csv", "diagnostics.json", "manifest.json"] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
}

#[test]
fn class_count_mismatch_without_mapping_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulated(d);
    let out = lame(d, &["correct", "--input", "sim/stream.lame", "--classes", "3", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mapping"));
}

#[test]
fn mapping_pools_to_target_classes() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulated(d);
    let data = load_embeddings(&d.join("sim/stream.lame"), None).unwrap();
    let unlabeled = Dataset { labels: None, ..data };
    save_embeddings(&d.join("sim/stream.lame"), &unlabeled).unwrap();
    let map: String = (0..8).map(|k| format!("{k}\t{}\n", if k < 4 { "low" } else { "high" })).collect();
    fs::write(d.join("map.txt"), map).unwrap();
    ok(d, &["correct", "--input", "sim/stream.lame", "--mapping", "map.txt", "--classes", "2", "--out", "cor"]);
    let text = read(d.join("cor/predictions.csv"));
    assert!(text.starts_with("index,batch,prediction,p_low,p_high\n"));
}

#[test]
fn exit_codes_separate_io_from_validation() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    assert_eq!(lame(d, &["correct", "--input", "missing.lame", "--out", "x"]).status.code(), Some(2));
    fs::write(d.join("bad.cfg"), "source = synthetic\nbogus = 1\n").unwrap();
    assert_eq!(lame(d, &["simulate", "--config", "bad.cfg", "--out", "x"]).status.code(), Some(1));
    assert_eq!(lame(d, &["simulate", "--config", "nope.cfg", "--out", "x"]).status.code(), Some(2));
    assert_eq!(lame(d, &["nonsense"]).status.code(), Some(1));
    fs::write(d.join("junk.lame"), b"not an embedding file").unwrap();
    assert_eq!(lame(d, &["correct", "--input", "junk.lame", "--out", "x"]).status.code(), Some(1));
}

fn series_counts(csv: &str) -> Vec<(String, String, usize)> {
    let mut counts: Vec<(String, String, usize)> = Vec::new();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let key = (f[1].to_string(), f[2].to_string());
        match counts.iter_mut().find(|(s, l, _)| (s, l) == (&key.0, &key.1)) {
            Some(c) => c.2 += 1,
            None => counts.push((key.0, key.1, 1)),
        }
    }
    counts
}

#[test]
fn toy2d_curves_and_lr_override() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["toy2d", "--samples", "400", "--out", "toy"]);
    let counts = series_counts(&read(d.join("toy/collapse.csv")));
    let adapted: Vec<&str> = counts.iter().filter(|c| c.0 == "adapted").map(|c| c.1.as_str()).collect();
    assert_eq!(adapted, ["0.001", "0.01", "0.1"]);
    assert!(counts.iter().all(|c| c.2 == 20));
    let header = read(d.join("toy/collapse.csv")).lines().next().unwrap().to_string();
    assert!(header.ends_with("entropy,accuracy"));

    ok(d, &["toy2d", "--samples", "400", "--lrs", "0.5", "--seed", "3", "--out", "toy2"]);
    let counts = series_counts(&read(d.join("toy2/collapse.csv")));
    assert_eq!(counts.len(), 2);
    ok(d, &["toy2d", "--samples", "400", "--lrs", "0.5", "--seed", "3", "--out", "toy3"]);
    assert_eq!(read(d.join("toy2/collapse.csv")), read(d.join("toy3/collapse.csv")));
}

#[test]
fn grid_matrix_report_pipeline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.cfg"), format!("{SCENARIO}seeds = 0..2\n")).unwrap();

    ok(d, &["grid", "--config", "exp.cfg", "--set", "scenarios=B", "--seed", "4", "--method", "lame", "--points", "2", "--out", "one"]);
    assert_eq!(read(d.join("one/grid.csv")).lines().count(), 2);

    ok(d, &["grid", "--config", "exp.cfg", "--method", "lame", "--out", "grid"]);
    assert!(d.join("grid/timings.csv").exists());
    let results = read(d.join("grid/results.csv"));
    assert!(!results.contains("second_forward"));

    ok(d, &["matrix", "--grid-results", "grid/results.csv", "--out", "mat"]);
    let matrix = read(d.join("mat/matrix.csv"));
    let lines: Vec<&str> = matrix.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0], "tuned_on,A,B,C,D");
    assert!(lines.iter().all(|l| l.split(',').count() == 5));

    ok(d, &["report", "--results", "grid/results.csv", "--out", "rep"]);
    let summary = read(d.join("rep/summary.csv"));
    let runs: usize = summary.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(runs, results.lines().count() - 1);
}

#[test]
fn sweep_single_sample_batches_match_baseline() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.cfg"), format!("{SCENARIO}scenarios = B\nseeds = 0\n")).unwrap();
    ok(d, &["--workers", "2", "sweep", "--config", "exp.cfg", "--sizes", "1,16", "--out", "sw"]);
    let text = read(d.join("sw/sweep.csv"));
    let first: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert_eq!(first[1], first[2]);
    assert_eq!(first[3], "0");
}

#[test]
fn manifest_replays_to_identical_outputs() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    fs::write(d.join("exp.cfg"), format!("{SCENARIO}scenarios = A,D\nseeds = 0..2\n")).unwrap();
    ok(d, &["grid", "--config", "exp.cfg", "--method", "entropy_min", "--points", "0,5", "--out", "run"]);
    ok(d, &["replay", "--manifest", "run/manifest.json", "--out", "again"]);
    for f in ["results.csv", "grid.csv", "best.json", "manifest.json"] {
        assert_eq!(read(d.join("run").join(f)), read(d.join("again").join(f)), "{f}");
    }
}

#[test]
fn config_paths_resolve_against_the_config_directory() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    simulated(d);
    let sub = d.join("configs");
    fs::create_dir(&sub).unwrap();
    fs::copy(d.join("sim/stream.lame"), sub.join("data.lame")).unwrap();
    fs::write(sub.join("scen.cfg"), "source = data.lame\nsampling = iid\nbatch_size = 16\n").unwrap();
    ok(d, &["simulate", "--config", "configs/scen.cfg", "--out", "resim"]);
    let manifest = read(d.join("resim/manifest.json"));
    assert!(manifest.contains(&sub.join("data.lame").display().to_string()));
}
