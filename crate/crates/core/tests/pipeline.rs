use std::collections::HashSet;

use csff_core::experiment::{
    default_sides, default_threshold_schedule, emit_report, run_pipeline, sweep_neighborhood, sweep_threshold, Dataset,
    ExperimentConfig, ModelCache, STAGES,
};
use csff_core::ingest::load_labels;
use csff_core::Error;

const TINY: &str = r#"
[synthetic]
height = 16
width = 16
bands = 32
classes = 3
regions = 4
noise_std = 0.3
smoothness = 2.0
seed = 2

[split]
per_class = 4

[annc]
widths = [16, 8, 4]
batch = 32
steps = 60
virtual_per_class = 40

[disc]
architecture = "compact"
batch = 16
epochs = 2

[fusion]
side = 5
threshold = 0.01

[run]
seeds = [1, 2]
"#;

fn tiny() -> ExperimentConfig {
    ExperimentConfig::parse(TINY).unwrap()
}

#[test]
fn run_emits_every_artifact() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&cfg, &cfg.run.seeds, &ModelCache::disabled()).unwrap();
    assert_eq!(report.successes().count(), 2);
    let ds = Dataset::load(&cfg).unwrap();
    emit_report(&report, &ds.labels, dir.path()).unwrap();

    let echo = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    assert_eq!(ExperimentConfig::parse(&echo).unwrap(), cfg);
    for seed in [1, 2] {
        let sd = dir.path().join(format!("seed-{seed}"));
        for f in [
            "split.csv",
            "annc.ckpt",
            "disc.ckpt",
            "features.fsf",
            "fused.fsf",
            "predicted.hsl",
            "metrics.csv",
            "confusion.csv",
            "timings.csv",
        ] {
            assert!(sd.join(f).is_file(), "missing {f}");
        }
        let predicted = load_labels(&sd.join("predicted.hsl")).unwrap();
        let run = report.successes().find(|r| r.seed == seed).unwrap();
        assert_eq!(predicted, run.predicted);
        let timings = std::fs::read_to_string(sd.join("timings.csv")).unwrap();
        let stages: Vec<&str> = timings.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(stages, STAGES);
    }
    let agg = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(agg.starts_with("metric,value,stddev\noa,"));
}

#[test]
fn reruns_are_identical() {
    let cfg = tiny();
    let a = run_pipeline(&cfg, &[1], &ModelCache::disabled()).unwrap();
    let b = run_pipeline(&cfg, &[1], &ModelCache::disabled()).unwrap();
    let (a, b) = (a.successes().next().unwrap(), b.successes().next().unwrap());
    assert_eq!(a.annc_hash, b.annc_hash);
    assert_eq!(a.disc_hash, b.disc_hash);
    assert_eq!(a.fused.to_bytes(), b.fused.to_bytes());
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn cached_models_are_reused() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let cache = ModelCache::at(dir.path());
    let a = run_pipeline(&cfg, &[1], &cache).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
    let b = run_pipeline(&cfg, &[1], &cache).unwrap();
    let (a, b) = (a.successes().next().unwrap(), b.successes().next().unwrap());
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.annc_hash, b.annc_hash);
}

#[test]
fn missing_cube_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.toml");
    std::fs::write(&path, "[dataset]\ncube = \"nope.hsc\"\nlabels = \"nope.hsl\"\n").unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
}

#[test]
fn failing_seed_does_not_stop_others() {
    let mut cfg = tiny();
    // too many training pixels for any class: every seed fails at the split
    cfg.split.per_class = 1000;
    let report = run_pipeline(&cfg, &[1, 2], &ModelCache::disabled()).unwrap();
    let failures: Vec<_> = report.failures().collect();
    assert_eq!(failures.len(), 2);
    assert!(failures.iter().all(|(_, e)| e.stage == "split"));
}

#[test]
fn neighborhood_sweep_reuses_models() {
    let cfg = tiny();
    let ds = Dataset::load(&cfg).unwrap();
    let sides = default_sides(19);
    assert_eq!(sides, vec![1, 3, 5, 7, 9, 11, 13, 15, 17, 19]);
    let rows = sweep_neighborhood(&ds, &cfg, 1, &sides, &ModelCache::disabled()).unwrap();
    assert_eq!(rows.len(), 10);
    let hashes: HashSet<_> = rows.iter().map(|r| (&r.annc_hash, &r.disc_hash)).collect();
    assert_eq!(hashes.len(), 1);

    let spectral = sweep_threshold(&ds, &cfg, 1, &[1.0], &ModelCache::disabled()).unwrap();
    assert_eq!(rows[0].metrics, spectral[0].metrics);
    assert!(matches!(
        sweep_neighborhood(&ds, &cfg, 1, &[3, 4], &ModelCache::disabled()),
        Err(Error::Argument(_))
    ));
}

#[test]
fn threshold_sweep_covers_schedule() {
    let cfg = tiny();
    let ds = Dataset::load(&cfg).unwrap();
    let schedule = default_threshold_schedule();
    assert_eq!(schedule.len(), 23);
    assert_eq!((schedule[0], schedule[22]), (0.0, 1.0));
    assert_eq!(schedule[10], 0.5);
    assert!((schedule[1] - 1.0 / (1.0 + 6.3f64.exp())).abs() < 1e-15);
    assert!(schedule.windows(2).all(|w| w[0] < w[1]));
    let rows = sweep_threshold(&ds, &cfg, 1, &schedule, &ModelCache::disabled()).unwrap();
    assert_eq!(rows.len(), 23);
    let hashes: HashSet<_> = rows.iter().map(|r| (&r.annc_hash, &r.disc_hash)).collect();
    assert_eq!(hashes.len(), 1);
    assert!(matches!(
        sweep_threshold(&ds, &cfg, 1, &[1.5], &ModelCache::disabled()),
        Err(Error::Argument(_))
    ));
}
