use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
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
steps = 40
virtual_per_class = 40

[disc]
architecture = "compact"
batch = 16
epochs = 1

[fusion]
side = 5

[sweep]
sides = [1, 3, 5]
thresholds = [0.0, 0.5, 1.0]

[run]
seeds = [3]
"#;

fn csff(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csff"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn setup() -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    std::fs::write(&config, CONFIG).unwrap();
    (dir, config)
}

#[test]
fn staged_commands_match_a_full_run() {
    let (dir, config) = setup();
    let staged = dir.path().join("staged");
    for cmd in [
        "split",
        "train-annc",
        "train-disc",
        "extract",
        "fuse",
        "classify",
        "evaluate",
    ] {
        let o = csff(&[cmd], &config, &staged);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let full = dir.path().join("full");
    assert!(csff(&["run"], &config, &full).status.success());
    for f in [
        "split.csv",
        "annc.ckpt",
        "disc.ckpt",
        "features.fsf",
        "fused.fsf",
        "predicted.hsl",
        "metrics.csv",
    ] {
        let a = std::fs::read(staged.join("seed-3").join(f)).unwrap();
        let b = std::fs::read(full.join("seed-3").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}

#[test]
fn sweeps_write_tables() {
    let (dir, config) = setup();
    let out = dir.path().join("out");
    assert!(csff(&["sweep-neighborhood"], &config, &out).status.success());
    assert!(csff(&["sweep-threshold"], &config, &out).status.success());
    let n = std::fs::read_to_string(out.join("sweep-neighborhood-seed-3.csv")).unwrap();
    let t = std::fs::read_to_string(out.join("sweep-threshold-seed-3.csv")).unwrap();
    assert_eq!(n.lines().count(), 4);
    assert_eq!(t.lines().count(), 4);
    // spectral-only rows agree: side 1 and threshold 1
    let oa = |line: &str| line.split(',').nth(3).unwrap().to_string();
    assert_eq!(oa(n.lines().nth(1).unwrap()), oa(t.lines().nth(3).unwrap()));
}

#[test]
fn gen_synthetic_writes_loadable_scene() {
    let (dir, config) = setup();
    let out = dir.path().join("scene");
    assert!(csff(&["gen-synthetic"], &config, &out).status.success());
    let cube = csff_core::ingest::load_cube(&out.join("cube.hsc")).unwrap();
    let labels = csff_core::ingest::load_labels(&out.join("labels.hsl")).unwrap();
    assert_eq!((cube.height(), cube.width(), cube.bands()), (16, 16, 32));
    assert!(labels.matches(&cube));
}

#[test]
fn exit_codes_classify_failures() {
    let (dir, config) = setup();
    let out = dir.path().join("out");

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[nonsense]\nx = 1\n").unwrap();
    assert_eq!(csff(&["run"], &bad, &out).status.code(), Some(2));

    let missing = dir.path().join("missing.toml");
    std::fs::write(&missing, "[dataset]\ncube = \"a.hsc\"\nlabels = \"a.hsl\"\n").unwrap();
    assert_eq!(csff(&["run"], &missing, &out).status.code(), Some(2));

    // stage inputs absent
    assert_eq!(csff(&["fuse"], &config, &out).status.code(), Some(3));

    let greedy = dir.path().join("greedy.toml");
    std::fs::write(&greedy, CONFIG.replace("per_class = 4", "per_class = 500")).unwrap();
    assert_eq!(csff(&["run"], &greedy, &out).status.code(), Some(3));

    let diverge = dir.path().join("diverge.toml");
    std::fs::write(&diverge, CONFIG.replace("steps = 40", "steps = 40\nlr = 1e12")).unwrap();
    assert_eq!(csff(&["run"], &diverge, &out).status.code(), Some(4));
}
