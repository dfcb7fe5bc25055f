use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::pipeline::{Aggregate, RunReport, SeedRun, SweepRow};
use crate::classify::MetricsReport;
use crate::ingest::{save_labels, save_split};
use crate::{Error, Result};

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

/// `metric,value,stddev` rows for one seed; `stddev` is left empty.
pub fn metrics_csv(m: &MetricsReport) -> String {
    let mut s = String::from("metric,value,stddev\n");
    for (name, v) in [("oa", m.oa), ("aa", m.aa), ("kappa", m.kappa)] {
        let _ = writeln!(s, "{name},{v:.6},");
    }
    for (k, acc) in m.per_class.iter().enumerate() {
        let _ = writeln!(s, "class_{},{},", k + 1, fmt_opt(*acc));
    }
    s
}

/// Mean and spread across seeds in the same layout.
pub fn aggregate_metrics_csv(report: &RunReport) -> String {
    let mut s = String::from("metric,value,stddev\n");
    let row = |s: &mut String, name: &str, a: Aggregate| {
        let _ = writeln!(s, "{name},{:.6},{:.6}", a.mean, a.stddev);
    };
    row(&mut s, "oa", report.oa());
    row(&mut s, "aa", report.aa());
    row(&mut s, "kappa", report.kappa());
    for (k, a) in report.per_class().into_iter().enumerate() {
        row(&mut s, &format!("class_{}", k + 1), a);
    }
    s
}

/// One row per seed: status, metrics and checkpoint hashes.
pub fn summary_csv(report: &RunReport) -> String {
    let mut s = String::from("seed,status,oa,aa,kappa,annc_sha256,disc_sha256,error\n");
    for (seed, r) in &report.seeds {
        match r {
            Ok(run) => {
                let _ = writeln!(
                    s,
                    "{seed},ok,{:.6},{:.6},{:.6},{},{},",
                    run.metrics.oa, run.metrics.aa, run.metrics.kappa, run.annc_hash, run.disc_hash
                );
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(s, "{seed},failed:{},,,,,,{msg}", e.stage);
            }
        }
    }
    s
}

pub fn timings_csv(run: &SeedRun) -> String {
    let mut s = String::from("stage,seconds\n");
    for (stage, d) in &run.timings {
        let _ = writeln!(s, "{stage},{:.6}", d.as_secs_f64());
    }
    s
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("seed,side,threshold,oa,aa,kappa,annc_sha256,disc_sha256\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.seed, r.side, r.threshold, r.metrics.oa, r.metrics.aa, r.metrics.kappa, r.annc_hash, r.disc_hash
        );
    }
    s
}

/// Writes the artifacts of one seed into `dir`.
pub fn emit_seed(run: &SeedRun, labels: &crate::ingest::LabelMap, dir: &Path) -> Result<()> {
    mkdir(dir)?;
    save_split(&run.split, labels, &dir.join("split.csv"))?;
    run.annc.to_checkpoint().save(&dir.join("annc.ckpt"))?;
    run.disc.to_checkpoint().save(&dir.join("disc.ckpt"))?;
    run.field.save(&dir.join("features.fsf"))?;
    run.fused.save(&dir.join("fused.fsf"))?;
    save_labels(&run.predicted, &dir.join("predicted.hsl"))?;
    write(&dir.join("metrics.csv"), metrics_csv(&run.metrics))?;
    write(&dir.join("confusion.csv"), run.confusion.to_csv())?;
    write(&dir.join("timings.csv"), timings_csv(run))
}

/// Writes the whole run under `out`: the echoed config, a summary, the
/// aggregated metrics and a `seed-<n>` directory per successful seed.
pub fn emit_report(report: &RunReport, labels: &crate::ingest::LabelMap, out: &Path) -> Result<()> {
    mkdir(out)?;
    write(&out.join("config.toml"), report.config.to_toml())?;
    for run in report.successes() {
        emit_seed(run, labels, &out.join(format!("seed-{}", run.seed)))?;
    }
    write(&out.join("summary.csv"), summary_csv(report))?;
    write(&out.join("metrics.csv"), aggregate_metrics_csv(report))
}
