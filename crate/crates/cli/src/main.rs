use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csff_core::annc::{extract_field, AnncModel};
use csff_core::discriminant::DiscModel;
use csff_core::experiment::{
    self, default_sides, default_threshold_schedule, emit_report, run_pipeline, stage_classify, stage_evaluate,
    stage_split, stage_train_annc, stage_train_disc, sweep_csv, Dataset, ExperimentConfig, ModelCache,
};
use csff_core::field::FeatureField;
use csff_core::fusion::fuse_image;
use csff_core::ingest::{gen_synthetic, load_labels, load_split, save_cube, save_labels, save_split};
use csff_core::numerics::Checkpoint;
use csff_core::Error;

#[derive(Parser)]
#[command(
    name = "csff",
    version,
    about = "Spectral-spatial feature fusion for hyperspectral classification"
)]
struct Cli {
    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for single-seed commands; `run` uses every configured seed when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to `run.out` or `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Affects wall-clock time only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic scene as `cube.hsc` and `labels.hsl`.
    GenSynthetic,
    /// Draw the train/test split.
    Split,
    /// Train the spectral network on the split.
    TrainAnnc,
    /// Train the pair discriminant on the split.
    TrainDisc,
    /// Extract the spectral feature field.
    Extract,
    /// Fuse the features of every test pixel.
    Fuse,
    /// Label every test pixel.
    Classify,
    /// Score the predicted labels.
    Evaluate,
    /// Accuracy over window sides with fixed models.
    SweepNeighborhood,
    /// Accuracy over thresholds with fixed models.
    SweepThreshold,
    /// Full pipeline for each seed plus the aggregated report.
    Run,
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
    seed: Option<u64>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.cfg.run.seeds[0])
    }

    fn seed_dir(&self) -> PathBuf {
        self.out.join(format!("seed-{}", self.seed()))
    }

    fn cache(&self) -> ModelCache {
        ModelCache::at(experiment::cache_dir(&self.out))
    }
}

fn mkdir(dir: &Path) -> csff_core::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write(path: &Path, text: &str) -> csff_core::Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn need(path: PathBuf, producer: &str) -> csff_core::Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::Argument(format!(
            "{} is missing; run `csff {producer}` first",
            path.display()
        )))
    }
}

fn execute(cli: Cli) -> csff_core::Result<()> {
    let config = cli.config.ok_or_else(|| Error::Config("--config is required".into()))?;
    let cfg = ExperimentConfig::load(&config)?;
    let out = cli
        .out
        .or_else(|| cfg.run.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx {
        cfg,
        out,
        seed: cli.seed,
    };
    let cfg = &ctx.cfg;

    if let Command::GenSynthetic = cli.command {
        let scene = cfg
            .synthetic
            .as_ref()
            .ok_or_else(|| Error::Config("gen-synthetic needs a [synthetic] section".into()))?;
        let (cube, labels) = gen_synthetic(scene)?;
        mkdir(&ctx.out)?;
        save_cube(&cube, &ctx.out.join("cube.hsc"))?;
        save_labels(&labels, &ctx.out.join("labels.hsl"))?;
        return Ok(());
    }

    let ds = Dataset::load(cfg)?;
    let dir = ctx.seed_dir();
    let seed = ctx.seed();
    let split_path = dir.join("split.csv");
    let split = || load_split(&need(split_path.clone(), "split")?);
    let annc = || AnncModel::from_checkpoint(&Checkpoint::load(&need(dir.join("annc.ckpt"), "train-annc")?)?);
    let features = || FeatureField::load(&need(dir.join("features.fsf"), "extract")?);

    match cli.command {
        Command::GenSynthetic => unreachable!(),
        Command::Split => {
            mkdir(&dir)?;
            save_split(&stage_split(&ds, cfg, seed)?, &ds.labels, &split_path)?;
        }
        Command::TrainAnnc => {
            let model = stage_train_annc(&ds, &split()?, cfg, seed, &ctx.cache())?;
            model.to_checkpoint().save(&dir.join("annc.ckpt"))?;
        }
        Command::TrainDisc => {
            let model = stage_train_disc(&ds, &split()?, cfg, seed, &ctx.cache())?;
            model.to_checkpoint().save(&dir.join("disc.ckpt"))?;
        }
        Command::Extract => {
            extract_field(&annc()?, &ds.cube)?.save(&dir.join("features.fsf"))?;
        }
        Command::Fuse => {
            let disc = DiscModel::from_checkpoint(&Checkpoint::load(&need(dir.join("disc.ckpt"), "train-disc")?)?)?;
            fuse_image(&features()?, &disc, &ds.cube, &split()?, &cfg.fusion)?.save(&dir.join("fused.fsf"))?;
        }
        Command::Classify => {
            let fused = FeatureField::load(&need(dir.join("fused.fsf"), "fuse")?)?;
            let predicted = stage_classify(&features()?, &fused, &split()?, cfg)?;
            save_labels(&predicted, &dir.join("predicted.hsl"))?;
        }
        Command::Evaluate => {
            let predicted = load_labels(&need(dir.join("predicted.hsl"), "classify")?)?;
            let (cm, metrics) = stage_evaluate(&predicted, &ds.labels, &split()?)?;
            write(&dir.join("metrics.csv"), &experiment::metrics_csv(&metrics))?;
            write(&dir.join("confusion.csv"), &cm.to_csv())?;
            println!("oa={:.4} aa={:.4} kappa={:.4}", metrics.oa, metrics.aa, metrics.kappa);
        }
        Command::SweepNeighborhood => {
            let sides = if cfg.sweep.sides.is_empty() {
                default_sides(cfg.fusion.side)
            } else {
                cfg.sweep.sides.clone()
            };
            let rows = experiment::sweep_neighborhood(&ds, cfg, seed, &sides, &ctx.cache())?;
            mkdir(&ctx.out)?;
            write(
                &ctx.out.join(format!("sweep-neighborhood-seed-{seed}.csv")),
                &sweep_csv(&rows),
            )?;
        }
        Command::SweepThreshold => {
            let thresholds = if cfg.sweep.thresholds.is_empty() {
                default_threshold_schedule()
            } else {
                cfg.sweep.thresholds.clone()
            };
            let rows = experiment::sweep_threshold(&ds, cfg, seed, &thresholds, &ctx.cache())?;
            mkdir(&ctx.out)?;
            write(
                &ctx.out.join(format!("sweep-threshold-seed-{seed}.csv")),
                &sweep_csv(&rows),
            )?;
        }
        Command::Run => {
            let seeds = ctx.seed.map_or_else(|| cfg.run.seeds.clone(), |s| vec![s]);
            let report = run_pipeline(cfg, &seeds, &ctx.cache())?;
            emit_report(&report, &ds.labels, &ctx.out)?;
            for (seed, e) in report.failures() {
                eprintln!("seed {seed}: {e}");
            }
            let oa = report.oa();
            println!(
                "oa={:.4}±{:.4} over {} seed(s)",
                oa.mean,
                oa.stddev,
                report.successes().count()
            );
            // artifacts of the good seeds are already on disk
            if let Some((_, Err(e))) = report.seeds.into_iter().find(|(_, r)| r.is_err()) {
                return Err(e.error);
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        e if e.is_numeric() => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
