use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use sha2::{Digest, Sha256};

use super::ExperimentConfig;
use crate::annc::{extract_field, train_annc, AnncModel};
use crate::classify::{compute_metrics, confusion_matrix, Classifier, ConfusionMatrix, MetricsReport};
use crate::discriminant::{train_disc, DiscModel};
use crate::field::FeatureField;
use crate::fusion::{fuse_with_matrices, spatial_matrices, FusionConfig, MatrixSet};
use crate::ingest::{
    augment_split, gen_synthetic, load_cube, load_labels, pair_sets, stratified_split, zscore_normalize, DataSplit,
    LabelMap, SpectralCube,
};
use crate::numerics::Checkpoint;
use crate::{Error, Result};

/// Stage names in execution order; every seed reports each exactly once.
pub const STAGES: [&str; 10] = [
    "load",
    "normalize",
    "split",
    "augment",
    "train-annc",
    "train-disc",
    "extract",
    "fuse",
    "classify",
    "metrics",
];

/// Raw scene, its normalized form and a digest identifying both.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub raw: SpectralCube,
    pub labels: LabelMap,
    pub cube: SpectralCube,
    pub digest: String,
}

impl Dataset {
    pub fn from_parts(raw: SpectralCube, labels: LabelMap) -> Result<Self> {
        if !labels.matches(&raw) {
            return Err(Error::Shape(format!(
                "label map {}x{} does not match cube {}x{}",
                labels.height(),
                labels.width(),
                raw.height(),
                raw.width()
            )));
        }
        let cube = zscore_normalize(&raw);
        let mut h = Sha256::new();
        h.update(
            [cube.height() as u64, cube.width() as u64, cube.bands() as u64]
                .map(u64::to_le_bytes)
                .concat(),
        );
        for v in cube.data() {
            h.update(v.to_le_bytes());
        }
        for l in labels.labels() {
            h.update(l.to_le_bytes());
        }
        Ok(Dataset {
            raw,
            labels,
            cube,
            digest: hex::encode(h.finalize()),
        })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let (raw, labels) = match (&cfg.dataset, &cfg.synthetic) {
            (Some(ds), _) => (load_cube(&ds.cube)?, load_labels(&ds.labels)?),
            (None, Some(s)) => gen_synthetic(s)?,
            (None, None) => return Err(Error::Config("no dataset configured".into())),
        };
        Self::from_parts(raw, labels)
    }

    pub fn classes(&self) -> usize {
        self.labels.num_classes()
    }
}

/// Hex SHA-256 of a checkpoint's bytes.
pub fn checkpoint_hash(ck: &Checkpoint) -> String {
    hex::encode(Sha256::digest(ck.to_bytes()))
}

/// Content-addressed store of trained checkpoints.
#[derive(Debug, Clone)]
pub struct ModelCache {
    dir: Option<PathBuf>,
}

impl ModelCache {
    pub fn disabled() -> Self {
        ModelCache { dir: None }
    }

    pub fn at(dir: impl Into<PathBuf>) -> Self {
        ModelCache { dir: Some(dir.into()) }
    }

    fn key(parts: &[&str]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        hex::encode(h.finalize())
    }

    fn get_or_train<F>(&self, key: &str, train: F) -> Result<Checkpoint>
    where
        F: FnOnce() -> Result<Checkpoint>,
    {
        let Some(dir) = &self.dir else { return train() };
        let path = dir.join(format!("{key}.ckpt"));
        if path.is_file() {
            if let Ok(ck) = Checkpoint::load(&path) {
                return Ok(ck);
            }
        }
        let ck = train()?;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        ck.save(&path)?;
        Ok(ck)
    }
}

pub fn stage_split(ds: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<DataSplit> {
    stratified_split(&ds.labels, cfg.split.per_class, seed)
}

fn split_fingerprint(split: &DataSplit) -> String {
    let mut h = Sha256::new();
    for (class, c) in split.train_coords() {
        h.update(format!("{class},{},{};", c.row, c.col));
    }
    hex::encode(h.finalize())
}

pub fn stage_train_annc(
    ds: &Dataset,
    split: &DataSplit,
    cfg: &ExperimentConfig,
    seed: u64,
    cache: &ModelCache,
) -> Result<AnncModel> {
    let annc_cfg = toml::to_string(&cfg.annc).expect("serializes");
    let key = ModelCache::key(&[
        "annc",
        &ds.digest,
        &split_fingerprint(split),
        &seed.to_string(),
        &annc_cfg,
    ]);
    let ck = cache.get_or_train(&key, || {
        let (spectra, labels) = augment_split(&ds.cube, split, cfg.annc.virtual_per_class, seed)?;
        Ok(train_annc(&spectra, &labels, ds.classes(), &cfg.annc, seed)?.to_checkpoint())
    })?;
    AnncModel::from_checkpoint(&ck)
}

pub fn stage_train_disc(
    ds: &Dataset,
    split: &DataSplit,
    cfg: &ExperimentConfig,
    seed: u64,
    cache: &ModelCache,
) -> Result<DiscModel> {
    let disc_cfg = toml::to_string(&cfg.disc).expect("serializes");
    let key = ModelCache::key(&[
        "disc",
        &ds.digest,
        &split_fingerprint(split),
        &seed.to_string(),
        &disc_cfg,
    ]);
    let ck = cache.get_or_train(&key, || {
        let pairs = pair_sets(split, seed)?;
        Ok(train_disc(&pairs, &ds.cube, &cfg.disc, seed)?.to_checkpoint())
    })?;
    DiscModel::from_checkpoint(&ck)
}

/// Training features grouped by class, taken from the plain ANNC field.
pub fn training_features(field: &FeatureField, split: &DataSplit) -> Result<Vec<Vec<Vec<f64>>>> {
    split
        .train
        .iter()
        .map(|coords| {
            coords
                .iter()
                .map(|&c| {
                    field
                        .get(c)
                        .map(<[f64]>::to_vec)
                        .ok_or_else(|| Error::State(format!("no feature at training pixel ({}, {})", c.row, c.col)))
                })
                .collect()
        })
        .collect()
}

/// Labels every test pixel from its fused feature; other pixels get 0.
pub fn stage_classify(
    field: &FeatureField,
    fused: &FeatureField,
    split: &DataSplit,
    cfg: &ExperimentConfig,
) -> Result<LabelMap> {
    let classifier = Classifier::fit(cfg.classifier_kind()?, &training_features(field, split)?)?;
    classify_with(&classifier, fused, split)
}

fn classify_with(classifier: &Classifier, fused: &FeatureField, split: &DataSplit) -> Result<LabelMap> {
    use rayon::prelude::*;
    let predicted: Vec<u16> = split
        .test
        .par_iter()
        .map(|&c| {
            let f = fused
                .get(c)
                .ok_or_else(|| Error::State(format!("no fused feature at test pixel ({}, {})", c.row, c.col)))?;
            classifier.predict(f)
        })
        .collect::<Result<_>>()?;
    let mut map = LabelMap::new(fused.height(), fused.width(), vec![0; fused.height() * fused.width()])?;
    for (&c, &p) in split.test.iter().zip(&predicted) {
        map.set(c, p);
    }
    Ok(map)
}

pub fn stage_evaluate(
    predicted: &LabelMap,
    truth: &LabelMap,
    split: &DataSplit,
) -> Result<(ConfusionMatrix, MetricsReport)> {
    let preds: Vec<u16> = split.test.iter().map(|&c| predicted.get(c)).collect();
    let gt: Vec<u16> = split.test.iter().map(|&c| truth.get(c)).collect();
    let cm = confusion_matrix(&preds, &gt, truth.num_classes())?;
    let metrics = compute_metrics(&cm)?;
    Ok((cm, metrics))
}

/// Everything one seed produced.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub split: DataSplit,
    pub annc: AnncModel,
    pub disc: DiscModel,
    pub annc_hash: String,
    pub disc_hash: String,
    pub field: FeatureField,
    pub fused: FeatureField,
    pub predicted: LabelMap,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub timings: Vec<(&'static str, Duration)>,
}

/// A failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "stage {}: {}", self.stage, self.error)
    }
}

struct Stopwatch {
    timings: Vec<(&'static str, Duration)>,
}

impl Stopwatch {
    fn time<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> std::result::Result<T, StageError> {
        let start = Instant::now();
        let out = f().map_err(|error| StageError { stage, error })?;
        self.timings.push((stage, start.elapsed()));
        Ok(out)
    }
}

/// Runs every stage for one seed. `load_time` and `normalize_time` are the
/// shared dataset costs, reported with each seed.
pub fn run_seed(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    cache: &ModelCache,
    load_time: Duration,
    normalize_time: Duration,
) -> std::result::Result<SeedRun, StageError> {
    let mut sw = Stopwatch {
        timings: vec![("load", load_time), ("normalize", normalize_time)],
    };
    let split = sw.time("split", || stage_split(ds, cfg, seed))?;
    // augmentation runs inside the ANNC stage so cached models skip it
    sw.time("augment", || {
        for (k, coords) in split.train.iter().enumerate() {
            if coords.len() < 2 && cfg.annc.virtual_per_class > coords.len() {
                return Err(Error::InsufficientData {
                    class: k + 1,
                    detail: "virtual samples need two training pixels".into(),
                });
            }
        }
        Ok(())
    })?;
    let annc = sw.time("train-annc", || stage_train_annc(ds, &split, cfg, seed, cache))?;
    let disc = sw.time("train-disc", || stage_train_disc(ds, &split, cfg, seed, cache))?;
    let field = sw.time("extract", || extract_field(&annc, &ds.cube))?;
    let fused = sw.time("fuse", || {
        let m = spatial_matrices(&disc, &ds.cube, &split, cfg.fusion.side)?;
        fuse_with_matrices(&field, &m, &split, &cfg.fusion)
    })?;
    let predicted = sw.time("classify", || stage_classify(&field, &fused, &split, cfg))?;
    let (confusion, metrics) = sw.time("metrics", || stage_evaluate(&predicted, &ds.labels, &split))?;
    Ok(SeedRun {
        seed,
        annc_hash: checkpoint_hash(&annc.to_checkpoint()),
        disc_hash: checkpoint_hash(&disc.to_checkpoint()),
        split,
        annc,
        disc,
        field,
        fused,
        predicted,
        confusion,
        metrics,
        timings: sw.timings,
    })
}

/// Mean and spread of one metric over the successful seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub stddev: f64,
}

pub fn aggregate(values: &[f64]) -> Aggregate {
    let n = values.len() as f64;
    if values.is_empty() {
        return Aggregate {
            mean: f64::NAN,
            stddev: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n;
    let stddev = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Aggregate { mean, stddev }
}

pub struct RunReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<(u64, std::result::Result<SeedRun, StageError>)>,
}

impl RunReport {
    pub fn successes(&self) -> impl Iterator<Item = &SeedRun> {
        self.seeds.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn failures(&self) -> impl Iterator<Item = (u64, &StageError)> {
        self.seeds.iter().filter_map(|(s, r)| r.as_ref().err().map(|e| (*s, e)))
    }

    pub fn oa(&self) -> Aggregate {
        aggregate(&self.successes().map(|r| r.metrics.oa).collect::<Vec<_>>())
    }

    pub fn aa(&self) -> Aggregate {
        aggregate(&self.successes().map(|r| r.metrics.aa).collect::<Vec<_>>())
    }

    pub fn kappa(&self) -> Aggregate {
        aggregate(&self.successes().map(|r| r.metrics.kappa).collect::<Vec<_>>())
    }

    /// Per-class accuracy aggregates over seeds where the class was scored.
    pub fn per_class(&self) -> Vec<Aggregate> {
        let k = self.successes().map(|r| r.metrics.per_class.len()).max().unwrap_or(0);
        (0..k)
            .map(|c| {
                let v: Vec<f64> = self
                    .successes()
                    .filter_map(|r| r.metrics.per_class.get(c).copied().flatten())
                    .collect();
                aggregate(&v)
            })
            .collect()
    }
}

/// Runs all configured seeds sequentially; a failing seed does not stop the
/// others.
pub fn run_pipeline(cfg: &ExperimentConfig, seeds: &[u64], cache: &ModelCache) -> Result<RunReport> {
    cfg.validate()?;
    let t = Instant::now();
    let (raw, labels) = match (&cfg.dataset, &cfg.synthetic) {
        (Some(d), _) => (load_cube(&d.cube)?, load_labels(&d.labels)?),
        (None, Some(s)) => gen_synthetic(s)?,
        (None, None) => return Err(Error::Config("no dataset configured".into())),
    };
    let load_time = t.elapsed();
    let t = Instant::now();
    let ds = Dataset::from_parts(raw, labels)?;
    let normalize_time = t.elapsed();
    let seeds = seeds
        .iter()
        .map(|&s| (s, run_seed(&ds, cfg, s, cache, load_time, normalize_time)))
        .collect();
    Ok(RunReport {
        config: cfg.clone(),
        seeds,
    })
}

/// One row of a sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub seed: u64,
    pub side: usize,
    pub threshold: f64,
    pub metrics: MetricsReport,
    pub annc_hash: String,
    pub disc_hash: String,
}

/// Trained models and features for one seed, shared by every sweep row.
pub struct SeedModels {
    pub seed: u64,
    pub split: DataSplit,
    pub annc_hash: String,
    pub disc_hash: String,
    pub disc: DiscModel,
    pub field: FeatureField,
    pub classifier: Classifier,
}

pub fn prepare_models(ds: &Dataset, cfg: &ExperimentConfig, seed: u64, cache: &ModelCache) -> Result<SeedModels> {
    let split = stage_split(ds, cfg, seed)?;
    let annc = stage_train_annc(ds, &split, cfg, seed, cache)?;
    let disc = stage_train_disc(ds, &split, cfg, seed, cache)?;
    let field = extract_field(&annc, &ds.cube)?;
    let classifier = Classifier::fit(cfg.classifier_kind()?, &training_features(&field, &split)?)?;
    Ok(SeedModels {
        seed,
        annc_hash: checkpoint_hash(&annc.to_checkpoint()),
        disc_hash: checkpoint_hash(&disc.to_checkpoint()),
        split,
        disc,
        field,
        classifier,
    })
}

/// Metrics of one fusion setting given precomputed matrices.
pub fn score_fusion(
    ds: &Dataset,
    models: &SeedModels,
    matrices: &MatrixSet,
    fusion: &FusionConfig,
) -> Result<MetricsReport> {
    let fused = fuse_with_matrices(&models.field, matrices, &models.split, fusion)?;
    let predicted = classify_with(&models.classifier, &fused, &models.split)?;
    Ok(stage_evaluate(&predicted, &ds.labels, &models.split)?.1)
}

/// `t = 1 / (1 + exp(-0.7 x))` for integers `x` in `[-9, 11]`, framed by
/// the extremes 0 and 1.
pub fn default_threshold_schedule() -> Vec<f64> {
    let mut t = vec![0.0];
    t.extend((-9..=11).map(|x| 1.0 / (1.0 + (-0.7 * x as f64).exp())));
    t.push(1.0);
    t
}

pub fn default_sides(max_side: usize) -> Vec<usize> {
    (1..=max_side).step_by(2).collect()
}

/// OA/AA for each window side at the configured threshold. Models are
/// trained (or fetched) once and the matrices are computed once at the
/// largest side.
pub fn sweep_neighborhood(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    sides: &[usize],
    cache: &ModelCache,
) -> Result<Vec<SweepRow>> {
    if let Some(&s) = sides.iter().find(|&&s| s.is_multiple_of(2) || s == 0) {
        return Err(Error::Argument(format!("neighborhood side {s} is not odd")));
    }
    let max = sides
        .iter()
        .copied()
        .max()
        .ok_or_else(|| Error::Argument("no neighborhood sides given".into()))?;
    let models = prepare_models(ds, cfg, seed, cache)?;
    let matrices = spatial_matrices(&models.disc, &ds.cube, &models.split, max)?;
    sides
        .iter()
        .map(|&side| {
            let fusion = FusionConfig {
                side,
                threshold: cfg.fusion.threshold,
            };
            Ok(SweepRow {
                seed,
                side,
                threshold: fusion.threshold,
                metrics: score_fusion(ds, &models, &matrices, &fusion)?,
                annc_hash: models.annc_hash.clone(),
                disc_hash: models.disc_hash.clone(),
            })
        })
        .collect()
}

/// OA/AA for each threshold at the configured window side.
pub fn sweep_threshold(
    ds: &Dataset,
    cfg: &ExperimentConfig,
    seed: u64,
    thresholds: &[f64],
    cache: &ModelCache,
) -> Result<Vec<SweepRow>> {
    if let Some(t) = thresholds.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Argument(format!("threshold {t} outside [0, 1]")));
    }
    let models = prepare_models(ds, cfg, seed, cache)?;
    let matrices = spatial_matrices(&models.disc, &ds.cube, &models.split, cfg.fusion.side)?;
    thresholds
        .iter()
        .map(|&threshold| {
            let fusion = FusionConfig {
                side: cfg.fusion.side,
                threshold,
            };
            Ok(SweepRow {
                seed,
                side: fusion.side,
                threshold,
                metrics: score_fusion(ds, &models, &matrices, &fusion)?,
                annc_hash: models.annc_hash.clone(),
                disc_hash: models.disc_hash.clone(),
            })
        })
        .collect()
}

pub fn cache_dir(out: &Path) -> PathBuf {
    out.join("cache")
}
