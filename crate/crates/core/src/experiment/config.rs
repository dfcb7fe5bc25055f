use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annc::AnncConfig;
use crate::classify::ClassifierKind;
use crate::discriminant::DiscConfig;
use crate::fusion::FusionConfig;
use crate::ingest::SyntheticSceneConfig;
use crate::{Error, Result};

/// On-disk scene: an `HSC1` cube and an `HSL1` label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub cube: PathBuf,
    pub labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub per_class: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { per_class: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// `center` or `knn:<k>`.
    pub method: String,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            method: "center".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: Vec<u64>,
    /// Output directory; relative paths resolve against the config file.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seeds: vec![1, 2, 3, 4, 5],
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Window sides for the neighborhood sweep; empty means `1, 3, ..,
    /// fusion.side`.
    pub sides: Vec<usize>,
    /// Thresholds for the threshold sweep; empty means the default schedule.
    pub thresholds: Vec<f64>,
}

/// Everything a run needs. Exactly one of `dataset` and `synthetic` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSceneConfig>,
    pub split: SplitConfig,
    pub annc: AnncConfig,
    pub disc: DiscConfig,
    pub fusion: FusionConfig,
    pub classifier: ClassifierConfig,
    pub run: RunConfig,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, resolves dataset paths relative to the file, and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(ds) = cfg.dataset.as_mut() {
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [&mut ds.cube, &mut ds.labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(out) = cfg.run.out.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn classifier_kind(&self) -> Result<ClassifierKind> {
        self.classifier.method.parse()
    }

    /// Checks every section and that referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        match (&self.dataset, &self.synthetic) {
            (Some(ds), None) => {
                for p in [&ds.cube, &ds.labels] {
                    if !p.is_file() {
                        return Err(Error::Config(format!("dataset file {} does not exist", p.display())));
                    }
                }
            }
            (None, Some(s)) => s.validate().map_err(cfg_err)?,
            _ => {
                return Err(Error::Config(
                    "exactly one of [dataset] and [synthetic] must be given".into(),
                ))
            }
        }
        if self.split.per_class < 2 {
            return Err(Error::Config("split.per_class must be at least 2".into()));
        }
        self.annc.validate().map_err(cfg_err)?;
        self.disc.validate().map_err(cfg_err)?;
        self.fusion.validate().map_err(cfg_err)?;
        self.classifier_kind()?;
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must not be empty".into()));
        }
        for &s in &self.sweep.sides {
            if s.is_multiple_of(2) {
                return Err(Error::Config(format!("sweep side {s} is not odd")));
            }
        }
        if self.sweep.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("sweep thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[synthetic]
height = 16
width = 16
bands = 32
classes = 3
regions = 4
noise_std = 0.25
smoothness = 2.0
seed = 7

[split]
per_class = 5

[annc]
widths = [16, 8, 4]
steps = 10

[disc]
architecture = "compact"
epochs = 1

[fusion]
side = 5
threshold = 0.01

[classifier]
method = "knn:5"

[run]
seeds = [1]
"#;

    #[test]
    fn parses_and_echo_round_trips() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.annc.lambda, 0.01);
        assert_eq!(cfg.classifier_kind().unwrap(), ClassifierKind::Knn(5));
        assert_eq!(ExperimentConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            ExperimentConfig::parse("[bogus]\nx = 1"),
            Err(Error::Config(_))
        ));
        let mut cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        cfg.fusion.side = 4;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        cfg.run.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        cfg.dataset = Some(DatasetConfig {
            cube: "/nonexistent/cube.hsc".into(),
            labels: "/nonexistent/labels.hsl".into(),
        });
        assert!(cfg.validate().is_err());
        cfg.synthetic = None;
        assert!(matches!(cfg.validate(), Err(Error::Config(m)) if m.contains("does not exist")));
    }
}
