//! Nearest-center and kNN classifiers, confusion matrices and OA/AA/kappa.
//!
//! Classifiers are fitted on ANNC features of training pixels only; they
//! take plain feature vectors so a fused field can never leak into fitting.
//! Class labels are 1-based throughout.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::{Error, Result};

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One center per class; `centers[k]` belongs to class `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterSet {
    pub centers: Vec<Vec<f64>>,
}

/// Per-class arithmetic mean of training features.
pub fn estimate_centers(features_by_class: &[Vec<Vec<f64>>]) -> Result<CenterSet> {
    let centers = features_by_class
        .iter()
        .enumerate()
        .map(|(k, feats)| {
            let first = feats.first().ok_or_else(|| Error::InsufficientData {
                class: k + 1,
                detail: "no training features to estimate a center".into(),
            })?;
            let mut sum = vec![0.0; first.len()];
            for f in feats {
                for (s, v) in sum.iter_mut().zip(f) {
                    *s += v;
                }
            }
            Ok(sum.into_iter().map(|s| s / feats.len() as f64).collect())
        })
        .collect::<Result<_>>()?;
    Ok(CenterSet { centers })
}

/// Label of the nearest center; ties go to the lowest class.
pub fn classify_center(feature: &[f64], centers: &CenterSet) -> u16 {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centers.centers.iter().enumerate() {
        let d = squared_distance(feature, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best.0 as u16 + 1
}

/// Training features with labels for kNN voting.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnIndex {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<u16>,
}

/// Majority label of the `k` nearest training features. Distance ties favor
/// the lower sample index, vote ties the lower class.
pub fn classify_knn(feature: &[f64], index: &KnnIndex, k: usize) -> Result<u16> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    if k > index.features.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the {} training samples",
            index.features.len()
        )));
    }
    // keep the k best (distance, sample index) pairs sorted ascending
    let mut nearest: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for (i, f) in index.features.iter().enumerate() {
        let d = squared_distance(feature, f);
        if nearest.len() == k && d >= nearest[k - 1].0 {
            continue;
        }
        let pos = nearest.partition_point(|&(nd, _)| nd <= d);
        nearest.insert(pos, (d, i));
        nearest.truncate(k);
    }
    let classes = index.labels.iter().copied().max().unwrap_or(0) as usize;
    let mut votes = vec![0usize; classes + 1];
    for &(_, i) in &nearest {
        votes[index.labels[i] as usize] += 1;
    }
    let winner = (1..=classes).fold(1, |best, c| if votes[c] > votes[best] { c } else { best });
    Ok(winner as u16)
}

/// Which rule labels the fused features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassifierKind {
    Center,
    Knn(usize),
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "center" => Ok(ClassifierKind::Center),
            other => other
                .strip_prefix("knn:")
                .and_then(|k| k.parse().ok())
                .filter(|&k: &usize| k > 0)
                .map(ClassifierKind::Knn)
                .ok_or_else(|| Error::Config(format!("unknown classifier `{s}`, expected center or knn:<k>"))),
        }
    }
}

impl std::fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClassifierKind::Center => write!(f, "center"),
            ClassifierKind::Knn(k) => write!(f, "knn:{k}"),
        }
    }
}

/// A fitted classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Center(CenterSet),
    Knn { index: KnnIndex, k: usize },
}

impl Classifier {
    /// Fits on training features grouped by class (`by_class[k]` is class `k + 1`).
    pub fn fit(kind: ClassifierKind, by_class: &[Vec<Vec<f64>>]) -> Result<Self> {
        match kind {
            ClassifierKind::Center => Ok(Classifier::Center(estimate_centers(by_class)?)),
            ClassifierKind::Knn(k) => {
                let mut index = KnnIndex {
                    features: Vec::new(),
                    labels: Vec::new(),
                };
                for (c, feats) in by_class.iter().enumerate() {
                    index.features.extend(feats.iter().cloned());
                    index.labels.extend(std::iter::repeat_n(c as u16 + 1, feats.len()));
                }
                Ok(Classifier::Knn { index, k })
            }
        }
    }

    pub fn predict(&self, feature: &[f64]) -> Result<u16> {
        match self {
            Classifier::Center(c) => Ok(classify_center(feature, c)),
            Classifier::Knn { index, k } => classify_knn(feature, index, *k),
        }
    }
}

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(Error::Argument(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `truth` is 1-based; so is `predicted`.
    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[(truth - 1) * self.classes + predicted - 1]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (1..=self.classes).map(|p| self.count(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (1..=self.classes).map(|t| self.count(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (1..=self.classes).map(|k| self.count(k, k)).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for t in 1..=self.classes {
            let row: Vec<String> = (1..=self.classes).map(|p| self.count(t, p).to_string()).collect();
            writeln!(out, "{}", row.join(",")).expect("string write");
        }
        out
    }
}

pub fn confusion_matrix(predictions: &[u16], truth: &[u16], classes: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Argument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    let mut counts = vec![0u64; classes * classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        for l in [p, t] {
            if l == 0 || l as usize > classes {
                return Err(Error::Argument(format!("label {l} outside 1..={classes}")));
            }
        }
        counts[(t as usize - 1) * classes + p as usize - 1] += 1;
    }
    ConfusionMatrix::from_counts(classes, counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Accuracy per class; `None` for classes with no test samples.
    pub per_class: Vec<Option<f64>>,
}

/// OA = trace/total; AA = mean accuracy over classes with test samples;
/// kappa = (p_o - p_e) / (1 - p_e).
pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Argument("confusion matrix is empty".into()));
    }
    let n = total as f64;
    let oa = cm.trace() as f64 / n;
    let per_class: Vec<Option<f64>> = (1..=cm.classes())
        .map(|k| {
            let row = cm.row_sum(k);
            (row > 0).then(|| cm.count(k, k) as f64 / row as f64)
        })
        .collect();
    let scored: Vec<f64> = per_class.iter().flatten().copied().collect();
    let aa = scored.iter().sum::<f64>() / scored.len() as f64;
    let expected: u128 = (1..=cm.classes())
        .map(|k| cm.row_sum(k) as u128 * cm.col_sum(k) as u128)
        .sum();
    let total_sq = total as u128 * total as u128;
    let kappa = if expected == total_sq {
        // chance agreement is certain: only the single-class diagonal case is defined
        if cm.trace() == total {
            1.0
        } else {
            return Err(Error::Argument("kappa undefined: chance agreement is 1".into()));
        }
    } else {
        let pe = expected as f64 / total_sq as f64;
        (oa - pe) / (1.0 - pe)
    };
    Ok(MetricsReport {
        oa,
        aa,
        kappa,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_cases() {
        let c = estimate_centers(&[vec![vec![0.0, 0.0], vec![2.0, 2.0]], vec![vec![5.0, -1.0]]]).unwrap();
        assert_eq!(c.centers, vec![vec![1.0, 1.0], vec![5.0, -1.0]]);
        assert!(matches!(
            estimate_centers(&[vec![vec![1.0]], vec![]]),
            Err(Error::InsufficientData { class: 2, .. })
        ));
    }

    #[test]
    fn center_classifier_cases() {
        let c = CenterSet {
            centers: vec![vec![0.0, 0.0], vec![1.0, 1.0]],
        };
        assert_eq!(classify_center(&[1.0, 1.0], &c), 2);
        assert_eq!(classify_center(&[0.9, 0.9], &c), 2);
        assert_eq!(classify_center(&[0.5, 0.5], &c), 1);
    }

    #[test]
    fn knn_cases() {
        let index = KnnIndex {
            features: vec![vec![0.0], vec![1.0], vec![1.1], vec![5.0], vec![5.5]],
            labels: vec![1, 2, 2, 3, 3],
        };
        assert_eq!(classify_knn(&[0.2], &index, 1).unwrap(), 1);
        assert_eq!(classify_knn(&[5.2], &index, 2).unwrap(), 3);
        // two votes each for classes 2 and 3 at k = 4 -> lower class wins
        assert_eq!(classify_knn(&[3.0], &index, 4).unwrap(), 2);
        assert!(classify_knn(&[0.0], &index, 0).is_err());
        assert!(classify_knn(&[0.0], &index, 6).is_err());
    }

    #[test]
    fn classifier_kind_parsing() {
        assert_eq!("center".parse::<ClassifierKind>().unwrap(), ClassifierKind::Center);
        assert_eq!("knn:10".parse::<ClassifierKind>().unwrap(), ClassifierKind::Knn(10));
        assert!("knn:0".parse::<ClassifierKind>().is_err());
        assert!("svm".parse::<ClassifierKind>().is_err());
    }

    #[test]
    fn confusion_cases() {
        let cm = confusion_matrix(&[1, 2, 3], &[1, 2, 3], 3).unwrap();
        assert_eq!(cm.trace(), 3);
        let cm = confusion_matrix(&[2], &[1], 2).unwrap();
        assert_eq!(cm.count(1, 2), 1);
        assert_eq!(cm.total(), 1);
        assert!(confusion_matrix(&[0], &[1], 2).is_err());
        assert!(confusion_matrix(&[1], &[3], 2).is_err());
        assert_eq!(cm.to_csv(), "0,1\n0,0\n");
    }

    #[test]
    fn metrics_hand_cases() {
        let diag = ConfusionMatrix::from_counts(2, vec![3, 0, 0, 5]).unwrap();
        let m = compute_metrics(&diag).unwrap();
        assert_eq!((m.oa, m.aa, m.kappa), (1.0, 1.0, 1.0));

        let flat = ConfusionMatrix::from_counts(2, vec![1, 1, 1, 1]).unwrap();
        let m = compute_metrics(&flat).unwrap();
        assert_eq!((m.oa, m.aa, m.kappa), (0.5, 0.5, 0.0));

        let single = ConfusionMatrix::from_counts(2, vec![4, 0, 0, 0]).unwrap();
        assert_eq!(compute_metrics(&single).unwrap().kappa, 1.0);
        assert_eq!(compute_metrics(&single).unwrap().per_class, vec![Some(1.0), None]);

        let empty = ConfusionMatrix::from_counts(2, vec![0; 4]).unwrap();
        assert!(compute_metrics(&empty).is_err());
    }
}
