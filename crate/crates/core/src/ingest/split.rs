use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index;

use super::{Coord, LabelMap};
use crate::rng::{indexed_rng, stream};
use crate::{Error, Result};

/// Per-class training coordinates and the remaining labeled test pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSplit {
    /// `train[k]` holds the training pixels of class `k + 1`, row-major.
    pub train: Vec<Vec<Coord>>,
    /// Labeled, non-training pixels in row-major order.
    pub test: Vec<Coord>,
    pub seed: u64,
}

impl DataSplit {
    pub fn num_classes(&self) -> usize {
        self.train.len()
    }

    pub fn train_coords(&self) -> impl Iterator<Item = (u16, Coord)> + '_ {
        self.train
            .iter()
            .enumerate()
            .flat_map(|(k, cs)| cs.iter().map(move |&c| (k as u16 + 1, c)))
    }

    pub fn train_set(&self) -> HashSet<Coord> {
        self.train.iter().flatten().copied().collect()
    }
}

/// Draws `per_class` training pixels uniformly without replacement from each
/// class; all other labeled pixels form the test set.
pub fn stratified_split(labels: &LabelMap, per_class: usize, seed: u64) -> Result<DataSplit> {
    let k = labels.num_classes();
    if k < 2 {
        return Err(Error::InsufficientData {
            class: k,
            detail: "a split needs at least two classes".into(),
        });
    }
    let mut train = Vec::with_capacity(k);
    for class in 1..=k {
        let coords = labels.coords_of(class as u16);
        if coords.len() < per_class {
            return Err(Error::InsufficientData {
                class,
                detail: format!("{} pixels, {per_class} requested for training", coords.len()),
            });
        }
        let mut rng = indexed_rng(seed, stream::SPLIT, class as u64);
        let mut picks = index::sample(&mut rng, coords.len(), per_class).into_vec();
        picks.sort_unstable();
        train.push(picks.into_iter().map(|i| coords[i]).collect::<Vec<_>>());
    }
    let chosen: HashSet<Coord> = train.iter().flatten().copied().collect();
    let test = (0..labels.height())
        .flat_map(|r| (0..labels.width()).map(move |c| Coord::new(r, c)))
        .filter(|&c| labels.get(c) != 0 && !chosen.contains(&c))
        .collect();
    Ok(DataSplit { train, test, seed })
}

/// Writes `class,row,col,role` records, training pixels first.
pub fn save_split(split: &DataSplit, labels: &LabelMap, path: &Path) -> Result<()> {
    let mut text = format!("# seed={}\n", split.seed);
    for (class, c) in split.train_coords() {
        writeln!(text, "{class},{},{},train", c.row, c.col).expect("string write");
    }
    for &c in &split.test {
        writeln!(text, "{},{},{},test", labels.get(c), c.row, c.col).expect("string write");
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_split(path: &Path) -> Result<DataSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: &str| Error::Format(format!("{}: bad split record `{line}`", path.display()));
    let mut seed = 0;
    let mut train: Vec<Vec<Coord>> = Vec::new();
    let mut test = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(rest) = line.strip_prefix('#') {
            if let Some(v) = rest.trim().strip_prefix("seed=") {
                seed = v.parse().map_err(|_| bad(line))?;
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let [class, row, col, role] = fields[..] else {
            return Err(bad(line));
        };
        let class: usize = class.parse().map_err(|_| bad(line))?;
        let at = Coord::new(row.parse().map_err(|_| bad(line))?, col.parse().map_err(|_| bad(line))?);
        match role {
            "train" if class >= 1 => {
                if train.len() < class {
                    train.resize(class, Vec::new());
                }
                train[class - 1].push(at);
            }
            "test" => test.push(at),
            _ => return Err(bad(line)),
        }
    }
    Ok(DataSplit { train, test, seed })
}
