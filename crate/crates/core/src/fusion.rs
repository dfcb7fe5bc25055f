//! Test-time fusion of spectral features under a learned spatial kernel.
//!
//! For a test pixel `x` with window `N(x)`, the discriminant model scores
//! every pair `(x, x')`, `x' in N(x)`. Thresholding those scores gives a
//! binary mask, normalizing the mask gives the kernel `W(N(x))`, and the
//! fused feature is the `W`-weighted sum of the neighbors' ANNC features.
//!
//! Windows are clipped at the image border and never contain training pixels.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminant::{pair_tensor, predict_same, DiscModel};
use crate::field::FeatureField;
use crate::ingest::{Coord, DataSplit, SpectralCube};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    /// Odd window side `s`.
    pub side: usize,
    /// Threshold `t` in `[0, 1]`.
    pub threshold: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            side: 19,
            threshold: 0.01,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        check_side(self.side)?;
        check_threshold(self.threshold)
    }
}

fn check_side(side: usize) -> Result<()> {
    if side == 0 || side.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "neighborhood side must be odd and positive, got {side}"
        )));
    }
    Ok(())
}

fn check_threshold(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Argument(format!("threshold {t} outside [0, 1]")));
    }
    Ok(())
}

/// Pixels that may never appear in a neighborhood (the training pixels).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exclusions {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl Exclusions {
    pub fn none(height: usize, width: usize) -> Self {
        Exclusions {
            height,
            width,
            mask: vec![false; height * width],
        }
    }

    pub fn from_coords(height: usize, width: usize, coords: impl IntoIterator<Item = Coord>) -> Self {
        let mut ex = Self::none(height, width);
        for c in coords {
            ex.mask[c.row * width + c.col] = true;
        }
        ex
    }

    pub fn from_split(split: &DataSplit, height: usize, width: usize) -> Self {
        Self::from_coords(height, width, split.train.iter().flatten().copied())
    }

    pub fn contains(&self, at: Coord) -> bool {
        self.mask[at.row * self.width + at.col]
    }
}

/// The `s x s` window around a center; cells outside the image or excluded
/// are `None`. Cells are row-major, the center sits at index `s*s/2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub center: Coord,
    pub side: usize,
    pub cells: Vec<Option<Coord>>,
}

impl Neighborhood {
    pub fn center_index(&self) -> usize {
        self.side * self.side / 2
    }

    pub fn included(&self) -> impl Iterator<Item = Coord> + '_ {
        self.cells.iter().flatten().copied()
    }
}

pub fn build_neighborhood(
    center: Coord,
    side: usize,
    height: usize,
    width: usize,
    exclusions: &Exclusions,
) -> Result<Neighborhood> {
    check_side(side)?;
    if center.row >= height || center.col >= width {
        return Err(Error::Argument(format!(
            "center ({}, {}) outside {height}x{width} image",
            center.row, center.col
        )));
    }
    if exclusions.contains(center) {
        return Err(Error::Argument(format!(
            "center ({}, {}) is an excluded pixel",
            center.row, center.col
        )));
    }
    let radius = (side / 2) as isize;
    let mut cells = Vec::with_capacity(side * side);
    for dr in -radius..=radius {
        for dc in -radius..=radius {
            let r = center.row as isize + dr;
            let c = center.col as isize + dc;
            let cell = (r >= 0 && c >= 0 && (r as usize) < height && (c as usize) < width)
                .then(|| Coord::new(r as usize, c as usize))
                .filter(|&at| !exclusions.contains(at));
            cells.push(cell);
        }
    }
    Ok(Neighborhood { center, side, cells })
}

/// Same-class probabilities between a center and its window.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMatrix {
    pub side: usize,
    /// Probabilities; 0 on invalid cells.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl SpatialMatrix {
    /// The centered `side x side` sub-window.
    pub fn crop(&self, side: usize) -> Result<SpatialMatrix> {
        check_side(side)?;
        if side > self.side {
            return Err(Error::Argument(format!(
                "cannot crop a {0}x{0} matrix to {side}x{side}",
                self.side
            )));
        }
        let off = (self.side - side) / 2;
        let mut values = Vec::with_capacity(side * side);
        let mut valid = Vec::with_capacity(side * side);
        for r in 0..side {
            for c in 0..side {
                let i = (r + off) * self.side + c + off;
                values.push(self.values[i]);
                valid.push(self.valid[i]);
            }
        }
        Ok(SpatialMatrix { side, values, valid })
    }
}

pub fn spatial_matrix(model: &DiscModel, cube: &SpectralCube, nb: &Neighborhood) -> Result<SpatialMatrix> {
    let x = cube.pixel(nb.center);
    let mut values = vec![0.0; nb.cells.len()];
    let mut valid = vec![false; nb.cells.len()];
    for (i, cell) in nb.cells.iter().enumerate() {
        if let Some(at) = cell {
            values[i] = predict_same(model, &pair_tensor(x, cube.pixel(*at))?)?;
            valid[i] = true;
        }
    }
    Ok(SpatialMatrix {
        side: nb.side,
        values,
        valid,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMatrix {
    pub side: usize,
    pub ones: Vec<bool>,
    pub valid: Vec<bool>,
}

/// `f_t`: a valid cell becomes 1 when its probability is at least `t`. The
/// center is always 1; at `t = 1` it is the only 1, even for cells whose
/// probability saturates to exactly 1.
pub fn binarize(m: &SpatialMatrix, t: f64) -> Result<BinaryMatrix> {
    check_threshold(t)?;
    let center = m.side * m.side / 2;
    let ones = m
        .values
        .iter()
        .zip(&m.valid)
        .enumerate()
        .map(|(i, (&p, &v))| i == center || (v && t < 1.0 && p >= t))
        .collect();
    Ok(BinaryMatrix {
        side: m.side,
        ones,
        valid: m.valid.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialKernel {
    pub side: usize,
    pub weights: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Each 1 becomes `1 / (number of 1s)`.
pub fn normalize_kernel(b: &BinaryMatrix) -> Result<SpatialKernel> {
    let count = b.ones.iter().filter(|&&o| o).count();
    if count == 0 {
        return Err(Error::State("binary matrix has no ones to normalize".into()));
    }
    let w = 1.0 / count as f64;
    Ok(SpatialKernel {
        side: b.side,
        weights: b.ones.iter().map(|&o| if o { w } else { 0.0 }).collect(),
        valid: b.valid.clone(),
    })
}

/// `sum_ij W_ij * f(N(x)_ij)`.
pub fn fuse_feature(kernel: &SpatialKernel, field: &FeatureField, nb: &Neighborhood) -> Result<Vec<f64>> {
    if kernel.side != nb.side || kernel.weights.len() != nb.cells.len() {
        return Err(Error::Shape(format!(
            "kernel side {} does not match neighborhood side {}",
            kernel.side, nb.side
        )));
    }
    let mut out = vec![0.0; field.dim()];
    for (&w, cell) in kernel.weights.iter().zip(&nb.cells) {
        if w == 0.0 {
            continue;
        }
        let at = cell.ok_or_else(|| Error::Shape("kernel weight on an invalid cell".into()))?;
        let f = field
            .get(at)
            .ok_or_else(|| Error::Shape(format!("no feature at ({}, {})", at.row, at.col)))?;
        for (o, v) in out.iter_mut().zip(f) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Spatial matrices of every test pixel at one window side. Smaller windows
/// are centered crops, so one set serves a whole neighborhood sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSet {
    pub side: usize,
    pub centers: Vec<Coord>,
    pub matrices: Vec<SpatialMatrix>,
}

pub fn spatial_matrices(model: &DiscModel, cube: &SpectralCube, split: &DataSplit, side: usize) -> Result<MatrixSet> {
    check_side(side)?;
    let exclusions = Exclusions::from_split(split, cube.height(), cube.width());
    let matrices = split
        .test
        .par_iter()
        .map(|&c| {
            let nb = build_neighborhood(c, side, cube.height(), cube.width(), &exclusions)?;
            spatial_matrix(model, cube, &nb)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MatrixSet {
        side,
        centers: split.test.clone(),
        matrices,
    })
}

/// Fused features of every test pixel from precomputed matrices.
pub fn fuse_with_matrices(
    field: &FeatureField,
    matrices: &MatrixSet,
    split: &DataSplit,
    cfg: &FusionConfig,
) -> Result<FeatureField> {
    cfg.validate()?;
    if matrices.centers != split.test {
        return Err(Error::Argument(
            "spatial matrices were computed for a different split".into(),
        ));
    }
    let (h, w) = (field.height(), field.width());
    let exclusions = Exclusions::from_split(split, h, w);
    let fused = matrices
        .centers
        .par_iter()
        .zip(&matrices.matrices)
        .map(|(&c, m)| {
            let nb = build_neighborhood(c, cfg.side, h, w, &exclusions)?;
            let m = if m.side == cfg.side {
                m.clone()
            } else {
                m.crop(cfg.side)?
            };
            let kernel = normalize_kernel(&binarize(&m, cfg.threshold)?)?;
            fuse_feature(&kernel, field, &nb)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = FeatureField::empty(h, w, field.dim());
    for (&c, f) in matrices.centers.iter().zip(&fused) {
        out.set(c, f)?;
    }
    Ok(out)
}

/// Full fusion for every test pixel; training and unlabeled pixels get no
/// fused feature.
pub fn fuse_image(
    field: &FeatureField,
    model: &DiscModel,
    cube: &SpectralCube,
    split: &DataSplit,
    cfg: &FusionConfig,
) -> Result<FeatureField> {
    cfg.validate()?;
    let matrices = spatial_matrices(model, cube, split, cfg.side)?;
    fuse_with_matrices(field, &matrices, split, cfg)
}
