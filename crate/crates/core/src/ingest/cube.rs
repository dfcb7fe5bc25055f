use std::path::Path;

use crate::{Error, Result};

pub const CUBE_MAGIC: &[u8; 4] = b"HSC1";
pub const LABEL_MAGIC: &[u8; 4] = b"HSL1";

/// Bands with a standard deviation below this are zeroed by normalization.
pub const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub fn new(row: usize, col: usize) -> Self {
        Coord { row, col }
    }
}

/// `H x W x L` reflectance grid, pixel-major with bands innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
}

impl SpectralCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::Shape("cube extents must be positive".into()));
        }
        if data.len() != height * width * bands {
            return Err(Error::Shape(format!(
                "cube {height}x{width}x{bands} needs {} values, got {}",
                height * width * bands,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("cube contains non-finite values".into()));
        }
        Ok(SpectralCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, at: Coord) -> &[f64] {
        let start = (at.row * self.width + at.col) * self.bands;
        &self.data[start..start + self.bands]
    }

    pub fn contains(&self, at: Coord) -> bool {
        at.row < self.height && at.col < self.width
    }
}

/// Per-pixel class labels; 0 marks background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::Shape(format!(
                "label map {height}x{width} with {} entries",
                labels.len()
            )));
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, at: Coord) -> u16 {
        self.labels[at.row * self.width + at.col]
    }

    pub fn set(&mut self, at: Coord, label: u16) {
        self.labels[at.row * self.width + at.col] = label;
    }

    /// Largest label present, i.e. the class count K.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) as usize
    }

    /// Coordinates carrying `label`, in row-major order.
    pub fn coords_of(&self, label: u16) -> Vec<Coord> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| Coord::new(i / self.width, i % self.width))
            .collect()
    }

    pub fn matches(&self, cube: &SpectralCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }
}

/// Zero-mean, unit-variance scaling of every band (population statistics).
/// Bands whose standard deviation is below [`DEGENERATE_STD`] become zero.
pub fn zscore_normalize(cube: &SpectralCube) -> SpectralCube {
    let l = cube.bands;
    let n = (cube.height * cube.width) as f64;
    let mut mean = vec![0.0; l];
    for px in cube.data.chunks_exact(l) {
        for (m, v) in mean.iter_mut().zip(px) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; l];
    for px in cube.data.chunks_exact(l) {
        for ((s, v), m) in var.iter_mut().zip(px).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let mut data = cube.data.clone();
    for px in data.chunks_exact_mut(l) {
        for b in 0..l {
            px[b] = if std[b] < DEGENERATE_STD {
                0.0
            } else {
                (px[b] - mean[b]) / std[b]
            };
        }
    }
    SpectralCube { data, ..cube.clone() }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format("header truncated".into()))
}

/// Writes the `HSC1` file. Values are stored as 32-bit floats.
pub fn save_cube(cube: &SpectralCube, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(16 + 4 * cube.data.len());
    out.extend_from_slice(CUBE_MAGIC);
    for d in [cube.height, cube.width, cube.bands] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &cube.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_cube(path: &Path) -> Result<SpectralCube> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cube(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn decode_cube(bytes: &[u8]) -> Result<SpectralCube> {
    if bytes.get(..4) != Some(CUBE_MAGIC.as_slice()) {
        return Err(Error::Format("bad magic, expected HSC1".into()));
    }
    let (h, w, l) = (
        read_u32(bytes, 4)? as usize,
        read_u32(bytes, 8)? as usize,
        read_u32(bytes, 12)? as usize,
    );
    let n = h * w * l;
    let payload = &bytes[16..];
    if payload.len() != 4 * n {
        return Err(Error::Format(format!(
            "header declares {n} values, payload holds {} bytes",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    SpectralCube::new(h, w, l, data)
}

pub fn save_labels(labels: &LabelMap, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + 2 * labels.labels.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&(labels.height as u32).to_le_bytes());
    out.extend_from_slice(&(labels.width as u32).to_le_bytes());
    for &l in &labels.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path) -> Result<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.get(..4) != Some(LABEL_MAGIC.as_slice()) {
        return Err(Error::Format(format!("{}: bad magic, expected HSL1", path.display())));
    }
    let (h, w) = (read_u32(&bytes, 4)? as usize, read_u32(&bytes, 8)? as usize);
    let payload = &bytes[12..];
    if payload.len() != 2 * h * w {
        return Err(Error::Format(format!(
            "{}: header declares {} labels, payload holds {} bytes",
            path.display(),
            h * w,
            payload.len()
        )));
    }
    let labels = payload
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    LabelMap::new(h, w, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let data: Vec<f64> = (0..12).map(|i| i as f64 * 0.25 - 1.0).collect();
        let cube = SpectralCube::new(2, 2, 3, data).unwrap();
        save_cube(&cube, &path).unwrap();
        assert_eq!(load_cube(&path).unwrap(), cube);
    }

    #[test]
    fn cube_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let cube = SpectralCube::new(2, 5, 1, vec![1.0; 10]).unwrap();
        save_cube(&cube, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();

        let mut wrong = bytes.clone();
        wrong[..4].copy_from_slice(b"HSC2");
        std::fs::write(&path, &wrong).unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(m)) if m.contains("magic")));

        bytes.truncate(bytes.len() - 4); // 9 pixels left
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(m)) if m.contains("declares 10")));
    }

    #[test]
    fn cube_rejects_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.hsc");
        let mut bytes = Vec::from(*CUBE_MAGIC);
        for d in [1u32, 1, 2] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(_))));
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.hsl");
        let map = LabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 65535]).unwrap();
        save_labels(&map, &path).unwrap();
        assert_eq!(load_labels(&path).unwrap(), map);
    }

    #[test]
    fn zscore_hand_degenerate_and_idempotent() {
        // two pixels, bands: [1,3] and constant [7,7]
        let cube = SpectralCube::new(1, 2, 2, vec![1.0, 7.0, 3.0, 7.0]).unwrap();
        let z = zscore_normalize(&cube);
        assert_eq!(z.data(), &[-1.0, 0.0, 1.0, 0.0]);
        let again = zscore_normalize(&z);
        for (a, b) in again.data().iter().zip(z.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
