//! Per-pixel feature grids and the `FSF1` file format.
//!
//! ```text
//! "FSF1", u32 LE H, u32 LE W, u32 LE F,
//! then per pixel (row-major): u8 validity, F x f64 LE (zeros when invalid)
//! ```

use std::path::Path;

use crate::ingest::Coord;
use crate::{Error, Result};

pub const FIELD_MAGIC: &[u8; 4] = b"FSF1";

/// `H x W` grid of `F`-dimensional features; pixels may be absent.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureField {
    pub fn empty(height: usize, width: usize, dim: usize) -> Self {
        FeatureField {
            height,
            width,
            dim,
            data: vec![0.0; height * width * dim],
            valid: vec![false; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn index(&self, at: Coord) -> usize {
        at.row * self.width + at.col
    }

    pub fn is_valid(&self, at: Coord) -> bool {
        self.valid[self.index(at)]
    }

    pub fn get(&self, at: Coord) -> Option<&[f64]> {
        let i = self.index(at);
        self.valid[i].then(|| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn set(&mut self, at: Coord, feature: &[f64]) -> Result<()> {
        if feature.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature of length {} in a field of dimension {}",
                feature.len(),
                self.dim
            )));
        }
        let i = self.index(at);
        self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(feature);
        self.valid[i] = true;
        Ok(())
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.valid.len() * (1 + 8 * self.dim));
        out.extend_from_slice(FIELD_MAGIC);
        for d in [self.height, self.width, self.dim] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for (i, &v) in self.valid.iter().enumerate() {
            out.push(u8::from(v));
            for x in &self.data[i * self.dim..(i + 1) * self.dim] {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.get(..4) != Some(FIELD_MAGIC.as_slice()) || bytes.len() < 16 {
            return Err(Error::Format("not an FSF1 feature file".into()));
        }
        let u = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes")) as usize;
        let (h, w, f) = (u(4), u(8), u(12));
        let record = 1 + 8 * f;
        if bytes.len() - 16 != h * w * record {
            return Err(Error::Format(format!(
                "FSF1 header declares {h}x{w}x{f}, payload has {} bytes",
                bytes.len() - 16
            )));
        }
        let mut field = FeatureField::empty(h, w, f);
        for (i, rec) in bytes[16..].chunks_exact(record).enumerate() {
            field.valid[i] = match rec[0] {
                0 => false,
                1 => true,
                b => return Err(Error::Format(format!("bad validity byte {b}"))),
            };
            for (j, c) in rec[1..].chunks_exact(8).enumerate() {
                field.data[i * f + j] = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
        }
        Ok(field)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fsf1_round_trip_with_gaps() {
        let mut field = FeatureField::empty(2, 3, 2);
        field.set(Coord::new(0, 1), &[1.5, -2.0]).unwrap();
        field.set(Coord::new(1, 2), &[f64::MIN_POSITIVE, 3.0]).unwrap();
        let back = FeatureField::from_bytes(&field.to_bytes()).unwrap();
        assert_eq!(back, field);
        assert_eq!(back.get(Coord::new(0, 0)), None);
        assert_eq!(back.valid_count(), 2);
    }

    #[test]
    fn rejects_wrong_dimension_and_truncation() {
        let mut field = FeatureField::empty(1, 1, 2);
        assert!(field.set(Coord::new(0, 0), &[1.0]).is_err());
        let mut bytes = field.to_bytes();
        bytes.pop();
        assert!(FeatureField::from_bytes(&bytes).is_err());
    }
}
