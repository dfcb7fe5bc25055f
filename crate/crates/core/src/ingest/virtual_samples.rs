use rand::distr::{Distribution, Uniform};
use rand::Rng;

use crate::rng::{stage_rng, stream};
use crate::{Error, Result};

pub const MIX_LOW: f64 = -1.0;
pub const MIX_HIGH: f64 = 2.0;

/// A synthetic spectrum `q * x1 + (1 - q) * x2` and the parents it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VirtualSample {
    pub spectrum: Vec<f64>,
    pub q: f64,
    /// Indices of `x1` and `x2` within the class pixels.
    pub parents: (usize, usize),
}

pub fn mix(x1: &[f64], x2: &[f64], q: f64) -> Vec<f64> {
    x1.iter().zip(x2).map(|(a, b)| q * a + (1.0 - q) * b).collect()
}

/// `q ~ U[-1, 2]`.
pub fn draw_mix_coefficient<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Uniform::new_inclusive(MIX_LOW, MIX_HIGH)
        .expect("finite bounds")
        .sample(rng)
}

/// Draws `count` virtual samples from one class, each from two distinct
/// parents.
pub fn generate_virtual<R: Rng + ?Sized>(
    class_pixels: &[Vec<f64>],
    count: usize,
    rng: &mut R,
) -> Result<Vec<VirtualSample>> {
    let n = class_pixels.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            class: 0,
            detail: format!("virtual samples need two distinct pixels, class has {n}"),
        });
    }
    Ok((0..count)
        .map(|_| {
            let a = rng.random_range(0..n);
            // second parent uniform over the other n - 1 pixels
            let mut b = rng.random_range(0..n - 1);
            if b >= a {
                b += 1;
            }
            let q = draw_mix_coefficient(rng);
            VirtualSample {
                spectrum: mix(&class_pixels[a], &class_pixels[b], q),
                q,
                parents: (a, b),
            }
        })
        .collect())
}

/// The class pixels followed by virtual samples until the class holds
/// `target_count` spectra. Classes already at or above the target are
/// returned unchanged.
pub fn virtual_samples(class_pixels: &[Vec<f64>], target_count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut out = class_pixels.to_vec();
    let missing = target_count.saturating_sub(out.len());
    if missing > 0 {
        let mut rng = stage_rng(seed, stream::VIRTUAL);
        out.extend(
            generate_virtual(class_pixels, missing, &mut rng)?
                .into_iter()
                .map(|v| v.spectrum),
        );
    }
    Ok(out)
}

/// Training spectra of every class augmented to `target_per_class`, with
/// their labels. Each class draws from its own stream of `seed`.
pub fn augment_split(
    cube: &super::SpectralCube,
    split: &super::DataSplit,
    target_per_class: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<u16>)> {
    let mut spectra = Vec::new();
    let mut labels = Vec::new();
    for (k, coords) in split.train.iter().enumerate() {
        let class = k + 1;
        let pixels: Vec<Vec<f64>> = coords.iter().map(|&c| cube.pixel(c).to_vec()).collect();
        let mut rng = crate::rng::indexed_rng(seed, stream::VIRTUAL, class as u64);
        let missing = target_per_class.saturating_sub(pixels.len());
        let extra = if missing > 0 {
            generate_virtual(&pixels, missing, &mut rng).map_err(|e| match e {
                Error::InsufficientData { detail, .. } => Error::InsufficientData { class, detail },
                other => other,
            })?
        } else {
            Vec::new()
        };
        labels.extend(std::iter::repeat_n(class as u16, pixels.len() + extra.len()));
        spectra.extend(pixels);
        spectra.extend(extra.into_iter().map(|v| v.spectrum));
    }
    Ok((spectra, labels))
}
