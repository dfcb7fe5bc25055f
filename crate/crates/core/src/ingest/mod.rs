//! Dataset I/O, normalization, splitting, augmentation and pair construction.

mod cube;
mod pairs;
mod split;
mod synthetic;
mod virtual_samples;

pub use cube::{load_cube, load_labels, save_cube, save_labels, zscore_normalize, Coord, LabelMap, SpectralCube};
pub use pairs::{pair_sets, PairSets};
pub use split::{load_split, save_split, stratified_split, DataSplit};
pub use synthetic::{gen_synthetic, gen_synthetic_with_sites, SyntheticSceneConfig};
pub use virtual_samples::{augment_split, draw_mix_coefficient, generate_virtual, mix, virtual_samples, VirtualSample};
