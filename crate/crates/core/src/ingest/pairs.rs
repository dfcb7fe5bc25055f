use rand::seq::index;

use super::{Coord, DataSplit};
use crate::rng::{stage_rng, stream};
use crate::{Error, Result};

/// Ordered training pixel pairs for the discriminant network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSets {
    /// Every ordered same-class pair, self-pairs included.
    pub positives: Vec<(Coord, Coord)>,
    /// Half of all ordered cross-class pairs, drawn without replacement.
    pub negatives: Vec<(Coord, Coord)>,
    /// Size of the full ordered cross-class pool.
    pub negative_pool: usize,
    pub seed: u64,
}

/// Builds `Tr+ = U_i Tr_i x Tr_i` and a uniform half of
/// `Tr- = U_{i != j} Tr_i x Tr_j`.
pub fn pair_sets(split: &DataSplit, seed: u64) -> Result<PairSets> {
    let classes: Vec<&Vec<Coord>> = split.train.iter().filter(|c| !c.is_empty()).collect();
    if classes.len() < 2 {
        return Err(Error::InsufficientData {
            class: classes.len(),
            detail: "pixel pairs need training pixels from at least two classes".into(),
        });
    }
    let positives = classes
        .iter()
        .flat_map(|cs| cs.iter().flat_map(move |&a| cs.iter().map(move |&b| (a, b))))
        .collect();

    // The pool is enumerated block by block: (i, j) with i != j in
    // lexicographic order, then a in Tr_i, then b in Tr_j.
    let blocks: Vec<(usize, usize)> = (0..classes.len())
        .flat_map(|i| (0..classes.len()).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let pool: usize = blocks.iter().map(|&(i, j)| classes[i].len() * classes[j].len()).sum();
    let mut rng = stage_rng(seed, stream::PAIRS);
    let mut picks = index::sample(&mut rng, pool, pool / 2).into_vec();
    picks.sort_unstable();

    let mut negatives = Vec::with_capacity(picks.len());
    let mut block = 0;
    let mut offset = 0;
    for p in picks {
        loop {
            let (i, j) = blocks[block];
            let size = classes[i].len() * classes[j].len();
            if p < offset + size {
                let local = p - offset;
                let n_j = classes[j].len();
                negatives.push((classes[i][local / n_j], classes[j][local % n_j]));
                break;
            }
            offset += size;
            block += 1;
        }
    }
    Ok(PairSets {
        positives,
        negatives,
        negative_pool: pool,
        seed,
    })
}
