use rayon::prelude::*;

use super::{Gradients, Network, Tensor};
use crate::Result;

/// Samples per gradient chunk. Chunks are summed in index order, so the
/// result does not depend on how many threads evaluate them.
pub const GRADIENT_CHUNK: usize = 16;

/// Sums per-sample losses and gradients over `items`.
///
/// `per_sample` runs a forward/backward pass for one item, accumulating into
/// the provided gradients, and returns that item's loss.
pub fn accumulate_batch<T, F>(net: &Network, items: &[T], per_sample: F) -> Result<(f64, Gradients)>
where
    T: Sync,
    F: Fn(&T, &mut Gradients) -> Result<f64> + Sync,
{
    let zero = || Gradients {
        params: net.params.zeros_like(),
        input: Tensor::zeros(net.input_shape().to_vec()),
    };
    let partials: Vec<Result<(f64, Gradients)>> = items
        .par_chunks(GRADIENT_CHUNK)
        .map(|chunk| {
            let mut grads = zero();
            let mut loss = 0.0;
            for item in chunk {
                loss += per_sample(item, &mut grads)?;
            }
            Ok((loss, grads))
        })
        .collect();
    let mut total = zero();
    let mut loss = 0.0;
    for part in partials {
        let (l, g) = part?;
        loss += l;
        total.params.add_assign(&g.params)?;
        total.input.axpy(1.0, &g.input)?;
    }
    Ok((loss, total))
}
