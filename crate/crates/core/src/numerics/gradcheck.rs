//! Central finite-difference checks of analytic gradients.

use rand::seq::index;

use super::layers::softmax_xent;
use super::{Network, Tensor};
use crate::rng::{stage_rng, stream};
use crate::Result;

/// Denominator floor for the relative error. Both gradients below this are
/// compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// Scalar loss applied to a chain's output.
#[derive(Debug, Clone)]
pub enum Objective {
    SoftmaxXent(usize),
    /// `1/2 |y|^2`
    HalfSquared,
}

impl Objective {
    pub fn value_and_grad(&self, output: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            Objective::SoftmaxXent(label) => softmax_xent(output, *label),
            Objective::HalfSquared => Ok((0.5 * output.iter().map(|v| v * v).sum::<f64>(), output.to_vec())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Probes drawn from each weight and each bias tensor.
    pub probes_per_tensor: usize,
    pub input_probes: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            probes_per_tensor: 12,
            input_probes: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Probes whose perturbation crossed a ReLU or max-pool kink.
    pub skipped: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Picks probe positions: up to `per_tensor` from each `[start, start+len)`.
pub(crate) fn probe_positions(tensor_extents: &[usize], per_tensor: usize, seed: u64) -> Vec<usize> {
    let mut rng = stage_rng(seed, stream::GRADCHECK);
    let mut out = Vec::new();
    let mut start = 0;
    for &len in tensor_extents {
        let take = per_tensor.min(len);
        let mut picks: Vec<usize> = index::sample(&mut rng, len, take).into_vec();
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| start + i));
        start += len;
    }
    out
}

/// Compares `analytic[i]` with the central difference of `loss` at every
/// probe position. `loss` returns `None` when the perturbed point falls in a
/// different linear piece than the base point; such probes are skipped.
pub(crate) fn compare_central<F>(
    base: &[f64],
    analytic: &[f64],
    probes: &[usize],
    eps: f64,
    mut loss: F,
) -> GradCheckReport
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let mut point = base.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for &i in probes {
        point[i] = base[i] + eps;
        let plus = loss(&point);
        point[i] = base[i] - eps;
        let minus = loss(&point);
        point[i] = base[i];
        match (plus, minus) {
            (Some(p), Some(m)) => {
                let numeric = (p - m) / (2.0 * eps);
                report.max_rel_error = report.max_rel_error.max(relative_error(analytic[i], numeric));
                report.checked += 1;
            }
            _ => report.skipped += 1,
        }
    }
    report
}

/// Checks [`Network::backward`] against central differences over a random
/// subsample of parameters and input entries. Returns the worst relative
/// error among probes that stay clear of kinks.
pub fn finite_diff_check(
    net: &Network,
    input: &Tensor,
    objective: &Objective,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let trace = net.forward_cached(input)?;
    let signature = trace.kink_signature(net);
    let (_, g) = objective.value_and_grad(trace.output().data())?;
    let grads = net.backward(&trace, &Tensor::from_vec(g))?;

    let extents: Vec<usize> = net
        .params
        .layers
        .iter()
        .flat_map(|p| [p.weights.len(), p.bias.len()])
        .collect();
    let probes = probe_positions(&extents, opts.probes_per_tensor, opts.seed);
    let mut probe_net = net.clone();
    let eval = |n: &Network, x: &Tensor| -> Option<f64> {
        let t = n.forward_cached(x).ok()?;
        if t.kink_signature(n) != signature {
            return None;
        }
        objective.value_and_grad(t.output().data()).ok().map(|(l, _)| l)
    };
    let params_report = compare_central(&net.params.flat(), &grads.params.flat(), &probes, opts.eps, |flat| {
        probe_net.params.set_flat(flat).ok()?;
        eval(&probe_net, input)
    });

    let input_probes = probe_positions(&[input.len()], opts.input_probes, opts.seed ^ 1);
    let input_report = compare_central(input.data(), grads.input.data(), &input_probes, opts.eps, |flat| {
        let x = Tensor::new(input.shape().to_vec(), flat.to_vec()).ok()?;
        eval(net, &x)
    });
    Ok(GradCheckReport {
        max_rel_error: params_report.max_rel_error.max(input_report.max_rel_error),
        checked: params_report.checked + input_report.checked,
        skipped: params_report.skipped + input_report.skipped,
    })
}
