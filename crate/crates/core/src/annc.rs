//! Spectral feature network supervised jointly by softmax and center loss.
//!
//! The chain is `dense w1, relu, dense w2, relu, dense F, relu, dense K,
//! softmax-xent`. The output of the third ReLU is the spectral feature; the
//! last dense layer only serves training.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::field::FeatureField;
use crate::ingest::{Coord, SpectralCube};
use crate::numerics::gradcheck::{compare_central, probe_positions};
use crate::numerics::{
    accumulate_batch, sgd_step, softmax_xent, Checkpoint, GradCheckOptions, GradCheckReport, LayerSpec, Network, Tensor,
};
use crate::rng::{stage_rng, stream};
use crate::{Error, Result};

/// Activation index of the spectral feature (input of the fourth dense layer).
pub const FEATURE_ACTIVATION: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnncConfig {
    /// Hidden widths `[w1, w2, F]`; `F` is the feature dimension.
    pub widths: [usize; 3],
    /// Center-loss weight.
    pub lambda: f64,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Steps between learning-rate decays.
    pub decay_interval: usize,
    pub steps: usize,
    /// Virtual-sample target size of each class.
    pub virtual_per_class: usize,
}

impl Default for AnncConfig {
    fn default() -> Self {
        AnncConfig {
            widths: [256, 128, 64],
            lambda: 0.01,
            batch: 512,
            lr: 0.01,
            lr_decay: 0.3162,
            decay_interval: 20000,
            steps: 60000,
            virtual_per_class: 2000,
        }
    }
}

impl AnncConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) {
            return Err(Error::Argument("ANNC widths must be positive".into()));
        }
        if !(self.lambda >= 0.0 && self.lr >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Argument("ANNC lambda, lr and decay must be non-negative".into()));
        }
        if self.batch == 0 || self.decay_interval == 0 {
            return Err(Error::Argument("ANNC batch and decay interval must be positive".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.powi((step / self.decay_interval) as i32)
    }

    pub fn chain(&self, classes: usize) -> Vec<LayerSpec> {
        let [w1, w2, f] = self.widths;
        vec![
            LayerSpec::Dense { outputs: w1 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: w2 },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: f },
            LayerSpec::Relu,
            LayerSpec::Dense { outputs: classes },
            LayerSpec::SoftmaxXent,
        ]
    }

    fn to_meta(&self) -> Vec<(String, String)> {
        let [w1, w2, f] = self.widths;
        vec![
            ("widths".into(), format!("{w1},{w2},{f}")),
            ("lambda".into(), format!("{:?}", self.lambda)),
            ("batch".into(), self.batch.to_string()),
            ("lr".into(), format!("{:?}", self.lr)),
            ("lr_decay".into(), format!("{:?}", self.lr_decay)),
            ("decay_interval".into(), self.decay_interval.to_string()),
            ("steps".into(), self.steps.to_string()),
            ("virtual_per_class".into(), self.virtual_per_class.to_string()),
        ]
    }

    fn from_meta(ck: &Checkpoint) -> Result<Self> {
        fn get<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
            ck.meta_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("ANNC checkpoint lacks `{key}`")))
        }
        let widths: Vec<usize> = ck
            .meta_value("widths")
            .unwrap_or("")
            .split(',')
            .filter_map(|s| s.parse().ok())
            .collect();
        let widths: [usize; 3] = widths
            .try_into()
            .map_err(|_| Error::Format("ANNC checkpoint has bad `widths`".into()))?;
        Ok(AnncConfig {
            widths,
            lambda: get(ck, "lambda")?,
            batch: get(ck, "batch")?,
            lr: get(ck, "lr")?,
            lr_decay: get(ck, "lr_decay")?,
            decay_interval: get(ck, "decay_interval")?,
            steps: get(ck, "steps")?,
            virtual_per_class: get(ck, "virtual_per_class")?,
        })
    }
}

/// Trained network, class centers and the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct AnncModel {
    pub network: Network,
    /// `centers[k]` is the running center of class `k + 1`.
    pub centers: Vec<Vec<f64>>,
    pub config: AnncConfig,
    pub seed: u64,
}

impl AnncModel {
    pub fn new(bands: usize, classes: usize, config: &AnncConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        if classes < 2 {
            return Err(Error::Argument("ANNC needs at least two classes".into()));
        }
        let mut rng = stage_rng(seed, stream::ANNC_INIT);
        let network = Network::new(vec![bands], config.chain(classes), &mut rng)?;
        Ok(AnncModel {
            network,
            centers: vec![vec![0.0; config.widths[2]]; classes],
            config: config.clone(),
            seed,
        })
    }

    pub fn bands(&self) -> usize {
        self.network.input_shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.centers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.widths[2]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = vec![("model".to_string(), "annc".to_string())];
        meta.push(("seed".into(), self.seed.to_string()));
        meta.extend(self.config.to_meta());
        let mut ck = Checkpoint::from_network(&self.network, meta);
        ck.centers = Some(self.centers.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_value("model") != Some("annc") {
            return Err(Error::Format("checkpoint is not an ANNC model".into()));
        }
        let config = AnncConfig::from_meta(ck)?;
        let network = ck.network()?;
        let centers = ck
            .centers
            .clone()
            .ok_or_else(|| Error::Format("ANNC checkpoint lacks CENTERS".into()))?;
        if network.layers() != config.chain(centers.len()).as_slice() {
            return Err(Error::Format("ANNC architecture does not match its config".into()));
        }
        let seed = ck
            .meta_value("seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format("ANNC checkpoint lacks `seed`".into()))?;
        Ok(AnncModel {
            network,
            centers,
            config,
            seed,
        })
    }
}

/// `1/2 |f - c|^2`.
pub fn center_loss(feature: &[f64], center: &[f64]) -> f64 {
    0.5 * feature.iter().zip(center).map(|(f, c)| (f - c) * (f - c)).sum::<f64>()
}

/// Softmax cross-entropy plus `lambda` times the center loss of the sample's
/// class. `label` is 0-based here, matching the logits index.
pub fn joint_loss(logits: &[f64], label: usize, feature: &[f64], centers: &[Vec<f64>], lambda: f64) -> Result<f64> {
    let (xent, _) = softmax_xent(logits, label)?;
    let center = centers
        .get(label)
        .ok_or_else(|| Error::Index(format!("no center for class index {label}")))?;
    Ok(xent + lambda * center_loss(feature, center))
}

/// Sets each class center to the mean of that class's features in the
/// batch. Classes absent from the batch keep their previous center.
/// `labels` are 0-based class indices.
pub fn update_centers(features: &[&[f64]], labels: &[usize], centers: &mut [Vec<f64>]) {
    let dim = centers.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; centers.len()];
    let mut counts = vec![0usize; centers.len()];
    for (f, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(f.iter()) {
            *s += v;
        }
    }
    for ((center, sum), &n) in centers.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *center = sum.into_iter().map(|s| s / n as f64).collect();
        }
    }
}

/// Trains on (already augmented) spectra; `labels` are 1-based classes.
pub fn train_annc(
    spectra: &[Vec<f64>],
    labels: &[u16],
    classes: usize,
    config: &AnncConfig,
    seed: u64,
) -> Result<AnncModel> {
    if spectra.is_empty() || spectra.len() != labels.len() {
        return Err(Error::Argument("ANNC needs equally many spectra and labels".into()));
    }
    let bands = spectra[0].len();
    if spectra.iter().any(|s| s.len() != bands) {
        return Err(Error::Shape("spectra have different lengths".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l as usize > classes) {
        return Err(Error::Argument(format!("label {bad} outside 1..={classes}")));
    }
    let mut model = AnncModel::new(bands, classes, config, seed)?;
    let inputs: Vec<Tensor> = spectra.iter().map(|s| Tensor::from_vec(s.clone())).collect();
    let targets: Vec<usize> = labels.iter().map(|&l| l as usize - 1).collect();

    let mut rng = stage_rng(seed, stream::ANNC_BATCH);
    let mut order: Vec<usize> = (0..spectra.len()).collect();
    let mut cursor = order.len();
    let batch_size = config.batch.min(spectra.len());
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(batch_size);
        while batch.len() < batch_size {
            if cursor == order.len() {
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        joint_step(&mut model, &inputs, &targets, &batch, config.learning_rate(step)).map_err(|e| match e {
            Error::Diverged { loss, .. } => Error::Diverged {
                unit: "step",
                index: step,
                loss,
            },
            other => other,
        })?;
    }
    Ok(model)
}

/// One SGD step on the mean joint loss of `batch`. Centers are refreshed from
/// the batch features first and held fixed while differentiating.
fn joint_step(model: &mut AnncModel, inputs: &[Tensor], targets: &[usize], batch: &[usize], lr: f64) -> Result<f64> {
    let net = &model.network;
    let traces: Vec<_> = batch
        .par_iter()
        .map(|&i| net.forward_cached(&inputs[i]))
        .collect::<Result<_>>()?;
    let features: Vec<&[f64]> = traces
        .iter()
        .map(|t| t.activations[FEATURE_ACTIVATION].data())
        .collect();
    let batch_labels: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
    update_centers(&features, &batch_labels, &mut model.centers);

    let lambda = model.config.lambda;
    let centers = &model.centers;
    let items: Vec<(usize, usize)> = (0..batch.len()).map(|j| (j, batch_labels[j])).collect();
    let (loss_sum, mut grads) = accumulate_batch(net, &items, |&(j, label), acc| {
        let trace = &traces[j];
        let feature = trace.activations[FEATURE_ACTIVATION].data();
        let (xent, g) = softmax_xent(trace.output().data(), label)?;
        let pull: Vec<f64> = feature
            .iter()
            .zip(&centers[label])
            .map(|(f, c)| lambda * (f - c))
            .collect();
        net.backward_into(trace, &Tensor::from_vec(g), &[(FEATURE_ACTIVATION, &pull)], acc)?;
        Ok(xent + lambda * center_loss(feature, &centers[label]))
    })?;
    let n = batch.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            unit: "step",
            index: 0,
            loss,
        });
    }
    grads.params.scale(1.0 / n);
    sgd_step(&mut model.network.params, &grads.params, lr)?;
    Ok(loss)
}

/// Layer-3 output for one spectrum.
pub fn extract_feature(model: &AnncModel, spectrum: &[f64]) -> Result<Vec<f64>> {
    if spectrum.len() != model.bands() {
        return Err(Error::Shape(format!(
            "spectrum has {} bands, model expects {}",
            spectrum.len(),
            model.bands()
        )));
    }
    Ok(model
        .network
        .forward_prefix(&Tensor::from_vec(spectrum.to_vec()), FEATURE_ACTIVATION)?
        .into_data())
}

/// Features of every pixel of the cube.
pub fn extract_field(model: &AnncModel, cube: &SpectralCube) -> Result<FeatureField> {
    let coords: Vec<Coord> = (0..cube.height())
        .flat_map(|r| (0..cube.width()).map(move |c| Coord::new(r, c)))
        .collect();
    let features: Vec<Vec<f64>> = coords
        .par_iter()
        .map(|&c| extract_feature(model, cube.pixel(c)))
        .collect::<Result<_>>()?;
    let mut field = FeatureField::empty(cube.height(), cube.width(), model.feature_dim());
    for (c, f) in coords.iter().zip(&features) {
        field.set(*c, f)?;
    }
    Ok(field)
}

/// Mean joint loss and gradients of a batch when `centers` are held fixed.
/// Exposed for gradient checking of the whole chain.
pub fn joint_loss_and_gradients(
    model: &AnncModel,
    spectra: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, crate::numerics::ParamSet)> {
    let net = &model.network;
    let lambda = model.config.lambda;
    let items: Vec<(&Vec<f64>, usize)> = spectra.iter().zip(labels.iter().copied()).collect();
    let (sum, mut grads) = accumulate_batch(net, &items, |&(x, label), acc| {
        let trace = net.forward_cached(&Tensor::from_vec(x.clone()))?;
        let feature = trace.activations[FEATURE_ACTIVATION].data();
        let (xent, g) = softmax_xent(trace.output().data(), label)?;
        let pull: Vec<f64> = feature
            .iter()
            .zip(&model.centers[label])
            .map(|(f, c)| lambda * (f - c))
            .collect();
        net.backward_into(&trace, &Tensor::from_vec(g), &[(FEATURE_ACTIVATION, &pull)], acc)?;
        Ok(xent + lambda * center_loss(feature, &model.centers[label]))
    })?;
    let n = spectra.len() as f64;
    grads.params.scale(1.0 / n);
    Ok((sum / n, grads.params))
}

/// Central-difference check of [`joint_loss_and_gradients`] over a random
/// subsample of parameters. Probes that move any sample across a ReLU kink
/// are skipped.
pub fn check_joint_gradients(
    model: &AnncModel,
    spectra: &[Vec<f64>],
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let signature = |net: &Network| -> Result<Vec<Vec<usize>>> {
        spectra
            .iter()
            .map(|x| Ok(net.forward_cached(&Tensor::from_vec(x.clone()))?.kink_signature(net)))
            .collect()
    };
    let base_signature = signature(&model.network)?;
    let (_, grads) = joint_loss_and_gradients(model, spectra, labels)?;
    let extents: Vec<usize> = model
        .network
        .params
        .layers
        .iter()
        .flat_map(|p| [p.weights.len(), p.bias.len()])
        .collect();
    let probes = probe_positions(&extents, opts.probes_per_tensor, opts.seed);
    let mut probe = model.clone();
    Ok(compare_central(
        &model.network.params.flat(),
        &grads.flat(),
        &probes,
        opts.eps,
        |flat| {
            probe.network.params.set_flat(flat).ok()?;
            if signature(&probe.network).ok()? != base_signature {
                return None;
            }
            joint_loss_and_gradients(&probe, spectra, labels).ok().map(|(l, _)| l)
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_loss_cases() {
        assert_eq!(center_loss(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(center_loss(&[3.0, 4.0], &[0.0, 0.0]), 12.5);
    }

    #[test]
    fn center_loss_gradient_matches_central_difference() {
        let f = [0.7, -1.3, 2.2];
        let c = [0.1, 0.4, -0.5];
        let eps = 1e-6;
        for i in 0..3 {
            let mut p = f;
            p[i] += eps;
            let mut m = f;
            m[i] -= eps;
            let numeric = (center_loss(&p, &c) - center_loss(&m, &c)) / (2.0 * eps);
            assert!((numeric - (f[i] - c[i])).abs() < 1e-8);
        }
    }

    #[test]
    fn joint_loss_reductions() {
        let centers = vec![vec![1.0, 1.0], vec![0.0, 0.0]];
        let logits = [0.3, -0.2];
        let (xent, _) = softmax_xent(&logits, 0).unwrap();
        assert_eq!(joint_loss(&logits, 0, &[5.0, 5.0], &centers, 0.0).unwrap(), xent);
        assert_eq!(joint_loss(&logits, 0, &[1.0, 1.0], &centers, 0.3).unwrap(), xent);
        // |f - c|^2 = 2
        let v = joint_loss(&[0.0, 0.0], 0, &[2.0, 0.0], &centers, 0.01).unwrap();
        assert!((v - (std::f64::consts::LN_2 + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn update_centers_cases() {
        let mut centers = vec![vec![9.0, 9.0], vec![7.0, 7.0], vec![5.0, 5.0]];
        let a = [0.0, 0.0];
        let b = [2.0, 2.0];
        let s = [4.0, -1.0];
        update_centers(&[&a, &s, &b], &[0, 1, 0], &mut centers);
        assert_eq!(centers, vec![vec![1.0, 1.0], vec![4.0, -1.0], vec![5.0, 5.0]]);
    }

    #[test]
    fn learning_rate_schedule() {
        let cfg = AnncConfig::default();
        assert_eq!(cfg.learning_rate(19999), 0.01);
        assert!((cfg.learning_rate(20000) - 0.003162).abs() < 1e-15);
        assert!((cfg.learning_rate(45000) - 0.01 * 0.3162 * 0.3162).abs() < 1e-15);
    }

    #[test]
    fn zero_params_give_zero_feature() {
        let mut model = AnncModel::new(
            4,
            3,
            &AnncConfig {
                widths: [5, 4, 3],
                ..Default::default()
            },
            1,
        )
        .unwrap();
        model.network.params.clear();
        assert_eq!(extract_feature(&model, &[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0; 3]);
        assert!(matches!(extract_feature(&model, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = AnncModel::new(
            4,
            3,
            &AnncConfig {
                widths: [5, 4, 3],
                lambda: 0.125,
                ..Default::default()
            },
            17,
        )
        .unwrap();
        let back =
            AnncModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
