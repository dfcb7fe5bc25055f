//! Pixel-pair CNN scoring whether two spectra share a class.
//!
//! Pairs are `(1, 2, L)` grids: the first pixel is row 0, the second row 1.
//! The network ends in two logits; index [`SAME`] is the same-class score.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ingest::{Coord, PairSets, SpectralCube};
use crate::numerics::{
    accumulate_batch, format_chain, parse_chain, sgd_step, softmax, Checkpoint, LayerSpec, Network, Tensor,
};
use crate::rng::{stage_rng, stream};
use crate::{Error, Result};

/// Logit index of the "same class" outcome.
pub const SAME: usize = 1;
pub const WEIGHT_LAYERS: usize = 9;
pub const POOL_LAYERS: usize = 3;

/// Wide-kernel architecture; needs at least 170 bands.
pub const STANDARD_ARCHITECTURE: &str = "conv 2 11 16, relu, maxpool 1 2, \
    conv 1 11 32, relu, conv 1 11 32, relu, maxpool 1 2, \
    conv 1 11 64, relu, conv 1 11 64, relu, maxpool 1 2, \
    conv 1 5 128, relu, conv 1 1 128, relu, dense 256, relu, dense 2, softmax-xent";

/// Narrow-kernel architecture for short spectra (at least 32 bands).
pub const COMPACT_ARCHITECTURE: &str = "conv 2 3 8, relu, conv 1 3 8, relu, maxpool 1 2, \
    conv 1 3 16, relu, conv 1 3 16, relu, maxpool 1 2, \
    conv 1 3 32, relu, conv 1 3 32, relu, maxpool 1 2, \
    conv 1 1 32, relu, dense 64, relu, dense 2, softmax-xent";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscConfig {
    /// `"standard"`, `"compact"`, or an explicit comma-separated chain.
    pub architecture: String,
    pub batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub decay_interval: usize,
    pub epochs: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            architecture: "standard".into(),
            batch: 512,
            lr: 0.01,
            lr_decay: 0.1,
            decay_interval: 50,
            epochs: 150,
        }
    }
}

impl DiscConfig {
    /// The layer chain, with a softmax-xent head appended if missing.
    pub fn chain(&self) -> Result<Vec<LayerSpec>> {
        let text = match self.architecture.trim() {
            "standard" => STANDARD_ARCHITECTURE,
            "compact" => COMPACT_ARCHITECTURE,
            other => other,
        };
        let mut chain = parse_chain(text)?;
        if chain.last() != Some(&LayerSpec::SoftmaxXent) {
            chain.push(LayerSpec::SoftmaxXent);
        }
        validate_chain(&chain)?;
        Ok(chain)
    }

    pub fn validate(&self) -> Result<()> {
        self.chain()?;
        if self.batch == 0 || self.decay_interval == 0 {
            return Err(Error::Argument(
                "discriminant batch and decay interval must be positive".into(),
            ));
        }
        if !(self.lr >= 0.0 && self.lr_decay > 0.0) {
            return Err(Error::Argument("discriminant lr and decay must be non-negative".into()));
        }
        Ok(())
    }

    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_interval) as i32)
    }
}

/// Structural rules: 9 conv/dense layers, 3 max-pools, 2 output logits.
pub fn validate_chain(chain: &[LayerSpec]) -> Result<()> {
    let weights = chain.iter().filter(|l| l.has_params()).count();
    let pools = chain.iter().filter(|l| l.is_pool()).count();
    if weights != WEIGHT_LAYERS || pools != POOL_LAYERS {
        return Err(Error::Argument(format!(
            "discriminant needs {WEIGHT_LAYERS} weight layers and {POOL_LAYERS} pooling layers, \
             got {weights} and {pools}"
        )));
    }
    let last_weight = chain.iter().rev().find(|l| l.has_params());
    if last_weight != Some(&LayerSpec::Dense { outputs: 2 }) {
        return Err(Error::Argument("discriminant must end in a 2-logit dense layer".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscModel {
    pub network: Network,
    pub config: DiscConfig,
    pub seed: u64,
    pub epochs_trained: usize,
}

/// A `(2, L)` pixel pair: first spectrum in row 0, second in row 1.
pub fn pair_tensor(first: &[f64], second: &[f64]) -> Result<Tensor> {
    if first.len() != second.len() {
        return Err(Error::Shape(format!(
            "pair rows have lengths {} and {}",
            first.len(),
            second.len()
        )));
    }
    let mut data = Vec::with_capacity(2 * first.len());
    data.extend_from_slice(first);
    data.extend_from_slice(second);
    Tensor::new(vec![1, 2, first.len()], data)
}

impl DiscModel {
    pub fn new(bands: usize, config: &DiscConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stage_rng(seed, stream::DISC_INIT);
        let network = Network::new(vec![1, 2, bands], config.chain()?, &mut rng)?;
        Ok(DiscModel {
            network,
            config: config.clone(),
            seed,
            epochs_trained: 0,
        })
    }

    pub fn bands(&self) -> usize {
        self.network.input_shape()[2]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let c = &self.config;
        let meta = vec![
            ("model".to_string(), "disc".to_string()),
            ("seed".into(), self.seed.to_string()),
            ("epochs_trained".into(), self.epochs_trained.to_string()),
            ("batch".into(), c.batch.to_string()),
            ("lr".into(), format!("{:?}", c.lr)),
            ("lr_decay".into(), format!("{:?}", c.lr_decay)),
            ("decay_interval".into(), c.decay_interval.to_string()),
            ("epochs".into(), c.epochs.to_string()),
        ];
        Checkpoint::from_network(&self.network, meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta_value("model") != Some("disc") {
            return Err(Error::Format("checkpoint is not a discriminant model".into()));
        }
        fn get<T: std::str::FromStr>(ck: &Checkpoint, key: &str) -> Result<T> {
            ck.meta_value(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("discriminant checkpoint lacks `{key}`")))
        }
        validate_chain(&ck.layers)?;
        let config = DiscConfig {
            architecture: format_chain(&ck.layers),
            batch: get(ck, "batch")?,
            lr: get(ck, "lr")?,
            lr_decay: get(ck, "lr_decay")?,
            decay_interval: get(ck, "decay_interval")?,
            epochs: get(ck, "epochs")?,
        };
        Ok(DiscModel {
            network: ck.network()?,
            config,
            seed: get(ck, "seed")?,
            epochs_trained: get(ck, "epochs_trained")?,
        })
    }
}

/// Probability that the two rows of `pair` share a class.
pub fn predict_same(model: &DiscModel, pair: &Tensor) -> Result<f64> {
    if pair.shape() != model.network.input_shape() {
        return Err(Error::Shape(format!(
            "pair shape {:?} does not match model input {:?}",
            pair.shape(),
            model.network.input_shape()
        )));
    }
    let logits = model.network.forward(pair)?;
    Ok(softmax(logits.data())[SAME])
}

/// [`predict_same`] over many pairs; identical to evaluating them one by one.
pub fn predict_same_batch(model: &DiscModel, pairs: &[Tensor]) -> Result<Vec<f64>> {
    pairs.par_iter().map(|p| predict_same(model, p)).collect()
}

/// Trains on the positive (label [`SAME`]) and negative pairs with mini-batch
/// SGD, reshuffling every epoch.
pub fn train_disc(pairs: &PairSets, cube: &SpectralCube, config: &DiscConfig, seed: u64) -> Result<DiscModel> {
    if pairs.positives.is_empty() || pairs.negatives.is_empty() {
        return Err(Error::Argument(
            "discriminant training needs positive and negative pairs".into(),
        ));
    }
    let mut model = DiscModel::new(cube.bands(), config, seed)?;
    let mut samples: Vec<(Coord, Coord, usize)> = pairs
        .positives
        .iter()
        .map(|&(a, b)| (a, b, SAME))
        .chain(pairs.negatives.iter().map(|&(a, b)| (a, b, 1 - SAME)))
        .collect();
    let mut rng = stage_rng(seed, stream::DISC_SHUFFLE);
    for epoch in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(samples.as_mut_slice(), &mut rng);
        let lr = config.learning_rate(epoch);
        for batch in samples.chunks(config.batch) {
            let net = &model.network;
            let (loss_sum, mut grads) = accumulate_batch(net, batch, |&(a, b, label), acc| {
                let x = pair_tensor(cube.pixel(a), cube.pixel(b))?;
                let trace = net.forward_cached(&x)?;
                let (loss, g) = crate::numerics::softmax_xent(trace.output().data(), label)?;
                net.backward_into(&trace, &Tensor::from_vec(g), &[], acc)?;
                Ok(loss)
            })?;
            let n = batch.len() as f64;
            if !(loss_sum / n).is_finite() {
                return Err(Error::Diverged {
                    unit: "epoch",
                    index: epoch,
                    loss: loss_sum / n,
                });
            }
            grads.params.scale(1.0 / n);
            sgd_step(&mut model.network.params, &grads.params, lr)?;
        }
        model.epochs_trained = epoch + 1;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_tensor_layout() {
        let a = [1.0, 2.0, 3.0];
        let b = [4.0, 5.0, 6.0];
        let p = pair_tensor(&a, &b).unwrap();
        assert_eq!(p.shape(), &[1, 2, 3]);
        assert_eq!(p.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_ne!(p, pair_tensor(&b, &a).unwrap());
        let s = pair_tensor(&a, &a).unwrap();
        assert_eq!(&s.data()[..3], &s.data()[3..]);
        assert!(pair_tensor(&a, &b[..2]).is_err());
    }

    #[test]
    fn default_architectures_are_structurally_valid() {
        for arch in ["standard", "compact"] {
            let cfg = DiscConfig {
                architecture: arch.into(),
                ..Default::default()
            };
            let chain = cfg.chain().unwrap();
            assert_eq!(chain.iter().filter(|l| l.has_params()).count(), 9);
            assert_eq!(chain.iter().filter(|l| l.is_pool()).count(), 3);
        }
        assert!(DiscModel::new(170, &DiscConfig::default(), 0).is_ok());
        let err = DiscModel::new(103, &DiscConfig::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Shape(m) if m.contains("smaller kernels")));
        let compact = DiscConfig {
            architecture: "compact".into(),
            ..Default::default()
        };
        assert!(DiscModel::new(32, &compact, 0).is_ok());
        assert!(DiscModel::new(31, &compact, 0).is_err());
        assert!(DiscModel::new(103, &compact, 0).is_ok());
    }

    #[test]
    fn rejects_wrong_layer_counts() {
        let cfg = DiscConfig {
            architecture: "conv 2 3 4, relu, maxpool, dense 2".into(),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Argument(_))));
    }

    #[test]
    fn zeroed_final_layer_gives_one_half() {
        let cfg = DiscConfig {
            architecture: "compact".into(),
            ..Default::default()
        };
        let mut model = DiscModel::new(32, &cfg, 3).unwrap();
        let last = model.network.params.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
        let x: Vec<f64> = (0..32).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..32).map(|i| (i as f64).cos()).collect();
        assert_eq!(predict_same(&model, &pair_tensor(&x, &y).unwrap()).unwrap(), 0.5);
    }

    #[test]
    fn probabilities_are_complementary() {
        let cfg = DiscConfig {
            architecture: "compact".into(),
            ..Default::default()
        };
        let model = DiscModel::new(32, &cfg, 8).unwrap();
        let x: Vec<f64> = (0..32).map(|i| (i as f64 * 0.3).sin() * 3.0).collect();
        let y: Vec<f64> = (0..32).map(|i| (i as f64 * 0.7).cos()).collect();
        let logits = model.network.forward(&pair_tensor(&x, &y).unwrap()).unwrap();
        let p = softmax(logits.data());
        assert!((p[0] + p[1] - 1.0).abs() <= 1e-12);
        let same = predict_same(&model, &pair_tensor(&x, &y).unwrap()).unwrap();
        assert!((0.0..=1.0).contains(&same));
        assert!(predict_same(&model, &pair_tensor(&x[..31], &y[..31]).unwrap()).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = DiscConfig {
            architecture: "compact".into(),
            lr: 0.03,
            ..Default::default()
        };
        let model = DiscModel::new(32, &cfg, 21).unwrap();
        let back =
            DiscModel::from_checkpoint(&Checkpoint::from_bytes(&model.to_checkpoint().to_bytes()).unwrap()).unwrap();
        assert_eq!(back.network, model.network);
        assert_eq!(back.config.chain().unwrap(), cfg.chain().unwrap());
        assert_eq!(back.to_checkpoint().to_bytes(), model.to_checkpoint().to_bytes());
    }
}
