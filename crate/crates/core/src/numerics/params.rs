use rand::Rng;

use super::Tensor;
use crate::{Error, Result};

/// Weights and bias of one parameterized layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPair {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Parameters of a chain, one pair per dense or conv layer in chain order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    pub layers: Vec<ParamPair>,
}

impl ParamSet {
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|p| ParamPair {
                    weights: Tensor::zeros(p.weights.shape().to_vec()),
                    bias: Tensor::zeros(p.bias.shape().to_vec()),
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.layers.iter().map(|p| p.weights.len() + p.bias.len()).sum()
    }

    /// All values in layer order, weights before bias.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for p in &self.layers {
            out.extend_from_slice(p.weights.data());
            out.extend_from_slice(p.bias.data());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_values() {
            return Err(Error::Shape(format!(
                "expected {} parameter values, got {}",
                self.num_values(),
                values.len()
            )));
        }
        let mut rest = values;
        for p in &mut self.layers {
            for t in [&mut p.weights, &mut p.bias] {
                let (head, tail) = rest.split_at(t.len());
                t.data_mut().copy_from_slice(head);
                rest = tail;
            }
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ParamSet) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.axpy(1.0, &b.weights)?;
            a.bias.axpy(1.0, &b.bias)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for p in &mut self.layers {
            p.weights.data_mut().iter_mut().for_each(|v| *v *= factor);
            p.bias.data_mut().iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn clear(&mut self) {
        for p in &mut self.layers {
            p.weights.fill(0.0);
            p.bias.fill(0.0);
        }
    }

    fn check_congruent(&self, other: &ParamSet) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.shape() == b.weights.shape() && a.bias.shape() == b.bias.shape());
        if same {
            Ok(())
        } else {
            Err(Error::Shape("parameter sets have different shapes".into()))
        }
    }
}

/// Glorot-uniform weights in `[-sqrt(6/(fan_in+fan_out)), +sqrt(...)]`, zero bias.
pub fn glorot_uniform<R: Rng + ?Sized>(
    weight_shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> ParamPair {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = weight_shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
    ParamPair {
        weights: Tensor::new(weight_shape.to_vec(), data).expect("shape matches data"),
        bias: Tensor::zeros(vec![weight_shape[0]]),
    }
}

/// Plain SGD: `p <- p - lr * g`, layer by layer in chain order.
///
/// Gradients are checked before any parameter moves, so a non-finite
/// gradient leaves `params` untouched.
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64) -> Result<()> {
    params.check_congruent(grads)?;
    if let Some(layer) = grads
        .layers
        .iter()
        .position(|g| !g.weights.is_finite() || !g.bias.is_finite())
    {
        return Err(Error::NonFinite { layer });
    }
    for (p, g) in params.layers.iter_mut().zip(&grads.layers) {
        p.weights.axpy(-lr, &g.weights)?;
        p.bias.axpy(-lr, &g.bias)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        ParamSet {
            layers: vec![ParamPair {
                weights: Tensor::new(vec![1, 1], vec![v]).unwrap(),
                bias: Tensor::from_vec(vec![0.0]),
            }],
        }
    }

    #[test]
    fn sgd_scalar_and_zero_step() {
        let mut p = scalar_set(1.0);
        sgd_step(&mut p, &scalar_set(2.0), 0.1).unwrap();
        assert!((p.layers[0].weights.data()[0] - 0.8).abs() < 1e-15);

        let before = p.clone();
        sgd_step(&mut p, &scalar_set(123.0), 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn two_steps_equal_one_step_with_summed_grads() {
        let mut a = scalar_set(0.5);
        let g = scalar_set(0.25);
        sgd_step(&mut a, &g, 0.125).unwrap();
        sgd_step(&mut a, &g, 0.125).unwrap();
        let mut b = scalar_set(0.5);
        let mut summed = g.clone();
        summed.add_assign(&g).unwrap();
        sgd_step(&mut b, &summed, 0.125).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = ParamSet {
            layers: vec![scalar_set(1.0).layers[0].clone(), scalar_set(1.0).layers[0].clone()],
        };
        let mut g = p.zeros_like();
        g.layers[1].bias.data_mut()[0] = f64::NAN;
        let before = p.clone();
        assert!(matches!(sgd_step(&mut p, &g, 0.1), Err(Error::NonFinite { layer: 1 })));
        assert_eq!(p, before);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = crate::rng::stage_rng(1, 0);
        let p = glorot_uniform(&[20, 30], 30, 20, &mut rng);
        let limit = (6.0f64 / 50.0).sqrt();
        assert!(p.weights.data().iter().all(|w| w.abs() <= limit));
        assert!(p.bias.data().iter().all(|&b| b == 0.0));
    }
}
