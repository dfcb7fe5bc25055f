use rand::Rng;

use super::layers::{self, LayerSpec};
use super::params::{glorot_uniform, ParamPair, ParamSet};
use super::tensor::{as_chw, Tensor};
use crate::{Error, Result};

/// A sequential chain of layers with its parameters.
///
/// Shapes of every activation are resolved when the network is built, so a
/// chain that cannot process the input shape is rejected up front.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    /// Activation shapes; entry `i` is the input of layer `i`.
    shapes: Vec<Vec<usize>>,
    /// For each layer, its index into `params.layers` if parameterized.
    param_index: Vec<Option<usize>>,
    pub params: ParamSet,
}

/// Cached forward activations needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[i]` is the input of layer `i`; the last one is the output.
    pub activations: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        self.activations.last().expect("trace holds the input")
    }

    /// Sign pattern of every ReLU input and winner of every pool region.
    /// Two traces with equal signatures lie in the same linear piece.
    pub fn kink_signature(&self, net: &Network) -> Vec<usize> {
        let mut sig = Vec::new();
        for (i, layer) in net.body().iter().enumerate() {
            match layer {
                LayerSpec::Relu => sig.extend(self.activations[i].data().iter().map(|&v| usize::from(v > 0.0))),
                LayerSpec::MaxPool => sig.extend(self.pool_argmax[i].as_deref().unwrap_or_default()),
                _ => {}
            }
        }
        sig
    }
}

/// Gradient of a scalar loss with respect to every parameter and the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamSet,
    pub input: Tensor,
}

impl Network {
    /// Builds a network with Glorot-uniform weights and zero biases.
    pub fn new<R: Rng + ?Sized>(input_shape: Vec<usize>, layers: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(input_shape, layers)?;
        for (i, layer) in net.layers.iter().enumerate() {
            let Some(p) = net.param_index[i] else { continue };
            let in_shape = &net.shapes[i];
            let shape = net.params.layers[p].weights.shape().to_vec();
            let (fan_in, fan_out) = match layer {
                LayerSpec::Dense { outputs } => (in_shape.iter().product(), *outputs),
                LayerSpec::Conv { rows, cols, channels } => {
                    let (c, _, _) = as_chw(in_shape)?;
                    (c * rows * cols, channels * rows * cols)
                }
                _ => unreachable!("only dense and conv carry parameters"),
            };
            net.params.layers[p] = glorot_uniform(&shape, fan_in, fan_out, rng);
        }
        Ok(net)
    }

    /// Builds a network with every parameter set to zero.
    pub fn zeros(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::Shape(format!("bad input shape {input_shape:?}")));
        }
        if let Some(pos) = layers.iter().position(|l| *l == LayerSpec::SoftmaxXent) {
            if pos + 1 != layers.len() {
                return Err(Error::Shape("softmax-xent must be the last layer".into()));
            }
        }
        let mut shapes = vec![input_shape.clone()];
        let mut param_index = Vec::with_capacity(layers.len());
        let mut params = ParamSet::default();
        for (i, layer) in layers.iter().enumerate() {
            let current = shapes.last().expect("non-empty").clone();
            let next = match *layer {
                LayerSpec::Dense { outputs } => {
                    let inputs: usize = current.iter().product();
                    param_index.push(Some(params.layers.len()));
                    params.layers.push(ParamPair {
                        weights: Tensor::zeros(vec![outputs, inputs]),
                        bias: Tensor::zeros(vec![outputs]),
                    });
                    vec![outputs]
                }
                LayerSpec::Conv { rows, cols, channels } => {
                    let (c, h, w) = as_chw(&current)?;
                    if rows > h || cols > w {
                        return Err(Error::Shape(format!(
                            "layer {i} (conv {rows}x{cols}) does not fit its {h}x{w} input; \
                             use an architecture with smaller kernels or fewer layers for this band count"
                        )));
                    }
                    param_index.push(Some(params.layers.len()));
                    params.layers.push(ParamPair {
                        weights: Tensor::zeros(vec![channels, c, rows, cols]),
                        bias: Tensor::zeros(vec![channels]),
                    });
                    vec![channels, h - rows + 1, w - cols + 1]
                }
                LayerSpec::MaxPool => {
                    as_chw(&current)?;
                    param_index.push(None);
                    let mut s = current.clone();
                    let w = s.last_mut().expect("rank >= 1");
                    *w = if *w == 1 { 1 } else { *w / 2 };
                    s
                }
                LayerSpec::Relu => {
                    param_index.push(None);
                    current
                }
                LayerSpec::SoftmaxXent => {
                    param_index.push(None);
                    continue;
                }
            };
            shapes.push(next);
        }
        Ok(Network {
            input_shape,
            layers,
            shapes,
            param_index,
            params,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().expect("non-empty")
    }

    /// Shape of the input of layer `i` (or of the output when `i` equals the
    /// number of non-terminal layers).
    pub fn activation_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn ends_with_softmax(&self) -> bool {
        self.layers.last() == Some(&LayerSpec::SoftmaxXent)
    }

    /// Layers excluding a terminal softmax-xent head.
    fn body(&self) -> &[LayerSpec] {
        if self.ends_with_softmax() {
            &self.layers[..self.layers.len() - 1]
        } else {
            &self.layers
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "network expects input {:?}, got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Output of the chain (logits when the chain ends with softmax-xent).
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.forward_prefix(x, self.body().len())
    }

    /// Activation after the first `upto` layers.
    pub fn forward_prefix(&self, x: &Tensor, upto: usize) -> Result<Tensor> {
        self.check_input(x)?;
        let mut current = x.clone();
        for (i, layer) in self.body().iter().take(upto).enumerate() {
            current = self.apply(i, layer, &current)?.0;
        }
        Ok(current)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<Trace> {
        self.check_input(x)?;
        let body = self.body();
        let mut activations = Vec::with_capacity(body.len() + 1);
        let mut pool_argmax = Vec::with_capacity(body.len());
        activations.push(x.clone());
        for (i, layer) in body.iter().enumerate() {
            let (next, argmax) = self.apply(i, layer, &activations[i])?;
            activations.push(next);
            pool_argmax.push(argmax);
        }
        Ok(Trace {
            activations,
            pool_argmax,
        })
    }

    fn apply(&self, i: usize, layer: &LayerSpec, x: &Tensor) -> Result<(Tensor, Option<Vec<usize>>)> {
        let out = match layer {
            LayerSpec::Dense { .. } => {
                let p = &self.params.layers[self.param_index[i].expect("dense has params")];
                Tensor::from_vec(layers::dense_forward(x.data(), &p.weights, p.bias.data())?)
            }
            LayerSpec::Conv { .. } => {
                let p = &self.params.layers[self.param_index[i].expect("conv has params")];
                let (c, h, w) = as_chw(x.shape())?;
                let grid = x.clone().reshape(vec![c, h, w])?;
                layers::conv_forward(&grid, &p.weights, p.bias.data())?
            }
            LayerSpec::MaxPool => {
                let (out, idx) = layers::maxpool_forward(x)?;
                return Ok((out, Some(idx)));
            }
            LayerSpec::Relu => layers::relu_forward(x),
            LayerSpec::SoftmaxXent => unreachable!("head is not part of the body"),
        };
        Ok((out, None))
    }

    /// Reverse-mode gradient given the gradient of the loss at the output.
    pub fn backward(&self, trace: &Trace, grad_output: &Tensor) -> Result<Gradients> {
        let mut grads = Gradients {
            params: self.params.zeros_like(),
            input: Tensor::zeros(self.input_shape.clone()),
        };
        self.backward_into(trace, grad_output, &[], &mut grads)?;
        Ok(grads)
    }

    /// Like [`Network::backward`] but accumulates into `grads`, and adds
    /// `extra` gradients at intermediate activations. Each extra entry is
    /// `(activation index, gradient)`, where activation `i` is the input of
    /// layer `i`.
    pub fn backward_into(
        &self,
        trace: &Trace,
        grad_output: &Tensor,
        extra: &[(usize, &[f64])],
        grads: &mut Gradients,
    ) -> Result<()> {
        let body = self.body();
        if trace.activations.len() != body.len() + 1
            || trace
                .activations
                .iter()
                .zip(&self.shapes)
                .any(|(a, s)| a.shape() != s.as_slice())
        {
            return Err(Error::State(
                "trace does not come from a forward pass of this network".into(),
            ));
        }
        if grad_output.len() != trace.output().len() {
            return Err(Error::Shape("upstream gradient length mismatch".into()));
        }
        let mut grad = grad_output.data().to_vec();
        for i in (0..body.len()).rev() {
            add_extra(&mut grad, extra, i + 1)?;
            let input = &trace.activations[i];
            let mut grad_in = vec![0.0; input.len()];
            match body[i] {
                LayerSpec::Dense { .. } => {
                    let pi = self.param_index[i].expect("dense has params");
                    let p = &self.params.layers[pi];
                    let g = &mut grads.params.layers[pi];
                    layers::dense_backward(
                        input.data(),
                        &p.weights,
                        &grad,
                        Some(&mut grad_in),
                        g.weights.data_mut(),
                        g.bias.data_mut(),
                    );
                }
                LayerSpec::Conv { .. } => {
                    let pi = self.param_index[i].expect("conv has params");
                    let p = &self.params.layers[pi];
                    let g = &mut grads.params.layers[pi];
                    let (c, h, w) = as_chw(input.shape())?;
                    let grid = input.clone().reshape(vec![c, h, w])?;
                    layers::conv_backward(
                        &grid,
                        &p.weights,
                        &grad,
                        Some(&mut grad_in),
                        g.weights.data_mut(),
                        g.bias.data_mut(),
                    )?;
                }
                LayerSpec::MaxPool => {
                    let idx = trace.pool_argmax[i]
                        .as_ref()
                        .ok_or_else(|| Error::State("missing pool indices".into()))?;
                    layers::maxpool_backward(&grad, idx, &mut grad_in);
                }
                LayerSpec::Relu => layers::relu_backward(input.data(), &grad, &mut grad_in),
                LayerSpec::SoftmaxXent => unreachable!(),
            }
            grad = grad_in;
        }
        add_extra(&mut grad, extra, 0)?;
        for (d, g) in grads.input.data_mut().iter_mut().zip(&grad) {
            *d += g;
        }
        Ok(())
    }

    /// Softmax cross-entropy loss and gradients for a chain with a
    /// softmax-xent head.
    pub fn loss_and_gradients(&self, x: &Tensor, label: usize) -> Result<(f64, Gradients)> {
        if !self.ends_with_softmax() {
            return Err(Error::State("chain has no softmax-xent head".into()));
        }
        let trace = self.forward_cached(x)?;
        let (loss, g) = layers::softmax_xent(trace.output().data(), label)?;
        let grads = self.backward(&trace, &Tensor::from_vec(g))?;
        Ok((loss, grads))
    }

    pub fn num_weight_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.has_params()).count()
    }

    pub fn num_pool_layers(&self) -> usize {
        self.layers.iter().filter(|l| l.is_pool()).count()
    }
}

fn add_extra(grad: &mut [f64], extra: &[(usize, &[f64])], at: usize) -> Result<()> {
    for (_, g) in extra.iter().filter(|(i, _)| *i == at) {
        if g.len() != grad.len() {
            return Err(Error::Shape(format!(
                "extra gradient at activation {at} has length {}, expected {}",
                g.len(),
                grad.len()
            )));
        }
        for (d, v) in grad.iter_mut().zip(g.iter()) {
            *d += v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_dense_quadratic_hand_gradient() {
        // L = 1/2 |Wx + b|^2  =>  dL/dW = y x^T, dL/db = y, dL/dx = W^T y
        let mut net = Network::zeros(vec![2], vec![LayerSpec::Dense { outputs: 2 }]).unwrap();
        net.params.layers[0].weights = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        net.params.layers[0].bias = Tensor::from_vec(vec![0.5, -1.0]);
        let x = Tensor::from_vec(vec![1.0, -1.0]);
        let trace = net.forward_cached(&x).unwrap();
        let y = trace.output().clone();
        assert_eq!(y.data(), &[-0.5, -2.0]);
        let g = net.backward(&trace, &y).unwrap();
        assert_eq!(g.params.layers[0].weights.data(), &[-0.5, 0.5, -2.0, 2.0]);
        assert_eq!(g.params.layers[0].bias.data(), &[-0.5, -2.0]);
        assert_eq!(g.input.data(), &[-6.5, -9.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = crate::rng::stage_rng(3, 0);
        let net = Network::new(
            vec![1, 2, 8],
            vec![
                LayerSpec::Conv {
                    rows: 2,
                    cols: 3,
                    channels: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool,
                LayerSpec::Dense { outputs: 2 },
            ],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::new(vec![1, 2, 8], (0..16).map(|v| v as f64 * 0.1).collect()).unwrap();
        let trace = net.forward_cached(&x).unwrap();
        let g = net.backward(&trace, &Tensor::zeros(vec![2])).unwrap();
        assert!(g.params.flat().iter().all(|&v| v == 0.0));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn foreign_trace_is_state_error() {
        let net = Network::zeros(vec![3], vec![LayerSpec::Dense { outputs: 2 }]).unwrap();
        let other = Network::zeros(vec![4], vec![LayerSpec::Dense { outputs: 2 }]).unwrap();
        let trace = other.forward_cached(&Tensor::zeros(vec![4])).unwrap();
        assert!(matches!(
            net.backward(&trace, &Tensor::zeros(vec![2])),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn kernel_wider_than_input_is_rejected_at_build() {
        let err = Network::zeros(
            vec![1, 2, 5],
            vec![LayerSpec::Conv {
                rows: 2,
                cols: 6,
                channels: 1,
            }],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(msg) if msg.contains("smaller kernels")));
    }

    #[test]
    fn forward_is_repeatable() {
        let mut rng = crate::rng::stage_rng(9, 0);
        let net = Network::new(
            vec![6],
            vec![
                LayerSpec::Dense { outputs: 4 },
                LayerSpec::Relu,
                LayerSpec::Dense { outputs: 3 },
            ],
            &mut rng,
        )
        .unwrap();
        let x = Tensor::from_vec(vec![0.1, -0.2, 0.3, 0.7, -1.1, 2.0]);
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(a.data(), b.data());
    }
}
