use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// One affine layer followed by an elementwise activation.
///
/// `weight` is `out × in`, so a batch `x` (rows are samples) maps to
/// `act(x · Wᵀ + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `act(input · Wᵀ + b)` without validation.
    pub fn apply(&self, input: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = input.dot(&self.weight.t());
        out += &self.bias;
        if self.activation == Activation::Tanh {
            out.mapv_inplace(f64::tanh);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    layers: Vec<Dense>,
}

/// Activations recorded by [`DenseNetwork::forward_trace`], consumed by
/// [`DenseNetwork::backward`]. `values[0]` is the input, `values[k + 1]` the
/// output of layer `k`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.values.last().expect("trace holds at least the input")
    }
}

/// Parameter-shaped gradient (or moment) buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Gradients {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            *w *= factor;
        }
        for b in &mut self.biases {
            *b *= factor;
        }
    }

    pub fn matches(&self, net: &DenseNetwork) -> bool {
        self.weights.len() == net.layers.len()
            && self.biases.len() == net.layers.len()
            && net.layers.iter().enumerate().all(|(k, l)| {
                self.weights[k].dim() == l.weight.dim() && self.biases[k].len() == l.bias.len()
            })
    }
}

impl DenseNetwork {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.output_dim() {
                return Err(Error::Dimension {
                    context: "layer bias",
                    expected: layer.output_dim(),
                    found: layer.bias.len(),
                });
            }
            if k > 0 && layers[k - 1].output_dim() != layer.input_dim() {
                return Err(Error::Dimension {
                    context: "layer chaining",
                    expected: layers[k - 1].output_dim(),
                    found: layer.input_dim(),
                });
            }
            if !layer.weight.iter().chain(layer.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {k}")));
            }
        }
        Ok(DenseNetwork { layers })
    }

    /// Builds a network with layer widths `sizes[0] → … → sizes[last]`.
    /// Hidden layers use `hidden`, the last layer uses `output`. Biases start
    /// at zero; weights are uniform in `±√(6/(fan_in+fan_out))`.
    pub fn init<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "network sizes must have ≥ 2 positive entries, got {sizes:?}"
            )));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                Dense {
                    weight: Array2::from_shape_fn((fan_out, fan_in), |_| dist.sample(rng)),
                    bias: Array1::zeros(fan_out),
                    activation: if k == last { output } else { hidden },
                }
            })
            .collect();
        DenseNetwork::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                context: "network input width",
                expected: self.input_dim(),
                found: input.ncols(),
            });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network input".into()));
        }
        Ok(())
    }

    /// Row-wise forward pass.
    pub fn forward(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        let mut current = self.layers[0].apply(&input);
        for layer in &self.layers[1..] {
            current = layer.apply(&current.view());
        }
        Ok(current)
    }

    /// Forward pass that keeps every intermediate activation for
    /// [`backward`](Self::backward).
    pub fn forward_trace(&self, input: ArrayView2<f64>) -> Result<Trace> {
        self.check_input(&input)?;
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_owned());
        for (k, layer) in self.layers.iter().enumerate() {
            let out = layer.apply(&values[k].view());
            if !out.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("output of layer {k}")));
            }
            values.push(out);
        }
        Ok(Trace { values })
    }

    /// Reverse-mode pass. `grad_output` is ∂loss/∂output for every row of the
    /// traced batch; returns parameter gradients and ∂loss/∂input.
    pub fn backward(
        &self,
        trace: &Trace,
        grad_output: ArrayView2<f64>,
    ) -> Result<(Gradients, Array2<f64>)> {
        if grad_output.dim() != trace.output().dim() {
            return Err(Error::Dimension {
                context: "backward gradient rows×cols",
                expected: trace.output().len(),
                found: grad_output.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_output.to_owned();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            if layer.activation == Activation::Tanh {
                // d tanh(u)/du = 1 - tanh(u)^2, and values[k + 1] holds tanh(u).
                Zip::from(&mut delta)
                    .and(&trace.values[k + 1])
                    .for_each(|d, &t| *d *= 1.0 - t * t);
            }
            if !delta.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient at layer {k}")));
            }
            grads.weights[k] = delta.t().dot(&trace.values[k]);
            grads.biases[k] = delta.sum_axis(Axis(0));
            delta = delta.dot(&layer.weight);
        }
        Ok((grads, delta))
    }
}

/// A scalar loss of the network output: returns the value and ∂loss/∂output.
pub trait Loss {
    fn evaluate(&self, output: ArrayView2<f64>) -> (f64, Array2<f64>);
}

impl<F> Loss for F
where
    F: Fn(ArrayView2<f64>) -> (f64, Array2<f64>),
{
    fn evaluate(&self, output: ArrayView2<f64>) -> (f64, Array2<f64>) {
        self(output)
    }
}

/// Exact gradient of `loss(net(input))` with respect to every parameter.
pub fn gradient<L: Loss + ?Sized>(
    net: &DenseNetwork,
    input: ArrayView2<f64>,
    loss: &L,
) -> Result<(f64, Gradients)> {
    let trace = net.forward_trace(input)?;
    let (value, grad_out) = loss.evaluate(trace.output().view());
    if !value.is_finite() {
        return Err(Error::NonFinite("loss value".into()));
    }
    let (grads, _) = net.backward(&trace, grad_out.view())?;
    Ok((value, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_net() -> DenseNetwork {
        DenseNetwork::new(vec![Dense {
            weight: Array2::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let out = identity_net().forward(array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(out, array![[1.0, 2.0]]);
    }

    #[test]
    fn tanh_layer_maps_zero_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = DenseNetwork::init(&[4, 3], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let out = net.forward(Array2::zeros((1, 4)).view()).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_layer_forward_by_hand() {
        // h = tanh([[1, -1], [0.5, 2]] x + [0, 0.1]), y = [[2, 1], [-1, 0.5]] h + [0.3, 0]
        // x = [0.5, 0.25]: pre-activation = [0.25, 0.85]
        let net = DenseNetwork::new(vec![
            Dense {
                weight: array![[1.0, -1.0], [0.5, 2.0]],
                bias: array![0.0, 0.1],
                activation: Activation::Tanh,
            },
            Dense {
                weight: array![[2.0, 1.0], [-1.0, 0.5]],
                bias: array![0.3, 0.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let out = net.forward(array![[0.5, 0.25]].view()).unwrap();
        let h0 = 0.244_918_662_403_709_13_f64; // tanh(0.25)
        let h1 = 0.691_069_469_832_930_5_f64; // tanh(0.85)
        assert!((h0 - 0.25f64.tanh()).abs() < 1e-15);
        assert!((h1 - 0.85f64.tanh()).abs() < 1e-15);
        assert!((out[[0, 0]] - (2.0 * h0 + h1 + 0.3)).abs() < 1e-12);
        assert!((out[[0, 1]] - (-h0 + 0.5 * h1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let err = identity_net().forward(array![[1.0, 2.0, 3.0]].view());
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn rejects_unchained_layers() {
        let err = DenseNetwork::new(vec![
            Dense {
                weight: Array2::zeros((3, 2)),
                bias: Array1::zeros(3),
                activation: Activation::Tanh,
            },
            Dense {
                weight: Array2::zeros((1, 2)),
                bias: Array1::zeros(1),
                activation: Activation::Identity,
            },
        ]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn half_squared_norm_gradient_on_bias_is_output() {
        let net = identity_net();
        let x = array![[1.5, -2.0]];
        let loss = |out: ArrayView2<f64>| (0.5 * out.mapv(|v| v * v).sum(), out.to_owned());
        let (value, grads) = gradient(&net, x.view(), &loss).unwrap();
        assert_eq!(value, 0.5 * (1.5 * 1.5 + 4.0));
        assert_eq!(grads.biases[0], array![1.5, -2.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = DenseNetwork::init(&[3, 5, 2], Activation::Tanh, Activation::Identity, &mut rng)
            .unwrap();
        let loss = |out: ArrayView2<f64>| (4.0, Array2::zeros(out.raw_dim()));
        let (_, grads) = gradient(&net, array![[0.1, 0.2, 0.3]].view(), &loss).unwrap();
        assert!(grads.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));
        assert!(grads.biases.iter().all(|b| b.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let net = DenseNetwork::new(vec![Dense {
            weight: array![[1e308, 1e308]],
            bias: array![0.0],
            activation: Activation::Identity,
        }])
        .unwrap();
        let err = net.forward_trace(array![[10.0, 10.0]].view()).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = DenseNetwork::init(&[4, 8, 3], Activation::Tanh, Activation::Identity, &mut rng)
            .unwrap();
        let x = Array2::from_shape_fn((5, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let a = net.forward(x.view()).unwrap();
        let b = net.forward(x.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}
