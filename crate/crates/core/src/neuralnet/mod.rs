//! Small dense feedforward networks with analytic backprop.
//!
//! Parameters are kept at single-precision values (every write rounds
//! through `f32`), so a saved network reloads bit-exactly. Activations and
//! gradients are computed in `f64`.

mod adam;
mod loss;
mod serialize;

pub use adam::Adam;
pub use loss::{cross_entropy_softmax, mse, mse_to_constant, softmax};
pub use serialize::{NETWORK_MAGIC, NETWORK_VERSION};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::distr::Uniform;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Linear),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Linear => {}
        }
    }
}

/// One affine layer followed by an activation. `weights` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// He-normal for relu layers, Glorot-uniform otherwise; zero bias.
    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let weights = match activation {
            Activation::Relu => {
                let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("valid std");
                Array2::from_shape_simple_fn((in_dim, out_dim), || normal.sample(rng))
            }
            Activation::Tanh | Activation::Linear => {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let uniform = Uniform::new_inclusive(-limit, limit).expect("valid range");
                Array2::from_shape_simple_fn((in_dim, out_dim), || uniform.sample(rng))
            }
        };
        let mut layer = Self {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        };
        layer.round_to_f32();
        layer
    }

    fn round_to_f32(&mut self) {
        self.weights.mapv_inplace(|v| v as f32 as f64);
        self.bias.mapv_inplace(|v| v as f32 as f64);
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.layers {
            g.weights *= factor;
            g.bias *= factor;
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Gradients, factor: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Shape("gradient layer counts differ".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if a.weights.raw_dim() != b.weights.raw_dim() || a.bias.len() != b.bias.len() {
                return Err(Error::Shape("gradient shapes differ".into()));
            }
            a.weights.scaled_add(factor, &b.weights);
            a.bias.scaled_add(factor, &b.bias);
        }
        Ok(())
    }

    pub fn iter_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|g| g.weights.iter().chain(g.bias.iter()).copied())
    }

    pub fn max_abs(&self) -> f64 {
        self.iter_values().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Intermediate values from [`Network::forward`], consumed by
/// [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Post-activation output of each layer.
    outputs: Vec<Array2<f64>>,
}

/// Result of [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Backward {
    pub params: Gradients,
    pub input: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Dense>,
    /// Bumped on every parameter mutation; caches from older generations
    /// are refused by `backward`.
    generation: u64,
}

impl Network {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(Self {
            layers,
            generation: 0,
        })
    }

    /// Randomly initialised MLP. `dims` has one more entry than `activations`.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if dims.len() != activations.len() + 1 {
            return Err(Error::Shape(format!(
                "{} dims for {} activations",
                dims.len(),
                activations.len()
            )));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &act)| Dense::init(d[0], d[1], act, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable access to the parameters. Invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            inputs.push(current);
            current = z;
            outputs.push(current.clone());
        }
        Ok((
            current,
            ForwardCache {
                generation: self.generation,
                inputs,
                outputs,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut current = x.to_owned();
        for layer in &self.layers {
            let mut z = current.dot(&layer.weights);
            z += &layer.bias;
            layer.activation.apply(&mut z);
            current = z;
        }
        Ok(current)
    }

    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<Backward> {
        if cache.generation != self.generation || cache.inputs.len() != self.layers.len() {
            return Err(Error::State(
                "forward cache does not belong to the current parameters".into(),
            ));
        }
        let last = &cache.outputs[cache.outputs.len() - 1];
        if grad_output.dim() != last.dim() {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, forward output was {:?}",
                grad_output.dim(),
                last.dim()
            )));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = grad_output.to_owned();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let out = &cache.outputs[i];
            match layer.activation {
                Activation::Relu => {
                    Zip::from(&mut upstream)
                        .and(out)
                        .for_each(|g, &a| if a <= 0.0 { *g = 0.0 });
                }
                Activation::Tanh => {
                    Zip::from(&mut upstream)
                        .and(out)
                        .for_each(|g, &a| *g *= 1.0 - a * a);
                }
                Activation::Linear => {}
            }
            let weights = cache.inputs[i].t().dot(&upstream);
            let bias = upstream.sum_axis(Axis(0));
            let next = upstream.dot(&layer.weights.t());
            grads.push(LayerGrad { weights, bias });
            upstream = next;
        }
        grads.reverse();
        Ok(Backward {
            params: Gradients { layers: grads },
            input: upstream,
        })
    }

    /// Returns the total parameter vector, in layer order (weights then
    /// bias). Used for equality checks and finite-difference tests.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    /// Set one parameter by its index into [`Network::flat_params`]. The
    /// value is stored as given, without rounding.
    pub fn set_flat_param(&mut self, index: usize, value: f64) -> Result<()> {
        let mut remaining = index;
        for layer in self.layers_mut() {
            let nw = layer.weights.len();
            if remaining < nw {
                let cols = layer.weights.ncols();
                layer.weights[[remaining / cols, remaining % cols]] = value;
                return Ok(());
            }
            remaining -= nw;
            if remaining < layer.bias.len() {
                layer.bias[remaining] = value;
                return Ok(());
            }
            remaining -= layer.bias.len();
        }
        Err(Error::Range(format!("parameter index {index} out of range")))
    }

    /// A network of the same shape with every parameter zero.
    pub fn zeroed(&self) -> Self {
        let layers = self
            .layers
            .iter()
            .map(|l| Dense {
                weights: Array2::zeros(l.weights.raw_dim()),
                bias: Array1::zeros(l.bias.raw_dim()),
                activation: l.activation,
            })
            .collect();
        Self {
            layers,
            generation: 0,
        }
    }
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Stack row vectors into a batch matrix.
pub fn batch_from_rows<'a, I>(rows: I, dim: usize) -> Result<Array2<f64>>
where
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for row in rows {
        if row.len() != dim {
            return Err(Error::Shape(format!("row has {} values, expected {dim}", row.len())));
        }
        data.extend(row.iter().map(|&v| f64::from(v)));
        n += 1;
    }
    Ok(Array2::from_shape_vec((n, dim), data).expect("shape matches data"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::array;

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let layer = Dense {
            weights: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Linear,
        };
        let net = Network::new(vec![layer]).unwrap();
        let x = array![[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]];
        assert_eq!(net.predict(x.view()).unwrap(), x);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let layer = Dense {
            weights: Array2::zeros((4, 2)),
            bias: array![0.5, -1.5],
            activation: Activation::Linear,
        };
        let net = Network::new(vec![layer]).unwrap();
        let out = net.predict(Array2::ones((3, 4)).view()).unwrap();
        for row in out.rows() {
            assert_eq!(row.to_vec(), vec![0.5, -1.5]);
        }
    }

    #[test]
    fn relu_zeroes_negative_preactivations() {
        let layer = Dense {
            weights: Array2::eye(3),
            bias: array![0.0, -10.0, 0.0],
            activation: Activation::Relu,
        };
        let net = Network::new(vec![layer]).unwrap();
        let out = net.predict(array![[-1.0, 2.0, -0.5]].view()).unwrap();
        assert_eq!(out, array![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn dimension_mismatches_are_shape_errors() {
        let mut rng = rng_from(1);
        let net = Network::mlp(&[4, 3, 2], &[Activation::Relu, Activation::Linear], &mut rng).unwrap();
        assert!(matches!(net.forward(Array2::zeros((2, 5)).view()), Err(Error::Shape(_))));
        let (_, cache) = net.forward(Array2::zeros((2, 4)).view()).unwrap();
        assert!(matches!(
            net.backward(&cache, Array2::zeros((2, 3)).view()),
            Err(Error::Shape(_))
        ));
        let bad = vec![
            Dense::init(4, 3, Activation::Relu, &mut rng),
            Dense::init(2, 2, Activation::Linear, &mut rng),
        ];
        assert!(Network::new(bad).is_err());
    }

    #[test]
    fn stale_cache_is_refused() {
        let mut rng = rng_from(2);
        let mut net = Network::mlp(&[3, 2], &[Activation::Tanh], &mut rng).unwrap();
        let (out, cache) = net.forward(Array2::ones((1, 3)).view()).unwrap();
        net.layers_mut()[0].bias[0] += 1.0;
        assert!(matches!(
            net.backward(&cache, Array2::ones(out.raw_dim()).view()),
            Err(Error::State(_))
        ));
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = rng_from(3);
        let net = Network::mlp(&[5, 4, 3], &[Activation::Tanh, Activation::Linear], &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 5), |(i, j)| (i as f64 - j as f64) * 0.3);
        let (out, cache) = net.forward(x.view()).unwrap();
        let back = net.backward(&cache, Array2::zeros(out.raw_dim()).view()).unwrap();
        assert_eq!(back.params.max_abs(), 0.0);
        assert!(back.input.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_scale_linearly_with_output_gradient() {
        let mut rng = rng_from(4);
        let net = Network::mlp(&[5, 4, 3], &[Activation::Relu, Activation::Linear], &mut rng).unwrap();
        let x = Array2::from_shape_fn((6, 5), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let (out, cache) = net.forward(x.view()).unwrap();
        let g = Array2::from_shape_fn(out.raw_dim(), |(i, j)| 0.1 * (i + 2 * j) as f64 - 0.4);
        let once = net.backward(&cache, g.view()).unwrap();
        let twice = net.backward(&cache, (&g * 2.0).view()).unwrap();
        for (a, b) in once.params.iter_values().zip(twice.params.iter_values()) {
            assert_eq!(2.0 * a, b);
        }
    }

    #[test]
    fn init_values_are_single_precision() {
        let mut rng = rng_from(5);
        let net = Network::mlp(&[8, 8], &[Activation::Relu], &mut rng).unwrap();
        for v in net.flat_params() {
            assert_eq!(v, v as f32 as f64);
        }
    }

    #[test]
    fn flat_param_indexing_matches_layout() {
        let mut rng = rng_from(6);
        let mut net = Network::mlp(&[2, 3, 1], &[Activation::Relu, Activation::Linear], &mut rng).unwrap();
        let n = net.param_count();
        assert_eq!(net.flat_params().len(), n);
        for i in 0..n {
            net.set_flat_param(i, i as f64).unwrap();
        }
        assert_eq!(net.flat_params(), (0..n).map(|i| i as f64).collect::<Vec<_>>());
        assert!(net.set_flat_param(n, 0.0).is_err());
    }
}
