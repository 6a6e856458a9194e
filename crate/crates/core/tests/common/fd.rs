//! Central-difference gradient oracle.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use tsalign_core::neuralnet::{cross_entropy_softmax, mse, mse_to_constant, Activation, Gradients, Network};
use tsalign_core::rng::{stage_rng, StageRng};

pub const H: f64 = 1e-5;
pub const MAX_REL_ERR: f64 = 1e-4;
/// Below this magnitude both gradients count as zero; differences are then
/// compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;
pub const WEIGHTS_PER_LAYER: usize = 48;
pub const DIRECTIONS: usize = 3;
pub const BATCH: usize = 8;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut StageRng) -> Array2<f64> {
    let n = Normal::new(0.0, 1.0).unwrap();
    Array2::from_shape_fn((rows, cols), |_| n.sample(rng))
}

/// Flat indices of every bias and a random sample of weights per layer.
pub fn coordinates(net: &Network, rng: &mut StageRng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut offset = 0;
    for layer in net.layers() {
        let nw = layer.weights.len();
        out.extend(sample(rng, nw, WEIGHTS_PER_LAYER.min(nw)).into_iter().map(|i| offset + i));
        out.extend(offset + nw..offset + nw + layer.bias.len());
        offset += nw + layer.bias.len();
    }
    out
}

pub fn shifted(net: &Network, direction: &[f64], step: f64) -> Network {
    let mut out = net.clone();
    let mut it = direction.iter();
    for layer in out.layers_mut() {
        for w in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *w += step * it.next().unwrap();
        }
    }
    out
}

/// Max relative error over sampled coordinates and random directions.
pub fn check<F: Fn(&Network) -> f64>(net: &Network, grads: &Gradients, loss: F, rng: &mut StageRng) -> f64 {
    let analytic: Vec<f64> = grads.iter_values().collect();
    let params = net.flat_params();
    assert_eq!(analytic.len(), params.len());
    let mut worst = 0.0f64;
    for i in coordinates(net, rng) {
        let mut plus = net.clone();
        plus.set_flat_param(i, params[i] + H).unwrap();
        let mut minus = net.clone();
        minus.set_flat_param(i, params[i] - H).unwrap();
        let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    let n = Normal::new(0.0, 1.0).unwrap();
    for _ in 0..DIRECTIONS {
        let v: Vec<f64> = (0..params.len()).map(|_| n.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.into_iter().map(|x| x / norm).collect();
        let numeric = (loss(&shifted(net, &v, H)) - loss(&shifted(net, &v, -H))) / (2.0 * H);
        let directional: f64 = analytic.iter().zip(&v).map(|(a, b)| a * b).sum();
        worst = worst.max(rel_err(directional, numeric));
    }
    worst
}

pub enum Head {
    Regression,
    Domain,
    Classes(usize),
}

pub fn shape_error(dims: [usize; 3], output: Activation, head: Head, seed: u64) -> f64 {
    let mut rng = stage_rng(seed, "fd", &[&dims[0].to_le_bytes(), &dims[2].to_le_bytes()]);
    let net = Network::mlp(&dims, &[Activation::Relu, output], &mut rng).unwrap();
    let x = gaussian(BATCH, dims[0], &mut rng);
    let target = gaussian(BATCH, dims[2], &mut rng);
    let classes: Vec<usize> = match head {
        Head::Classes(k) => (0..BATCH).map(|_| rng.random_range(0..k)).collect(),
        _ => Vec::new(),
    };
    let loss_and_grad = |out: &Array2<f64>| match head {
        Head::Regression => mse(out.view(), target.view()).unwrap(),
        Head::Domain => mse_to_constant(out.view(), 1.0).unwrap(),
        Head::Classes(_) => cross_entropy_softmax(out.view(), &classes).unwrap(),
    };
    let (out, cache) = net.forward(x.view()).unwrap();
    let (_, g_out) = loss_and_grad(&out);
    let grads = net.backward(&cache, g_out.view()).unwrap().params;
    check(&net, &grads, |n| loss_and_grad(&n.predict(x.view()).unwrap()).0, &mut rng)
}
