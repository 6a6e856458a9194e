use super::{Gradients, Network};
use crate::error::{Error, Result};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(net: &Network, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Gradients::zeros_like(net),
            second: Gradients::zeros_like(net),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Apply one update. Parameters are rounded to single precision after
    /// the update. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.first.layers.len() {
            return Err(Error::Shape("gradient does not match optimizer state".into()));
        }
        for (i, (g, m)) in grads.layers.iter().zip(&self.first.layers).enumerate() {
            if g.weights.raw_dim() != m.weights.raw_dim() || g.bias.len() != m.bias.len() {
                return Err(Error::Shape(format!("gradient shape mismatch in layer {i}")));
            }
            if let Some(bad) = g.weights.iter().chain(g.bias.iter()).find(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in layer {i} at optimizer step {}",
                    self.step + 1
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (lr, eps) = (self.lr, self.eps);

        let layers = net.layers_mut();
        for (((layer, g), m), v) in layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p = (*p - lr * m_hat / (v_hat.sqrt() + eps)) as f32 as f64;
            };
            ndarray::Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(())
    }
}
