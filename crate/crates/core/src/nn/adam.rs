use serde::{Deserialize, Serialize};

use super::dense::{DenseNet, Gradient};
use crate::error::{FilterError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Gradient,
    second: Gradient,
    step: u64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        AdamState::with_config(net, AdamConfig::default())
    }

    pub fn with_config(net: &DenseNet, config: AdamConfig) -> Self {
        AdamState {
            config,
            first: net.zero_gradient(),
            second: net.zero_gradient(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update *descending* `grad`.
    ///
    /// A non-finite gradient is rejected before anything is modified.
    pub fn step(&mut self, net: &mut DenseNet, grad: &Gradient, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(FilterError::InvalidConfig(format!("learning rate must be positive, got {lr}")));
        }
        if grad.linears.len() != self.first.linears.len() {
            return Err(FilterError::DimensionMismatch {
                context: "adam gradient layers",
                expected: self.first.linears.len(),
                actual: grad.linears.len(),
            });
        }
        for (g, m) in grad.linears.iter().zip(&self.first.linears) {
            if g.weight.dim() != m.weight.dim() || g.bias.dim() != m.bias.dim() {
                return Err(FilterError::DimensionMismatch {
                    context: "adam gradient shape",
                    expected: m.weight.len(),
                    actual: g.weight.len(),
                });
            }
        }
        if !grad.is_finite() {
            return Err(FilterError::NonFinite("gradient"));
        }
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        };
        let layers = net.linears_mut();
        for (((param, g), m), v) in layers
            .into_iter()
            .zip(&grad.linears)
            .zip(&mut self.first.linears)
            .zip(&mut self.second.linears)
        {
            ndarray::Zip::from(&mut param.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .and(&g.weight)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut param.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::{Layer, Linear};
    use ndarray::array;

    fn scalar_net(w: f64) -> DenseNet {
        let l = Linear {
            weight: array![[w]],
            bias: array![0.0],
        };
        DenseNet::from_layers(vec![Layer::Linear(l)], 1).unwrap()
    }

    fn scalar_grad(g: f64) -> Gradient {
        Gradient {
            linears: vec![Linear {
                weight: array![[g]],
                bias: array![0.0],
            }],
        }
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut net = scalar_net(0.0);
        let mut state = AdamState::new(&net);
        state.step(&mut net, &scalar_grad(1.0), 0.1).unwrap();
        // m̂ = 1, v̂ = 1 after bias correction
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((net.linears()[0].weight[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut net = scalar_net(0.7);
        let mut state = AdamState::new(&net);
        for _ in 0..5 {
            state.step(&mut net, &scalar_grad(0.0), 0.1).unwrap();
        }
        assert_eq!(net.linears()[0].weight[[0, 0]], 0.7);
    }

    #[test]
    fn deterministic_updates() {
        let mut a = scalar_net(0.2);
        let mut b = scalar_net(0.2);
        let mut sa = AdamState::new(&a);
        let mut sb = AdamState::new(&b);
        for g in [0.3, -1.0, 2.0] {
            sa.step(&mut a, &scalar_grad(g), 0.01).unwrap();
            sb.step(&mut b, &scalar_grad(g), 0.01).unwrap();
        }
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn non_finite_gradient_is_rejected_untouched() {
        let mut net = scalar_net(0.5);
        let mut state = AdamState::new(&net);
        let before = (net.clone(), state.clone());
        assert!(state.step(&mut net, &scalar_grad(f64::NAN), 0.1).is_err());
        assert_eq!((net, state), before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        // loss = ½(w − 3)²
        let mut net = scalar_net(0.0);
        let mut state = AdamState::new(&net);
        for _ in 0..2000 {
            let w = net.linears()[0].weight[[0, 0]];
            state.step(&mut net, &scalar_grad(w - 3.0), 0.05).unwrap();
        }
        assert!((net.linears()[0].weight[[0, 0]] - 3.0).abs() < 1e-3);
    }
}
