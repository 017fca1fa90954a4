//! Fully connected residual networks with hand-written reverse mode.
//!
//! A network is a sequence of [`Layer`]s applied to a batch (one sample per
//! row). Residual blocks compute `h + W₂ relu(W₁ h + b₁) + b₂`, so a block with
//! all-zero parameters is the identity.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{FilterError, Result};
use crate::rng::{standard_normal, RandomSource};

/// Affine map `x ↦ x W + b` on row vectors. `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    /// He-normal weights, zero bias.
    pub fn he(input: usize, output: usize, rng: &RandomSource) -> Self {
        let mut stream = rng.stream();
        let scale = (2.0 / input as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((input, output), || scale * standard_normal(&mut stream));
        Linear {
            weight,
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weight);
        out += &self.bias;
        out
    }

    /// Returns `(dW, db, dx)` for cotangent `g` at input `x`.
    fn pullback(&self, x: &Array2<f64>, g: &Array2<f64>, need_params: bool) -> (Option<Linear>, Array2<f64>) {
        let dx = g.dot(&self.weight.t());
        let grads = need_params.then(|| Linear {
            weight: x.t().dot(g),
            bias: g.sum_axis(Axis(0)),
        });
        (grads, dx)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub inner: Linear,
    pub outer: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Relu,
    Residual(ResidualBlock),
}

/// Shape of the standard architecture: input projection, `blocks` residual
/// blocks of width `width`, linear output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetLayout {
    pub input: usize,
    pub width: usize,
    pub blocks: usize,
    pub output: usize,
}

impl NetLayout {
    pub fn new(input: usize, width: usize, blocks: usize, output: usize) -> Self {
        NetLayout {
            input,
            width,
            blocks,
            output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.width == 0 || self.output == 0 {
            return Err(FilterError::InvalidLayout(format!("widths must be >= 1: {self:?}")));
        }
        Ok(())
    }
}

/// Parameter derivatives, one [`Linear`] per parameterized layer in network order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub linears: Vec<Linear>,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.linears
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.linears {
            l.weight *= s;
            l.bias *= s;
        }
    }

    /// Elementwise sum; both gradients must come from the same network.
    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.linears.iter_mut().zip(&other.linears) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
    input_dim: usize,
    output_dim: usize,
}

/// Intermediate values kept by a forward pass for [`DenseNet::backward_from`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer; residual blocks also keep their pre-activation.
    inputs: Vec<Array2<f64>>,
    pre_activations: Vec<Option<Array2<f64>>>,
    pub output: Array2<f64>,
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

fn relu_mask(g: &Array2<f64>, z: &Array2<f64>) -> Array2<f64> {
    let mut out = g.clone();
    out.zip_mut_with(z, |gv, &zv| {
        if zv <= 0.0 {
            *gv = 0.0
        }
    });
    out
}

impl DenseNet {
    /// Builds a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer>, input_dim: usize) -> Result<Self> {
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Linear(l) => {
                    if l.input_dim() != width || l.bias.len() != l.output_dim() {
                        return Err(FilterError::InvalidLayout(format!("layer {i}: linear shape does not chain")));
                    }
                    width = l.output_dim();
                }
                Layer::Relu => {}
                Layer::Residual(b) => {
                    let ok = b.inner.input_dim() == width
                        && b.outer.input_dim() == b.inner.output_dim()
                        && b.outer.output_dim() == width
                        && b.inner.bias.len() == b.inner.output_dim()
                        && b.outer.bias.len() == width;
                    if !ok {
                        return Err(FilterError::InvalidLayout(format!("layer {i}: residual block shape does not chain")));
                    }
                }
            }
        }
        if input_dim == 0 || width == 0 {
            return Err(FilterError::InvalidLayout("zero-width network".into()));
        }
        Ok(DenseNet {
            layers,
            input_dim,
            output_dim: width,
        })
    }

    /// The standard architecture with He-initialized hidden layers. With
    /// `zero_last` the output head is zeroed so the network computes 0.
    pub fn init(layout: NetLayout, rng: &RandomSource, zero_last: bool) -> Result<Self> {
        layout.validate()?;
        let mut layers = Vec::with_capacity(layout.blocks + 2);
        layers.push(Layer::Linear(Linear::he(layout.input, layout.width, &rng.fork(0))));
        for b in 0..layout.blocks {
            let base = 1 + 2 * b as u64;
            layers.push(Layer::Residual(ResidualBlock {
                inner: Linear::he(layout.width, layout.width, &rng.fork(base)),
                outer: Linear::he(layout.width, layout.width, &rng.fork(base + 1)),
            }));
        }
        let head = if zero_last {
            Linear::zeros(layout.width, layout.output)
        } else {
            Linear::he(layout.width, layout.output, &rng.fork(u64::MAX))
        };
        layers.push(Layer::Linear(head));
        DenseNet::from_layers(layers, layout.input)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Parameterized sub-layers in network order.
    pub fn linears(&self) -> Vec<&Linear> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => out.push(l),
                Layer::Relu => {}
                Layer::Residual(b) => {
                    out.push(&b.inner);
                    out.push(&b.outer);
                }
            }
        }
        out
    }

    pub fn linears_mut(&mut self) -> Vec<&mut Linear> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => out.push(l),
                Layer::Relu => {}
                Layer::Residual(b) => {
                    out.push(&mut b.inner);
                    out.push(&mut b.outer);
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.linears().iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.linears()
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// A gradient of zeros shaped like this network.
    pub fn zero_gradient(&self) -> Gradient {
        Gradient {
            linears: self
                .linears()
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    fn check_input(&self, input: &Array2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim {
            return Err(FilterError::DimensionMismatch {
                context: "network input width",
                expected: self.input_dim,
                actual: input.ncols(),
            });
        }
        Ok(())
    }

    /// Batched evaluation, one sample per row.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(input)?;
        let mut h = input.to_owned();
        for layer in &self.layers {
            h = match layer {
                Layer::Linear(l) => l.apply(&h),
                Layer::Relu => relu(&h),
                Layer::Residual(b) => {
                    let a = relu(&b.inner.apply(&h));
                    h + &b.outer.apply(&a)
                }
            };
        }
        Ok(h)
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward_with_tape(&self, input: &Array2<f64>) -> Result<Tape> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut h = input.to_owned();
        for layer in &self.layers {
            let next = match layer {
                Layer::Linear(l) => {
                    pre_activations.push(None);
                    l.apply(&h)
                }
                Layer::Relu => {
                    pre_activations.push(None);
                    relu(&h)
                }
                Layer::Residual(b) => {
                    let z = b.inner.apply(&h);
                    let out = &h + &b.outer.apply(&relu(&z));
                    pre_activations.push(Some(z));
                    out
                }
            };
            inputs.push(h);
            h = next;
        }
        Ok(Tape {
            inputs,
            pre_activations,
            output: h,
        })
    }

    /// Reverse pass for `⟨cotangent, forward(input)⟩`. Parameter gradients are
    /// skipped when `need_params` is false; the input cotangent is always returned.
    pub fn backward_from(
        &self,
        tape: &Tape,
        output_cotangent: &Array2<f64>,
        need_params: bool,
    ) -> Result<(Option<Gradient>, Array2<f64>)> {
        if output_cotangent.dim() != tape.output.dim() {
            return Err(FilterError::DimensionMismatch {
                context: "output cotangent shape",
                expected: tape.output.len(),
                actual: output_cotangent.len(),
            });
        }
        let mut grads_rev: Vec<Linear> = Vec::new();
        let mut g = output_cotangent.to_owned();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[idx];
            g = match layer {
                Layer::Linear(l) => {
                    let (dl, dx) = l.pullback(x, &g, need_params);
                    grads_rev.extend(dl);
                    dx
                }
                Layer::Relu => relu_mask(&g, x),
                Layer::Residual(b) => {
                    let z = tape.pre_activations[idx].as_ref().expect("residual tape entry");
                    let a = relu(z);
                    let (d_outer, da) = b.outer.pullback(&a, &g, need_params);
                    let dz = relu_mask(&da, z);
                    let (d_inner, dx_inner) = b.inner.pullback(x, &dz, need_params);
                    grads_rev.extend(d_outer);
                    grads_rev.extend(d_inner);
                    g + &dx_inner
                }
            };
        }
        let grads = need_params.then(|| {
            grads_rev.reverse();
            Gradient { linears: grads_rev }
        });
        Ok((grads, g))
    }

    /// Exact reverse-mode derivatives of `⟨cotangent, forward(input)⟩` with
    /// respect to parameters and inputs.
    pub fn backward(&self, input: &Array2<f64>, output_cotangent: &Array2<f64>) -> Result<(Gradient, Array2<f64>)> {
        let tape = self.forward_with_tape(input)?;
        let (grads, dx) = self.backward_from(&tape, output_cotangent, true)?;
        Ok((grads.expect("requested parameter gradients"), dx))
    }
}
