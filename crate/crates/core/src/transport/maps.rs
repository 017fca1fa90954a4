//! The two learned functions: the potential `f(x, y)` and the conditional map
//! `T(x, y)`.

use ndarray::{concatenate, s, Array1, Array2, Axis};

use super::enkf_block::EnKFBlock;
use crate::error::{FilterError, Result};
use crate::nn::{DenseNet, NetLayout, Tape};
use crate::rng::RandomSource;

/// A scalar function of `(x, y)` with an `x`-gradient, evaluated row-wise.
pub trait ScalarField {
    fn state_dim(&self) -> usize;

    fn values(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<Array1<f64>>;

    /// Values and `∇_x` at every row.
    fn values_and_grad_x(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)>;
}

pub(crate) fn join(x: &Array2<f64>, y: &Array2<f64>) -> Result<Array2<f64>> {
    if x.nrows() != y.nrows() {
        return Err(FilterError::DimensionMismatch {
            context: "(x, y) row count",
            expected: x.nrows(),
            actual: y.nrows(),
        });
    }
    Ok(concatenate(Axis(1), &[x.view(), y.view()]).expect("row counts checked"))
}

/// `f(x, y)`: a residual network on the concatenation `[x, y]` with scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub net: DenseNet,
    state_dim: usize,
}

impl Potential {
    pub fn new(state_dim: usize, obs_dim: usize, width: usize, blocks: usize, rng: &RandomSource) -> Result<Self> {
        let net = DenseNet::init(NetLayout::new(state_dim + obs_dim, width, blocks, 1), rng, true)?;
        Ok(Potential { net, state_dim })
    }

    pub fn from_net(net: DenseNet, state_dim: usize) -> Result<Self> {
        if net.output_dim() != 1 || net.input_dim() <= state_dim {
            return Err(FilterError::InvalidLayout(format!(
                "potential needs input > {state_dim} and scalar output, got {} -> {}",
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(Potential { net, state_dim })
    }

    pub fn forward_with_tape(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<Tape> {
        self.net.forward_with_tape(&join(x, y)?)
    }
}

impl ScalarField for Potential {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn values(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.net.forward(&join(x, y)?)?.column(0).to_owned())
    }

    fn values_and_grad_x(&self, x: &Array2<f64>, y: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let tape = self.forward_with_tape(x, y)?;
        let ones = Array2::ones((x.nrows(), 1));
        let (_, d_input) = self.net.backward_from(&tape, &ones, false)?;
        let grad_x = d_input.slice(s![.., ..self.state_dim]).to_owned();
        Ok((tape.output.column(0).to_owned(), grad_x))
    }
}

/// `T(x, y) = x̃ + trunk([x̃, y])`, where `x̃` is the EnKF-block feature
/// `x + K (y − y_paired)` when a block is attached and `x` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportMap {
    pub trunk: DenseNet,
    pub enkf: Option<EnKFBlock>,
    state_dim: usize,
}

/// Forward intermediates of a map evaluation, kept for training.
#[derive(Debug, Clone)]
pub struct MapTape {
    pub feature: Array2<f64>,
    pub trunk: Tape,
    pub output: Array2<f64>,
}

impl TransportMap {
    /// A map whose trunk outputs zero at initialization.
    pub fn new(state_dim: usize, obs_dim: usize, width: usize, blocks: usize, rng: &RandomSource) -> Result<Self> {
        let trunk = DenseNet::init(NetLayout::new(state_dim + obs_dim, width, blocks, state_dim), rng, true)?;
        Ok(TransportMap {
            trunk,
            enkf: None,
            state_dim,
        })
    }

    pub fn from_trunk(trunk: DenseNet, state_dim: usize) -> Result<Self> {
        if trunk.output_dim() != state_dim || trunk.input_dim() <= state_dim {
            return Err(FilterError::InvalidLayout(format!(
                "trunk must map {state_dim}+m -> {state_dim}, got {} -> {}",
                trunk.input_dim(),
                trunk.output_dim()
            )));
        }
        Ok(TransportMap {
            trunk,
            enkf: None,
            state_dim,
        })
    }

    pub fn with_enkf_block(mut self, block: Option<EnKFBlock>) -> Self {
        self.enkf = block;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn obs_dim(&self) -> usize {
        self.trunk.input_dim() - self.state_dim
    }

    /// `x̃` for each row. `paired_obs` is required when an EnKF block is attached.
    pub fn feature(&self, x: &Array2<f64>, paired_obs: Option<&Array2<f64>>, y: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.state_dim {
            return Err(FilterError::DimensionMismatch {
                context: "transport map state width",
                expected: self.state_dim,
                actual: x.ncols(),
            });
        }
        match &self.enkf {
            None => Ok(x.to_owned()),
            Some(block) => {
                let paired = paired_obs.ok_or(FilterError::InvalidConfig(
                    "EnKF block needs the paired simulated observations".into(),
                ))?;
                block.apply(x, paired, y)
            }
        }
    }

    pub fn forward_with_tape(
        &self,
        x: &Array2<f64>,
        paired_obs: Option<&Array2<f64>>,
        y: &Array2<f64>,
    ) -> Result<MapTape> {
        let feature = self.feature(x, paired_obs, y)?;
        self.forward_from_feature(feature, y)
    }

    pub(crate) fn forward_from_feature(&self, feature: Array2<f64>, y: &Array2<f64>) -> Result<MapTape> {
        let trunk = self.trunk.forward_with_tape(&join(&feature, y)?)?;
        let output = &feature + &trunk.output;
        Ok(MapTape { feature, trunk, output })
    }

    /// Row-wise `T(x_i, y_i)`.
    pub fn eval(&self, x: &Array2<f64>, paired_obs: Option<&Array2<f64>>, y: &Array2<f64>) -> Result<Array2<f64>> {
        let feature = self.feature(x, paired_obs, y)?;
        let correction = self.trunk.forward(&join(&feature, y)?)?;
        Ok(feature + &correction)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_trunk_without_block_is_identity() {
        let t = TransportMap::new(2, 1, 8, 2, &RandomSource::new(0)).unwrap();
        let x = array![[1.0, -1.0], [0.5, 2.0]];
        let y = array![[3.0], [4.0]];
        assert_eq!(t.eval(&x, None, &y).unwrap(), x);
    }

    #[test]
    fn zero_trunk_with_block_is_the_block() {
        let block = EnKFBlock::from_gain(array![[0.5]]).freeze();
        let t = TransportMap::new(1, 1, 4, 1, &RandomSource::new(0))
            .unwrap()
            .with_enkf_block(Some(block.clone()));
        let x = array![[1.0], [2.0]];
        let paired = array![[2.0], [0.0]];
        let y = array![[4.0], [4.0]];
        assert_eq!(t.eval(&x, Some(&paired), &y).unwrap(), block.apply(&x, &paired, &y).unwrap());
        assert!(t.eval(&x, None, &y).is_err());
    }

    #[test]
    fn potential_gradient_of_linear_field() {
        use crate::nn::{Layer, Linear};
        let net = DenseNet::from_layers(
            vec![Layer::Linear(Linear {
                weight: array![[2.0], [-1.0], [7.0]],
                bias: array![0.5],
            })],
            3,
        )
        .unwrap();
        let f = Potential::from_net(net, 2).unwrap();
        let (v, g) = f.values_and_grad_x(&array![[1.0, 1.0]], &array![[1.0]]).unwrap();
        assert_eq!(v, array![8.5]);
        assert_eq!(g, array![[2.0, -1.0]]);
    }
}
