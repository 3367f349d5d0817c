//! Small fully connected networks whose forward pass can run either on a
//! [`Tape`] (for training) or directly on arrays (for inference).

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
        }
    }
}

/// A named trainable array together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    #[serde(skip, default)]
    pub grad: Option<Array2<f64>>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Array2<f64>) -> Self {
        Param {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn accumulate(&mut self, g: &Array2<f64>) {
        match &mut self.grad {
            Some(acc) => *acc += g,
            None => self.grad = Some(g.clone()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

/// Affine layer `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.value.ncols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
    /// Multiplies the squashed output, e.g. to map `(-1, 1)` onto an action range.
    output_scale: f64,
}

/// An [`Mlp`] whose parameters have been placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var)>,
    hidden: Activation,
    output: Activation,
    output_scale: f64,
    inputs: usize,
}

impl Mlp {
    /// Builds a network with layer widths `sizes[0] → … → sizes[last]`,
    /// initialized uniformly in `±1/√fan_in` for weights and biases.
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Config(format!(
                "network `{name}` needs at least two nonzero layer widths, got {sizes:?}"
            )));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let weight = Array2::from_shape_fn((w[0], w[1]), |_| rng.random_range(-bound..bound));
                let bias = Array2::from_shape_fn((1, w[1]), |_| rng.random_range(-bound..bound));
                Dense {
                    weight: Param::new(format!("{name}.{i}.weight"), weight),
                    bias: Param::new(format!("{name}.{i}.bias"), bias),
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            hidden,
            output,
            output_scale: 1.0,
        })
    }

    /// Builds a network from explicit layers.
    pub fn from_layers(
        layers: Vec<Dense>,
        hidden: Activation,
        output: Activation,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Config(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].outputs(),
                    i + 1,
                    pair[1].inputs()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.value.dim() != (1, l.outputs()) {
                return Err(Error::Config(format!("layer {i} bias has wrong shape")));
            }
        }
        Ok(Mlp {
            layers,
            hidden,
            output,
            output_scale: 1.0,
        })
    }

    pub fn with_output_scale(mut self, scale: f64) -> Self {
        self.output_scale = scale;
        self
    }

    pub fn output_scale(&self) -> f64 {
        self.output_scale
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn params(&self) -> impl Iterator<Item = &Param> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Param::zero_grad);
    }

    pub fn num_params(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    /// Flattened copy of every parameter, in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::shape("set_flat_params", self.num_params(), flat.len()));
        }
        let mut at = 0;
        for p in self.params_mut() {
            for v in p.value.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        Ok(())
    }

    /// Batched inference outside any tape. `input` is `rows × inputs`.
    pub fn forward_batch(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        if input.ncols() != self.inputs() {
            return Err(Error::shape("mlp input", self.inputs(), input.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut h = input.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight.value) + &layer.bias.value;
            let act = if i == last { self.output } else { self.hidden };
            h.mapv_inplace(|v| act.apply(v));
        }
        if self.output_scale != 1.0 {
            h *= self.output_scale;
        }
        Ok(h)
    }

    /// Single-example inference.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        let row = Array2::from_shape_vec((1, input.len()), input.to_vec())
            .map_err(|e| Error::Usage(e.to_string()))?;
        Ok(self.forward_batch(&row)?.into_iter().collect())
    }

    /// Places the parameters on `tape`. With `trainable = false` they enter as
    /// constants, so gradients pass through the network to its input only.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (tape.param(l.weight.value.clone()), tape.param(l.bias.value.clone()))
                } else {
                    (
                        tape.constant(l.weight.value.clone()),
                        tape.constant(l.bias.value.clone()),
                    )
                }
            })
            .collect();
        BoundMlp {
            layers,
            hidden: self.hidden,
            output: self.output,
            output_scale: self.output_scale,
            inputs: self.inputs(),
        }
    }

    /// Adds the tape gradients of a bound copy into this network's parameters.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &BoundMlp) {
        for (layer, (w, b)) in self.layers.iter_mut().zip(&bound.layers) {
            if let Some(g) = tape.grad(*w) {
                layer.weight.accumulate(g);
            }
            if let Some(g) = tape.grad(*b) {
                layer.bias.accumulate(g);
            }
        }
    }
}

impl BoundMlp {
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        let cols = tape.value(input).ncols();
        if cols != self.inputs {
            return Err(Error::shape("mlp input", self.inputs, cols));
        }
        let last = self.layers.len() - 1;
        let mut h = input;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let z = tape.matmul(h, *w)?;
            let z = tape.add_row(z, *b)?;
            let act = if i == last { self.output } else { self.hidden };
            h = act.on_tape(tape, z);
        }
        if self.output_scale != 1.0 {
            h = tape.scale(h, self.output_scale);
        }
        Ok(h)
    }
}

/// Stacks equal-length rows into a `rows × cols` array.
pub fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != cols {
            return Err(Error::shape("rows_to_array", cols, r.len()));
        }
        out.row_mut(i).assign(&Array1::from(r.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_net(bias: Array2<f64>, act: Activation) -> Mlp {
        let dense = Dense {
            weight: Param::new("w", Array2::zeros((3, bias.ncols()))),
            bias: Param::new("b", bias),
        };
        Mlp::from_layers(vec![dense], Activation::Tanh, act).unwrap()
    }

    #[test]
    fn zero_weights_output_squashed_bias() {
        let net = zero_net(array![[0.3, -2.0]], Activation::Tanh);
        let out = net.predict(&[5.0, -1.0, 7.0]).unwrap();
        assert_eq!(out, vec![0.3f64.tanh(), (-2.0f64).tanh()]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let dense = Dense {
            weight: Param::new("w", Array2::eye(3)),
            bias: Param::new("b", Array2::zeros((1, 3))),
        };
        let net = Mlp::from_layers(vec![dense], Activation::Tanh, Activation::Identity).unwrap();
        assert_eq!(net.predict(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn two_layer_forward_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::new("n", &[3, 4, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        let x = [0.2, -0.7, 0.9];
        let l0 = &net.layers()[0];
        let l1 = &net.layers()[1];
        let mut hidden = vec![0.0; 4];
        for j in 0..4 {
            let mut z = l0.bias.value[[0, j]];
            for i in 0..3 {
                z += x[i] * l0.weight.value[[i, j]];
            }
            hidden[j] = z.tanh();
        }
        let mut expected = vec![0.0; 2];
        for j in 0..2 {
            let mut z = l1.bias.value[[0, j]];
            for i in 0..4 {
                z += hidden[i] * l1.weight.value[[i, j]];
            }
            expected[j] = z.tanh();
        }
        let got = net.predict(&x).unwrap();
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-14);
        }

        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let input = tape.constant(array![[0.2, -0.7, 0.9]]);
        let out = bound.forward(&mut tape, input).unwrap();
        assert_eq!(tape.value(out).row(0).to_vec(), got);
    }

    #[test]
    fn wrong_input_width_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::new("n", &[3, 2], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        assert!(matches!(net.predict(&[1.0, 2.0]), Err(Error::Shape { .. })));
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, false);
        let x = tape.constant(array![[1.0, 2.0]]);
        assert!(bound.forward(&mut tape, x).is_err());
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let a = Dense {
            weight: Param::new("a", Array2::zeros((2, 3))),
            bias: Param::new("ab", Array2::zeros((1, 3))),
        };
        let b = Dense {
            weight: Param::new("b", Array2::zeros((4, 1))),
            bias: Param::new("bb", Array2::zeros((1, 1))),
        };
        assert!(matches!(
            Mlp::from_layers(vec![a, b], Activation::Tanh, Activation::Identity),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn squashed_outputs_stay_open_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::new("n", &[2, 8, 3], Activation::Tanh, Activation::Tanh, &mut rng).unwrap();
        for _ in 0..200 {
            let x = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            assert!(net.predict(&x).unwrap().iter().all(|v| v.abs() < 1.0));
        }
    }
}
