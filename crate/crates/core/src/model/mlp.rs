use rand::Rng;

use crate::error::{dim_err, usage_err, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, EwOp, Tensor};

/// One affine layer; `weight` is `[in, out]` so a batch `[B, in]` maps to
/// `[B, out]` by right-multiplication.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// A tanh MLP. Every layer but the last is followed by tanh.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Node ids of an [`MlpParams`] recorded as tape leaves.
#[derive(Clone, Debug)]
pub struct MlpVars {
    pub layers: Vec<(NodeId, NodeId)>,
    pub input_width: usize,
}

impl MlpVars {
    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.layers.iter().flat_map(|&(w, b)| [w, b])
    }
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(usage_err!("an MLP needs at least input and output widths, got {widths:?}"));
    }
    if widths.contains(&0) {
        return Err(usage_err!("zero layer width in {widths:?}"));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn glorot(widths: &[usize], rng: &mut impl Rng) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
                Layer {
                    weight: Tensor::from_parts(vec![fan_in, fan_out], data),
                    bias: Tensor::zeros(&[fan_out]),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        let layers = widths
            .windows(2)
            .map(|w| Layer { weight: Tensor::zeros(&[w[0], w[1]]), bias: Tensor::zeros(&[w[1]]) })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(usage_err!("an MLP needs at least one layer"));
        }
        let mut prev = None;
        for (i, l) in layers.iter().enumerate() {
            let (fi, fo) = l.weight.dims2()?;
            if l.bias.shape() != [fo] {
                return Err(dim_err!("layer {i}: bias {:?} for {fo} outputs", l.bias.shape()));
            }
            if let Some(p) = prev {
                if p != fi {
                    return Err(dim_err!("layer {i} takes {fi} inputs after a {p}-wide layer"));
                }
            }
            prev = Some(fo);
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].weight.shape()[0]];
        w.extend(self.layers.iter().map(|l| l.bias.len()));
        w
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().bias.len()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Weight then bias of each layer, in layer order.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    /// Plain forward pass on `[B, in]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (i, l) in self.layers.iter().enumerate() {
            h = tensor::ew(EwOp::Add, &tensor::matmul(&h, &l.weight)?, &l.bias)?;
            if i != last {
                h = tensor::tanh_k(0, &h)?;
            }
        }
        Ok(h)
    }

    pub fn to_tape(&self, tape: &mut Tape) -> MlpVars {
        let layers = self
            .layers
            .iter()
            .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
            .collect();
        MlpVars { layers, input_width: self.input_width() }
    }
}

/// Value-only forward pass recorded on the tape.
pub fn mlp_forward(tape: &mut Tape, vars: &MlpVars, x: NodeId) -> Result<NodeId> {
    let last = vars.layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in vars.layers.iter().enumerate() {
        let lin = tape.matmul(h, w)?;
        h = tape.add(lin, b)?;
        if i != last {
            h = tape.tanh(h)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn glorot_is_bounded_and_reproducible() {
        let a = MlpParams::glorot(&[3, 7, 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = MlpParams::glorot(&[3, 7, 2], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let lim = (6.0f64 / 10.0).sqrt();
        assert!(a.layers()[0].weight.data().iter().all(|v| v.abs() <= lim));
        assert!(a.layers()[1].bias.data().iter().all(|&v| v == 0.0));
        assert_eq!(a.num_params(), 3 * 7 + 7 + 7 * 2 + 2);
        assert_eq!(a.widths(), vec![3, 7, 2]);
    }

    #[test]
    fn rejects_zero_width() {
        assert!(MlpParams::glorot(&[1, 0, 3], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        assert!(MlpParams::zeros(&[4]).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let p = MlpParams::glorot(&[2, 6, 6, 3], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let x = Tensor::from_rows(&[&[0.1, -0.4], &[0.9, 0.3]]).unwrap();
        let mut tape = Tape::new();
        let vars = p.to_tape(&mut tape);
        let xi = tape.constant(x.clone());
        let y = mlp_forward(&mut tape, &vars, xi).unwrap();
        assert_eq!(tape.value(y), &p.forward(&x).unwrap());
    }
}
