//! Batched second-order Taylor jets for scalar-input networks.
//!
//! A [`Jet2Batch`] carries three tape channels of equal shape: the value and
//! its first and second derivatives w.r.t. one scalar input coordinate.
//! Every channel is built from tape ops, so parameter gradients of any jet
//! quantity come out of the ordinary reverse sweep.

use crate::error::{dim_err, usage_err, Result};
use crate::model::MlpVars;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Jet2Batch {
    pub value: NodeId,
    pub first: NodeId,
    pub second: NodeId,
}

impl Jet2Batch {
    pub fn tensors<'t>(&self, tape: &'t Tape) -> [&'t Tensor; 3] {
        [tape.value(self.value), tape.value(self.first), tape.value(self.second)]
    }
}

/// Seeds a column of coordinates: `(x, 1, 0)`.
pub fn jet_seed(tape: &mut Tape, x: &Tensor) -> Result<Jet2Batch> {
    let (n, w) = x.dims2()?;
    if w != 1 {
        return Err(dim_err!("jet seed expects an [n, 1] column, got {:?}", x.shape()));
    }
    Ok(Jet2Batch {
        value: tape.constant(x.clone()),
        first: tape.constant(Tensor::ones(&[n, 1])),
        second: tape.constant(Tensor::zeros(&[n, 1])),
    })
}

/// Seeds `[N, d]` points along the unit direction `e_axis`.
pub fn jet_seed_direction(tape: &mut Tape, x: &Tensor, axis: usize) -> Result<Jet2Batch> {
    let (n, d) = x.dims2()?;
    if axis >= d {
        return Err(usage_err!("axis {axis} out of range for {d}-d points"));
    }
    let mut dir = vec![0.0; n * d];
    dir.iter_mut().skip(axis).step_by(d).for_each(|v| *v = 1.0);
    Ok(Jet2Batch {
        value: tape.constant(x.clone()),
        first: tape.constant(Tensor::new(vec![n, d], dir)?),
        second: tape.constant(Tensor::zeros(&[n, d])),
    })
}

/// `(v·W + b, v̇·W, v̈·W)`.
pub fn jet_affine(tape: &mut Tape, j: Jet2Batch, w: NodeId, b: NodeId) -> Result<Jet2Batch> {
    let lin = tape.matmul(j.value, w)?;
    Ok(Jet2Batch {
        value: tape.add(lin, b)?,
        first: tape.matmul(j.first, w)?,
        second: tape.matmul(j.second, w)?,
    })
}

/// Pushes a jet through tanh:
/// `(t, t'·v̇, t''·v̇² + t'·v̈)` with `t' = 1 - t²` and `t'' = -2·t·t'`.
pub fn jet_tanh(tape: &mut Tape, j: Jet2Batch) -> Result<Jet2Batch> {
    let t = tape.tanh(j.value)?;
    let shape = tape.value(t).shape().to_vec();
    let one = tape.ones(&shape);
    let t2 = tape.square(t);
    let d1 = tape.sub(one, t2)?;
    let td1 = tape.mul(t, d1)?;
    let d2 = tape.scale(td1, -2.0);
    let first = tape.mul(d1, j.first)?;
    let vdot2 = tape.square(j.first);
    let curv = tape.mul(d2, vdot2)?;
    let acc = tape.mul(d1, j.second)?;
    let second = tape.add(curv, acc)?;
    Ok(Jet2Batch { value: t, first, second })
}

fn jet_through(tape: &mut Tape, vars: &MlpVars, mut j: Jet2Batch) -> Result<Jet2Batch> {
    let last = vars.layers.len() - 1;
    for (i, &(w, b)) in vars.layers.iter().enumerate() {
        j = jet_affine(tape, j, w, b)?;
        if i != last {
            j = jet_tanh(tape, j)?;
        }
    }
    Ok(j)
}

/// Value, first and second derivative of a scalar-input network at every
/// row of `x: [n, 1]`, in one batched pass.
pub fn mlp_jet_forward(tape: &mut Tape, vars: &MlpVars, x: &Tensor) -> Result<Jet2Batch> {
    if vars.input_width != 1 {
        return Err(usage_err!(
            "mlp_jet_forward needs a scalar-input network, this one takes {} inputs",
            vars.input_width
        ));
    }
    let seed = jet_seed(tape, x)?;
    jet_through(tape, vars, seed)
}

/// Second-order jet of a `d`-input network along coordinate `axis` at every
/// row of `x: [N, d]`: `u`, `∂u/∂x_axis`, `∂²u/∂x_axis²`.
pub fn directional_jet_forward(
    tape: &mut Tape,
    vars: &MlpVars,
    x: &Tensor,
    axis: usize,
) -> Result<Jet2Batch> {
    let (_, d) = x.dims2()?;
    if d != vars.input_width {
        return Err(usage_err!("network takes {} inputs, points have {d}", vars.input_width));
    }
    let seed = jet_seed_direction(tape, x, axis)?;
    jet_through(tape, vars, seed)
}
