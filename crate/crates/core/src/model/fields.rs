use std::borrow::Cow;

use super::{MlpVars, SeparableVars};
use crate::error::{dim_err, usage_err, Result};
use crate::jet::{directional_jet_forward, mlp_jet_forward};
use crate::model::mlp_forward;
use crate::tape::{NodeId, Tape};
use crate::tensor::{AxisGrid, Tensor};

/// Which input derivatives of the field a consumer needs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivRequest {
    pub first: Vec<bool>,
    pub second: Vec<bool>,
}

impl DerivRequest {
    pub fn none(d: usize) -> Self {
        Self { first: vec![false; d], second: vec![false; d] }
    }

    pub fn all(d: usize) -> Self {
        Self { first: vec![true; d], second: vec![true; d] }
    }

    pub fn first(mut self, axis: usize) -> Self {
        self.first[axis] = true;
        self
    }

    pub fn second(mut self, axis: usize) -> Self {
        self.second[axis] = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn any_on(&self, axis: usize) -> bool {
        self.first[axis] || self.second[axis]
    }
}

/// A field and its requested partials, all on one tape with equal shapes.
#[derive(Clone, Debug)]
pub struct FieldBundle {
    pub u: NodeId,
    pub du: Vec<Option<NodeId>>,
    pub ddu: Vec<Option<NodeId>>,
    pub shape: Vec<usize>,
}

impl FieldBundle {
    pub fn du(&self, axis: usize) -> Result<NodeId> {
        self.du
            .get(axis)
            .copied()
            .flatten()
            .ok_or_else(|| usage_err!("first derivative along axis {axis} was not computed"))
    }

    pub fn ddu(&self, axis: usize) -> Result<NodeId> {
        self.ddu
            .get(axis)
            .copied()
            .flatten()
            .ok_or_else(|| usage_err!("second derivative along axis {axis} was not computed"))
    }
}

/// Where a field is evaluated: a factorizable lattice or scattered points.
#[derive(Clone, Copy, Debug)]
pub enum Collocation<'a> {
    Lattice(&'a AxisGrid),
    Points(&'a Tensor),
}

impl Collocation<'_> {
    pub fn num_points(&self) -> usize {
        match self {
            Collocation::Lattice(g) => g.num_points(),
            Collocation::Points(p) => p.shape()[0],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Collocation::Lattice(g) => g.dim(),
            Collocation::Points(p) => p.shape()[1],
        }
    }

    /// Points as `[N, d]` rows in lattice (row-major) order.
    pub fn points(&self) -> Cow<'_, Tensor> {
        match self {
            Collocation::Lattice(g) => Cow::Owned(g.points()),
            Collocation::Points(p) => Cow::Borrowed(*p),
        }
    }

    /// `f` at every point, in the same order a field over this set uses.
    pub fn evaluate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let pts = self.points();
        let d = self.dim();
        pts.data().chunks(d).map(f).collect()
    }
}

/// Anything that can put a solution field and its partials on a tape.
pub trait FieldProvider {
    fn dim(&self) -> usize;
    fn fields(&self, tape: &mut Tape, at: &Collocation, req: &DerivRequest) -> Result<FieldBundle>;
}

/// SPINN fields on a lattice: one body pass per axis over that axis' `n_i`
/// coordinates, then rank-`r` merges. Partials along axis `i` replace factor
/// `i` by its jet derivative, since only that factor depends on `x_i`.
pub fn spinn_fields(
    tape: &mut Tape,
    vars: &SeparableVars,
    grid: &AxisGrid,
    req: &DerivRequest,
) -> Result<FieldBundle> {
    let d = vars.bodies.len();
    if grid.dim() != d || req.dim() != d {
        return Err(usage_err!(
            "model has {d} axes, lattice has {} and request {}",
            grid.dim(),
            req.dim()
        ));
    }
    let mut value = Vec::with_capacity(d);
    let mut first = vec![None; d];
    let mut second = vec![None; d];
    for (i, body) in vars.bodies.iter().enumerate() {
        let x = grid.axis_column(i);
        if req.any_on(i) {
            let j = mlp_jet_forward(tape, body, &x)?;
            value.push(j.value);
            first[i] = Some(j.first);
            second[i] = Some(j.second);
        } else {
            let xi = tape.constant(x);
            value.push(mlp_forward(tape, body, xi)?);
        }
    }
    let u = tape.merge(&value)?;
    let mut du = vec![None; d];
    let mut ddu = vec![None; d];
    for i in 0..d {
        let mut fs = value.clone();
        if req.first[i] {
            fs[i] = first[i].unwrap();
            du[i] = Some(tape.merge(&fs)?);
        }
        if req.second[i] {
            fs[i] = second[i].unwrap();
            ddu[i] = Some(tape.merge(&fs)?);
        }
    }
    Ok(FieldBundle { u, du, ddu, shape: grid.shape() })
}

/// Point-wise PINN fields: one directional jet pass of the whole network per
/// axis that needs derivatives. Fields come out as `[N, 1]` columns.
pub fn pinn_fields(
    tape: &mut Tape,
    vars: &MlpVars,
    points: &Tensor,
    req: &DerivRequest,
) -> Result<FieldBundle> {
    let (n, d) = points.dims2()?;
    if d != vars.input_width || req.dim() != d {
        return Err(dim_err!(
            "network takes {} inputs, points have {d}, request has {}",
            vars.input_width,
            req.dim()
        ));
    }
    let mut u = None;
    let mut du = vec![None; d];
    let mut ddu = vec![None; d];
    for axis in (0..d).filter(|&a| req.any_on(a)) {
        let j = directional_jet_forward(tape, vars, points, axis)?;
        u.get_or_insert(j.value);
        du[axis] = req.first[axis].then_some(j.first);
        ddu[axis] = req.second[axis].then_some(j.second);
    }
    let u = match u {
        Some(u) => u,
        None => {
            let x = tape.constant(points.clone());
            mlp_forward(tape, vars, x)?
        }
    };
    Ok(FieldBundle { u, du, ddu, shape: vec![n, 1] })
}

impl FieldProvider for SeparableVars {
    fn dim(&self) -> usize {
        self.bodies.len()
    }

    fn fields(&self, tape: &mut Tape, at: &Collocation, req: &DerivRequest) -> Result<FieldBundle> {
        match at {
            Collocation::Lattice(g) => spinn_fields(tape, self, g, req),
            Collocation::Points(_) => Err(usage_err!(
                "separable fields need a factorizable lattice, not scattered points"
            )),
        }
    }
}

/// Baseline network vars viewed as a field provider.
#[derive(Clone, Debug)]
pub struct PointwiseVars(pub MlpVars);

impl FieldProvider for PointwiseVars {
    fn dim(&self) -> usize {
        self.0.input_width
    }

    fn fields(&self, tape: &mut Tape, at: &Collocation, req: &DerivRequest) -> Result<FieldBundle> {
        pinn_fields(tape, &self.0, &at.points(), req)
    }
}
