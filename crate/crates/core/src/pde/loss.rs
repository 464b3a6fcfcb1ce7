use serde::{Deserialize, Serialize};

use super::PdeProblem;
use crate::error::{usage_err, Result};
use crate::model::{Collocation, DerivRequest, FieldProvider};
use crate::tape::{NodeId, Tape};
use crate::tensor::{AxisGrid, Tensor};

/// Collocation sets: the interior lattice, its `t = 0` slice and the
/// spatial boundary faces (each spanning all times).
#[derive(Clone, Debug)]
pub struct LossLattices {
    pub interior: AxisGrid,
    /// Source term on `interior`, when the problem has one.
    pub interior_source: Option<Tensor>,
    pub initial: Option<AxisGrid>,
    pub boundary: Vec<AxisGrid>,
}

/// Weighted loss terms as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: NodeId,
    pub pde: NodeId,
    pub ic: Option<NodeId>,
    pub ic_velocity: Option<NodeId>,
    pub bc: NodeId,
}

/// Plain values of [`LossTerms`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub pde: f64,
    pub ic: f64,
    pub ic_velocity: f64,
    pub bc: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |id: Option<NodeId>| id.map_or(0.0, |id| tape.value(id).data()[0]);
        LossValues {
            total: v(Some(self.total)),
            pde: v(Some(self.pde)),
            ic: v(self.ic),
            ic_velocity: v(self.ic_velocity),
            bc: v(Some(self.bc)),
        }
    }
}

fn sum_sq_mismatch(tape: &mut Tape, u: NodeId, target: Tensor) -> Result<NodeId> {
    let t = tape.constant(target);
    let diff = tape.sub(u, t)?;
    let sq = tape.square(diff);
    Ok(tape.sum(sq))
}

/// `λ_pde · Σ r² / denom` over the collocation set. With `denom` equal to the
/// full interior count, chunks of a split interior sum to the mean.
pub fn pde_term(
    tape: &mut Tape,
    problem: &PdeProblem,
    provider: &dyn FieldProvider,
    at: &Collocation,
    denom: usize,
    source: Option<&Tensor>,
) -> Result<NodeId> {
    if at.num_points() == 0 || denom == 0 {
        return Err(usage_err!("empty interior collocation set"));
    }
    let fields = provider.fields(tape, at, &problem.residual_request())?;
    let sampled;
    let source = match source {
        Some(s) => Some(s),
        None => {
            sampled = problem.source_field(at)?;
            sampled.as_ref()
        }
    };
    let r = problem.residual(tape, &fields, source)?;
    let sq = tape.square(r);
    let s = tape.sum(sq);
    Ok(tape.scale(s, problem.params().lambda_pde / denom as f64))
}

/// Initial-value, initial-velocity and boundary terms, each a weighted mean.
pub fn boundary_terms(
    tape: &mut Tape,
    problem: &PdeProblem,
    provider: &dyn FieldProvider,
    lattices: &LossLattices,
) -> Result<(Option<NodeId>, Option<NodeId>, NodeId)> {
    let p = problem.params();
    let (mut ic, mut vel) = (None, None);
    if let Some(t) = problem.time_axis() {
        let grid = lattices
            .initial
            .as_ref()
            .ok_or_else(|| usage_err!("{} needs an initial-condition lattice", problem.name()))?;
        let at = Collocation::Lattice(grid);
        let with_vel = problem.initial_velocity(&[0.0; 3]).is_some();
        let req = if with_vel { DerivRequest::none(3).first(t) } else { DerivRequest::none(3) };
        let f = provider.fields(tape, &at, &req)?;
        let n = grid.num_points() as f64;
        let target = Tensor::new(f.shape.clone(), at.evaluate(|x| problem.initial_value(x)))?;
        let s = sum_sq_mismatch(tape, f.u, target)?;
        ic = Some(tape.scale(s, p.lambda_ic / n));
        if with_vel {
            let target = Tensor::new(f.shape.clone(), at.evaluate(|x| problem.initial_velocity(x).unwrap()))?;
            let s = sum_sq_mismatch(tape, f.du(t)?, target)?;
            vel = Some(tape.scale(s, p.lambda_ic / n));
        }
    }
    if lattices.boundary.is_empty() {
        return Err(usage_err!("{} needs boundary lattices", problem.name()));
    }
    let mut total = 0usize;
    let mut acc: Option<NodeId> = None;
    for face in &lattices.boundary {
        let at = Collocation::Lattice(face);
        let f = provider.fields(tape, &at, &DerivRequest::none(3))?;
        let target = Tensor::new(f.shape.clone(), at.evaluate(|x| problem.boundary_value(x)))?;
        let s = sum_sq_mismatch(tape, f.u, target)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, s)?,
            None => s,
        });
        total += face.num_points();
    }
    let bc = tape.scale(acc.unwrap(), p.lambda_bc / total as f64);
    Ok((ic, vel, bc))
}

/// Full physics-informed loss on one tape.
pub fn assemble_loss(
    tape: &mut Tape,
    problem: &PdeProblem,
    provider: &dyn FieldProvider,
    lattices: &LossLattices,
) -> Result<LossTerms> {
    let at = Collocation::Lattice(&lattices.interior);
    let pde = pde_term(tape, problem, provider, &at, lattices.interior.num_points(), lattices.interior_source.as_ref())?;
    let (ic, ic_velocity, bc) = boundary_terms(tape, problem, provider, lattices)?;
    let mut total = tape.add(pde, bc)?;
    for term in [ic, ic_velocity].into_iter().flatten() {
        total = tape.add(total, term)?;
    }
    Ok(LossTerms { total, pde, ic, ic_velocity, bc })
}
