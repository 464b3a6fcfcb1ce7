use crate::error::Result;
use crate::model::{AnyModel, Arch, Collocation};
use crate::pde::{assemble_loss, boundary_terms, pde_term, LossLattices, LossValues, PdeProblem};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Loss value, optional parameter gradients (in [`AnyModel::params`]
/// order) and the memory proxy of one evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub values: LossValues,
    pub grads: Option<Vec<Tensor>>,
    pub bytes: usize,
}

/// The physics-informed loss of one problem on fixed lattices.
///
/// Point-wise interiors larger than `chunk_points` are split into chunks,
/// each recorded and swept on its own tape; the chunk terms are scaled by
/// the full interior size so their sum is the full-batch loss.
pub struct Objective<'p> {
    problem: &'p PdeProblem,
    lattices: LossLattices,
    /// Point chunks of the interior with their sampled source terms.
    chunks: Option<Vec<(Tensor, Option<Tensor>)>>,
}

fn take_grads(tape: &mut Tape, root: NodeId, leaves: &[NodeId]) -> Result<Vec<Tensor>> {
    let mut g = tape.backward(root)?;
    Ok(leaves.iter().map(|&l| g.take(l).expect("every leaf has an adjoint")).collect())
}

fn accumulate(acc: &mut [Tensor], add: Vec<Tensor>) {
    for (a, b) in acc.iter_mut().zip(add) {
        for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
            *x += y;
        }
    }
}

fn adjoint_bytes(tape: &Tape) -> usize {
    tape.peak_bytes() - tape.primal_bytes()
}

impl<'p> Objective<'p> {
    pub fn new(problem: &'p PdeProblem, n: usize, arch: Arch, chunk_points: usize) -> Result<Self> {
        let lattices = problem.lattices(n)?;
        let total = lattices.interior.num_points();
        let chunks = if arch == Arch::Pinn && total > chunk_points {
            let pts = lattices.interior.points();
            let d = problem.dim();
            let mut out = Vec::new();
            for c in pts.data().chunks(chunk_points * d) {
                let chunk = Tensor::new(vec![c.len() / d, d], c.to_vec())?;
                let source = problem.source_field(&Collocation::Points(&chunk))?;
                out.push((chunk, source));
            }
            Some(out)
        } else {
            None
        };
        Ok(Self { problem, lattices, chunks })
    }

    pub fn lattices(&self) -> &LossLattices {
        &self.lattices
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.as_ref().map_or(1, Vec::len)
    }

    pub fn evaluate(&self, model: &AnyModel, with_grads: bool) -> Result<Evaluation> {
        match &self.chunks {
            None => self.evaluate_whole(model, with_grads),
            Some(chunks) => self.evaluate_chunked(model, chunks, with_grads),
        }
    }

    fn evaluate_whole(&self, model: &AnyModel, with_grads: bool) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars = model.to_tape(&mut tape);
        let terms = assemble_loss(&mut tape, self.problem, vars.provider(), &self.lattices)?;
        let values = terms.values(&tape);
        let grads = if with_grads { Some(take_grads(&mut tape, terms.total, &vars.leaves())?) } else { None };
        Ok(Evaluation { values, grads, bytes: tape.peak_bytes() })
    }

    fn evaluate_chunked(&self, model: &AnyModel, chunks: &[(Tensor, Option<Tensor>)], with_grads: bool) -> Result<Evaluation> {
        let mut tape = Tape::new();
        let vars = model.to_tape(&mut tape);
        let (ic, vel, bc) = boundary_terms(&mut tape, self.problem, vars.provider(), &self.lattices)?;
        let mut root = bc;
        for t in [ic, vel].into_iter().flatten() {
            root = tape.add(root, t)?;
        }
        let value = |tape: &Tape, id: Option<NodeId>| id.map_or(0.0, |id| tape.value(id).data()[0]);
        let mut values = LossValues {
            total: 0.0,
            pde: 0.0,
            ic: value(&tape, ic),
            ic_velocity: value(&tape, vel),
            bc: value(&tape, Some(bc)),
        };
        let mut grads = if with_grads { Some(take_grads(&mut tape, root, &vars.leaves())?) } else { None };
        let mut primal = tape.primal_bytes();
        let mut adjoint = adjoint_bytes(&tape);

        let total = self.lattices.interior.num_points();
        for (chunk, source) in chunks {
            let mut tape = Tape::new();
            let vars = model.to_tape(&mut tape);
            let at = Collocation::Points(chunk);
            let term = pde_term(&mut tape, self.problem, vars.provider(), &at, total, source.as_ref())?;
            values.pde += tape.value(term).data()[0];
            if let Some(acc) = grads.as_mut() {
                accumulate(acc, take_grads(&mut tape, term, &vars.leaves())?);
            }
            primal += tape.primal_bytes();
            adjoint = adjoint.max(adjoint_bytes(&tape));
        }
        values.total = values.pde + values.bc + values.ic + values.ic_velocity;
        Ok(Evaluation { values, grads, bytes: primal + adjoint })
    }
}
