use crate::error::{usage_err, Result};
use crate::model::{Collocation, DerivRequest, FieldBundle, FieldProvider};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Value and per-axis first and second partials at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct PointJet {
    pub u: f64,
    pub du: Vec<f64>,
    pub ddu: Vec<f64>,
}

/// A closed-form field injected into the tape as constants. Used to check
/// residuals and losses against known solutions.
type PointFn<'a> = Box<dyn Fn(&[f64]) -> PointJet + 'a>;

pub struct AnalyticFields<'a> {
    dim: usize,
    f: PointFn<'a>,
}

impl<'a> AnalyticFields<'a> {
    pub fn new(dim: usize, f: impl Fn(&[f64]) -> PointJet + 'a) -> Self {
        Self { dim, f: Box::new(f) }
    }
}

impl FieldProvider for AnalyticFields<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fields(&self, tape: &mut Tape, at: &Collocation, req: &DerivRequest) -> Result<FieldBundle> {
        let d = self.dim;
        if at.dim() != d || req.dim() != d {
            return Err(usage_err!("analytic field has {d} axes, collocation has {}", at.dim()));
        }
        let shape = match at {
            Collocation::Lattice(g) => g.shape(),
            Collocation::Points(p) => vec![p.shape()[0], 1],
        };
        let n = at.num_points();
        let mut u = Vec::with_capacity(n);
        let mut du = vec![Vec::with_capacity(n); d];
        let mut ddu = vec![Vec::with_capacity(n); d];
        for x in at.points().data().chunks(d) {
            let j = (self.f)(x);
            u.push(j.u);
            for a in 0..d {
                du[a].push(j.du[a]);
                ddu[a].push(j.ddu[a]);
            }
        }
        let mut put = |v: Vec<f64>| -> Result<_> { Ok(tape.constant(Tensor::new(shape.clone(), v)?)) };
        let u = put(u)?;
        let mut bundle_du = vec![None; d];
        let mut bundle_ddu = vec![None; d];
        for (a, (g1, g2)) in du.into_iter().zip(ddu).enumerate() {
            if req.first[a] {
                bundle_du[a] = Some(put(g1)?);
            }
            if req.second[a] {
                bundle_ddu[a] = Some(put(g2)?);
            }
        }
        Ok(FieldBundle { u, du: bundle_du, ddu: bundle_ddu, shape })
    }
}
