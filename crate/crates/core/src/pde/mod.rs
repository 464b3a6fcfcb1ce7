//! Benchmark PDE problems, physics-informed loss assembly and a
//! finite-difference reference for the diffusion problems.
//!
//! Every problem lives on a 3-d box. Time-dependent problems put `t` on the
//! last axis.

mod analytic;
mod loss;
mod reference;
mod residual;

pub use analytic::{AnalyticFields, PointJet};
pub use loss::{assemble_loss, boundary_terms, pde_term, LossLattices, LossTerms, LossValues};
pub use reference::{fd_diffusion, fd_reference_diffusion};
pub use residual::{
    residual_helmholtz, residual_klein_gordon, residual_linear_diffusion,
    residual_nonlinear_diffusion,
};

use std::borrow::Cow;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::model::{Collocation, DerivRequest, FieldBundle};
use crate::tape::{NodeId, Tape};
use crate::tensor::{AxisGrid, Tensor};

pub const PROBLEM_NAMES: [&str; 4] =
    ["diffusion-linear", "diffusion-nonlinear", "helmholtz3d", "klein-gordon3d"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProblemKind {
    #[serde(rename = "diffusion-linear")]
    LinearDiffusion,
    #[serde(rename = "diffusion-nonlinear")]
    NonlinearDiffusion,
    #[serde(rename = "helmholtz3d")]
    Helmholtz,
    #[serde(rename = "klein-gordon3d")]
    KleinGordon,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::LinearDiffusion => PROBLEM_NAMES[0],
            ProblemKind::NonlinearDiffusion => PROBLEM_NAMES[1],
            ProblemKind::Helmholtz => PROBLEM_NAMES[2],
            ProblemKind::KleinGordon => PROBLEM_NAMES[3],
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion-linear" => Ok(ProblemKind::LinearDiffusion),
            "diffusion-nonlinear" => Ok(ProblemKind::NonlinearDiffusion),
            "helmholtz3d" => Ok(ProblemKind::Helmholtz),
            "klein-gordon3d" => Ok(ProblemKind::KleinGordon),
            _ => Err(usage_err!("unknown problem `{s}`; known: {}", PROBLEM_NAMES.join(", "))),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One bump of the diffusion initial condition,
/// `amp · exp(-|x - center|² / (2σ²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub amp: f64,
    pub center: [f64; 2],
    pub sigma: f64,
}

/// Tunable constants shared by the problem family. Each problem reads only
/// the fields it needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemParams {
    pub alpha: f64,
    pub k: f64,
    pub a: [f64; 3],
    pub gaussians: Vec<Gaussian>,
    pub velocity_ic: bool,
    pub lambda_pde: f64,
    pub lambda_ic: f64,
    pub lambda_bc: f64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        let g = |amp, center| Gaussian { amp, center, sigma: 0.15 };
        Self {
            alpha: 0.05,
            k: 1.0,
            a: [3.0, 3.0, 2.0],
            gaussians: vec![g(0.5, [-0.4, -0.4]), g(0.4, [0.3, 0.2]), g(0.3, [0.0, 0.45])],
            velocity_ic: true,
            lambda_pde: 1.0,
            lambda_ic: 1.0,
            lambda_bc: 1.0,
        }
    }
}

impl ProblemParams {
    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(crate::Error::Config(format!("params.{what} is invalid")));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha");
        }
        if self.gaussians.iter().any(|g| g.sigma.is_nan() || g.sigma <= 0.0) {
            return bad("gaussians.sigma");
        }
        for (name, l) in [("lambda_pde", self.lambda_pde), ("lambda_ic", self.lambda_ic), ("lambda_bc", self.lambda_bc)] {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(name);
            }
        }
        Ok(())
    }
}

/// A registered benchmark problem with its constants.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeProblem {
    kind: ProblemKind,
    params: ProblemParams,
}

impl PdeProblem {
    pub fn new(kind: ProblemKind, params: ProblemParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { kind, params })
    }

    pub fn by_name(name: &str) -> Result<Self> {
        Self::new(name.parse()?, ProblemParams::default())
    }

    pub fn kind(&self) -> ProblemKind {
        self.kind
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    pub fn params(&self) -> &ProblemParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        3
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        match self.kind {
            ProblemKind::LinearDiffusion | ProblemKind::NonlinearDiffusion => {
                vec![(-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0)]
            }
            ProblemKind::Helmholtz => vec![(-1.0, 1.0); 3],
            ProblemKind::KleinGordon => vec![(-1.0, 1.0), (-1.0, 1.0), (0.0, 10.0)],
        }
    }

    pub fn time_axis(&self) -> Option<usize> {
        match self.kind {
            ProblemKind::Helmholtz => None,
            _ => Some(2),
        }
    }

    pub fn spatial_axes(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&a| Some(a) != self.time_axis()).collect()
    }

    /// Input derivatives the residual reads.
    pub fn residual_request(&self) -> DerivRequest {
        let r = DerivRequest::none(3);
        match self.kind {
            ProblemKind::LinearDiffusion => r.first(2).second(0).second(1),
            ProblemKind::NonlinearDiffusion => r.first(0).first(1).first(2).second(0).second(1),
            ProblemKind::Helmholtz | ProblemKind::KleinGordon => r.second(0).second(1).second(2),
        }
    }

    fn uses_velocity_ic(&self) -> bool {
        self.kind == ProblemKind::KleinGordon && self.params.velocity_ic
    }

    /// Residual field on `shape`-shaped fields. Helmholtz and Klein-Gordon
    /// need `source`, the [`source_field`](Self::source_field) of the same
    /// collocation set.
    pub fn residual(&self, tape: &mut Tape, fields: &FieldBundle, source: Option<&Tensor>) -> Result<NodeId> {
        let p = &self.params;
        let source = || -> Result<Cow<'_, Tensor>> {
            let s = source.ok_or_else(|| usage_err!("{} residual needs its source field", self.name()))?;
            if s.shape() == fields.shape.as_slice() {
                Ok(Cow::Borrowed(s))
            } else {
                s.clone().reshape(&fields.shape).map(Cow::Owned)
            }
        };
        match self.kind {
            ProblemKind::LinearDiffusion => residual_linear_diffusion(tape, fields, p.alpha),
            ProblemKind::NonlinearDiffusion => residual_nonlinear_diffusion(tape, fields, p.alpha),
            ProblemKind::Helmholtz => residual_helmholtz(tape, fields, p.k, &*source()?),
            ProblemKind::KleinGordon => residual_klein_gordon(tape, fields, &*source()?),
        }
    }

    /// Source term sampled on a collocation set, shaped like the fields a
    /// provider returns there. `None` for problems without one.
    pub fn source_field(&self, at: &Collocation) -> Result<Option<Tensor>> {
        if !matches!(self.kind, ProblemKind::Helmholtz | ProblemKind::KleinGordon) {
            return Ok(None);
        }
        let shape = match at {
            Collocation::Lattice(g) => g.shape(),
            Collocation::Points(p) => vec![p.shape()[0], 1],
        };
        Tensor::new(shape, at.evaluate(|x| self.source(x))).map(Some)
    }

    /// Right-hand side: `q` for Helmholtz, `f` for Klein-Gordon, 0 otherwise.
    pub fn source(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::Helmholtz => {
                let [a1, a2, a3] = self.params.a;
                let k = self.params.k;
                (k * k - PI * PI * (a1 * a1 + a2 * a2 + a3 * a3)) * self.helmholtz_u(x)
            }
            ProblemKind::KleinGordon => {
                let u = kg_u(x);
                u * u - u
            }
            _ => 0.0,
        }
    }

    fn helmholtz_u(&self, x: &[f64]) -> f64 {
        let a = self.params.a;
        (0..3).map(|i| (a[i] * PI * x[i]).sin()).product()
    }

    /// `u(x, 0)`.
    pub fn initial_value(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::LinearDiffusion | ProblemKind::NonlinearDiffusion => {
                self.gaussian_ic(x[0], x[1])
            }
            ProblemKind::KleinGordon => x[0] + x[1],
            ProblemKind::Helmholtz => 0.0,
        }
    }

    /// `∂t u(x, 0)` when a velocity condition is imposed.
    pub fn initial_velocity(&self, x: &[f64]) -> Option<f64> {
        self.uses_velocity_ic().then(|| x[0] * x[1])
    }

    pub fn gaussian_ic(&self, x1: f64, x2: f64) -> f64 {
        self.params
            .gaussians
            .iter()
            .map(|g| {
                let r2 = (x1 - g.center[0]).powi(2) + (x2 - g.center[1]).powi(2);
                g.amp * (-r2 / (2.0 * g.sigma * g.sigma)).exp()
            })
            .sum()
    }

    /// Dirichlet data on the spatial boundary.
    pub fn boundary_value(&self, x: &[f64]) -> f64 {
        match self.kind {
            ProblemKind::KleinGordon => kg_u(x),
            _ => 0.0,
        }
    }

    pub fn has_exact(&self) -> bool {
        matches!(self.kind, ProblemKind::Helmholtz | ProblemKind::KleinGordon)
    }

    pub fn exact(&self, x: &[f64]) -> Option<f64> {
        self.exact_jet(x).map(|j| j.u)
    }

    /// Manufactured solution with its first and second partials.
    pub fn exact_jet(&self, x: &[f64]) -> Option<PointJet> {
        match self.kind {
            ProblemKind::Helmholtz => {
                let a = self.params.a;
                let w: Vec<f64> = a.iter().map(|ai| ai * PI).collect();
                let s: Vec<f64> = (0..3).map(|i| (w[i] * x[i]).sin()).collect();
                let c: Vec<f64> = (0..3).map(|i| (w[i] * x[i]).cos()).collect();
                let u = s.iter().product::<f64>();
                let du = (0..3)
                    .map(|i| w[i] * c[i] * (0..3).filter(|&j| j != i).map(|j| s[j]).product::<f64>())
                    .collect();
                let ddu = (0..3).map(|i| -w[i] * w[i] * u).collect();
                Some(PointJet { u, du, ddu })
            }
            ProblemKind::KleinGordon => {
                let (x1, x2, t) = (x[0], x[1], x[2]);
                let (s, c) = t.sin_cos();
                let u = kg_u(x);
                Some(PointJet {
                    u,
                    du: vec![c + x2 * s, c + x1 * s, -(x1 + x2) * s + x1 * x2 * c],
                    ddu: vec![0.0, 0.0, -u],
                })
            }
            _ => None,
        }
    }

    /// Exact fields as a field provider, for problems that have them.
    pub fn exact_fields(&self) -> Option<AnalyticFields<'_>> {
        self.has_exact().then(|| AnalyticFields::new(3, move |x| self.exact_jet(x).unwrap()))
    }

    /// Interior lattice plus its boundary slices at resolution `n`.
    pub fn lattices(&self, n: usize) -> Result<LossLattices> {
        if n < 2 {
            return Err(usage_err!("lattice resolution must be at least 2, got {n}"));
        }
        let bounds = self.bounds();
        let interior = AxisGrid::uniform(&bounds, n)?;
        let initial = match self.time_axis() {
            Some(t) => Some(interior.with_axis(t, vec![bounds[t].0])?),
            None => None,
        };
        let mut boundary = Vec::new();
        for i in self.spatial_axes() {
            boundary.push(interior.with_axis(i, vec![bounds[i].0])?);
            boundary.push(interior.with_axis(i, vec![bounds[i].1])?);
        }
        let interior_source = self.source_field(&Collocation::Lattice(&interior))?;
        Ok(LossLattices { interior, interior_source, initial, boundary })
    }
}

fn kg_u(x: &[f64]) -> f64 {
    let (s, c) = x[2].sin_cos();
    (x[0] + x[1]) * c + x[0] * x[1] * s
}
