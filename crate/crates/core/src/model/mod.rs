//! Solver architectures: the separable model (one body network per axis,
//! merged by rank-`r` outer products) and the point-wise baseline MLP.

mod checkpoint;
mod fields;
mod mlp;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest};
pub use fields::{
    pinn_fields, spinn_fields, Collocation, DerivRequest, FieldBundle, FieldProvider,
    PointwiseVars,
};
pub use mlp::{mlp_forward, Layer, MlpParams, MlpVars};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage_err, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::{self, AxisGrid, Tensor};

/// Hidden widths of the default separable body: 5 hidden layers of 50.
pub const SPINN_HIDDEN: [usize; 5] = [50; 5];
pub const SPINN_RANK: usize = 50;
/// Hidden widths of the default baseline: 5 hidden layers of 100.
pub const PINN_HIDDEN: [usize; 5] = [100; 5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Spinn,
    Pinn,
}

impl std::str::FromStr for Arch {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spinn" => Ok(Arch::Spinn),
            "pinn" => Ok(Arch::Pinn),
            _ => Err(usage_err!("unknown architecture `{s}` (expected spinn or pinn)")),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Spinn => "spinn",
            Arch::Pinn => "pinn",
        })
    }
}

/// `d` scalar-input body networks `ℝ → ℝʳ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableModel {
    bodies: Vec<MlpParams>,
    rank: usize,
}

#[derive(Clone, Debug)]
pub struct SeparableVars {
    pub bodies: Vec<MlpVars>,
    pub rank: usize,
}

impl SeparableModel {
    /// Bodies `1 → hidden… → rank`, initialized from one seeded stream in
    /// axis order.
    pub fn init(hidden: &[usize], rank: usize, d: usize, seed: u64) -> Result<Self> {
        if d < 2 {
            return Err(usage_err!("a separable model needs d >= 2 axes, got {d}"));
        }
        let widths = body_widths(hidden, rank);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bodies = (0..d)
            .map(|_| MlpParams::glorot(&widths, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bodies, rank })
    }

    pub fn from_bodies(bodies: Vec<MlpParams>) -> Result<Self> {
        if bodies.len() < 2 {
            return Err(usage_err!("a separable model needs d >= 2 bodies"));
        }
        let rank = bodies[0].output_width();
        for (i, b) in bodies.iter().enumerate() {
            if b.input_width() != 1 || b.output_width() != rank {
                return Err(usage_err!(
                    "body {i} maps {} -> {}, expected 1 -> {rank}",
                    b.input_width(),
                    b.output_width()
                ));
            }
        }
        Ok(Self { bodies, rank })
    }

    pub fn dim(&self) -> usize {
        self.bodies.len()
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn bodies(&self) -> &[MlpParams] {
        &self.bodies
    }

    pub fn num_params(&self) -> usize {
        self.bodies.iter().map(MlpParams::num_params).sum()
    }

    pub fn to_tape(&self, tape: &mut Tape) -> SeparableVars {
        SeparableVars { bodies: self.bodies.iter().map(|b| b.to_tape(tape)).collect(), rank: self.rank }
    }

    /// Merged field on every lattice point.
    pub fn predict_grid(&self, grid: &AxisGrid) -> Result<Tensor> {
        self.check_dim(grid.dim())?;
        let feats = self
            .bodies
            .iter()
            .enumerate()
            .map(|(i, b)| b.forward(&grid.axis_column(i)))
            .collect::<Result<Vec<_>>>()?;
        tensor::merge(&feats.iter().collect::<Vec<_>>())
    }

    /// `Σ_j Π_i f_{i,j}(x_i)` at arbitrary `[N, d]` points.
    pub fn eval_on_points(&self, points: &Tensor) -> Result<Tensor> {
        let (n, d) = points.dims2()?;
        self.check_dim(d)?;
        let r = self.rank;
        let mut prod = vec![1.0; n * r];
        for (i, body) in self.bodies.iter().enumerate() {
            let col: Vec<f64> = points.data().iter().skip(i).step_by(d).copied().collect();
            let f = body.forward(&Tensor::column(&col))?;
            for (p, &v) in prod.iter_mut().zip(f.data()) {
                *p *= v;
            }
        }
        let u = prod.chunks(r).map(|row| row.iter().fold(0.0, |s, &v| s + v)).collect();
        Tensor::new(vec![n], u)
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(usage_err!("model has {} axes, input has {d}", self.dim()));
        }
        Ok(())
    }
}

pub fn body_widths(hidden: &[usize], rank: usize) -> Vec<usize> {
    let mut w = vec![1];
    w.extend_from_slice(hidden);
    w.push(rank);
    w
}

pub fn baseline_widths(hidden: &[usize], d: usize) -> Vec<usize> {
    let mut w = vec![d];
    w.extend_from_slice(hidden);
    w.push(1);
    w
}

/// The conventional PINN: one MLP `ℝᵈ → ℝ`.
#[derive(Clone, Debug, PartialEq)]
pub struct VanillaModel {
    net: MlpParams,
}

impl VanillaModel {
    pub fn init(hidden: &[usize], d: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { net: MlpParams::glorot(&baseline_widths(hidden, d), &mut rng)? })
    }

    pub fn from_net(net: MlpParams) -> Result<Self> {
        if net.output_width() != 1 {
            return Err(usage_err!("baseline network must have one output"));
        }
        Ok(Self { net })
    }

    pub fn net(&self) -> &MlpParams {
        &self.net
    }

    pub fn dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn to_tape(&self, tape: &mut Tape) -> PointwiseVars {
        PointwiseVars(self.net.to_tape(tape))
    }

    /// `u` at `[N, d]` points, evaluated in bounded batches.
    pub fn eval_on_points(&self, points: &Tensor) -> Result<Tensor> {
        let (n, d) = points.dims2()?;
        const BATCH: usize = 1 << 14;
        let mut out = Vec::with_capacity(n);
        for chunk in points.data().chunks(BATCH * d) {
            let x = Tensor::new(vec![chunk.len() / d, d], chunk.to_vec())?;
            out.extend_from_slice(self.net.forward(&x)?.data());
        }
        Tensor::new(vec![n], out)
    }

    pub fn predict_grid(&self, grid: &AxisGrid) -> Result<Tensor> {
        self.eval_on_points(&grid.points())?.reshape(&grid.shape())
    }
}

/// Either architecture, with a uniform parameter view for the optimizer.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyModel {
    Separable(SeparableModel),
    Vanilla(VanillaModel),
}

/// Leaf ids of a model recorded on a tape, in [`AnyModel::params`] order.
pub enum AnyVars {
    Separable(SeparableVars),
    Vanilla(PointwiseVars),
}

impl AnyVars {
    pub fn leaves(&self) -> Vec<NodeId> {
        match self {
            AnyVars::Separable(v) => v.bodies.iter().flat_map(|b| b.leaves()).collect(),
            AnyVars::Vanilla(v) => v.0.leaves().collect(),
        }
    }

    pub fn provider(&self) -> &dyn FieldProvider {
        match self {
            AnyVars::Separable(v) => v,
            AnyVars::Vanilla(v) => v,
        }
    }
}

/// Builds a freshly initialized model. `hidden` are the hidden widths; the
/// separable bodies end in `rank` outputs, the baseline in one.
pub fn init_model(arch: Arch, hidden: &[usize], rank: usize, d: usize, seed: u64) -> Result<AnyModel> {
    if hidden.is_empty() {
        return Err(usage_err!("hidden widths must be nonempty"));
    }
    if rank == 0 {
        return Err(usage_err!("rank must be positive"));
    }
    Ok(match arch {
        Arch::Spinn => AnyModel::Separable(SeparableModel::init(hidden, rank, d, seed)?),
        Arch::Pinn => AnyModel::Vanilla(VanillaModel::init(hidden, d, seed)?),
    })
}

impl AnyModel {
    pub fn arch(&self) -> Arch {
        match self {
            AnyModel::Separable(_) => Arch::Spinn,
            AnyModel::Vanilla(_) => Arch::Pinn,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnyModel::Separable(m) => m.dim(),
            AnyModel::Vanilla(m) => m.dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            AnyModel::Separable(m) => m.num_params(),
            AnyModel::Vanilla(m) => m.num_params(),
        }
    }

    fn nets(&self) -> Vec<&MlpParams> {
        match self {
            AnyModel::Separable(m) => m.bodies.iter().collect(),
            AnyModel::Vanilla(m) => vec![&m.net],
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.nets().into_iter().flat_map(|n| n.tensors()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            AnyModel::Separable(m) => m.bodies.iter_mut().flat_map(|b| b.tensors_mut()).collect(),
            AnyModel::Vanilla(m) => m.net.tensors_mut().collect(),
        }
    }

    /// Human-readable name of each entry of [`AnyModel::params`].
    pub fn param_names(&self) -> Vec<String> {
        let nets = self.nets();
        let multi = nets.len() > 1;
        let mut names = Vec::new();
        for (b, net) in nets.iter().enumerate() {
            for l in 0..net.layers().len() {
                for part in ["weight", "bias"] {
                    names.push(if multi {
                        format!("body {b} layer {l} {part}")
                    } else {
                        format!("layer {l} {part}")
                    });
                }
            }
        }
        names
    }

    /// Per-network layer widths (one entry per body for the separable model).
    pub fn widths(&self) -> Vec<Vec<usize>> {
        self.nets().iter().map(|n| n.widths()).collect()
    }

    pub fn rank(&self) -> Option<usize> {
        match self {
            AnyModel::Separable(m) => Some(m.rank),
            AnyModel::Vanilla(_) => None,
        }
    }

    pub fn to_tape(&self, tape: &mut Tape) -> AnyVars {
        match self {
            AnyModel::Separable(m) => AnyVars::Separable(m.to_tape(tape)),
            AnyModel::Vanilla(m) => AnyVars::Vanilla(m.to_tape(tape)),
        }
    }

    pub fn predict_grid(&self, grid: &AxisGrid) -> Result<Tensor> {
        match self {
            AnyModel::Separable(m) => m.predict_grid(grid),
            AnyModel::Vanilla(m) => m.predict_grid(grid),
        }
    }

    pub fn eval_on_points(&self, points: &Tensor) -> Result<Tensor> {
        match self {
            AnyModel::Separable(m) => m.eval_on_points(points),
            AnyModel::Vanilla(m) => m.eval_on_points(points),
        }
    }
}
