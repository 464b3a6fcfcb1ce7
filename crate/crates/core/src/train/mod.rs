//! Full-batch Adam training over the physics-informed loss, evaluation
//! against exact or finite-difference references, and scaling benchmarks.

mod adam;
mod bench;
mod config;
mod objective;

pub use adam::{Adam, AdamConfig};
pub use bench::{benchmark_scaling, loglog_slope, BenchSettings, ScalingRow};
pub use config::{ReferenceConfig, TrainConfig};
pub use objective::{Evaluation, Objective};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::model::{init_model, save_checkpoint, AnyModel};
use crate::pde::{fd_reference_diffusion, PdeProblem};
use crate::tensor::{AxisGrid, Tensor};

/// Losses above this abort a run as diverged.
pub const DIVERGENCE_LOSS: f64 = 1e8;

/// `‖pred - reference‖₂ / ‖reference‖₂`.
pub fn relative_l2(pred: &Tensor, reference: &Tensor) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(dim_err!("prediction has {} values, reference {}", pred.len(), reference.len()));
    }
    let den = reference.norm();
    if den == 0.0 {
        return Err(Error::Domain("reference has zero norm".into()));
    }
    let num = pred.data().iter().zip(reference.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

/// Reference field on `grid`: the manufactured solution when one exists,
/// otherwise the finite-difference diffusion solution.
pub fn reference_field(problem: &PdeProblem, grid: &AxisGrid, cfg: &ReferenceConfig) -> Result<Tensor> {
    if problem.has_exact() {
        Ok(grid.evaluate(|x| problem.exact(x).unwrap()))
    } else {
        fd_reference_diffusion(problem, cfg.fd_nx, cfg.fd_nt, grid)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub total: f64,
    pub pde: f64,
    pub ic: f64,
    pub ic_velocity: f64,
    pub bc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub iteration: usize,
    pub relative_l2: f64,
}

/// Wall-clock statistics of the optimization steps (loss, gradient, update).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub steps: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub total_s: f64,
}

impl TimingStats {
    pub fn from_samples(ms: &[f64]) -> Option<Self> {
        if ms.is_empty() {
            return None;
        }
        let mut sorted = ms.to_vec();
        sorted.sort_by(f64::total_cmp);
        let total: f64 = ms.iter().sum();
        Some(Self {
            steps: ms.len(),
            mean_ms: total / ms.len() as f64,
            median_ms: median_sorted(&sorted),
            min_ms: sorted[0],
            max_ms: sorted[sorted.len() - 1],
            total_s: total / 1e3,
        })
    }
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub num_params: usize,
    pub losses: Vec<LossRecord>,
    pub errors: Vec<ErrorRecord>,
    pub timing: Option<TimingStats>,
    /// Recorded primal bytes plus peak adjoint bytes of one iteration.
    pub memory_bytes: usize,
    pub diverged: bool,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().map(|r| r.total)
    }

    pub fn final_error(&self) -> Option<f64> {
        self.errors.last().map(|r| r.relative_l2)
    }

    pub fn initial_loss(&self) -> Option<f64> {
        self.losses.first().map(|r| r.total)
    }
}

/// What a running [`train_with`] reports to its observer.
#[derive(Clone, Copy, Debug)]
pub enum Progress {
    Loss(LossRecord),
    Error(ErrorRecord),
}

pub fn train(cfg: &TrainConfig) -> Result<(TrainReport, AnyModel)> {
    train_with(cfg, &mut |_| {})
}

/// Runs `cfg.iterations` Adam steps. Losses are recorded before every step
/// and once after the last; relative errors every `eval_every` steps and at
/// the end. Artifacts go to `cfg.out_dir` when it is set.
pub fn train_with(cfg: &TrainConfig, observe: &mut dyn FnMut(Progress)) -> Result<(TrainReport, AnyModel)> {
    let cfg = cfg.clone().resolved()?;
    let problem = cfg.problem()?;
    let mut model = init_model(cfg.arch, &cfg.hidden, cfg.rank, problem.dim(), cfg.seed)?;
    let objective = Objective::new(&problem, cfg.n, cfg.arch, cfg.chunk_points)?;
    let eval_grid = objective.lattices().interior.clone();
    let reference = reference_field(&problem, &eval_grid, &cfg.reference)?;
    let names = model.param_names();
    let mut opt = Adam::new(cfg.lr, cfg.adam);

    let mut losses = Vec::with_capacity(cfg.iterations + 1);
    let mut errors = Vec::new();
    let mut step_ms = Vec::with_capacity(cfg.iterations);
    let mut memory_bytes = 0;
    let mut diverged = false;

    for it in 0..=cfg.iterations {
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let e = ErrorRecord { iteration: it, relative_l2: relative_l2(&model.predict_grid(&eval_grid)?, &reference)? };
            observe(Progress::Error(e));
            errors.push(e);
        }
        let last = it == cfg.iterations;
        let start = Instant::now();
        let ev = objective.evaluate(&model, !last)?;
        let v = ev.values;
        let rec = LossRecord { iteration: it, total: v.total, pde: v.pde, ic: v.ic, ic_velocity: v.ic_velocity, bc: v.bc };
        losses.push(rec);
        observe(Progress::Loss(rec));
        memory_bytes = memory_bytes.max(ev.bytes);
        if !(v.total.is_finite() && v.total <= DIVERGENCE_LOSS) {
            diverged = true;
            break;
        }
        if let Some(grads) = ev.grads {
            opt.step(&mut model.params_mut(), &grads, &names)?;
            step_ms.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }

    let mut report = TrainReport {
        num_params: model.num_params(),
        losses,
        errors,
        timing: TimingStats::from_samples(&step_ms),
        memory_bytes,
        diverged,
        checkpoint: None,
        config: cfg,
    };
    if let Some(dir) = report.config.out_dir.clone() {
        write_artifacts(&dir, &mut report, &model)?;
    }
    Ok((report, model))
}

/// Writes the checkpoint, `report.json`, `losses.csv`, `errors.csv` and the
/// resolved `config.toml` into `dir`.
pub fn write_artifacts(dir: &Path, report: &mut TrainReport, model: &AnyModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let cfg_text = report.config.to_toml();
    let iteration = report.losses.last().map_or(0, |r| r.iteration);
    let ckpt = save_checkpoint(&dir.join("checkpoint"), model, report.config.seed, iteration, Some(&cfg_text))?;
    report.checkpoint = Some(ckpt);
    fs::write(dir.join("config.toml"), &cfg_text)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join("report.json"), json)?;
    write_csv(&dir.join("losses.csv"), &report.losses)?;
    write_csv(&dir.join("errors.csv"), &report.errors)?;
    Ok(())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
