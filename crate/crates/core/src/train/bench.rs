use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{median_sorted, Adam, AdamConfig, Objective};
use crate::error::{usage_err, Result};
use crate::model::{init_model, Arch};
use crate::pde::PdeProblem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSettings {
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub warmup: usize,
    pub measured: usize,
    pub chunk_points: usize,
    pub seed: u64,
}

impl BenchSettings {
    pub fn for_arch(arch: Arch) -> Self {
        let hidden = match arch {
            Arch::Spinn => crate::model::SPINN_HIDDEN.to_vec(),
            Arch::Pinn => crate::model::PINN_HIDDEN.to_vec(),
        };
        Self { hidden, rank: crate::model::SPINN_RANK, warmup: 5, measured: 20, chunk_points: 4096, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub points: usize,
    pub ms_per_iter: f64,
    pub peak_bytes: usize,
}

/// Median wall-clock of full training iterations (loss, gradient, Adam
/// update) at each lattice resolution, after warm-up iterations.
pub fn benchmark_scaling(problem: &PdeProblem, arch: Arch, ns: &[usize], s: &BenchSettings) -> Result<Vec<ScalingRow>> {
    if ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(usage_err!("resolutions must be sorted ascending, got {ns:?}"));
    }
    if s.measured == 0 {
        return Err(usage_err!("need at least one measured iteration"));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let mut model = init_model(arch, &s.hidden, s.rank, problem.dim(), s.seed)?;
        let names = model.param_names();
        let obj = Objective::new(problem, n, arch, s.chunk_points)?;
        let mut opt = Adam::new(1e-3, AdamConfig::default());
        let mut times = Vec::with_capacity(s.measured);
        let mut peak = 0;
        for i in 0..s.warmup + s.measured {
            let start = Instant::now();
            let ev = obj.evaluate(&model, true)?;
            opt.step(&mut model.params_mut(), ev.grads.as_ref().unwrap(), &names)?;
            let ms = start.elapsed().as_secs_f64() * 1e3;
            peak = peak.max(ev.bytes);
            if i >= s.warmup {
                times.push(ms);
            }
        }
        times.sort_by(f64::total_cmp);
        rows.push(ScalingRow { n, points: obj.lattices().interior.num_points(), ms_per_iter: median_sorted(&times), peak_bytes: peak });
    }
    Ok(rows)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    cov / var
}
