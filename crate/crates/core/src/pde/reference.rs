//! Finite-difference reference solutions for the diffusion problems on a
//! square with homogeneous Dirichlet walls.
//!
//! Linear diffusion uses Crank–Nicolson with a matrix-free conjugate
//! gradient solve per step. Nonlinear diffusion is written as
//! `∂t u = (α/2) Δ(u²)`, which equals `α(|∇u|² + uΔu)`, and is marched
//! with classical RK4 under a stability bound on `dt`.

use super::{PdeProblem, ProblemKind};
use crate::error::{usage_err, Error, Result};
use crate::tensor::{AxisGrid, Tensor};

/// Extent of the RK4 stability interval on the negative real axis.
const RK4_REAL_LIMIT: f64 = 2.785;
const RK4_SAFETY: f64 = 0.9;

/// Reference field of a diffusion problem on `target` (axes `x₁, x₂, t`),
/// computed on an `nx × nx` grid with `nt` steps over the time span of
/// `target`'s bounds.
pub fn fd_reference_diffusion(problem: &PdeProblem, nx: usize, nt: usize, target: &AxisGrid) -> Result<Tensor> {
    let nonlinear = match problem.kind() {
        ProblemKind::LinearDiffusion => false,
        ProblemKind::NonlinearDiffusion => true,
        k => return Err(usage_err!("no finite-difference reference for {k}")),
    };
    let ic = |x1: f64, x2: f64| problem.gaussian_ic(x1, x2);
    fd_diffusion(nonlinear, problem.params().alpha, &ic, nx, nt, target)
}

struct Grid2 {
    nx: usize,
    lo: [f64; 2],
    h: [f64; 2],
}

impl Grid2 {
    /// 5-point Laplacian on interior nodes; walls stay zero.
    fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        let n = self.nx;
        let (cx, cy) = (1.0 / (self.h[0] * self.h[0]), 1.0 / (self.h[1] * self.h[1]));
        for i in 1..n - 1 {
            for j in 1..n - 1 {
                let k = i * n + j;
                out[k] = cx * (u[k - n] - 2.0 * u[k] + u[k + n]) + cy * (u[k - 1] - 2.0 * u[k] + u[k + 1]);
            }
        }
    }

    fn bilinear(&self, u: &[f64], x1: f64, x2: f64) -> f64 {
        let n = self.nx;
        let locate = |x: f64, a: usize| {
            let s = ((x - self.lo[a]) / self.h[a]).clamp(0.0, (n - 1) as f64);
            let i = (s.floor() as usize).min(n - 2);
            (i, s - i as f64)
        };
        let (i, fx) = locate(x1, 0);
        let (j, fy) = locate(x2, 1);
        let at = |a: usize, b: usize| u[a * n + b];
        (1.0 - fx) * ((1.0 - fy) * at(i, j) + fy * at(i, j + 1))
            + fx * ((1.0 - fy) * at(i + 1, j) + fy * at(i + 1, j + 1))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `(I - c L) x = b` on interior nodes by conjugate gradients,
/// starting from `x`.
fn cg_solve(g: &Grid2, c: f64, b: &[f64], x: &mut [f64], scratch: &mut [Vec<f64>; 3]) -> Result<()> {
    let apply = |v: &[f64], out: &mut [f64]| {
        g.laplacian(v, out);
        for k in 0..v.len() {
            out[k] = v[k] - c * out[k];
        }
    };
    let [r, p, ap] = scratch;
    apply(x, ap);
    for k in 0..x.len() {
        r[k] = b[k] - ap[k];
    }
    zero_walls(g.nx, r);
    p.copy_from_slice(r);
    let tol = 1e-26 * dot(b, b).max(1e-300);
    let mut rr = dot(r, r);
    for _ in 0..10 * x.len() {
        if rr <= tol {
            return Ok(());
        }
        apply(p, ap);
        zero_walls(g.nx, ap);
        let alpha = rr / dot(p, ap);
        for k in 0..x.len() {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let next = dot(r, r);
        let beta = next / rr;
        rr = next;
        for k in 0..x.len() {
            p[k] = r[k] + beta * p[k];
        }
    }
    Err(Error::Numerical("conjugate gradient did not converge".into()))
}

fn zero_walls(n: usize, u: &mut [f64]) {
    for k in 0..n {
        u[k] = 0.0;
        u[(n - 1) * n + k] = 0.0;
        u[k * n] = 0.0;
        u[k * n + n - 1] = 0.0;
    }
}

/// Diffusion on the spatial box of `target` from initial data `ic`, sampled
/// at every point of `target` (bilinear in space, linear in time).
pub fn fd_diffusion(
    nonlinear: bool,
    alpha: f64,
    ic: &dyn Fn(f64, f64) -> f64,
    nx: usize,
    nt: usize,
    target: &AxisGrid,
) -> Result<Tensor> {
    if target.dim() != 3 {
        return Err(usage_err!("target lattice must be (x1, x2, t), got {} axes", target.dim()));
    }
    if nx < 3 || nt < 1 {
        return Err(Error::Config(format!("need nx >= 3 and nt >= 1, got nx={nx}, nt={nt}")));
    }
    let b = target.bounds();
    let g = Grid2 {
        nx,
        lo: [b[0].0, b[1].0],
        h: [(b[0].1 - b[0].0) / (nx - 1) as f64, (b[1].1 - b[1].0) / (nx - 1) as f64],
    };
    let (t0, t1) = b[2];
    let dt = (t1 - t0) / nt as f64;

    let mut u = vec![0.0; nx * nx];
    for i in 1..nx - 1 {
        for j in 1..nx - 1 {
            u[i * nx + j] = ic(g.lo[0] + i as f64 * g.h[0], g.lo[1] + j as f64 * g.h[1]);
        }
    }
    if nonlinear {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let eig = 4.0 / (g.h[0] * g.h[0]) + 4.0 / (g.h[1] * g.h[1]);
        let dt_max = RK4_SAFETY * RK4_REAL_LIMIT / (alpha * umax * eig);
        if dt > dt_max {
            let suggest = ((t1 - t0) / dt_max).ceil() as usize;
            return Err(Error::Config(format!(
                "dt = {dt:.3e} exceeds the explicit stability limit {dt_max:.3e}; use nt >= {suggest}"
            )));
        }
    }

    let (n1, n2, n3) = (target.axis(0).len(), target.axis(1).len(), target.axis(2).len());
    let mut out = vec![0.0; n1 * n2 * n3];
    let mut write = |k: usize, prev: &[f64], cur: &[f64], w: f64| {
        for (i, &x1) in target.axis(0).iter().enumerate() {
            for (j, &x2) in target.axis(1).iter().enumerate() {
                let a = g.bilinear(prev, x1, x2);
                let c = g.bilinear(cur, x1, x2);
                out[(i * n2 + j) * n3 + k] = (1.0 - w) * a + w * c;
            }
        }
    };

    let mut stepper = Stepper::new(nonlinear, alpha, nx);
    let mut prev = u.clone();
    let mut step = 0usize;
    for (k, &tau) in target.axis(2).iter().enumerate() {
        let s = ((tau - t0) / dt).max(0.0);
        let need = (s.ceil() as usize).min(nt);
        while step < need {
            prev.copy_from_slice(&u);
            stepper.step(&g, dt, &mut u)?;
            step += 1;
        }
        // u holds time `step·dt`, prev the step before it
        let w = if step == 0 { 1.0 } else { (s - (step - 1) as f64).clamp(0.0, 1.0) };
        let prev_ref = if step == 0 { &u } else { &prev };
        write(k, prev_ref, &u, w);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("finite-difference solution blew up".into()));
    }
    Tensor::new(target.shape(), out)
}

struct Stepper {
    nonlinear: bool,
    alpha: f64,
    bufs: Vec<Vec<f64>>,
    cg: [Vec<f64>; 3],
}

impl Stepper {
    fn new(nonlinear: bool, alpha: f64, nx: usize) -> Self {
        let z = vec![0.0; nx * nx];
        Self { nonlinear, alpha, bufs: vec![z.clone(); 6], cg: [z.clone(), z.clone(), z] }
    }

    fn step(&mut self, g: &Grid2, dt: f64, u: &mut [f64]) -> Result<()> {
        if self.nonlinear {
            self.rk4(g, dt, u);
            Ok(())
        } else {
            let c = 0.5 * self.alpha * dt;
            let (lap, rest) = self.bufs.split_at_mut(1);
            let (lap, rhs) = (&mut lap[0], &mut rest[0]);
            g.laplacian(u, lap);
            for k in 0..u.len() {
                rhs[k] = u[k] + c * lap[k];
            }
            zero_walls(g.nx, rhs);
            cg_solve(g, c, rhs, u, &mut self.cg)
        }
    }

    fn rhs(g: &Grid2, alpha: f64, u: &[f64], sq: &mut [f64], out: &mut [f64]) {
        for k in 0..u.len() {
            sq[k] = u[k] * u[k];
        }
        g.laplacian(sq, out);
        for v in out.iter_mut() {
            *v *= 0.5 * alpha;
        }
    }

    fn rk4(&mut self, g: &Grid2, dt: f64, u: &mut [f64]) {
        let a = self.alpha;
        let [k1, k2, k3, k4, tmp, sq] = &mut self.bufs[..] else { unreachable!() };
        Self::rhs(g, a, u, sq, k1);
        for k in 0..u.len() {
            tmp[k] = u[k] + 0.5 * dt * k1[k];
        }
        Self::rhs(g, a, tmp, sq, k2);
        for k in 0..u.len() {
            tmp[k] = u[k] + 0.5 * dt * k2[k];
        }
        Self::rhs(g, a, tmp, sq, k3);
        for k in 0..u.len() {
            tmp[k] = u[k] + dt * k3[k];
        }
        Self::rhs(g, a, tmp, sq, k4);
        for k in 0..u.len() {
            u[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
        }
        zero_walls(g.nx, u);
    }
}
