//! Residual operators. Fields carry `(x₁, x₂, t)` or `(x₁, x₂, x₃)` on axes
//! 0, 1, 2; every residual has the shape of the input fields.

use crate::error::Result;
use crate::model::FieldBundle;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

fn spatial_laplacian(tape: &mut Tape, f: &FieldBundle, axes: &[usize]) -> Result<NodeId> {
    let mut acc = f.ddu(axes[0])?;
    for &a in &axes[1..] {
        let term = f.ddu(a)?;
        acc = tape.add(acc, term)?;
    }
    Ok(acc)
}

/// `∂t u - α (∂²u/∂x₁² + ∂²u/∂x₂²)`.
pub fn residual_linear_diffusion(tape: &mut Tape, f: &FieldBundle, alpha: f64) -> Result<NodeId> {
    let ut = f.du(2)?;
    let lap = spatial_laplacian(tape, f, &[0, 1])?;
    let rhs = tape.scale(lap, alpha);
    tape.sub(ut, rhs)
}

/// `∂t u - α (|∇ₓu|² + u Δu)` with the gradient over the spatial axes.
pub fn residual_nonlinear_diffusion(tape: &mut Tape, f: &FieldBundle, alpha: f64) -> Result<NodeId> {
    let ut = f.du(2)?;
    let (g1, g2) = (f.du(0)?, f.du(1)?);
    let g1sq = tape.square(g1);
    let g2sq = tape.square(g2);
    let grad2 = tape.add(g1sq, g2sq)?;
    let lap = spatial_laplacian(tape, f, &[0, 1])?;
    let ulap = tape.mul(f.u, lap)?;
    let inner = tape.add(grad2, ulap)?;
    let rhs = tape.scale(inner, alpha);
    tape.sub(ut, rhs)
}

/// `Δu + k²u - q`.
pub fn residual_helmholtz(tape: &mut Tape, f: &FieldBundle, k: f64, q: &Tensor) -> Result<NodeId> {
    let lap = spatial_laplacian(tape, f, &[0, 1, 2])?;
    let ku = tape.scale(f.u, k * k);
    let lhs = tape.add(lap, ku)?;
    let q = tape.constant(q.clone());
    tape.sub(lhs, q)
}

/// `∂tt u - (∂²u/∂x₁² + ∂²u/∂x₂²) + u² - f`.
pub fn residual_klein_gordon(tape: &mut Tape, fields: &FieldBundle, f: &Tensor) -> Result<NodeId> {
    let utt = fields.ddu(2)?;
    let lap = spatial_laplacian(tape, fields, &[0, 1])?;
    let wave = tape.sub(utt, lap)?;
    let u2 = tape.square(fields.u);
    let lhs = tape.add(wave, u2)?;
    let f = tape.constant(f.clone());
    tape.sub(lhs, f)
}
