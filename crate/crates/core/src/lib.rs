//! Separable physics-informed neural networks.
//!
//! Per-axis body networks produce feature matrices that are merged into a
//! solution field by rank-`r` outer products. Input derivatives come from
//! batched second-order Taylor jets, parameter gradients from a reverse-mode
//! tape over the same kernels. A conventional point-wise PINN, an op-count
//! estimator and a training/benchmark harness for four 3-d PDEs round it out.

pub mod counter;
pub mod error;
pub mod exec;
pub mod flops;
pub mod jet;
pub mod model;
pub mod pde;
pub mod selftest;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{AxisGrid, Tensor};
