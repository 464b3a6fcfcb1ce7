use super::Tensor;
use crate::error::{dim_err, Error, Result};

/// Per-axis coordinate vectors of a factorizable lattice. Storage is
/// `Σ n_i` values while the lattice covers `Π n_i` points.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisGrid {
    axes: Vec<Vec<f64>>,
    bounds: Vec<(f64, f64)>,
}

impl AxisGrid {
    pub fn new(axes: Vec<Vec<f64>>, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if axes.len() != bounds.len() {
            return Err(dim_err!("{} axes but {} bounds", axes.len(), bounds.len()));
        }
        for (i, (ax, &(lo, hi))) in axes.iter().zip(&bounds).enumerate() {
            if ax.is_empty() {
                return Err(dim_err!("axis {i} has no coordinates"));
            }
            if lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()) {
                return Err(Error::Domain(format!("axis {i} bounds [{lo}, {hi}] are inverted")));
            }
            if ax.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Domain(format!("axis {i} coordinates are not ascending")));
            }
            if ax.iter().any(|&x| x < lo || x > hi) {
                return Err(Error::Domain(format!("axis {i} has coordinates outside [{lo}, {hi}]")));
            }
        }
        Ok(Self { axes, bounds })
    }

    /// `n` evenly spaced points per axis, endpoints included.
    pub fn uniform(bounds: &[(f64, f64)], n: usize) -> Result<Self> {
        Self::uniform_per_axis(bounds, &vec![n; bounds.len()])
    }

    pub fn uniform_per_axis(bounds: &[(f64, f64)], ns: &[usize]) -> Result<Self> {
        if ns.len() != bounds.len() {
            return Err(dim_err!("{} resolutions for {} axes", ns.len(), bounds.len()));
        }
        let axes = bounds.iter().zip(ns).map(|(&(lo, hi), &n)| linspace(lo, hi, n)).collect();
        Self::new(axes, bounds.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, i: usize) -> &[f64] {
        &self.axes[i]
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Extents of the implied full lattice.
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    pub fn num_points(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    pub fn storage_len(&self) -> usize {
        self.axes.iter().map(Vec::len).sum()
    }

    /// Axis `i` as a `[n_i, 1]` column.
    pub fn axis_column(&self, i: usize) -> Tensor {
        Tensor::column(&self.axes[i])
    }

    /// Copy with axis `i` replaced by `coords` (e.g. a boundary slice).
    pub fn with_axis(&self, i: usize, coords: Vec<f64>) -> Result<Self> {
        let mut axes = self.axes.clone();
        axes[i] = coords;
        Self::new(axes, self.bounds.clone())
    }

    /// Every lattice point as a row of an `[N, d]` matrix, row-major order
    /// (last axis fastest), matching the layout of merged grids.
    pub fn points(&self) -> Tensor {
        let d = self.dim();
        let n = self.num_points();
        let shape = self.shape();
        let mut data = Vec::with_capacity(n * d);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            for (k, &i) in idx.iter().enumerate() {
                data.push(self.axes[k][i]);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Tensor::from_parts(vec![n, d], data)
    }

    /// Evaluates `f` at every lattice point into a tensor of the lattice shape.
    pub fn evaluate(&self, f: impl Fn(&[f64]) -> f64) -> Tensor {
        let pts = self.points();
        let d = self.dim();
        let data = pts.data().chunks(d).map(f).collect();
        Tensor::from_parts(self.shape(), data)
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { hi } else { lo + step * i as f64 }).collect()
        }
    }
}
