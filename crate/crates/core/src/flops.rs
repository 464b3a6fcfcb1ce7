//! Elementary-operation estimates for field evaluation.
//!
//! Conventions (identical to the kernel charges in [`crate::counter`]):
//! an `[B,k]·[k,m]` matmul costs `B·m·k` mults and `B·m·(k-1)` adds, a bias
//! add `B·m` adds, tanh 4 adds and 4 mults per element, every other
//! elementwise op one add or one mult per element. A rank-`r` merge of `d`
//! factors costs `r·Σ_{k=2..d} Π_{i≤k} n_i` mults and `(r-1)·Π n_i` adds.
//!
//! Report rows follow the usual table layout: the forward pass, then the
//! extra work for first-order derivatives on every axis (one tangent
//! channel), then for second-order derivatives on every axis (tangent and
//! curvature channels). Derivative rows exclude the forward pass.

use serde::{Deserialize, Serialize};

use crate::counter::{OpCount, TANH_ADDS, TANH_MULTS};
use crate::error::{usage_err, Result};
use crate::model::{body_widths, baseline_widths, Arch, DerivRequest, PINN_HIDDEN, SPINN_HIDDEN, SPINN_RANK};

/// Architecture and lattice whose evaluation cost is estimated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub arch: Arch,
    /// Full widths of one body (SPINN) or of the whole network (PINN).
    pub widths: Vec<usize>,
    pub d: usize,
    pub rank: usize,
    /// Lattice resolution per axis.
    pub n: Vec<usize>,
}

impl ArchSpec {
    pub fn spinn(hidden: &[usize], rank: usize, n: &[usize]) -> Result<Self> {
        let s = Self { arch: Arch::Spinn, widths: body_widths(hidden, rank), d: n.len(), rank, n: n.to_vec() };
        s.validate()?;
        Ok(s)
    }

    pub fn pinn(hidden: &[usize], n: &[usize]) -> Result<Self> {
        let s = Self { arch: Arch::Pinn, widths: baseline_widths(hidden, n.len()), d: n.len(), rank: 1, n: n.to_vec() };
        s.validate()?;
        Ok(s)
    }

    /// 3 bodies of 5×50 hidden, rank 50, on `n³`.
    pub fn default_spinn(n: usize) -> Self {
        Self::spinn(&SPINN_HIDDEN, SPINN_RANK, &[n; 3]).expect("default spec is valid")
    }

    /// 5×100 hidden on `n³`.
    pub fn default_pinn(n: usize) -> Self {
        Self::pinn(&PINN_HIDDEN, &[n; 3]).expect("default spec is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 2 || w.contains(&0) || self.n.contains(&0) || self.n.len() != self.d {
            return Err(usage_err!("malformed spec {self:?}"));
        }
        let ok = match self.arch {
            Arch::Spinn => self.d >= 2 && w[0] == 1 && w[w.len() - 1] == self.rank,
            Arch::Pinn => w[0] == self.d && w[w.len() - 1] == 1,
        };
        if !ok {
            return Err(usage_err!("widths {w:?} do not fit a {} model on {} axes", self.arch, self.d));
        }
        Ok(())
    }

    pub fn num_points(&self) -> u64 {
        self.n.iter().map(|&n| n as u64).product()
    }
}

fn layers(widths: &[usize]) -> impl Iterator<Item = (u64, u64, bool)> + '_ {
    let last = widths.len() - 2;
    widths.windows(2).enumerate().map(move |(i, w)| (w[0] as u64, w[1] as u64, i != last))
}

fn matmul_ops(b: u64, k: u64, m: u64) -> OpCount {
    OpCount::new(b * m * k.saturating_sub(1), b * m * k)
}

/// Value-only pass of an MLP over a batch of `b` rows.
pub fn mlp_forward_ops(widths: &[usize], b: u64) -> OpCount {
    let mut c = OpCount::ZERO;
    for (k, m, hidden) in layers(widths) {
        c += matmul_ops(b, k, m) + OpCount::new(b * m, 0);
        if hidden {
            c += OpCount::new(TANH_ADDS * b * m, TANH_MULTS * b * m);
        }
    }
    c
}

/// Extra work of `channels` jet channels on top of the value pass.
/// One channel: tangent only. Two: tangent and curvature.
fn mlp_jet_extra(widths: &[usize], b: u64, channels: u64) -> OpCount {
    let mut c = OpCount::ZERO;
    for (k, m, hidden) in layers(widths) {
        c += matmul_ops(b, k, m).scaled(channels);
        if hidden {
            let e = b * m;
            // 1 - t², then the tangent product; curvature adds t·d1, the
            // -2 scale, v̇², two products and a sum
            c += match channels {
                1 => OpCount::new(e, 2 * e),
                _ => OpCount::new(2 * e, 7 * e),
            };
        }
    }
    c
}

/// One second-order jet pass of an MLP over `b` rows, as executed.
pub fn count_jet_pass(widths: &[usize], b: u64) -> OpCount {
    mlp_forward_ops(widths, b) + mlp_jet_extra(widths, b, 2)
}

pub fn merge_ops(n: &[usize], rank: usize) -> OpCount {
    let r = rank as u64;
    let mut prefix = n[0] as u64;
    let mut mults = 0;
    for &ni in &n[1..] {
        prefix *= ni as u64;
        mults += r * prefix;
    }
    OpCount::new((r - 1) * prefix, mults)
}

/// Forward pass on the whole lattice.
pub fn count_forward(spec: &ArchSpec) -> OpCount {
    match spec.arch {
        Arch::Spinn => {
            spec.n.iter().map(|&n| mlp_forward_ops(&spec.widths, n as u64)).fold(OpCount::ZERO, |a, b| a + b)
                + merge_ops(&spec.n, spec.rank)
        }
        Arch::Pinn => mlp_forward_ops(&spec.widths, spec.num_points()),
    }
}

/// Extra cost of derivatives of `order` (1 or 2) on every axis.
pub fn count_derivatives(spec: &ArchSpec, order: u8) -> Result<OpCount> {
    let channels = match order {
        1 | 2 => u64::from(order),
        _ => return Err(usage_err!("derivative order must be 1 or 2, got {order}")),
    };
    Ok(match spec.arch {
        Arch::Spinn => {
            let bodies = spec
                .n
                .iter()
                .map(|&n| mlp_jet_extra(&spec.widths, n as u64, channels))
                .fold(OpCount::ZERO, |a, b| a + b);
            bodies + merge_ops(&spec.n, spec.rank).scaled(spec.d as u64)
        }
        Arch::Pinn => mlp_jet_extra(&spec.widths, spec.num_points(), channels).scaled(spec.d as u64),
    })
}

/// Exact cost of building the requested fields on a lattice with
/// [`crate::model::spinn_fields`] or [`crate::model::pinn_fields`].
pub fn count_fields(spec: &ArchSpec, req: &DerivRequest) -> OpCount {
    let axes_on = (0..spec.d).filter(|&a| req.any_on(a)).count() as u64;
    match spec.arch {
        Arch::Spinn => {
            let mut c = merge_ops(&spec.n, spec.rank);
            for (a, &n) in spec.n.iter().enumerate() {
                c += if req.any_on(a) {
                    count_jet_pass(&spec.widths, n as u64)
                } else {
                    mlp_forward_ops(&spec.widths, n as u64)
                };
            }
            let grids = req.first.iter().chain(&req.second).filter(|&&b| b).count() as u64;
            c + merge_ops(&spec.n, spec.rank).scaled(grids)
        }
        Arch::Pinn => {
            let n = spec.num_points();
            if axes_on == 0 {
                mlp_forward_ops(&spec.widths, n)
            } else {
                count_jet_pass(&spec.widths, n).scaled(axes_on)
            }
        }
    }
}

/// Forward, first- and second-order rows for one architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub forward: OpCount,
    pub first: OpCount,
    pub second: OpCount,
    pub total: OpCount,
}

impl FlopsReport {
    pub fn for_spec(spec: &ArchSpec) -> Result<Self> {
        spec.validate()?;
        let forward = count_forward(spec);
        let first = count_derivatives(spec, 1)?;
        let second = count_derivatives(spec, 2)?;
        Ok(Self { forward, first, second, total: forward + first + second })
    }

    /// How many times more total ops `other` needs.
    pub fn ratio_vs(&self, other: &FlopsReport) -> f64 {
        other.total.total() as f64 / self.total.total() as f64
    }
}

/// Side-by-side comparison in the layout of the usual FLOPs table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsComparison {
    pub spinn_spec: ArchSpec,
    pub pinn_spec: ArchSpec,
    pub spinn: FlopsReport,
    pub pinn: FlopsReport,
    pub ratio: f64,
    pub cost_model: CostModel,
}

impl FlopsComparison {
    pub fn new(spinn_spec: ArchSpec, pinn_spec: ArchSpec) -> Result<Self> {
        if spinn_spec.arch != Arch::Spinn || pinn_spec.arch != Arch::Pinn {
            return Err(usage_err!("comparison needs a spinn spec and a pinn spec"));
        }
        let spinn = FlopsReport::for_spec(&spinn_spec)?;
        let pinn = FlopsReport::for_spec(&pinn_spec)?;
        let cost_model = cost_model_for(&spinn_spec, &pinn_spec, 3.0, 3.0)?;
        Ok(Self { ratio: spinn.ratio_vs(&pinn), spinn_spec, pinn_spec, spinn, pinn, cost_model })
    }

    pub fn defaults() -> Self {
        Self::new(ArchSpec::default_spinn(90), ArchSpec::default_pinn(90)).expect("defaults are valid")
    }

    pub fn to_markdown(&self) -> String {
        let m = |v: u64| group_thousands((v as f64 / 1e6).round() as u64);
        let mut s = String::new();
        s.push_str("| | SPINN ADDS (×10⁶) | SPINN MULTS (×10⁶) | PINN ADDS (×10⁶) | PINN MULTS (×10⁶) |\n");
        s.push_str("|---|---:|---:|---:|---:|\n");
        for (label, a, b) in [
            ("forward pass", self.spinn.forward, self.pinn.forward),
            ("1st-order derivative", self.spinn.first, self.pinn.first),
            ("2nd-order derivative", self.spinn.second, self.pinn.second),
        ] {
            s.push_str(&format!("| {label} | {} | {} | {} | {} |\n", m(a.adds), m(a.mults), m(b.adds), m(b.mults)));
        }
        s.push_str(&format!(
            "| MFLOPs (total) | {} | | {} | |\n",
            m(self.spinn.total.total()),
            m(self.pinn.total.total())
        ));
        s.push_str(&format!("\nPINN / SPINN total ratio: {:.0}×\n", self.ratio));
        s
    }
}

fn group_thousands(v: u64) -> String {
    let digits = v.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Closed-form cost of a separable evaluation versus a point-wise one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_sep: f64,
    pub c_nonsep: f64,
    pub ratio: f64,
}

/// `C_sep = n·d·c_f·ops_f + c_g·ops_g`, `C_nonsep = n^d·c_f·ops_f`.
pub fn cost_model(n: u64, d: u32, ops_f: f64, ops_g: f64, c_f: f64, c_g: f64) -> Result<CostModel> {
    cost_model_split(n, d, ops_f, ops_f, ops_g, c_f, c_g)
}

/// As [`cost_model`] but with separate per-point costs for the separable
/// body (`ops_f_sep`) and the point-wise network (`ops_f_nonsep`).
pub fn cost_model_split(
    n: u64,
    d: u32,
    ops_f_sep: f64,
    ops_f_nonsep: f64,
    ops_g: f64,
    c_f: f64,
    c_g: f64,
) -> Result<CostModel> {
    for (name, c) in [("c_f", c_f), ("c_g", c_g)] {
        if !(2.0..=3.0).contains(&c) {
            return Err(usage_err!("{name} = {c} is outside [2, 3]"));
        }
    }
    let c_sep = (n * d as u64) as f64 * c_f * ops_f_sep + c_g * ops_g;
    let c_nonsep = (n as f64).powi(d as i32) * c_f * ops_f_nonsep;
    Ok(CostModel { c_sep, c_nonsep, ratio: c_sep / c_nonsep })
}

/// Cost model with per-point forward costs and the merge cost taken from
/// the two specs. Both specs must share one cubic lattice.
pub fn cost_model_for(spinn: &ArchSpec, pinn: &ArchSpec, c_f: f64, c_g: f64) -> Result<CostModel> {
    let n = spinn.n[0];
    if spinn.n.iter().any(|&m| m != n) || pinn.n != spinn.n {
        return Err(usage_err!("cost model needs one shared cubic lattice"));
    }
    let f_sep = mlp_forward_ops(&spinn.widths, 1).total() as f64;
    let f_non = mlp_forward_ops(&pinn.widths, 1).total() as f64;
    let g = merge_ops(&spinn.n, spinn.rank).total() as f64;
    cost_model_split(n as u64, spinn.d as u32, f_sep, f_non, g, c_f, c_g)
}
