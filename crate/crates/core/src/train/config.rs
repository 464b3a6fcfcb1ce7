use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::model::{Arch, PINN_HIDDEN, SPINN_HIDDEN};
use crate::pde::{PdeProblem, ProblemKind, ProblemParams};

/// Resolution of the finite-difference reference for diffusion problems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub fd_nx: usize,
    pub fd_nt: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self { fd_nx: 101, fd_nt: 1000 }
    }
}

/// One training run. Deserializes from TOML; missing keys take defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemKind,
    pub arch: Arch,
    /// Lattice points per axis.
    pub n: usize,
    pub rank: usize,
    /// Hidden widths; empty selects the architecture default.
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub iterations: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// Baseline interior points per tape; larger interiors are split.
    pub chunk_points: usize,
    pub adam: AdamConfig,
    pub params: ProblemParams,
    pub reference: ReferenceConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::KleinGordon,
            arch: Arch::Spinn,
            n: 32,
            rank: 50,
            hidden: Vec::new(),
            lr: 1e-3,
            iterations: 5000,
            eval_every: 100,
            seed: 0,
            out_dir: None,
            chunk_points: 4096,
            adam: AdamConfig::default(),
            params: ProblemParams::default(),
            reference: ReferenceConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills architecture defaults and checks ranges.
    pub fn resolved(mut self) -> Result<Self> {
        if self.hidden.is_empty() {
            self.hidden = match self.arch {
                Arch::Spinn => SPINN_HIDDEN.to_vec(),
                Arch::Pinn => PINN_HIDDEN.to_vec(),
            };
        }
        let bad = |key: &str, why: &str| Err(Error::Config(format!("`{key}` {why}")));
        if self.n < 2 {
            return bad("n", "must be at least 2");
        }
        if self.rank == 0 {
            return bad("rank", "must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden", "must not contain zero widths");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", "must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be positive");
        }
        if self.chunk_points == 0 {
            return bad("chunk_points", "must be positive");
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("adam", "needs beta1, beta2 in [0, 1) and eps > 0");
        }
        if self.reference.fd_nx < 3 || self.reference.fd_nt == 0 {
            return bad("reference", "needs fd_nx >= 3 and fd_nt >= 1");
        }
        self.problem()?;
        Ok(self)
    }

    pub fn problem(&self) -> Result<PdeProblem> {
        PdeProblem::new(self.problem, self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c = TrainConfig::default().resolved().unwrap();
        assert_eq!(c.hidden, vec![50; 5]);
        assert_eq!(c.lr, 1e-3);
        let p = TrainConfig { arch: Arch::Pinn, ..Default::default() }.resolved().unwrap();
        assert_eq!(p.hidden, vec![100; 5]);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            problem = "helmholtz3d"
            arch = "pinn"
            n = 8
            iterations = 3

            [adam]
            beta2 = 0.99

            [params]
            k = 2.0
        "#;
        let c = TrainConfig::from_toml(text).unwrap();
        assert_eq!(c.problem, ProblemKind::Helmholtz);
        assert_eq!(c.adam.beta2, 0.99);
        assert_eq!(c.adam.beta1, 0.9);
        assert_eq!(c.params.k, 2.0);
        let back = TrainConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_and_invalid_keys_are_reported() {
        match TrainConfig::from_toml("itrations = 5") {
            Err(Error::Config(m)) => assert!(m.contains("itrations"), "{m}"),
            other => panic!("{other:?}"),
        }
        match TrainConfig::from_toml("[params]\nalpah = 1.0") {
            Err(Error::Config(m)) => assert!(m.contains("alpah"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(TrainConfig::from_toml("problem = \"burgers\"").is_err());
        let c = TrainConfig { n: 1, ..Default::default() };
        assert!(matches!(c.resolved(), Err(Error::Config(m)) if m.contains("`n`")));
    }

    #[test]
    fn zero_iterations_are_allowed() {
        let c = TrainConfig { iterations: 0, ..Default::default() };
        assert!(c.resolved().is_ok());
    }
}
