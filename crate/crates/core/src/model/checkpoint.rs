//! Checkpoints: a JSON manifest next to a blob of little-endian `f64`
//! parameters (per network, per layer: weight row-major, then bias).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AnyModel, Arch, Layer, MlpParams, SeparableModel, VanillaModel};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "spinn-checkpoint-v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub arch: Arch,
    /// Layer widths of each network (one entry per body for `spinn`).
    pub widths: Vec<Vec<usize>>,
    pub rank: Option<usize>,
    pub d: usize,
    pub seed: u64,
    pub iteration: usize,
    pub num_params: usize,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    /// Resolved run configuration (TOML text), when saved by the trainer.
    #[serde(default)]
    pub config: Option<String>,
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.extension().is_some_and(|e| e == "json") {
        path.to_path_buf()
    } else {
        path.with_extension("json")
    }
}

/// Writes `<path>.json` and `<path>.bin`; returns the manifest path.
pub fn save_checkpoint(
    path: &Path,
    model: &AnyModel,
    seed: u64,
    iteration: usize,
    config: Option<&str>,
) -> Result<PathBuf> {
    let json = manifest_path(path);
    let bin = json.with_extension("bin");
    if let Some(dir) = json.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        arch: model.arch(),
        widths: model.widths(),
        rank: model.rank(),
        d: model.dim(),
        seed,
        iteration,
        num_params: model.num_params(),
        blob: bin.file_name().unwrap().to_string_lossy().into_owned(),
        config: config.map(str::to_owned),
    };
    let mut bytes = Vec::with_capacity(model.num_params() * 8);
    for t in model.params() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&bin, bytes)?;
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(&json, text)?;
    Ok(json)
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointManifest, AnyModel)> {
    let json = manifest_path(path);
    let text = fs::read_to_string(&json)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", json.display()))))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", json.display())))?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Format(format!("unknown checkpoint format `{}`", manifest.format)));
    }
    let bytes = fs::read(json.with_file_name(&manifest.blob))?;
    if bytes.len() != manifest.num_params * 8 {
        return Err(Error::Format(format!(
            "blob has {} bytes, manifest declares {} parameters",
            bytes.len(),
            manifest.num_params
        )));
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), values.by_ref().take(n).collect())
    };
    let mut nets = Vec::new();
    for widths in &manifest.widths {
        let layers = widths
            .windows(2)
            .map(|w| Ok(Layer { weight: take(&[w[0], w[1]])?, bias: take(&[w[1]])? }))
            .collect::<Result<Vec<_>>>()?;
        nets.push(MlpParams::from_layers(layers)?);
    }
    let model = match manifest.arch {
        Arch::Spinn => AnyModel::Separable(SeparableModel::from_bodies(nets)?),
        Arch::Pinn => {
            let net = nets.pop().ok_or_else(|| Error::Format("no network in manifest".into()))?;
            AnyModel::Vanilla(VanillaModel::from_net(net)?)
        }
    };
    if model.num_params() != manifest.num_params {
        return Err(Error::Format("manifest widths disagree with parameter count".into()));
    }
    Ok((manifest, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    #[test]
    fn round_trip_both_archs() {
        let dir = tempfile::tempdir().unwrap();
        for arch in [Arch::Spinn, Arch::Pinn] {
            let m = init_model(arch, &[5, 4], 3, 3, 7).unwrap();
            let p = dir.path().join(format!("ck-{arch}"));
            let json = save_checkpoint(&p, &m, 7, 12, Some("seed = 7\n")).unwrap();
            let (man, back) = load_checkpoint(&json).unwrap();
            assert_eq!(back, m);
            assert_eq!((man.iteration, man.seed, man.d), (12, 7, 3));
            assert_eq!(man.config.as_deref(), Some("seed = 7\n"));
        }
    }

    #[test]
    fn missing_checkpoint_is_io_error() {
        let err = load_checkpoint(Path::new("/nonexistent/ck.json")).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }
}
