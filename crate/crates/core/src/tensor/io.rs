//! Binary grid export: one JSON header line, `\n`, then the payload as
//! little-endian `f64` values in row-major order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub shape: Vec<usize>,
    pub bounds: Vec<(f64, f64)>,
    pub field: String,
}

pub fn write_grid(mut w: impl Write, header: &GridHeader, grid: &Tensor) -> Result<()> {
    if header.shape != grid.shape() {
        return Err(Error::Format(format!(
            "header shape {:?} does not match grid {:?}",
            header.shape,
            grid.shape()
        )));
    }
    let line = serde_json::to_string(header).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(line.as_bytes())?;
    w.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(grid.nbytes());
    for v in grid.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_grid(mut r: impl BufRead) -> Result<(GridHeader, Tensor)> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: GridHeader = serde_json::from_str(line.trim_end_matches('\n'))
        .map_err(|e| Error::Format(format!("bad grid header: {e}")))?;
    let n: usize = header.shape.iter().product();
    let mut bytes = Vec::with_capacity(n * 8);
    r.read_to_end(&mut bytes)?;
    if bytes.len() != n * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {}",
            bytes.len(),
            n * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let t = Tensor::new(header.shape.clone(), data)?;
    Ok((header, t))
}
