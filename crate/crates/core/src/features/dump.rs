//! Binary grid files: `u32 rows`, `u32 cols`, then `rows * cols` f32 values,
//! all little-endian, row-major.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn encode_grid(grid: &Tensor) -> Result<Vec<u8>> {
    if grid.rank() != 2 {
        return Err(Error::shape("encode_grid", format!("expected a 2-d grid, got {:?}", grid.shape())));
    }
    let mut out = Vec::with_capacity(8 + 4 * grid.len());
    for &d in grid.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 8 {
        return Err(Error::Format("grid file shorter than its header".into()));
    }
    let rows = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]) as usize;
    let cols = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]) as usize;
    let body = &bytes[8..];
    if rows.checked_mul(cols).and_then(|n| n.checked_mul(4)) != Some(body.len()) {
        return Err(Error::Format(format!(
            "grid header says {rows}x{cols} but body has {} bytes",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(&[rows, cols], data).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_grid(grid: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_grid(grid)?)?;
    Ok(())
}

pub fn read_grid(path: &Path) -> Result<Tensor> {
    decode_grid(&fs::read(path)?)
}
