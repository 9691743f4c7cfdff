//! Headerless raw grids: little-endian f32 volumes and u8 label maps.

use std::fs;
use std::path::Path;

use crate::volume::{LabelMap, Volume};
use crate::{PuirError, Result};

fn check_len(path: &Path, expected: u64) -> Result<()> {
    let found = fs::metadata(path).map_err(|e| PuirError::io(path, e))?.len();
    if found != expected {
        return Err(PuirError::Length {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    if !v.all_finite() {
        return Err(PuirError::precondition(format!(
            "refusing to write non-finite values to {}",
            path.display()
        )));
    }
    let mut bytes = Vec::with_capacity(v.len() * 4);
    for x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| PuirError::io(path, e))
}

/// Read a volume whose byte length must equal `D*H*W*4`. The length is
/// checked against the declared shape before any allocation.
pub fn read_volume(path: &Path, shape: [usize; 3]) -> Result<Volume> {
    let n = shape.iter().product::<usize>();
    check_len(path, n as u64 * 4)?;
    let bytes = fs::read(path).map_err(|e| PuirError::io(path, e))?;
    if bytes.len() != n * 4 {
        return Err(PuirError::Length {
            path: path.to_path_buf(),
            expected: n as u64 * 4,
            found: bytes.len() as u64,
        });
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Volume::new(shape, data)
}

pub fn write_labels(v: &LabelMap, path: &Path) -> Result<()> {
    fs::write(path, v.data()).map_err(|e| PuirError::io(path, e))
}

pub fn read_labels(path: &Path, shape: [usize; 3]) -> Result<LabelMap> {
    let n = shape.iter().product::<usize>();
    check_len(path, n as u64)?;
    let bytes = fs::read(path).map_err(|e| PuirError::io(path, e))?;
    if bytes.len() != n {
        return Err(PuirError::Length {
            path: path.to_path_buf(),
            expected: n as u64,
            found: bytes.len() as u64,
        });
    }
    LabelMap::new(shape, bytes)
}
