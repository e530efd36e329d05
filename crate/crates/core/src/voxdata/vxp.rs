//! VXP binary format: `"VXP1"`, u8 version, u32 R, u8 n_parts,
//! u8 category length + UTF-8 bytes, then R³ label bytes (x slowest).

use std::path::Path;

use super::LabeledVoxelGrid;
use crate::error::{Result, VoxError};

const MAGIC: &[u8; 4] = b"VXP1";
const VERSION: u8 = 1;

pub fn write_vxp_bytes(grid: &LabeledVoxelGrid) -> Result<Vec<u8>> {
    grid.validate()?;
    let cat = grid.category.as_bytes();
    if cat.len() > u8::MAX as usize || grid.n_parts > u8::MAX as usize {
        return Err(VoxError::Precondition("category or part count too long for VXP".into()));
    }
    let mut out = Vec::with_capacity(11 + cat.len() + grid.labels.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(grid.resolution as u32).to_le_bytes());
    out.push(grid.n_parts as u8);
    out.push(cat.len() as u8);
    out.extend_from_slice(cat);
    out.extend_from_slice(&grid.labels);
    Ok(out)
}

/// Parse VXP bytes. `item_id` is not stored in the file and is supplied by the caller.
pub fn read_vxp_bytes(bytes: &[u8], item_id: &str) -> Result<LabeledVoxelGrid> {
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        bytes
            .get(at..at + n)
            .ok_or_else(|| VoxError::format(bytes.len(), format!("truncated: need {n} bytes at {at}")))
    };
    if take(0, 4)? != MAGIC {
        return Err(VoxError::format(0, "bad magic"));
    }
    let version = take(4, 1)?[0];
    if version != VERSION {
        return Err(VoxError::format(4, format!("unsupported version {version}")));
    }
    let r = u32::from_le_bytes(take(5, 4)?.try_into().unwrap()) as usize;
    if r == 0 {
        return Err(VoxError::format(5, "zero resolution"));
    }
    let n_parts = take(9, 1)?[0] as usize;
    let cat_len = take(10, 1)?[0] as usize;
    let category = std::str::from_utf8(take(11, cat_len)?)
        .map_err(|_| VoxError::format(11, "category is not UTF-8"))?
        .to_string();
    let start = 11 + cat_len;
    let n = r
        .checked_pow(3)
        .ok_or_else(|| VoxError::format(5, "resolution overflows"))?;
    let labels = take(start, n)?.to_vec();
    if bytes.len() > start + n {
        return Err(VoxError::format(start + n, "trailing bytes"));
    }
    if let Some(i) = labels.iter().position(|&l| l as usize > n_parts) {
        return Err(VoxError::format(
            start + i,
            format!("label {} exceeds {n_parts} parts", labels[i]),
        ));
    }
    Ok(LabeledVoxelGrid {
        resolution: r,
        n_parts,
        category,
        item_id: item_id.to_string(),
        labels,
    })
}

pub fn write_vxp(grid: &LabeledVoxelGrid, path: &Path) -> Result<()> {
    let bytes = write_vxp_bytes(grid)?;
    std::fs::write(path, bytes).map_err(|e| VoxError::io(path, e))
}

/// Read a VXP file; the item id is the file stem.
pub fn read_vxp(path: &Path) -> Result<LabeledVoxelGrid> {
    let bytes = std::fs::read(path).map_err(|e| VoxError::io(path, e))?;
    let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    read_vxp_bytes(&bytes, id)
}
