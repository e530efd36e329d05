//! Shape and attention-map files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::eval::Recon;
use super::latent::AttentionMap;
use crate::error::{Result, VoxError};
use crate::metrics::THRESHOLD;
use crate::voxdata::{write_vxp_bytes, LabeledVoxelGrid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeFormat {
    Vxp,
    /// Wavefront OBJ with one unit cube per filled voxel.
    ObjCubes,
    /// One text block per z slice.
    AsciiSlices,
}

impl FromStr for ShapeFormat {
    type Err = VoxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vxp" => Ok(ShapeFormat::Vxp),
            "obj-cubes" | "obj" => Ok(ShapeFormat::ObjCubes),
            "ascii-slices" | "ascii" => Ok(ShapeFormat::AsciiSlices),
            other => Err(VoxError::Config(format!("unknown shape format `{other}`"))),
        }
    }
}

impl ShapeFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ShapeFormat::Vxp => "vxp",
            ShapeFormat::ObjCubes => "obj",
            ShapeFormat::AsciiSlices => "txt",
        }
    }
}

/// Label each filled voxel of the assembled shape with the part that
/// contributes most there, the lower index on ties.
pub fn labeled_from_recon(rec: &Recon, r: usize, n_parts: usize, category: &str, item_id: &str) -> LabeledVoxelGrid {
    let v = r * r * r;
    let mut grid = LabeledVoxelGrid::empty(r, n_parts, category, item_id);
    for (i, &s) in rec.shape.iter().enumerate() {
        if s < THRESHOLD {
            continue;
        }
        let best = (0..n_parts).fold(0, |b, p| {
            if rec.placed[p * v + i] > rec.placed[b * v + i] {
                p
            } else {
                b
            }
        });
        grid.labels[i] = best as u8 + 1;
    }
    grid
}

pub fn obj_cubes(grid: &LabeledVoxelGrid) -> String {
    let r = grid.resolution;
    let filled = grid.labels.iter().filter(|&&l| l > 0).count();
    let mut s = format!("# {} ({}³), {filled} voxel cubes\n", grid.item_id, r);
    let mut base = 1;
    for (i, &l) in grid.labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y, z) = (i / (r * r), (i / r) % r, i % r);
        for c in 0..8 {
            let (dx, dy, dz) = (c >> 2 & 1, c >> 1 & 1, c & 1);
            writeln!(s, "v {} {} {}", x + dx, y + dy, z + dz).expect("writing to a String");
        }
        // corner c = 4·dx + 2·dy + dz
        for f in [
            [0, 1, 3, 2],
            [4, 6, 7, 5],
            [0, 4, 5, 1],
            [2, 3, 7, 6],
            [0, 2, 6, 4],
            [1, 5, 7, 3],
        ] {
            writeln!(s, "f {} {} {} {}", base + f[0], base + f[1], base + f[2], base + f[3])
                .expect("writing to a String");
        }
        base += 8;
    }
    s
}

/// z slices, y up, with `.` for empty voxels and the part label otherwise.
pub fn ascii_slices(grid: &LabeledVoxelGrid) -> String {
    let r = grid.resolution;
    let mut s = String::new();
    for z in 0..r {
        writeln!(s, "z = {z}").expect("writing to a String");
        for y in (0..r).rev() {
            for x in 0..r {
                let l = grid.get(x, y, z);
                s.push(if l == 0 {
                    '.'
                } else {
                    char::from_digit(l as u32 % 36, 36).unwrap_or('#')
                });
            }
            s.push('\n');
        }
        s.push('\n');
    }
    s
}

pub fn export_shape(grid: &LabeledVoxelGrid, path: &Path, format: ShapeFormat) -> Result<()> {
    let bytes = match format {
        ShapeFormat::Vxp => write_vxp_bytes(grid)?,
        ShapeFormat::ObjCubes => obj_cubes(grid).into_bytes(),
        ShapeFormat::AsciiSlices => ascii_slices(grid).into_bytes(),
    };
    std::fs::write(path, bytes).map_err(|e| VoxError::io(path, e))
}

/// Pixels per matrix cell in the grayscale images.
const CELL: usize = 16;

/// Write `{name}.csv` and a grayscale `{name}.pgm` per map into `dir`.
pub fn export_attention_maps(maps: &[AttentionMap], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| VoxError::io(dir, e))?;
    let mut written = Vec::new();
    for m in maps {
        let n = m.n_parts;
        let mut csv = String::new();
        for row in m.weights.chunks(n) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(csv, "{}", cells.join(",")).expect("writing to a String");
        }
        let side = n * CELL;
        let mut pgm = format!("P2\n{side} {side}\n255\n");
        for py in 0..side {
            let row: Vec<String> = (0..side)
                .map(|px| {
                    ((m.weights[(py / CELL) * n + px / CELL] * 255.0)
                        .round()
                        .clamp(0.0, 255.0) as u8)
                        .to_string()
                })
                .collect();
            writeln!(pgm, "{}", row.join(" ")).expect("writing to a String");
        }
        for (ext, body) in [("csv", csv), ("pgm", pgm)] {
            let path = dir.join(format!("{}.{ext}", m.name()));
            std::fs::write(&path, body).map_err(|e| VoxError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
