//! Per-part canonicalization: stretch a part's bounding box over the full
//! grid and record the scale/translation that puts it back.

use super::LabeledVoxelGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct PartCanonical {
    /// 1-based part label.
    pub part_index: usize,
    pub occupancy: Vec<f32>,
    pub present: bool,
}

/// Axis-aligned placement in the normalized `[0,1]³` grid frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartTransform {
    pub scale: [f64; 3],
    pub translation: [f64; 3],
}

impl PartTransform {
    pub const PLACEHOLDER: PartTransform = PartTransform {
        scale: [1.0; 3],
        translation: [0.0; 3],
    };

    /// Transform of the half-open voxel box `[lo, hi)` in a grid of side `r`.
    pub fn from_bbox(lo: [usize; 3], hi: [usize; 3], r: usize) -> Self {
        let r = r as f64;
        let mut t = PartTransform::PLACEHOLDER;
        for a in 0..3 {
            t.scale[a] = (hi[a] - lo[a]) as f64 / r;
            t.translation[a] = (lo[a] + hi[a]) as f64 / (2.0 * r) - 0.5;
        }
        t
    }

    /// `(s_x, s_y, s_z, t_x, t_y, t_z)`.
    pub fn to_array(&self) -> [f64; 6] {
        let (s, t) = (self.scale, self.translation);
        [s[0], s[1], s[2], t[0], t[1], t[2]]
    }

    pub fn from_array(p: &[f64]) -> Self {
        PartTransform {
            scale: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
        }
    }
}

fn bbox(grid: &LabeledVoxelGrid, part: usize) -> Option<([usize; 3], [usize; 3])> {
    let r = grid.resolution;
    let mut lo = [usize::MAX; 3];
    let mut hi = [0usize; 3];
    let mut any = false;
    for (i, &l) in grid.labels.iter().enumerate() {
        if l as usize != part {
            continue;
        }
        any = true;
        let p = [i / (r * r), (i / r) % r, i % r];
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a] + 1);
        }
    }
    any.then_some((lo, hi))
}

/// Canonical form of part `part` (1-based) and its ground-truth transform.
///
/// Canonical voxel `j` on an axis samples source voxel `lo + ⌊(j + ½)·e / R⌋`
/// where `e` is the bounding-box extent.
pub fn canonicalize_part(grid: &LabeledVoxelGrid, part: usize) -> (PartCanonical, PartTransform) {
    let r = grid.resolution;
    let Some((lo, hi)) = bbox(grid, part) else {
        return (
            PartCanonical {
                part_index: part,
                occupancy: vec![0.0; r * r * r],
                present: false,
            },
            PartTransform::PLACEHOLDER,
        );
    };
    let src: Vec<Vec<usize>> = (0..3)
        .map(|a| {
            let e = hi[a] - lo[a];
            (0..r).map(|j| lo[a] + ((2 * j + 1) * e) / (2 * r)).collect()
        })
        .collect();
    let mut occupancy = vec![0.0; r * r * r];
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                if grid.get(src[0][x], src[1][y], src[2][z]) as usize == part {
                    occupancy[(x * r + y) * r + z] = 1.0;
                }
            }
        }
    }
    (
        PartCanonical {
            part_index: part,
            occupancy,
            present: true,
        },
        PartTransform::from_bbox(lo, hi, r),
    )
}

/// Canonicalize parts `1..=n_parts` in order.
pub fn canonicalize_all(grid: &LabeledVoxelGrid) -> Vec<(PartCanonical, PartTransform)> {
    (1..=grid.n_parts).map(|p| canonicalize_part(grid, p)).collect()
}

/// Source index per output coordinate on one axis, `None` outside the part.
fn nearest_axis(scale: f64, translation: f64, r: usize) -> Vec<Option<usize>> {
    let rf = r as f64;
    (0..r)
        .map(|i| {
            let w = (i as f64 + 0.5) / rf;
            let c = (w - 0.5 - translation) / scale + 0.5;
            // exact ground-truth coordinates are rationals with small
            // denominators, so the nudge only absorbs rounding
            let u = (c * rf + 1e-9).floor();
            (u >= 0.0 && u < rf).then_some(u as usize)
        })
        .collect()
}

/// Nearest-neighbor placement of a canonical grid by `t`.
pub fn place_nearest(canonical: &[f32], t: &PartTransform, r: usize) -> Vec<f32> {
    let idx: Vec<Vec<Option<usize>>> = (0..3).map(|a| nearest_axis(t.scale[a], t.translation[a], r)).collect();
    let mut out = vec![0.0; r * r * r];
    for x in 0..r {
        let Some(sx) = idx[0][x] else { continue };
        for y in 0..r {
            let Some(sy) = idx[1][y] else { continue };
            for z in 0..r {
                let Some(sz) = idx[2][z] else { continue };
                out[(x * r + y) * r + z] = canonical[(sx * r + sy) * r + sz];
            }
        }
    }
    out
}

/// Place every part by its transform and take the voxelwise union.
/// Absent parts contribute nothing.
pub fn reassemble_gt(parts: &[PartCanonical], transforms: &[PartTransform], r: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; r * r * r];
    for (p, t) in parts.iter().zip(transforms) {
        if !p.present {
            continue;
        }
        for (o, v) in out.iter_mut().zip(place_nearest(&p.occupancy, t, r)) {
            *o = o.max(v);
        }
    }
    out
}
