//! Point sampling and point-cloud distances.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use super::filled;
use crate::error::{Result, VoxError};

pub type PointCloud = Vec<[f64; 3]>;

/// Histogram resolution for [`jsd`].
pub const JSD_GRID: usize = 28;

/// `K` points drawn uniformly with replacement from filled voxel centres,
/// normalized to `[0,1]³`.
pub fn sample_points(occ: &[f32], r: usize, k: usize, seed: u64) -> Result<PointCloud> {
    let cells: Vec<usize> = (0..occ.len()).filter(|&i| filled(occ[i])).collect();
    if cells.is_empty() {
        return Err(VoxError::Precondition("cannot sample points from an empty grid".into()));
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let rf = r as f64;
    Ok((0..k)
        .map(|_| {
            let i = cells[rng.gen_range(0..cells.len())];
            let p = [i / (r * r), (i / r) % r, i % r];
            p.map(|c| (c as f64 + 0.5) / rf)
        })
        .collect())
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

/// Uniform bucket grid over a cloud's bounding box for nearest-neighbour queries.
struct Buckets<'a> {
    points: &'a [[f64; 3]],
    lo: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// Point indices grouped by cell, with `starts[c]..starts[c+1]` per cell.
    order: Vec<usize>,
    starts: Vec<usize>,
}

impl<'a> Buckets<'a> {
    fn new(points: &'a [[f64; 3]]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        let per_axis = (points.len() as f64).cbrt().ceil().max(1.0);
        let cell = if extent > 0.0 { extent / per_axis } else { 1.0 };
        let dims = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1));
        let mut b = Buckets {
            points,
            lo,
            cell,
            dims,
            order: Vec::new(),
            starts: Vec::new(),
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let keys: Vec<usize> = points.iter().map(|p| b.key(b.coord(p))).collect();
        let mut counts = vec![0usize; n_cells + 1];
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 0..n_cells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        b.order = vec![0; points.len()];
        for (i, &k) in keys.iter().enumerate() {
            b.order[fill[k]] = i;
            fill[k] += 1;
        }
        b.starts = counts;
        b
    }

    fn coord(&self, p: &[f64; 3]) -> [isize; 3] {
        [0, 1, 2].map(|a| {
            let c = ((p[a] - self.lo[a]) / self.cell).floor();
            (c.max(0.0) as isize).min(self.dims[a] as isize - 1)
        })
    }

    fn key(&self, c: [isize; 3]) -> usize {
        (c[0] as usize * self.dims[1] + c[1] as usize) * self.dims[2] + c[2] as usize
    }

    /// Squared distance from `q` to its nearest point.
    fn nearest2(&self, q: &[f64; 3]) -> f64 {
        let c = self.coord(q);
        let mut best = f64::INFINITY;
        for ring in 0.. {
            let mut any_cell = false;
            let r = ring as isize;
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let n = [c[0] + dx, c[1] + dy, c[2] + dz];
                        if (0..3).any(|a| n[a] < 0 || n[a] >= self.dims[a] as isize) {
                            continue;
                        }
                        any_cell = true;
                        let k = self.key(n);
                        for &i in &self.order[self.starts[k]..self.starts[k + 1]] {
                            best = best.min(dist2(q, &self.points[i]));
                        }
                    }
                }
            }
            // every unvisited point lies outside the box of visited cells;
            // stop once the best is no farther than that box's boundary
            let mut margin = f64::INFINITY;
            for a in 0..3 {
                if c[a] - r > 0 {
                    margin = margin.min(q[a] - (self.lo[a] + (c[a] - r) as f64 * self.cell));
                }
                if c[a] + r + 1 < self.dims[a] as isize {
                    margin = margin.min(self.lo[a] + (c[a] + r + 1) as f64 * self.cell - q[a]);
                }
            }
            if margin == f64::INFINITY || (best.is_finite() && best <= margin.max(0.0).powi(2)) {
                break;
            }
            if !any_cell && ring as usize > self.dims.iter().sum::<usize>() {
                break;
            }
        }
        best
    }
}

fn directed_chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let buckets = Buckets::new(b);
    a.iter().map(|p| buckets.nearest2(p)).sum::<f64>() / a.len() as f64
}

/// Mean squared nearest-neighbour distance from `a` to `b` plus from `b` to `a`.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(VoxError::Precondition("chamfer distance of an empty cloud".into()));
    }
    Ok(directed_chamfer(a, b) + directed_chamfer(b, a))
}

/// The double-loop definition of [`chamfer`].
pub fn chamfer_brute_force(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let one = |x: &[[f64; 3]], y: &[[f64; 3]]| {
        x.iter()
            .map(|p| y.iter().map(|q| dist2(p, q)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / x.len() as f64
    };
    one(a, b) + one(b, a)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with potentials, O(n³)). Returns `assignment[row] = column`.
fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    // p[col] = row matched to col, 1-based with 0 as the virtual root
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// Largest cloud accepted by [`emd`].
pub const EMD_MAX_POINTS: usize = 256;

/// Exact earth mover's distance: mean Euclidean distance under the optimal
/// one-to-one matching.
pub fn emd(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(VoxError::Precondition(format!(
            "EMD needs equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() || a.len() > EMD_MAX_POINTS {
        return Err(VoxError::Precondition(format!(
            "EMD supports 1..={EMD_MAX_POINTS} points, got {}",
            a.len()
        )));
    }
    let cost: Vec<Vec<f64>> = a
        .iter()
        .map(|p| b.iter().map(|q| dist2(p, q).sqrt()).collect())
        .collect();
    let m = hungarian(&cost);
    Ok(m.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>() / a.len() as f64)
}

fn histogram(set: &[PointCloud]) -> Vec<f64> {
    let g = JSD_GRID;
    let mut h = vec![0.0; g * g * g];
    let mut n = 0usize;
    for cloud in set {
        for p in cloud {
            let c = p.map(|v| ((v * g as f64).floor().max(0.0) as usize).min(g - 1));
            h[(c[0] * g + c[1]) * g + c[2]] += 1.0;
            n += 1;
        }
    }
    if n > 0 {
        h.iter_mut().for_each(|v| *v /= n as f64);
    }
    h
}

/// Jensen–Shannon divergence (natural log) between the 28³ occupancy
/// histograms of two sets of clouds.
pub fn jsd(a: &[PointCloud], b: &[PointCloud]) -> Result<f64> {
    if a.iter().all(Vec::is_empty) || b.iter().all(Vec::is_empty) {
        return Err(VoxError::Precondition("JSD of an empty set".into()));
    }
    let (p, q) = (histogram(a), histogram(b));
    let kl = |x: &[f64], m: &[f64]| -> f64 {
        x.iter()
            .zip(m)
            .filter(|(&x, _)| x > 0.0)
            .map(|(&x, &m)| x * (x / m).ln())
            .sum()
    };
    let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| 0.5 * (a + b)).collect();
    Ok((0.5 * kl(&p, &m) + 0.5 * kl(&q, &m)).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distance {
    Chamfer,
    Emd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatchMode {
    /// Each generated item covers its nearest reference.
    Nearest,
    /// Generated item `i` reconstructs reference `i` and covers it.
    Paired,
}

/// `(MMD, COV)`: mean over references of the distance to the closest
/// generated item, and the fraction of references covered.
pub fn mmd_cov(
    generated: &[PointCloud],
    reference: &[PointCloud],
    distance: Distance,
    mode: MatchMode,
) -> Result<(f64, f64)> {
    if generated.is_empty() || reference.is_empty() {
        return Err(VoxError::Precondition("MMD/COV of an empty set".into()));
    }
    if mode == MatchMode::Paired && generated.len() != reference.len() {
        return Err(VoxError::Precondition(
            "paired coverage needs one generated item per reference".into(),
        ));
    }
    let d = |a: &PointCloud, b: &PointCloud| match distance {
        Distance::Chamfer => chamfer(a, b),
        Distance::Emd => emd(a, b),
    };
    let matrix: Vec<Vec<f64>> = generated
        .iter()
        .map(|g| reference.iter().map(|r| d(g, r)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let mmd = (0..reference.len())
        .map(|j| matrix.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / reference.len() as f64;
    let mut covered = vec![false; reference.len()];
    for (i, row) in matrix.iter().enumerate() {
        let j = match mode {
            MatchMode::Paired => i,
            MatchMode::Nearest => (0..row.len()).fold(0, |best, j| if row[j] < row[best] { j } else { best }),
        };
        covered[j] = true;
    }
    let cov = covered.iter().filter(|&&c| c).count() as f64 / reference.len() as f64;
    Ok((mmd, cov))
}
