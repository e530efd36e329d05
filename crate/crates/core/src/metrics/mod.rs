//! Occupancy and point-cloud metrics.

mod points;

pub use points::{
    chamfer, chamfer_brute_force, emd, jsd, mmd_cov, sample_points, Distance, MatchMode, PointCloud, EMD_MAX_POINTS,
    JSD_GRID,
};

/// Occupancy values at or above this count as filled.
pub const THRESHOLD: f32 = 0.5;

#[inline]
fn filled(v: f32) -> bool {
    v >= THRESHOLD
}

/// Intersection over union of two binarized grids; two empty grids score 1.
pub fn miou(pred: &[f32], gt: &[f32]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "grids differ in size");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (filled(p), filled(g));
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartMiou {
    /// Mean over items where the part is present; `None` if it never is.
    pub per_part: Vec<Option<f64>>,
    /// Micro-average over every present (item, part) instance.
    pub mean: Option<f64>,
    pub instances: usize,
}

/// `ious[item][part]` is `Some` when the part is present in that item.
pub fn mean_part_miou(ious: &[Vec<Option<f64>>]) -> PartMiou {
    let n_parts = ious.iter().map(Vec::len).max().unwrap_or(0);
    let mut sums = vec![(0.0, 0usize); n_parts];
    for item in ious {
        for (p, v) in item.iter().enumerate() {
            if let Some(v) = v {
                sums[p].0 += v;
                sums[p].1 += 1;
            }
        }
    }
    let per_part = sums.iter().map(|&(s, n)| (n > 0).then(|| s / n as f64)).collect();
    let (total, count) = sums.iter().fold((0.0, 0), |(s, n), &(a, b)| (s + a, n + b));
    PartMiou {
        per_part,
        mean: (count > 0).then(|| total / count as f64),
        instances: count,
    }
}

/// Fraction of filled voxels whose mirror `x → R−1−x` is also filled.
/// An empty grid scores 1.
pub fn symmetry_score(occ: &[f32], r: usize) -> f64 {
    let (mut total, mut matched) = (0usize, 0usize);
    for x in 0..r {
        for y in 0..r {
            for z in 0..r {
                if filled(occ[(x * r + y) * r + z]) {
                    total += 1;
                    matched += filled(occ[((r - 1 - x) * r + y) * r + z]) as usize;
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    }
}

/// Mean squared error per transform parameter over present parts.
pub fn transform_mse(pred: &[[f64; 6]], gt: &[[f64; 6]], present: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    for ((p, g), &keep) in pred.iter().zip(gt).zip(present) {
        if keep {
            sum += p.iter().zip(g).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            n += 6;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SetMetrics {
    pub jsd: f64,
    pub mmd_cd: f64,
    pub mmd_emd: f64,
    pub cov_cd: f64,
    pub cov_emd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub items: usize,
    pub part: PartMiou,
    pub shape_miou: f64,
    pub transform_mse: Option<f64>,
    /// Per-part symmetry of the placed parts, then the full shape.
    pub symmetry_parts: Vec<Option<f64>>,
    pub symmetry: f64,
    pub set: Option<SetMetrics>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl MetricReport {
    pub fn csv_header(n_parts: usize) -> String {
        let mut cols = vec!["items".to_string()];
        cols.extend((1..=n_parts).map(|p| format!("part{p}_miou")));
        cols.extend(["part_miou", "shape_miou", "transform_mse", "symmetry"].map(String::from));
        cols.extend(["jsd", "mmd_cd", "mmd_emd", "cov_cd", "cov_emd"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![self.items.to_string()];
        cols.extend(self.part.per_part.iter().map(|v| cell(*v)));
        cols.push(cell(self.part.mean));
        cols.push(self.shape_miou.to_string());
        cols.push(cell(self.transform_mse));
        cols.push(self.symmetry.to_string());
        match &self.set {
            Some(s) => cols.extend([s.jsd, s.mmd_cd, s.mmd_emd, s.cov_cd, s.cov_emd].map(|v| v.to_string())),
            None => cols.extend(std::iter::repeat_n("NA".to_string(), 5)),
        }
        cols.join(",")
    }

    /// Human-readable table.
    pub fn table(&self, part_names: &[&str]) -> String {
        let pct = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", 100.0 * v));
        let mut s = format!("items evaluated      {}\n", self.items);
        for (i, v) in self.part.per_part.iter().enumerate() {
            let name = part_names.get(i).copied().unwrap_or("part");
            s.push_str(&format!("part mIoU {:<10} {}\n", name, pct(*v)));
        }
        s.push_str(&format!("part mIoU mean       {}\n", pct(self.part.mean)));
        s.push_str(&format!("shape mIoU           {}\n", pct(Some(self.shape_miou))));
        s.push_str(&format!(
            "transform MSE        {}\n",
            self.transform_mse.map_or("n/a".into(), |v| format!("{v:.6}"))
        ));
        for (i, v) in self.symmetry_parts.iter().enumerate() {
            let name = part_names.get(i).copied().unwrap_or("part");
            s.push_str(&format!("symmetry {:<11} {}\n", name, pct(*v)));
        }
        s.push_str(&format!("symmetry shape       {}\n", pct(Some(self.symmetry))));
        if let Some(m) = &self.set {
            s.push_str(&format!("JSD                  {:.6}\n", m.jsd));
            s.push_str(&format!("MMD-CD / MMD-EMD     {:.6} / {:.6}\n", m.mmd_cd, m.mmd_emd));
            s.push_str(&format!("COV-CD / COV-EMD     {:.3} / {:.3}\n", m.cov_cd, m.cov_emd));
        }
        s
    }
}
