//! Line-oriented dataset manifest and the seeded train/test split.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::{Result, VoxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = VoxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(VoxError::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub category: String,
    pub n_parts: usize,
    pub resolution: usize,
    pub seed: u64,
    /// Item ids with their split tag, in file order.
    pub items: Vec<(String, Split)>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.items
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// Header `category\tN_p\tR\tseed`, then one `item_id\tsplit` per line.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{}\t{}\t{}\t{}\n",
            self.category, self.n_parts, self.resolution, self.seed
        );
        for (id, split) in &self.items {
            s.push_str(&format!("{id}\t{split}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| VoxError::Config(format!("manifest line {}: {msg}", line + 1));
        let (_, header) = lines.next().ok_or_else(|| bad(0, "missing header"))?;
        let h: Vec<&str> = header.split('\t').collect();
        if h.len() != 4 {
            return Err(bad(0, "header needs category, N_p, R, seed"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| bad(0, &format!("`{s}` is not a number")));
        let mut m = DatasetManifest {
            category: h[0].to_string(),
            n_parts: num(h[1])? as usize,
            resolution: num(h[2])? as usize,
            seed: num(h[3])?,
            items: Vec::new(),
        };
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (id, split) = line
                .split_once('\t')
                .ok_or_else(|| bad(i, "expected item_id<TAB>split"))?;
            let split = split.parse().map_err(|_| bad(i, &format!("unknown split `{split}`")))?;
            m.items.push((id.to_string(), split));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VoxError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| VoxError::io(path, e))
    }
}

/// Shuffle `ids` with `seed` and tag the first `round(ratio·n)` as train.
/// The tags are written back in the original item order.
pub fn split_dataset(
    category: &str,
    n_parts: usize,
    resolution: usize,
    ids: &[String],
    ratio: f64,
    seed: u64,
) -> Result<DatasetManifest> {
    if ids.is_empty() {
        return Err(VoxError::Precondition("cannot split an empty dataset".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(VoxError::Config(format!("split ratio {ratio} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.shuffle(&mut Xoshiro256StarStar::seed_from_u64(seed));
    let n_train = (ratio * ids.len() as f64).round() as usize;
    let mut split = vec![Split::Test; ids.len()];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }
    Ok(DatasetManifest {
        category: category.to_string(),
        n_parts,
        resolution,
        seed,
        items: ids.iter().cloned().zip(split).collect(),
    })
}
