//! Flat `key = value` training configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use voxatt_tensor::DType;

use crate::error::{Result, VoxError};
use crate::losses::LossWeights;
use crate::model::{HeadMode, ModelConfig};
use crate::voxdata::Category;

/// Adam schedule for one training stage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSchedule {
    pub lr: f64,
    /// Multiply the learning rate by `decay` every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
}

impl StageSchedule {
    pub fn defaults(stage: u8, mode: HeadMode) -> Self {
        let s = |lr, decay, decay_every, epochs| StageSchedule {
            lr,
            decay,
            decay_every,
            epochs,
        };
        match (stage, mode) {
            (1, _) => s(1e-3, 0.8, 50, 250),
            (2, HeadMode::SimpleMlp) => s(1e-3, 0.8, 100, 500),
            (2, _) => s(1e-4, 1.0, 1, 1500),
            _ => s(1e-5, 0.8, 250, 500),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub category: Category,
    pub model: ModelConfig,
    /// Fine-tuning weights; stage 1 reads `pi` and `part`.
    pub weights: LossWeights,
    /// `ω_trans` while only the head trains.
    pub stage2_trans_weight: f64,
    pub stages: [StageSchedule; 3],
    pub batch_size: usize,
    pub seed: u64,
    /// Directory of `.vxp` items; the manifest defaults to `manifest.txt` inside it.
    pub data_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub eval_every: usize,
    pub dtype: DType,
    /// Leave parts an item does not have out of the transform loss. Their
    /// canonical target is empty, so the part loss always keeps them.
    pub mask_absent_parts: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::for_mode(HeadMode::PartAttention)
    }
}

const KEYS: &[&str] = &[
    "category",
    "n_parts",
    "resolution",
    "channels",
    "slope",
    "bn_momentum",
    "head_mode",
    "layers",
    "d_a",
    "heads",
    "blocks",
    "apply_ac_loss",
    "mlp_hidden",
    "part_hidden",
    "w_pi",
    "w_part",
    "w_trans",
    "w_ac",
    "w_shape",
    "gamma",
    "stage2_w_trans",
    "stage1_lr",
    "stage1_decay",
    "stage1_decay_every",
    "stage1_epochs",
    "stage2_lr",
    "stage2_decay",
    "stage2_decay_every",
    "stage2_epochs",
    "stage3_lr",
    "stage3_decay",
    "stage3_decay_every",
    "stage3_epochs",
    "batch_size",
    "seed",
    "data_dir",
    "manifest",
    "eval_every",
    "dtype",
    "mask_absent_parts",
];

fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| VoxError::Config(format!("{key}: cannot parse `{s}`")))
        })
        .collect()
}

fn one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| VoxError::Config(format!("{key}: cannot parse `{v}`")))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl TrainConfig {
    /// Defaults with the stage-2 schedule that suits `mode`.
    pub fn for_mode(mode: HeadMode) -> Self {
        let mut model = ModelConfig::default();
        model.head.mode = mode;
        TrainConfig {
            category: Category::Chair,
            model,
            weights: LossWeights::default(),
            stage2_trans_weight: 1.0,
            stages: [1, 2, 3].map(|s| StageSchedule::defaults(s, mode)),
            batch_size: 8,
            seed: 0,
            data_dir: None,
            manifest: None,
            eval_every: 10,
            dtype: DType::F32,
            mask_absent_parts: true,
        }
    }

    pub fn schedule(&self, stage: u8) -> Result<&StageSchedule> {
        match stage {
            1..=3 => Ok(&self.stages[stage as usize - 1]),
            s => Err(VoxError::Config(format!("no training stage {s}"))),
        }
    }

    /// Loss weights used while training `stage`.
    pub fn stage_weights(&self, stage: u8) -> LossWeights {
        let mut w = self.weights;
        if stage == 2 {
            w.trans = self.stage2_trans_weight;
        }
        if !self.model.head.apply_ac_loss || !self.model.head.mode.is_attention() {
            w.ac = 0.0;
        }
        w
    }

    pub fn manifest_path(&self) -> Option<PathBuf> {
        self.manifest
            .clone()
            .or_else(|| self.data_dir.as_ref().map(|d| d.join("manifest.txt")))
    }

    /// Parse `key = value` lines; `#` starts a comment. Keys missing from
    /// the text keep their defaults, and the stage-2 schedule defaults follow
    /// `head_mode`. Unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| VoxError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(VoxError::Config(format!("line {}: unknown key `{k}`", n + 1)));
            }
            if entries.insert(k.to_string(), v.to_string()).is_some() {
                return Err(VoxError::Config(format!("line {}: `{k}` given twice", n + 1)));
            }
        }
        let mode = match entries.get("head_mode") {
            Some(v) => v.parse()?,
            None => HeadMode::PartAttention,
        };
        let mut c = TrainConfig::for_mode(mode);
        let mut n_parts_set = false;
        for (k, v) in &entries {
            let k = k.as_str();
            let v = v.as_str();
            let m = &mut c.model;
            match k {
                "category" => c.category = v.parse()?,
                "n_parts" => {
                    m.n_parts = one(k, v)?;
                    n_parts_set = true;
                }
                "resolution" => m.resolution = one(k, v)?,
                "channels" => m.channels = list(k, v)?,
                "slope" => m.slope = one(k, v)?,
                "bn_momentum" => m.bn_momentum = one(k, v)?,
                "head_mode" => {}
                "layers" => m.head.layers = list(k, v)?,
                "d_a" => m.head.d_a = one(k, v)?,
                "heads" => m.head.heads = one(k, v)?,
                "blocks" => m.head.blocks = one(k, v)?,
                "apply_ac_loss" => m.head.apply_ac_loss = one(k, v)?,
                "mlp_hidden" => m.head.mlp_hidden = list(k, v)?,
                "part_hidden" => m.head.part_hidden = one(k, v)?,
                "w_pi" => c.weights.pi = one(k, v)?,
                "w_part" => c.weights.part = one(k, v)?,
                "w_trans" => c.weights.trans = one(k, v)?,
                "w_ac" => c.weights.ac = one(k, v)?,
                "w_shape" => c.weights.shape = one(k, v)?,
                "gamma" => c.weights.gamma = one(k, v)?,
                "stage2_w_trans" => c.stage2_trans_weight = one(k, v)?,
                "batch_size" => c.batch_size = one(k, v)?,
                "seed" => c.seed = one(k, v)?,
                "data_dir" => c.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
                "manifest" => c.manifest = (!v.is_empty()).then(|| PathBuf::from(v)),
                "eval_every" => c.eval_every = one(k, v)?,
                "dtype" => {
                    c.dtype = match v {
                        "f32" => DType::F32,
                        "f64" => DType::F64,
                        _ => return Err(VoxError::Config(format!("dtype must be f32 or f64, got `{v}`"))),
                    }
                }
                "mask_absent_parts" => c.mask_absent_parts = one(k, v)?,
                _ => {
                    // stage{N}_{field}
                    let (stage, field) = k.split_once('_').expect("stage keys contain `_`");
                    let s = &mut c.stages[stage[5..].parse::<usize>().expect("listed key") - 1];
                    match field {
                        "lr" => s.lr = one(k, v)?,
                        "decay" => s.decay = one(k, v)?,
                        "decay_every" => s.decay_every = one(k, v)?,
                        "epochs" => s.epochs = one(k, v)?,
                        _ => unreachable!("key list and parser disagree on `{k}`"),
                    }
                }
            }
        }
        if !n_parts_set {
            c.model.n_parts = c.category.n_parts();
        }
        c.validate()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| VoxError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |m: String| Err(VoxError::Config(m));
        if self.model.n_parts != self.category.n_parts() {
            return bad(format!(
                "{} has {} parts, config says {}",
                self.category,
                self.category.n_parts(),
                self.model.n_parts
            ));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be positive".into());
        }
        let w = &self.weights;
        if [w.pi, w.part, w.trans, w.ac, w.shape, self.stage2_trans_weight]
            .iter()
            .any(|&v| v < 0.0 || !v.is_finite())
        {
            return bad("loss weights must be finite and non-negative".into());
        }
        if !(w.gamma > 0.0 && w.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", w.gamma));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.lr > 0.0) || !(s.decay > 0.0) || s.decay_every == 0 {
                return bad(format!(
                    "stage {} schedule needs lr > 0, decay > 0 and decay_every ≥ 1",
                    i + 1
                ));
            }
        }
        Ok(())
    }

    /// Every key in a fixed order; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let h = &m.head;
        let w = &self.weights;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
        put("category", self.category.to_string());
        put("n_parts", m.n_parts.to_string());
        put("resolution", m.resolution.to_string());
        put("channels", join(&m.channels));
        put("slope", m.slope.to_string());
        put("bn_momentum", m.bn_momentum.to_string());
        put("head_mode", h.mode.to_string());
        put("layers", join(&h.layers));
        put("d_a", h.d_a.to_string());
        put("heads", h.heads.to_string());
        put("blocks", h.blocks.to_string());
        put("apply_ac_loss", h.apply_ac_loss.to_string());
        put("mlp_hidden", join(&h.mlp_hidden));
        put("part_hidden", h.part_hidden.to_string());
        put("w_pi", w.pi.to_string());
        put("w_part", w.part.to_string());
        put("w_trans", w.trans.to_string());
        put("w_ac", w.ac.to_string());
        put("w_shape", w.shape.to_string());
        put("gamma", w.gamma.to_string());
        put("stage2_w_trans", self.stage2_trans_weight.to_string());
        for (i, st) in self.stages.iter().enumerate() {
            let n = i + 1;
            put(&format!("stage{n}_lr"), st.lr.to_string());
            put(&format!("stage{n}_decay"), st.decay.to_string());
            put(&format!("stage{n}_decay_every"), st.decay_every.to_string());
            put(&format!("stage{n}_epochs"), st.epochs.to_string());
        }
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("data_dir", path(&self.data_dir));
        put("manifest", path(&self.manifest));
        put("eval_every", self.eval_every.to_string());
        put("dtype", self.dtype.name().to_string());
        put("mask_absent_parts", self.mask_absent_parts.to_string());
        s
    }
}
