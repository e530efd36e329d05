use std::fmt;
use std::str::FromStr;

use crate::error::{Result, VoxError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    SimpleMlp,
    PartAttention,
    ChannelwisePartAttention,
}

impl HeadMode {
    pub fn is_attention(self) -> bool {
        self != HeadMode::SimpleMlp
    }
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadMode::SimpleMlp => "simple_mlp",
            HeadMode::PartAttention => "part_attention",
            HeadMode::ChannelwisePartAttention => "channelwise_part_attention",
        })
    }
}

impl FromStr for HeadMode {
    type Err = VoxError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simple_mlp" => Ok(HeadMode::SimpleMlp),
            "part_attention" => Ok(HeadMode::PartAttention),
            "channelwise_part_attention" | "channelwise" => Ok(HeadMode::ChannelwisePartAttention),
            other => Err(VoxError::Config(format!("unknown head mode `{other}`"))),
        }
    }
}

/// Number of scale + translation parameters per part.
pub const TRANSFORM_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub mode: HeadMode,
    /// Selected feature layers, ascending.
    pub layers: Vec<usize>,
    pub d_a: usize,
    pub heads: usize,
    pub blocks: usize,
    pub apply_ac_loss: bool,
    /// Hidden widths of the flat MLP head.
    pub mlp_hidden: Vec<usize>,
    /// Hidden width of the per-part regressor of the attention heads.
    pub part_hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            mode: HeadMode::PartAttention,
            layers: vec![0, 3, 5],
            d_a: 256,
            heads: 8,
            blocks: 3,
            apply_ac_loss: true,
            mlp_hidden: vec![1024, 256],
            part_hidden: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub resolution: usize,
    pub n_parts: usize,
    /// Encoder conv widths; the last entry is the latent width.
    pub channels: Vec<usize>,
    pub slope: f64,
    pub bn_momentum: f64,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            resolution: 32,
            n_parts: 4,
            channels: vec![64, 128, 256, 256],
            slope: 0.2,
            bn_momentum: 0.9,
            head: HeadConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn latent(&self) -> usize {
        *self.channels.last().expect("validated config has channels")
    }

    /// Number of stride-2 convolutions, `log2(R / 4)`.
    pub fn strided(&self) -> usize {
        self.channels.len() - 1
    }

    /// Output widths of the decoder deconvolutions.
    pub fn decoder_channels(&self) -> Vec<usize> {
        let n = self.channels.len();
        let mut out: Vec<usize> = self.channels[..n - 1].iter().rev().copied().collect();
        out.push(1);
        out
    }

    /// `(channels, spatial extent)` of every feature layer: the flat latent,
    /// the latent as a 1³ volume, then each decoder activation.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let l = self.latent();
        let mut out = vec![(1, l), (l, 1)];
        let mut extent = 4;
        for c in self.decoder_channels() {
            out.push((c, extent * extent * extent));
            extent *= 2;
        }
        out
    }

    pub fn n_layers(&self) -> usize {
        self.channels.len() + 2
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VoxError::Config(m));
        let r = self.resolution;
        if r < 8 || !r.is_power_of_two() {
            return bad(format!("resolution {r} must be a power of two ≥ 8"));
        }
        let strided = (r / 4).trailing_zeros() as usize;
        if self.channels.len() != strided + 1 {
            return bad(format!(
                "resolution {r} needs {} encoder widths, got {}",
                strided + 1,
                self.channels.len()
            ));
        }
        if self.channels.contains(&0) {
            return bad("encoder widths must be positive".into());
        }
        if self.n_parts == 0 {
            return bad("at least one part is required".into());
        }
        let h = &self.head;
        if h.layers.is_empty() {
            return bad("head needs at least one feature layer".into());
        }
        if let Some(&l) = h.layers.iter().find(|&&l| l >= self.n_layers()) {
            return bad(format!("feature layer {l} does not exist (0..{})", self.n_layers()));
        }
        if h.layers.windows(2).any(|w| w[0] >= w[1]) {
            return bad("feature layers must be strictly ascending".into());
        }
        if h.mode.is_attention() {
            if h.heads == 0 || !h.d_a.is_multiple_of(h.heads) {
                return bad(format!("d_A {} is not divisible by {} heads", h.d_a, h.heads));
            }
            if h.blocks == 0 {
                return bad("attention head needs at least one block".into());
            }
        }
        if h.mode == HeadMode::ChannelwisePartAttention && h.layers.iter().any(|&l| l == 1 || l == 2) {
            log::warn!("channelwise attention over layer 1 or 2 has a very wide per-part concatenation");
        }
        Ok(())
    }
}
