//! Transform regressors over decoder feature taps.

use voxatt_tensor::{AttentionBlockVars, Graph, MhaVars, ParamStore, Scalar, Var};

use super::config::{HeadMode, ModelConfig, TRANSFORM_DIM};
use crate::error::Result;

pub struct HeadOutput {
    /// Unconstrained regressor output `(B, N_p, 6)`.
    pub raw: Var,
    /// `(exp(raw₀..₂), raw₃..₅)`, i.e. positive scales then translations.
    pub transforms: Var,
    /// Post-attention per-part vectors `(B, N_p, d_A)`, one per selected layer.
    pub ac_vectors: Vec<Var>,
    /// `[layer][block]` attention weights, `(B, heads, N_p, N_p)` or
    /// `(B, C, heads, N_p, N_p)` for the channelwise head.
    pub maps: Vec<Vec<Var>>,
}

pub(crate) fn block_param_shapes(d: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        ("wq", vec![d, d]),
        ("bq", vec![d]),
        ("wk", vec![d, d]),
        ("bk", vec![d]),
        ("wv", vec![d, d]),
        ("bv", vec![d]),
        ("wo", vec![d, d]),
        ("bo", vec![d]),
        ("ln1.gamma", vec![d]),
        ("ln1.beta", vec![d]),
        ("ff1.w", vec![4 * d, d]),
        ("ff1.b", vec![4 * d]),
        ("ff2.w", vec![d, 4 * d]),
        ("ff2.b", vec![d]),
        ("ln2.gamma", vec![d]),
        ("ln2.beta", vec![d]),
    ]
}

/// Input width of the head's first dense layer for each selected layer.
pub(crate) fn embed_width(cfg: &ModelConfig, layer: usize) -> usize {
    let (c, s) = cfg.layer_shapes()[layer];
    match cfg.head.mode {
        HeadMode::ChannelwisePartAttention => s,
        _ => c * s,
    }
}

/// Width of the concatenated per-part feature fed to the regressor.
pub(crate) fn concat_width(cfg: &ModelConfig) -> usize {
    let shapes = cfg.layer_shapes();
    let h = &cfg.head;
    h.layers
        .iter()
        .map(|&l| match h.mode {
            HeadMode::ChannelwisePartAttention => shapes[l].0 * h.d_a,
            HeadMode::PartAttention => h.d_a,
            HeadMode::SimpleMlp => cfg.n_parts * shapes[l].0 * shapes[l].1,
        })
        .sum()
}

fn bind<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str) -> Result<Var> {
    Ok(p.bind_name(g, name)?)
}

fn block_vars<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, k: usize) -> Result<AttentionBlockVars> {
    let mut b = |n: &str| bind(g, p, &format!("head.block{k}.{n}"));
    Ok(AttentionBlockVars {
        mha: MhaVars {
            wq: b("wq")?,
            bq: b("bq")?,
            wk: b("wk")?,
            bk: b("bk")?,
            wv: b("wv")?,
            bv: b("bv")?,
            wo: b("wo")?,
            bo: b("bo")?,
        },
        ln1_gamma: b("ln1.gamma")?,
        ln1_beta: b("ln1.beta")?,
        ff1_w: b("ff1.w")?,
        ff1_b: b("ff1.b")?,
        ff2_w: b("ff2.w")?,
        ff2_b: b("ff2.b")?,
        ln2_gamma: b("ln2.gamma")?,
        ln2_beta: b("ln2.beta")?,
    })
}

fn dense<T: Scalar>(g: &mut Graph<T>, p: &ParamStore<T>, x: Var, name: &str) -> Result<Var> {
    let w = bind(g, p, &format!("{name}.w"))?;
    let b = bind(g, p, &format!("{name}.b"))?;
    Ok(g.linear(x, w, Some(b))?)
}

/// `taps` pairs a layer index with its activation `(B·N_p, C, S)`.
pub(crate) fn run_head<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    p: &ParamStore<T>,
    taps: &[(usize, Var)],
    batch: usize,
) -> Result<HeadOutput> {
    let np = cfg.n_parts;
    let h = &cfg.head;
    let slope = T::of(cfg.slope);
    let mut ac_vectors = Vec::new();
    let mut maps = Vec::new();

    let raw = match h.mode {
        HeadMode::SimpleMlp => {
            let mut flat = Vec::new();
            for &(_, t) in taps {
                let n = g.value(t).numel() / batch;
                flat.push(g.reshape(t, &[batch, n])?);
            }
            let mut x = g.concat(&flat, 1)?;
            for i in 0..h.mlp_hidden.len() {
                x = dense(g, p, x, &format!("head.mlp{i}"))?;
                x = g.leaky_relu(x, slope);
            }
            let x = dense(g, p, x, "head.out")?;
            g.reshape(x, &[batch, np, TRANSFORM_DIM])?
        }
        HeadMode::PartAttention | HeadMode::ChannelwisePartAttention => {
            let blocks: Vec<AttentionBlockVars> = (0..h.blocks).map(|k| block_vars(g, p, k)).collect::<Result<_>>()?;
            let channelwise = h.mode == HeadMode::ChannelwisePartAttention;
            let mut per_layer = Vec::new();
            for &(l, t) in taps {
                let shape = g.shape(t).to_vec();
                let (c, s) = (shape[1], shape[2]);
                let x = if channelwise {
                    let x = g.reshape(t, &[batch, np, c, s])?;
                    g.permute(x, &[0, 2, 1, 3])?
                } else {
                    g.reshape(t, &[batch, np, c * s])?
                };
                let mut x = dense(g, p, x, &format!("head.embed{l}"))?;
                let mut layer_maps = Vec::new();
                for b in &blocks {
                    let (y, m) = g.attention_block(x, b, h.heads, slope)?;
                    x = y;
                    layer_maps.push(m);
                }
                maps.push(layer_maps);
                if channelwise {
                    ac_vectors.push(g.mean_axis(x, 1)?);
                    let y = g.permute(x, &[0, 2, 1, 3])?;
                    per_layer.push(g.reshape(y, &[batch, np, c * h.d_a])?);
                } else {
                    ac_vectors.push(x);
                    per_layer.push(x);
                }
            }
            let x = g.concat(&per_layer, 2)?;
            let x = dense(g, p, x, "head.mlp0")?;
            let x = g.leaky_relu(x, slope);
            dense(g, p, x, "head.out")?
        }
    };

    let scale = g.narrow(raw, 2, 0, 3)?;
    let scale = g.exp(scale);
    let shift = g.narrow(raw, 2, 3, 3)?;
    let transforms = g.concat(&[scale, shift], 2)?;
    Ok(HeadOutput {
        raw,
        transforms,
        ac_vectors,
        maps,
    })
}
