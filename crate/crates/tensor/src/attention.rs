//! Multi-head self-attention and the post-norm transformer block built on it.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Q/K/V/O projections of one multi-head attention layer.
#[derive(Clone, Copy, Debug)]
pub struct MhaVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// One attention block: attention, add & norm, feed-forward, add & norm.
#[derive(Clone, Copy, Debug)]
pub struct AttentionBlockVars {
    pub mha: MhaVars,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ff1_w: Var,
    pub ff1_b: Var,
    pub ff2_w: Var,
    pub ff2_b: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
}

impl<T: Scalar> Graph<T> {
    /// Self-attention over the second-to-last axis of `x (…, S, d)`.
    ///
    /// Returns the projected output `(…, S, d)` and the attention weights
    /// `(…, heads, S, S)`, each row of which sums to one.
    pub fn multi_head_attention(&mut self, x: Var, p: &MhaVars, heads: usize) -> Result<(Var, Var)> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::dim("attention", "(…, S, d)", format!("{shape:?}")));
        }
        let nd = shape.len();
        let (seq, width) = (shape[nd - 2], shape[nd - 1]);
        if seq == 0 {
            return Err(TensorError::Precondition("attention over an empty sequence".into()));
        }
        if heads == 0 || width % heads != 0 {
            return Err(TensorError::config(
                "attention",
                format!("width {width} not divisible by {heads} heads"),
            ));
        }
        let head_dim = width / heads;
        let lead: usize = shape[..nd - 2].iter().product();

        let split = |g: &mut Self, w: Var, b: Var| -> Result<Var> {
            let y = g.linear(x, w, Some(b))?;
            let y = g.reshape(y, &[lead, seq, heads, head_dim])?;
            g.permute(y, &[0, 2, 1, 3])
        };
        let q = split(self, p.wq, p.bq)?;
        let k = split(self, p.wk, p.bk)?;
        let v = split(self, p.wv, p.bv)?;

        let scores = self.bmm(q, k, true)?;
        let scores = self.scale(scores, T::one() / T::of(head_dim as f64).sqrt());
        let attn = self.softmax(scores, 3)?;
        let o = self.bmm(attn, v, false)?;
        let o = self.permute(o, &[0, 2, 1, 3])?;
        let o = self.reshape(o, &shape)?;
        let out = self.linear(o, p.wo, Some(p.bo))?;

        let mut map_shape = shape[..nd - 2].to_vec();
        map_shape.extend_from_slice(&[heads, seq, seq]);
        let attn = self.reshape(attn, &map_shape)?;
        Ok((out, attn))
    }

    /// `y = LN(x + MHA(x))`, `out = LN(y + FF(y))` with a two-layer
    /// leaky-ReLU feed-forward.
    pub fn attention_block(&mut self, x: Var, p: &AttentionBlockVars, heads: usize, slope: T) -> Result<(Var, Var)> {
        let (att, maps) = self.multi_head_attention(x, &p.mha, heads)?;
        let y = self.add(x, att)?;
        let y = self.layer_norm(y, p.ln1_gamma, p.ln1_beta)?;
        let h = self.linear(y, p.ff1_w, Some(p.ff1_b))?;
        let h = self.leaky_relu(h, slope);
        let h = self.linear(h, p.ff2_w, Some(p.ff2_b))?;
        let z = self.add(y, h)?;
        let out = self.layer_norm(z, p.ln2_gamma, p.ln2_beta)?;
        Ok((out, maps))
    }
}
