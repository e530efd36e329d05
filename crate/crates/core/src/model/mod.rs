//! Encoder, projection bank, shared part decoder, transform heads and assembly.

mod assemble;
mod config;
mod heads;

pub use assemble::{apply_transform, compose_shape};
pub use config::{HeadConfig, HeadMode, ModelConfig, TRANSFORM_DIM};
pub use heads::HeadOutput;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;
use voxatt_tensor::{BatchStats, Graph, ParamKind, ParamStore, Scalar, Tensor, Var};

use crate::error::{Result, VoxError};

const KERNEL: usize = 4;

/// Standard deviation of the noise added to the projection-bank initialization.
pub const BANK_INIT_NOISE: f64 = 0.01;

/// Forward-pass mode plus the batch statistics a training pass produced.
pub struct Pass<T: Scalar> {
    pub train: bool,
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Scalar> Pass<T> {
    pub fn train() -> Self {
        Pass {
            train: true,
            bn_stats: Vec::new(),
        }
    }

    pub fn eval() -> Self {
        Pass {
            train: false,
            bn_stats: Vec::new(),
        }
    }
}

pub struct Decoded {
    /// Canonical part occupancies `(B, N_p, R³)` in (0,1).
    pub parts: Var,
    /// Every feature layer as `(B·N_p, C, S)`, indexed 0..n_layers.
    pub taps: Vec<Var>,
}

pub struct Forward {
    pub latent: Var,
    pub part_latents: Var,
    pub decoded: Decoded,
    pub head: HeadOutput,
    /// Parts placed in the full grid, `(B, N_p, R³)`.
    pub placed: Var,
    /// Assembled shape `(B, R³)`.
    pub shape: Var,
}

#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

struct Init {
    rng: Xoshiro256StarStar,
}

impl Init {
    /// Uniform in `±1/√fan_in`.
    fn uniform<T: Scalar>(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Tensor::from_f64(shape, &data).expect("shape matches data")
    }

    fn bank<T: Scalar>(&mut self, n_parts: usize, l: usize) -> Tensor<T> {
        let block = l / n_parts;
        let mut data = vec![0.0; n_parts * l * l];
        for i in 0..n_parts {
            let start = i * block;
            let end = if i + 1 == n_parts { l } else { start + block };
            for d in start..end {
                data[(i * l + d) * l + d] = 1.0;
            }
        }
        for v in &mut data {
            let e: f64 = self.rng.sample(StandardNormal);
            *v += BANK_INIT_NOISE * e;
        }
        Tensor::from_f64(&[n_parts, l, l], &data).expect("shape matches data")
    }
}

fn add_norm<T: Scalar>(p: &mut ParamStore<T>, prefix: &str, c: usize) -> Result<()> {
    p.add(&format!("{prefix}.gamma"), Tensor::ones(&[c]), ParamKind::Trainable)?;
    p.add(&format!("{prefix}.beta"), Tensor::zeros(&[c]), ParamKind::Trainable)?;
    p.add(&format!("{prefix}.mean"), Tensor::zeros(&[c]), ParamKind::Buffer)?;
    p.add(&format!("{prefix}.var"), Tensor::ones(&[c]), ParamKind::Buffer)?;
    Ok(())
}

impl<T: Scalar> Model<T> {
    /// Fresh parameters drawn from `seed`. Values are drawn in f64, so models
    /// of either precision built from the same seed agree up to rounding.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init {
            rng: Xoshiro256StarStar::seed_from_u64(seed),
        };
        let mut p = ParamStore::new();
        let k3 = KERNEL.pow(3);
        let mut c_in = 1;
        let n = config.channels.len();
        for (i, &c) in config.channels.iter().enumerate() {
            p.add(
                &format!("enc.conv{i}.w"),
                init.uniform(&[c, c_in, KERNEL, KERNEL, KERNEL], c_in * k3),
                ParamKind::Trainable,
            )?;
            p.add(&format!("enc.conv{i}.b"), Tensor::zeros(&[c]), ParamKind::Trainable)?;
            if i + 1 < n {
                add_norm(&mut p, &format!("enc.bn{i}"), c)?;
            }
            c_in = c;
        }
        let l = config.latent();
        p.add("bank", init.bank(config.n_parts, l), ParamKind::Trainable)?;
        for (i, &c) in config.decoder_channels().iter().enumerate() {
            // a stride-2 4³ transposed conv touches each output from 2³ taps
            let fan_in = if i == 0 { c_in } else { c_in * 8 };
            p.add(
                &format!("dec.deconv{i}.w"),
                init.uniform(&[c_in, c, KERNEL, KERNEL, KERNEL], fan_in),
                ParamKind::Trainable,
            )?;
            p.add(&format!("dec.deconv{i}.b"), Tensor::zeros(&[c]), ParamKind::Trainable)?;
            if i + 1 < n {
                add_norm(&mut p, &format!("dec.bn{i}"), c)?;
            }
            c_in = c;
        }
        Self::add_head(&config, &mut p, &mut init)?;
        Ok(Model { config, params: p })
    }

    fn add_head(cfg: &ModelConfig, p: &mut ParamStore<T>, init: &mut Init) -> Result<()> {
        let h = &cfg.head;
        let dense = |p: &mut ParamStore<T>, init: &mut Init, name: &str, out: usize, inp: usize| -> Result<()> {
            p.add(
                &format!("{name}.w"),
                init.uniform(&[out, inp], inp),
                ParamKind::Trainable,
            )?;
            p.add(&format!("{name}.b"), Tensor::zeros(&[out]), ParamKind::Trainable)?;
            Ok(())
        };
        let width = heads::concat_width(cfg);
        if h.mode == HeadMode::SimpleMlp {
            let mut inp = width;
            for (i, &w) in h.mlp_hidden.iter().enumerate() {
                dense(p, init, &format!("head.mlp{i}"), w, inp)?;
                inp = w;
            }
            return dense(p, init, "head.out", cfg.n_parts * TRANSFORM_DIM, inp);
        }
        for &l in &h.layers {
            dense(p, init, &format!("head.embed{l}"), h.d_a, heads::embed_width(cfg, l))?;
        }
        for k in 0..h.blocks {
            for (name, shape) in heads::block_param_shapes(h.d_a) {
                let full = format!("head.block{k}.{name}");
                if name.ends_with("gamma") {
                    p.add(&full, Tensor::ones(&shape), ParamKind::Trainable)?;
                } else if shape.len() == 1 {
                    p.add(&full, Tensor::zeros(&shape), ParamKind::Trainable)?;
                } else {
                    let t = init.uniform(&shape, shape[1]);
                    p.add(&full, t, ParamKind::Trainable)?;
                }
            }
        }
        dense(p, init, "head.mlp0", h.part_hidden, width)?;
        dense(p, init, "head.out", TRANSFORM_DIM, h.part_hidden)
    }

    pub fn net(&self) -> Net<'_, T> {
        Net {
            cfg: &self.config,
            params: &self.params,
        }
    }

    /// Fold batch statistics from a training pass into the running buffers.
    pub fn apply_bn_stats(&mut self, stats: &[(String, BatchStats<T>)]) -> Result<()> {
        let momentum = T::of(self.config.bn_momentum);
        for (prefix, s) in stats {
            let mut rm = self.params.by_name(&format!("{prefix}.mean"))?.value.clone();
            let mut rv = self.params.by_name(&format!("{prefix}.var"))?.value.clone();
            s.update_running(rm.data_mut(), rv.data_mut(), momentum);
            self.params.by_name_mut(&format!("{prefix}.mean"))?.value = rm;
            self.params.by_name_mut(&format!("{prefix}.var"))?.value = rv;
        }
        Ok(())
    }

    /// Whether a parameter belongs to the transform head.
    pub fn is_head_param(name: &str) -> bool {
        name.starts_with("head.")
    }
}

/// Borrowed view used to record forward passes.
#[derive(Clone, Copy)]
pub struct Net<'a, T: Scalar> {
    pub cfg: &'a ModelConfig,
    pub params: &'a ParamStore<T>,
}

impl<'a, T: Scalar> Net<'a, T> {
    pub fn new(cfg: &'a ModelConfig, params: &'a ParamStore<T>) -> Self {
        Net { cfg, params }
    }

    fn bind(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        Ok(self.params.bind_name(g, name)?)
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, prefix: &str, pass: &mut Pass<T>) -> Result<Var> {
        let gamma = self.bind(g, &format!("{prefix}.gamma"))?;
        let beta = self.bind(g, &format!("{prefix}.beta"))?;
        if pass.train {
            let (y, stats) = g.batch_norm_train(x, gamma, beta)?;
            pass.bn_stats.push((prefix.to_string(), stats));
            Ok(y)
        } else {
            let rm = &self.params.by_name(&format!("{prefix}.mean"))?.value;
            let rv = &self.params.by_name(&format!("{prefix}.var"))?.value;
            Ok(g.batch_norm_eval(x, gamma, beta, rm.data(), rv.data())?)
        }
    }

    /// `(B, 1, R, R, R)` occupancy to `(B, L)` latent.
    pub fn encode(&self, g: &mut Graph<T>, x: Var, pass: &mut Pass<T>) -> Result<Var> {
        let layers = self.encode_layers(g, x, pass)?;
        let b = g.shape(x)[0];
        Ok(g.reshape(*layers.last().expect("encoder has layers"), &[b, self.cfg.latent()])?)
    }

    /// Post-activation output of every encoder convolution.
    pub fn encode_layers(&self, g: &mut Graph<T>, x: Var, pass: &mut Pass<T>) -> Result<Vec<Var>> {
        let r = self.cfg.resolution;
        let shape = g.shape(x).to_vec();
        if shape.len() != 5 || shape[1] != 1 || shape[2..] != [r, r, r] {
            return Err(VoxError::Precondition(format!(
                "encoder expects (B, 1, {r}, {r}, {r}), got {shape:?}"
            )));
        }
        let slope = T::of(self.cfg.slope);
        let n = self.cfg.channels.len();
        let mut h = x;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let w = self.bind(g, &format!("enc.conv{i}.w"))?;
            let b = self.bind(g, &format!("enc.conv{i}.b"))?;
            let last = i + 1 == n;
            h = if last {
                g.conv3d(h, w, Some(b), 1, 0)?
            } else {
                g.conv3d(h, w, Some(b), 2, 1)?
            };
            if !last {
                h = self.norm(g, h, &format!("enc.bn{i}"), pass)?;
            }
            h = g.leaky_relu(h, slope);
            out.push(h);
        }
        Ok(out)
    }

    /// Part latents `(B, N_p, L)`, part `i` being `z·P_iᵀ`.
    pub fn project(&self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        let (np, l) = (self.cfg.n_parts, self.cfg.latent());
        let b = g.shape(z)[0];
        let bank = self.bind(g, "bank")?;
        let w = g.reshape(bank, &[np * l, l])?;
        let y = g.linear(z, w, None)?;
        Ok(g.reshape(y, &[b, np, l])?)
    }

    /// Decode every part latent with the shared decoder.
    pub fn decode(&self, g: &mut Graph<T>, part_latents: Var, pass: &mut Pass<T>) -> Result<Decoded> {
        let (np, l, r) = (self.cfg.n_parts, self.cfg.latent(), self.cfg.resolution);
        let b = g.shape(part_latents)[0];
        let items = b * np;
        let slope = T::of(self.cfg.slope);
        let mut taps = vec![
            g.reshape(part_latents, &[items, 1, l])?,
            g.reshape(part_latents, &[items, l, 1])?,
        ];
        let mut h = g.reshape(part_latents, &[items, l, 1, 1, 1])?;
        let chans = self.cfg.decoder_channels();
        for (i, &c) in chans.iter().enumerate() {
            let w = self.bind(g, &format!("dec.deconv{i}.w"))?;
            let bias = self.bind(g, &format!("dec.deconv{i}.b"))?;
            let last = i + 1 == chans.len();
            h = if i == 0 {
                g.deconv3d(h, w, Some(bias), 1, 0)?
            } else {
                g.deconv3d(h, w, Some(bias), 2, 1)?
            };
            if last {
                h = g.sigmoid(h);
            } else {
                h = self.norm(g, h, &format!("dec.bn{i}"), pass)?;
                h = g.leaky_relu(h, slope);
            }
            let s = g.value(h).numel() / (items * c);
            taps.push(g.reshape(h, &[items, c, s])?);
        }
        let parts = g.reshape(h, &[b, np, r * r * r])?;
        Ok(Decoded { parts, taps })
    }

    /// The head's selected layers from a full tap list.
    pub fn select_taps(&self, taps: &[Var]) -> Vec<(usize, Var)> {
        self.cfg.head.layers.iter().map(|&l| (l, taps[l])).collect()
    }

    pub fn head(&self, g: &mut Graph<T>, taps: &[(usize, Var)], batch: usize) -> Result<HeadOutput> {
        heads::run_head(g, self.cfg, self.params, taps, batch)
    }

    /// Place canonical parts by `transforms` and take their union.
    pub fn assemble(&self, g: &mut Graph<T>, parts: Var, transforms: Var) -> Result<(Var, Var)> {
        let placed = apply_transform(g, parts, transforms, self.cfg.resolution)?;
        let shape = compose_shape(g, placed)?;
        Ok((placed, shape))
    }

    /// Decode, regress and assemble from part latents `(B, N_p, L)`.
    pub fn from_part_latents(
        &self,
        g: &mut Graph<T>,
        latent: Var,
        part_latents: Var,
        pass: &mut Pass<T>,
    ) -> Result<Forward> {
        let b = g.shape(part_latents)[0];
        let decoded = self.decode(g, part_latents, pass)?;
        let taps = self.select_taps(&decoded.taps);
        let head = self.head(g, &taps, b)?;
        let (placed, shape) = self.assemble(g, decoded.parts, head.transforms)?;
        Ok(Forward {
            latent,
            part_latents,
            decoded,
            head,
            placed,
            shape,
        })
    }

    pub fn from_latent(&self, g: &mut Graph<T>, z: Var, pass: &mut Pass<T>) -> Result<Forward> {
        let pl = self.project(g, z)?;
        self.from_part_latents(g, z, pl, pass)
    }

    /// Full reconstruction of `(B, 1, R, R, R)` inputs.
    pub fn forward(&self, g: &mut Graph<T>, x: Var, pass: &mut Pass<T>) -> Result<Forward> {
        let z = self.encode(g, x, pass)?;
        self.from_latent(g, z, pass)
    }
}
