//! Staged training: parts, then the transform head, then everything.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;
use voxatt_tensor::{AdamState, Graph, Scalar, Tensor, Var};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::dataset::Dataset;
use super::eval::evaluate;
use crate::error::{Result, VoxError};
use crate::losses::{loss_ac, loss_part, loss_pi, loss_shape, loss_trans, stage_loss, LossTerms, StageLossReport};
use crate::metrics::MetricReport;
use crate::model::{Model, Pass};

pub const LOG_HEADER: &str = "epoch,stage,pi,part,trans,ac,shape,total,part_miou,shape_miou,transform_mse,symmetry";

/// One log row: mean batch losses of an epoch, plus metrics on eval epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub losses: StageLossReport,
    pub metrics: Option<MetricReport>,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let l = &self.losses;
        let mut cols = vec![l.epoch.to_string(), l.stage.to_string()];
        cols.extend(l.terms().iter().map(|t| cell(*t)));
        cols.push(l.total.to_string());
        match &self.metrics {
            Some(m) => {
                cols.push(cell(m.part.mean));
                cols.push(m.shape_miou.to_string());
                cols.push(cell(m.transform_mse));
                cols.push(m.symmetry.to_string());
            }
            None => cols.extend(std::iter::repeat_n(String::new(), 4)),
        }
        cols.join(",")
    }
}

pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub model: Model<T>,
    /// Stage in progress or last finished; 0 before training.
    pub stage: u8,
    /// Epochs completed in `stage`.
    pub epoch: usize,
    pub adam: AdamState,
    /// Drives batch order.
    pub rng: Xoshiro256StarStar,
}

fn adam_for(config: &TrainConfig, stage: u8) -> Result<AdamState> {
    let s = config.schedule(stage.max(1))?;
    Ok(AdamState::new(s.lr).with_decay(s.decay, s.decay_every))
}

impl<T: Scalar> Trainer<T> {
    /// Fresh model. Parameters are drawn from `seed`, batch order from `seed + 1`.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        Ok(Trainer {
            adam: adam_for(&config, 1)?,
            rng: Xoshiro256StarStar::seed_from_u64(config.seed.wrapping_add(1)),
            config,
            model,
            stage: 0,
            epoch: 0,
        })
    }

    pub fn from_checkpoint(ck: Checkpoint<T>) -> Result<Self> {
        let mut adam = adam_for(&ck.config, ck.stage)?;
        adam.step_count = ck.adam_step;
        Ok(Trainer {
            model: Model {
                config: ck.config.model.clone(),
                params: ck.params,
            },
            config: ck.config,
            stage: ck.stage,
            epoch: ck.epoch as usize,
            adam,
            rng: ck.rng,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            params: self.model.params.clone(),
            stage: self.stage,
            epoch: self.epoch as u32,
            adam_step: self.adam.step_count,
            rng: self.rng.clone(),
        }
    }

    /// Continue the current stage, or move on to the next one with a fresh
    /// optimizer.
    fn enter(&mut self, stage: u8) -> Result<()> {
        self.config.schedule(stage)?;
        if stage == self.stage {
            return Ok(());
        }
        if stage != self.stage + 1 {
            let need = if stage == 1 {
                "an untrained model".to_string()
            } else {
                format!("a stage-{} checkpoint", stage - 1)
            };
            return Err(VoxError::Precondition(format!(
                "stage {stage} needs {need}, have a stage-{} checkpoint",
                self.stage
            )));
        }
        self.stage = stage;
        self.epoch = 0;
        self.adam = adam_for(&self.config, stage)?;
        self.model.params.reset_moments();
        Ok(())
    }

    /// Train `stage` until its scheduled epoch count, or until `until` epochs
    /// of the stage are complete. Appends one CSV row per epoch to `log`;
    /// every `eval_every`-th epoch also scores `eval_set`.
    pub fn train(
        &mut self,
        stage: u8,
        train_set: &Dataset,
        eval_set: &Dataset,
        until: Option<usize>,
        log: &mut dyn Write,
    ) -> Result<Vec<EpochRecord>> {
        train_set.check(&self.config.model)?;
        eval_set.check(&self.config.model)?;
        self.enter(stage)?;
        match stage {
            1 => self.model.params.set_frozen(Model::<T>::is_head_param),
            2 => self.model.params.set_frozen(|n| !Model::<T>::is_head_param(n)),
            _ => self.model.params.set_frozen(|_| false),
        }
        let epochs = self.config.schedule(stage)?.epochs;
        let end = until.map_or(epochs, |u| u.min(epochs));
        let cache = if stage == 2 && self.epoch < end {
            Some(TapCache::build(&self.model, train_set, self.config.batch_size)?)
        } else {
            None
        };

        let mut records = Vec::new();
        while self.epoch < end {
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            order.shuffle(&mut self.rng);
            let mut sums = [0.0f64; 6];
            let mut seen = [false; 5];
            let mut batches = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                let report = match stage {
                    2 => self.step_head(train_set, cache.as_ref().expect("built for stage 2"), chunk)?,
                    _ => self.step_full(stage, train_set, chunk)?,
                };
                for (k, t) in report.terms().iter().enumerate() {
                    if let Some(v) = t {
                        sums[k] += v;
                        seen[k] = true;
                    }
                }
                sums[5] += report.total;
                batches += 1;
            }
            self.epoch += 1;
            let mean = |k: usize| seen[k].then(|| sums[k] / batches as f64);
            let losses = StageLossReport {
                stage,
                epoch: self.epoch,
                pi: mean(0),
                part: mean(1),
                trans: mean(2),
                ac: mean(3),
                shape: mean(4),
                total: sums[5] / batches as f64,
            };
            let metrics = if self.epoch.is_multiple_of(self.config.eval_every) {
                Some(evaluate(&self.model, eval_set, self.config.batch_size, false, None)?)
            } else {
                None
            };
            let rec = EpochRecord { losses, metrics };
            writeln!(log, "{}", rec.csv_row()).map_err(|e| VoxError::io("<log>", e))?;
            log::info!("{}", rec.csv_row());
            records.push(rec);
        }
        Ok(records)
    }

    /// Stage 1 or 3: forward through the whole network.
    fn step_full(&mut self, stage: u8, data: &Dataset, chunk: &[usize]) -> Result<StageLossReport> {
        let w = self.config.stage_weights(stage);
        let b = data.batch::<T>(chunk);
        let net = self.model.net();
        let mut g = Graph::new();
        let x = g.constant(b.input);
        let mut pass = Pass::train();
        let mut terms = LossTerms::default();
        if stage == 1 {
            let z = net.encode(&mut g, x, &mut pass)?;
            let pl = net.project(&mut g, z)?;
            let d = net.decode(&mut g, pl, &mut pass)?;
            let bank = net.params.bind_name(&mut g, "bank")?;
            terms.pi = Some(loss_pi(&mut g, bank)?);
            terms.part = Some(loss_part(&mut g, d.parts, &b.parts, None, w.gamma)?);
        } else {
            let f = net.forward(&mut g, x, &mut pass)?;
            let bank = net.params.bind_name(&mut g, "bank")?;
            terms.pi = Some(loss_pi(&mut g, bank)?);
            terms.part = Some(loss_part(&mut g, f.decoded.parts, &b.parts, None, w.gamma)?);
            terms.trans = Some(self.trans_term(&mut g, f.head.transforms, &b.transforms, &b.present)?);
            if w.ac != 0.0 {
                terms.ac = Some(loss_ac(&mut g, &f.head.ac_vectors)?);
            }
            terms.shape = Some(loss_shape(&mut g, f.shape, &b.shape, w.gamma)?);
        }
        let (total, report) = stage_loss(&mut g, stage, self.epoch + 1, &terms, &w)?;
        g.backward(total)?;
        self.model.params.collect_grads(&g);
        self.adam.step(&mut self.model.params, self.epoch)?;
        self.model.apply_bn_stats(&pass.bn_stats)?;
        Ok(report)
    }

    fn trans_term(&self, g: &mut Graph<T>, pred: Var, gt: &Tensor<T>, present: &[bool]) -> Result<Var> {
        if self.config.mask_absent_parts {
            loss_trans(g, pred, gt, present)
        } else {
            loss_trans(g, pred, gt, &vec![true; present.len()])
        }
    }

    /// Stage 2: the head on cached decoder features.
    fn step_head(&mut self, data: &Dataset, cache: &TapCache<T>, chunk: &[usize]) -> Result<StageLossReport> {
        let w = self.config.stage_weights(2);
        let b = data.batch::<T>(chunk);
        let mut g = Graph::new();
        let taps = cache.batch(&mut g, chunk)?;
        let head = self.model.net().head(&mut g, &taps, chunk.len())?;
        let mut terms = LossTerms {
            trans: Some(self.trans_term(&mut g, head.transforms, &b.transforms, &b.present)?),
            ..LossTerms::default()
        };
        if w.ac != 0.0 {
            terms.ac = Some(loss_ac(&mut g, &head.ac_vectors)?);
        }
        let (total, report) = stage_loss(&mut g, 2, self.epoch + 1, &terms, &w)?;
        g.backward(total)?;
        self.model.params.collect_grads(&g);
        self.adam.step(&mut self.model.params, self.epoch)?;
        Ok(report)
    }
}

/// Eval-mode decoder features of every training item for the head's layers.
/// The encoder and decoder are frozen in stage 2, so these never change.
struct TapCache<T: Scalar> {
    layers: Vec<usize>,
    /// `[item][layer]`, each `(N_p, C, S)`.
    items: Vec<Vec<Tensor<T>>>,
}

impl<T: Scalar> TapCache<T> {
    fn build(model: &Model<T>, data: &Dataset, batch: usize) -> Result<Self> {
        let net = model.net();
        let np = model.config.n_parts;
        let layers = model.config.head.layers.clone();
        let mut items = Vec::with_capacity(data.len());
        let all: Vec<usize> = (0..data.len()).collect();
        for chunk in all.chunks(batch) {
            let b = data.batch::<T>(chunk);
            let mut g = Graph::new();
            let x = g.constant(b.input);
            let mut pass = Pass::eval();
            let z = net.encode(&mut g, x, &mut pass)?;
            let pl = net.project(&mut g, z)?;
            let d = net.decode(&mut g, pl, &mut pass)?;
            for i in 0..chunk.len() {
                let per_layer = layers
                    .iter()
                    .map(|&l| {
                        let t = g.value(d.taps[l]);
                        let (c, s) = (t.shape()[1], t.shape()[2]);
                        let n = np * c * s;
                        Tensor::new(&[np, c, s], t.data()[i * n..(i + 1) * n].to_vec()).map_err(VoxError::from)
                    })
                    .collect::<Result<Vec<_>>>()?;
                items.push(per_layer);
            }
        }
        Ok(TapCache { layers, items })
    }

    fn batch(&self, g: &mut Graph<T>, chunk: &[usize]) -> Result<Vec<(usize, Var)>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let first = &self.items[chunk[0]][k];
                let mut shape = first.shape().to_vec();
                let mut data = Vec::with_capacity(first.numel() * chunk.len());
                for &i in chunk {
                    data.extend_from_slice(self.items[i][k].data());
                }
                shape[0] *= chunk.len();
                Ok((l, g.constant(Tensor::new(&shape, data)?)))
            })
            .collect()
    }
}
