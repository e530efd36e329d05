//! Training driver, checkpoints, evaluation, latent-space edits and exports.

mod checkpoint;
mod config;
mod dataset;
mod eval;
mod export;
mod latent;
mod summary;
mod train;

pub use checkpoint::{checkpoint_dtype, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{StageSchedule, TrainConfig};
pub use dataset::{Batch, Dataset, Item};
pub use eval::{evaluate, metric_report, reconstruct, split_forward, Recon, SetMetricOptions};
pub use export::{ascii_slices, export_attention_maps, export_shape, labeled_from_recon, obj_cubes, ShapeFormat};
pub use latent::{attention_maps, interpolate, mix, pick_donors, swap, AttentionMap};
pub use summary::{shape_miou_spread, ShapeMiouSpread, DEFAULT_SPREAD_WINDOW};
pub use train::{EpochRecord, Trainer, LOG_HEADER};
