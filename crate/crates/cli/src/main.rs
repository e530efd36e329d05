use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use voxatt::metrics::MetricReport;
use voxatt::pipeline::*;
use voxatt::voxdata::{generate_synthetic, read_vxp, split_dataset, write_vxp, Category, DatasetManifest, Split};
use voxatt_tensor::{DType, Scalar};

#[derive(Parser)]
#[command(
    name = "voxatt",
    version,
    about = "Part-assembly voxel generation: data, training, evaluation and latent edits"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print a full training config with defaults filled in.
    DefaultConfig {
        #[arg(long, default_value = "part_attention")]
        head_mode: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic labeled shapes plus a train/test manifest.
    GenSynth {
        #[arg(long, default_value = "chair")]
        category: Category,
        #[arg(long, default_value_t = 64)]
        count: u64,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tag every `.vxp` file in a directory as train or test.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        ratio: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Manifest to write; defaults to `manifest.txt` in the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run (or resume) one training stage.
    Train {
        #[arg(long)]
        stage: u8,
        #[command(flatten)]
        common: Common,
        /// Stop after this many epochs of the stage; resume later from the checkpoint.
        #[arg(long)]
        until: Option<usize>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// CSV log; created with a header, appended to otherwise.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Place decoded parts with ground-truth transforms.
        #[arg(long)]
        gt_transforms: bool,
        /// Also compute JSD, MMD and COV over sampled point clouds.
        #[arg(long)]
        set_metrics: bool,
        /// Append one CSV row of the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct items and export the assembled shapes.
    Recon {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeOut,
        /// Item ids; all items of the split when omitted.
        #[arg(long, num_args = 1..)]
        items: Vec<String>,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Exchange one part between two items.
    Swap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeOut,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        /// 0-based part slot.
        #[arg(long)]
        part: usize,
    },
    /// Assemble a shape from parts of random donors.
    Mix {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeOut,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Walk the latent line between two items.
    Interp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        shape: ShapeOut,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, default_value_t = 8)]
        steps: usize,
    },
    /// Write the head's part-to-part attention weights for one item.
    AttnMaps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        item: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a `.vxp` grid to another shape format.
    Export {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "obj-cubes")]
        format: ShapeFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean and spread of shape mIoU over the last evaluated epochs of a stage.
    LogSummary {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 2)]
        stage: u8,
        /// Number of trailing evaluation rows.
        #[arg(long, default_value_t = DEFAULT_SPREAD_WINDOW)]
        window: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Overrides the config seed (training) or picks donors (mix).
    #[arg(long)]
    seed: Option<u64>,
    /// Data directory; overrides the config.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct ShapeOut {
    #[arg(long, default_value = "obj-cubes")]
    format: ShapeFormat,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::DefaultConfig { head_mode, out } => {
            let cfg = TrainConfig::for_mode(head_mode.parse()?);
            match out {
                Some(p) => std::fs::write(&p, cfg.to_text()).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{}", cfg.to_text()),
            }
            Ok(())
        }
        Cmd::GenSynth {
            category,
            count,
            resolution,
            ratio,
            seed,
            out,
        } => gen_synth(category, count, resolution, ratio, seed, &out),
        Cmd::Split { data, ratio, seed, out } => split(&data, ratio, seed, out),
        Cmd::Export { input, format, out } => {
            let grid = read_vxp(&input)?;
            export_shape(&grid, &out, format)?;
            Ok(())
        }
        Cmd::LogSummary { log, stage, window } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let s = shape_miou_spread(&text, stage, window)?;
            println!(
                "stage {} shape mIoU {:.4} ± {:.4} over epochs {}..={} ({} rows)",
                s.stage,
                s.mean,
                s.std,
                s.epochs[0],
                s.epochs[s.epochs.len() - 1],
                s.epochs.len()
            );
            Ok(())
        }
        Cmd::Train {
            stage,
            common,
            until,
            out,
            log,
        } => {
            let (cfg, ck) = resolve(&common)?;
            match ck.as_ref().map_or(Ok(cfg.dtype), |b| checkpoint_dtype(b))? {
                DType::F32 => train::<f32>(stage, cfg, ck, &common, until, &out, log.as_deref()),
                DType::F64 => train::<f64>(stage, cfg, ck, &common, until, &out, log.as_deref()),
            }
        }
        cmd => {
            let common = match &cmd {
                Cmd::Eval { common, .. }
                | Cmd::Recon { common, .. }
                | Cmd::Swap { common, .. }
                | Cmd::Mix { common, .. }
                | Cmd::Interp { common, .. }
                | Cmd::AttnMaps { common, .. } => common,
                _ => unreachable!("handled above"),
            };
            let (_, ck) = resolve(common)?;
            let Some(bytes) = ck else {
                bail!("--checkpoint is required")
            };
            match checkpoint_dtype(&bytes)? {
                DType::F32 => inspect::<f32>(cmd, &bytes),
                DType::F64 => inspect::<f64>(cmd, &bytes),
            }
        }
    }
}

fn gen_synth(category: Category, count: u64, r: usize, ratio: f64, seed: u64, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut ids = Vec::new();
    for s in seed..seed + count {
        let g = generate_synthetic(category, s, r)?;
        write_vxp(&g, &out.join(format!("{}.vxp", g.item_id)))?;
        ids.push(g.item_id);
    }
    let m = split_dataset(&category.to_string(), category.n_parts(), r, &ids, ratio, seed)?;
    m.write(&out.join("manifest.txt"))?;
    println!(
        "{} shapes, {} train / {} test, in {}",
        ids.len(),
        m.ids(Split::Train).len(),
        m.ids(Split::Test).len(),
        out.display()
    );
    Ok(())
}

fn split(data: &Path, ratio: f64, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "vxp"))
        .collect();
    paths.sort();
    let Some(first) = paths.first() else {
        bail!("no .vxp files in {}", data.display())
    };
    let head = read_vxp(first)?;
    let mut ids = Vec::new();
    for p in &paths {
        let g = read_vxp(p)?;
        if (g.resolution, g.n_parts, &g.category) != (head.resolution, head.n_parts, &head.category) {
            bail!(
                "{} does not match {} in resolution, part count or category",
                p.display(),
                first.display()
            );
        }
        ids.push(g.item_id);
    }
    let m = split_dataset(&head.category, head.n_parts, head.resolution, &ids, ratio, seed)?;
    m.write(&out.unwrap_or_else(|| data.join("manifest.txt")))?;
    println!(
        "{} train / {} test",
        m.ids(Split::Train).len(),
        m.ids(Split::Test).len()
    );
    Ok(())
}

/// The config to use and the raw checkpoint, if any. A checkpoint carries its
/// own config; `--config` may replace it as long as the model is unchanged.
fn resolve(c: &Common) -> Result<(TrainConfig, Option<Vec<u8>>)> {
    let file = c.config.as_ref().map(|p| TrainConfig::read(p)).transpose()?;
    let ck = c
        .checkpoint
        .as_ref()
        .map(|p| std::fs::read(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let mut cfg = match (file, &ck) {
        (Some(cfg), _) => cfg,
        (None, Some(bytes)) => match checkpoint_dtype(bytes)? {
            DType::F32 => Checkpoint::<f32>::from_bytes(bytes)?.config,
            DType::F64 => Checkpoint::<f64>::from_bytes(bytes)?.config,
        },
        (None, None) => bail!("give --config, --checkpoint or both"),
    };
    if let Some(d) = &c.data {
        cfg.data_dir = Some(d.clone());
    }
    Ok((cfg, ck))
}

fn load_split(cfg: &TrainConfig, split: Split) -> Result<Dataset> {
    let Some(dir) = &cfg.data_dir else {
        bail!("no data directory: set data_dir in the config or pass --data")
    };
    let mpath = cfg.manifest_path().expect("data_dir is set");
    let manifest = DatasetManifest::read(&mpath)?;
    Ok(Dataset::load(dir, &manifest, split)?)
}

fn train<T: Scalar>(
    stage: u8,
    cfg: TrainConfig,
    ck: Option<Vec<u8>>,
    common: &Common,
    until: Option<usize>,
    out: &Path,
    log: Option<&Path>,
) -> Result<()> {
    let mut trainer = match ck {
        Some(bytes) => {
            let mut ck = Checkpoint::<T>::from_bytes(&bytes)?;
            if cfg.model != ck.config.model {
                bail!("--config describes a different model than the checkpoint");
            }
            if common.seed.is_some() {
                bail!("--seed only applies to a fresh run; a checkpoint carries its generator state");
            }
            ck.config = cfg;
            Trainer::from_checkpoint(ck)?
        }
        None => {
            let mut cfg = cfg;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            Trainer::<T>::new(cfg)?
        }
    };
    let train_set = load_split(&trainer.config, Split::Train)?;
    let test_set = load_split(&trainer.config, Split::Test)?;
    let mut sink: Box<dyn Write> = match log {
        Some(p) => {
            let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening {}", p.display()))?;
            let mut w = BufWriter::new(f);
            if fresh {
                writeln!(w, "{LOG_HEADER}")?;
            }
            Box::new(w)
        }
        None => Box::new(std::io::sink()),
    };
    let records = trainer.train(stage, &train_set, &test_set, until, &mut sink)?;
    sink.flush()?;
    trainer.checkpoint().save(out)?;
    if let Some(last) = records.last() {
        println!(
            "stage {stage} epoch {}: total loss {:.6}",
            last.losses.epoch, last.losses.total
        );
    }
    println!("checkpoint: {}", out.display());
    Ok(())
}

fn inspect<T: Scalar>(cmd: Cmd, bytes: &[u8]) -> Result<()> {
    let ck = Checkpoint::<T>::from_bytes(bytes)?;
    match cmd {
        Cmd::Eval {
            common,
            split,
            gt_transforms,
            set_metrics,
            out,
        } => {
            let (cfg, _) = resolve(&common)?;
            let trainer = Trainer::from_checkpoint(ck)?;
            let data = load_split(&cfg, split)?;
            let set = set_metrics.then(|| SetMetricOptions {
                seed: common.seed.unwrap_or(0),
                ..Default::default()
            });
            let report = evaluate(&trainer.model, &data, cfg.batch_size, gt_transforms, set)?;
            println!("{}", report.table(cfg.category.part_names()));
            if let Some(p) = out {
                append_report(&p, &report, cfg.model.n_parts)?;
            }
        }
        Cmd::Recon {
            common,
            shape,
            items,
            split,
        } => {
            let (cfg, _) = resolve(&common)?;
            let trainer = Trainer::from_checkpoint(ck)?;
            let data = load_split(&cfg, split)?;
            let idx: Vec<usize> = if items.is_empty() {
                (0..data.len()).collect()
            } else {
                items.iter().map(|id| data.position(id)).collect::<Result<_, _>>()?
            };
            let recs = reconstruct(&trainer.model, &data, &idx, cfg.batch_size, false)?;
            for (&i, rec) in idx.iter().zip(&recs) {
                let id = data.items[i].id();
                write_shape(&cfg, &shape, rec, &format!("{id}_recon"))?;
            }
        }
        Cmd::Swap {
            common,
            shape,
            a,
            b,
            part,
        } => {
            let (cfg, _) = resolve(&common)?;
            let trainer = Trainer::from_checkpoint(ck)?;
            let (data, ia, ib) = pair(&cfg, &a, &b)?;
            let (ra, rb) = swap(&trainer.model, &data, ia, ib, part)?;
            write_shape(&cfg, &shape, &ra, &format!("{a}_with_part{part}_of_{b}"))?;
            write_shape(&cfg, &shape, &rb, &format!("{b}_with_part{part}_of_{a}"))?;
        }
        Cmd::Mix { common, shape, split } => {
            let (cfg, _) = resolve(&common)?;
            let trainer = Trainer::from_checkpoint(ck)?;
            let data = load_split(&cfg, split)?;
            let seed = common.seed.unwrap_or(0);
            let donors = pick_donors(data.len(), cfg.model.n_parts, seed);
            let rec = mix(&trainer.model, &data, &donors)?;
            let names: Vec<&str> = donors.iter().map(|&d| data.items[d].id()).collect();
            println!("donors by part: {}", names.join(", "));
            write_shape(&cfg, &shape, &rec, &format!("mix_seed{seed}"))?;
        }
        Cmd::Interp {
            common,
            shape,
            a,
            b,
            steps,
        } => {
            let (cfg, _) = resolve(&common)?;
            let trainer = Trainer::from_checkpoint(ck)?;
            let (data, ia, ib) = pair(&cfg, &a, &b)?;
            for (k, rec) in interpolate(&trainer.model, &data, ia, ib, steps)?.iter().enumerate() {
                write_shape(&cfg, &shape, rec, &format!("{a}_to_{b}_{k:02}"))?;
            }
        }
        Cmd::AttnMaps { common, item, out } => {
            let (cfg, _) = resolve(&common)?;
            let trainer = Trainer::from_checkpoint(ck)?;
            let (data, i, _) = pair(&cfg, &item, &item)?;
            let maps = attention_maps(&trainer.model, &data, i)?;
            let files = export_attention_maps(&maps, &out)?;
            println!("{} files in {}", files.len(), out.display());
        }
        _ => unreachable!("dispatched in main"),
    }
    Ok(())
}

/// Both items from whichever splits hold them.
fn pair(cfg: &TrainConfig, a: &str, b: &str) -> Result<(Dataset, usize, usize)> {
    let mut data = load_split(cfg, Split::Train)?;
    data.items.extend(load_split(cfg, Split::Test)?.items);
    let (ia, ib) = (data.position(a)?, data.position(b)?);
    Ok((data, ia, ib))
}

fn write_shape(cfg: &TrainConfig, out: &ShapeOut, rec: &Recon, name: &str) -> Result<()> {
    std::fs::create_dir_all(&out.out).with_context(|| format!("creating {}", out.out.display()))?;
    let grid = labeled_from_recon(
        rec,
        cfg.model.resolution,
        cfg.model.n_parts,
        &cfg.category.to_string(),
        name,
    );
    let path = out.out.join(format!("{name}.{}", out.format.extension()));
    export_shape(&grid, &path, out.format)?;
    println!("{}", path.display());
    Ok(())
}

fn append_report(path: &Path, report: &MetricReport, n_parts: usize) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    if fresh {
        writeln!(f, "{}", MetricReport::csv_header(n_parts))?;
    }
    writeln!(f, "{}", report.csv_row())?;
    Ok(())
}
