//! Post-processing of training logs.

use super::train::LOG_HEADER;
use crate::error::{Result, VoxError};

/// Mean and population standard deviation of shape mIoU over the last
/// evaluation rows of one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeMiouSpread {
    pub stage: u8,
    /// Epochs of the rows used, oldest first.
    pub epochs: Vec<usize>,
    pub mean: f64,
    pub std: f64,
}

pub const DEFAULT_SPREAD_WINDOW: usize = 10;

/// Reads a CSV log, with or without its header line, and summarizes the
/// last `window` rows of `stage` that carry a shape mIoU.
pub fn shape_miou_spread(log: &str, stage: u8, window: usize) -> Result<ShapeMiouSpread> {
    if window == 0 {
        return Err(VoxError::Parameter("window must be positive".into()));
    }
    let mut lines = log.lines().peekable();
    let mut offset = 0;
    if lines.next_if_eq(&LOG_HEADER).is_some() {
        offset = LOG_HEADER.len() + 1;
    }
    let cols: Vec<&str> = LOG_HEADER.split(',').collect();
    let at = |name: &str| cols.iter().position(|c| *c == name).expect("log column");
    let (c_epoch, c_stage, c_shape) = (at("epoch"), at("stage"), at("shape_miou"));

    let mut rows = Vec::new();
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(VoxError::format(offset, format!("expected {} columns", cols.len())));
        }
        let bad = |what: &str| VoxError::format(offset, format!("bad {what} `{line}`"));
        let s: u8 = cells[c_stage].parse().map_err(|_| bad("stage"))?;
        if s == stage && !cells[c_shape].is_empty() {
            let epoch: usize = cells[c_epoch].parse().map_err(|_| bad("epoch"))?;
            let v: f64 = cells[c_shape].parse().map_err(|_| bad("shape mIoU"))?;
            rows.push((epoch, v));
        }
        offset += line.len() + 1;
    }
    if rows.is_empty() {
        return Err(VoxError::Precondition(format!("no evaluated rows for stage {stage}")));
    }
    let tail = &rows[rows.len().saturating_sub(window)..];
    let n = tail.len() as f64;
    let mean = tail.iter().map(|r| r.1).sum::<f64>() / n;
    let var = tail.iter().map(|r| (r.1 - mean).powi(2)).sum::<f64>() / n;
    Ok(ShapeMiouSpread {
        stage,
        epochs: tail.iter().map(|r| r.0).collect(),
        mean,
        std: var.sqrt(),
    })
}
