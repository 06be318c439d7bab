//! Full training run with a CSV loss log and periodic checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use lffd_core::augment::Sample;
use lffd_core::train::{Executor, StepStats, Trainer};

use crate::model_io::save_model;
use crate::{Error, Result};

pub const LOSS_LOG_HEADER: &str = "iter,lr,cls_loss,reg_loss,total";
pub const MODEL_FILE: &str = "model.lffd";
pub const LOSS_LOG_FILE: &str = "loss.csv";

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub out_dir: PathBuf,
    pub log_every: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: u64,
}

/// One loss-log row: means over the iterations since the previous row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    /// Iterations completed.
    pub iter: u64,
    pub lr: f64,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.iter, self.lr, self.cls_loss, self.reg_loss, self.total)
    }

    pub fn parse_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return None;
        }
        Some(Self {
            iter: f[0].parse().ok()?,
            lr: f[1].parse().ok()?,
            cls_loss: f[2].parse().ok()?,
            reg_loss: f[3].parse().ok()?,
            total: f[4].parse().ok()?,
        })
    }
}

#[derive(Debug, Default)]
struct Window {
    n: u64,
    cls: f64,
    reg: f64,
}

impl Window {
    fn push(&mut self, s: &StepStats) {
        self.n += 1;
        self.cls += s.cls_loss as f64;
        self.reg += s.reg_loss as f64;
    }

    fn flush(&mut self, iter: u64, lr: f64) -> LogRow {
        let n = self.n.max(1) as f64;
        let row = LogRow {
            iter,
            lr,
            cls_loss: self.cls / n,
            reg_loss: self.reg / n,
            total: (self.cls + self.reg) / n,
        };
        *self = Window::default();
        row
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub rows: Vec<LogRow>,
}

pub fn checkpoint_path(dir: &Path, iter: u64) -> PathBuf {
    dir.join(format!("checkpoint_{iter:07}.lffd"))
}

/// Runs iterations `0..total_iters` of `trainer`, logging and checkpointing
/// into `opts.out_dir`. `on_row` sees each log row as it is written.
pub fn train_loop<E: Executor>(
    trainer: &mut Trainer,
    dataset: &[Sample],
    opts: &LoopOptions,
    exec: &E,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainSummary> {
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let log_path = opts.out_dir.join(LOSS_LOG_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let io = |e| Error::io(&log_path, e);
    writeln!(log, "{LOSS_LOG_HEADER}").map_err(io)?;

    let total = trainer.train.total_iters;
    let log_every = opts.log_every.max(1);
    let mut window = Window::default();
    let mut rows = Vec::new();
    for iter in 0..total {
        let stats = trainer.step(iter, dataset, exec)?;
        window.push(&stats);
        let done = iter + 1;
        if done % log_every == 0 || done == total {
            let row = window.flush(done, stats.lr);
            writeln!(log, "{}", row.to_csv()).map_err(io)?;
            log.flush().map_err(io)?;
            on_row(&row);
            rows.push(row);
        }
        if opts.checkpoint_every > 0 && done % opts.checkpoint_every == 0 && done != total {
            save_model(&checkpoint_path(&opts.out_dir, done), &trainer.net, &trainer.weights)?;
        }
    }
    let model_path = opts.out_dir.join(MODEL_FILE);
    save_model(&model_path, &trainer.net, &trainer.weights)?;
    Ok(TrainSummary {
        model_path,
        log_path,
        rows,
    })
}
