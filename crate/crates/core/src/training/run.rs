//! The training loop: batches from a background producer, one
//! [`Trainer::step`] each, a JSON line per step and periodic checkpoints.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use super::config::TrainConfig;
use super::step::{StepRecord, Trainer};
use crate::data::{BatchStream, Dataset, Split};
use crate::error::{io_err, Error, Result};
use crate::nn::Checkpoint;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.rmx";

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub steps: u64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub last: Option<StepRecord>,
    pub stopped_early: bool,
}

impl Trainer {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        Checkpoint::from_bundle(&self.bundle, &self.optimizer_arrays()).save(path)
    }

    /// Resumes from a checkpoint written by [`Trainer::save_checkpoint`].
    pub fn resume(path: &Path, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let (bundle, extras) = Checkpoint::load(path)?.into_bundle()?;
        if bundle.config() != &config.net {
            return Err(Error::Checkpoint(format!(
                "{}: architecture differs from the training config",
                path.display()
            )));
        }
        let mut t = Self {
            bundle,
            config,
            opt_g: Default::default(),
            opt_d: Default::default(),
        };
        t.restore_optimizers(&extras);
        Ok(t)
    }
}

/// Trains on the training split of `dataset`, appending to
/// `<out_dir>/train_log.jsonl` and writing `<out_dir>/checkpoint.rmx`.
/// `on_step` sees every record (for progress output).
pub fn train(
    mut trainer: Trainer,
    dataset: Arc<Dataset>,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<RunSummary> {
    let cfg = trainer.config.clone();
    if dataset.taxonomy() != &trainer.bundle.taxonomy {
        return Err(Error::Config(format!(
            "dataset taxonomy `{}` differs from the networks' `{}`",
            dataset.taxonomy().name(),
            trainer.bundle.taxonomy.name()
        )));
    }
    if dataset.manifest.resolution != cfg.net.resolution {
        return Err(Error::Config(format!(
            "dataset resolution {} differs from net.resolution {}",
            dataset.manifest.resolution, cfg.net.resolution
        )));
    }
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let log_path = cfg.out_dir.join(LOG_FILE);
    let ckpt_path = cfg.out_dir.join(CHECKPOINT_FILE);
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;

    let pool = dataset.split_indices(Split::Train);
    // the stream is re-seeded on resume so batches continue deterministically
    let stream = BatchStream::spawn(
        dataset,
        pool,
        cfg.batch_size,
        cfg.flip,
        cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ trainer.bundle.step,
        cfg.prefetch,
    );
    let started = Instant::now();
    let mut last = None;
    let mut stopped_early = false;
    while trainer.bundle.step < cfg.max_steps {
        if cfg.time_budget_secs.is_some_and(|b| started.elapsed().as_secs() >= b) {
            stopped_early = true;
            break;
        }
        let batch = stream.next_batch()?;
        let rec = trainer.step(&batch)?;
        let line = serde_json::to_string(&rec)?;
        writeln!(log, "{line}").map_err(io_err(&log_path))?;
        on_step(&rec);
        if rec.step % cfg.checkpoint_interval == 0 {
            trainer.save_checkpoint(&ckpt_path)?;
        }
        last = Some(rec);
    }
    log.flush().map_err(io_err(&log_path))?;
    trainer.save_checkpoint(&ckpt_path)?;
    Ok(RunSummary {
        steps: trainer.bundle.step,
        checkpoint: ckpt_path,
        log: log_path,
        last,
        stopped_early,
    })
}
