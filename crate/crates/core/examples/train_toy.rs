//! Trains on a procedural toy dataset, generating it first if missing.
//!
//! `cargo run --release --example train_toy -- <config.toml>`
//! The config's `data` directory receives 2200 samples (200 held out).

use std::sync::Arc;

use regionmix::data::{generate_toy_dataset, Dataset, DatasetManifest, MANIFEST_FILE};
use regionmix::training::{train, TrainConfig, Trainer, CHECKPOINT_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).ok_or("usage: train_toy <config.toml>")?;
    let config = TrainConfig::load(path.as_ref())?;
    let manifest = if config.data.join(MANIFEST_FILE).exists() {
        DatasetManifest::load(&config.data)?
    } else {
        generate_toy_dataset(&config.data, 2200, config.net.resolution, config.seed, 200)?
    };
    let data = Arc::new(Dataset::open(manifest)?);
    let ckpt = config.out_dir.join(CHECKPOINT_FILE);
    let trainer = if ckpt.exists() {
        Trainer::resume(&ckpt, config.clone())?
    } else {
        Trainer::new(data.taxonomy().clone(), config.clone())?
    };
    let summary = train(trainer, data, |r| {
        if r.step % 50 == 0 {
            println!("{}", serde_json::to_string(r).unwrap_or_default());
        }
    })?;
    println!("finished at step {} (stopped early: {})", summary.steps, summary.stopped_early);
    Ok(())
}
