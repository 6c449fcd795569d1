//! Packs a finished toy training run into a small directory: weights
//! without optimizer state, `run.json` and a thinned loss log.
//!
//! `cargo run --release --example export_run -- <config.toml> <dest>`

use std::io::{BufRead, BufReader, Write};

use regionmix::data::DatasetManifest;
use regionmix::nn::Checkpoint;
use regionmix::training::{StepRecord, TrainConfig, CHECKPOINT_FILE, LOG_FILE};

const LOG_STRIDE: u64 = 50;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(config), Some(dest)) = (args.next(), args.next()) else {
        return Err("usage: export_run <config.toml> <dest>".into());
    };
    let config = TrainConfig::load(config.as_ref())?;
    let dest = std::path::PathBuf::from(dest);
    std::fs::create_dir_all(&dest)?;

    let (bundle, _) = Checkpoint::load(&config.out_dir.join(CHECKPOINT_FILE))?.into_bundle()?;
    bundle.save(&dest.join("model.rmx"))?;

    let mut records = Vec::new();
    for line in BufReader::new(std::fs::File::open(config.out_dir.join(LOG_FILE))?).lines() {
        let r: StepRecord = serde_json::from_str(&line?)?;
        // a resumed run may repeat steps after the last checkpoint
        records.retain(|p: &StepRecord| p.step < r.step);
        records.push(r);
    }
    records.retain(|r| r.step <= bundle.step);
    let wall_secs: f64 = records.iter().map(|r| r.wall_ms).sum::<f64>() / 1000.0;
    let mut log = std::fs::File::create(dest.join("train_log.jsonl"))?;
    for r in records.iter().filter(|r| r.step % LOG_STRIDE == 0) {
        writeln!(log, "{}", serde_json::to_string(r)?)?;
    }

    let manifest = DatasetManifest::load(&config.data)?;
    let run = serde_json::json!({
        "samples": manifest.samples.len(),
        "test": manifest.splits.test.len(),
        "resolution": manifest.resolution,
        "seed": config.seed,
        "batch_size": config.batch_size,
        "steps": bundle.step,
        "train_wall_secs": wall_secs,
        "log_stride": LOG_STRIDE,
    });
    std::fs::write(dest.join("run.json"), serde_json::to_string_pretty(&run)? + "\n")?;
    let mut portable = config.clone();
    portable.data = "runs/toy/data".into();
    portable.out_dir = "runs/toy/out".into();
    std::fs::write(dest.join("config.toml"), portable.to_toml())?;
    println!("exported step {} ({:.2} h of training) to {}", bundle.step, wall_secs / 3600.0, dest.display());
    Ok(())
}
