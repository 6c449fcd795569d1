//! Times training steps on a freshly generated toy dataset.
//!
//! `cargo run --release --example step_timing -- [steps] [key=value ...]`
//! where each argument is one config line, e.g. `r1_interval=4 [net] generator_width=32`.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regionmix::data::{generate_toy_dataset, make_batch, Dataset, Split};
use regionmix::training::{TrainConfig, Trainer};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let overrides: Vec<String> = args.collect();
    let mut text = String::new();
    for o in &overrides {
        text.push_str(o);
        text.push('\n');
    }
    let config = TrainConfig::parse(&text)?;
    let dir = std::env::temp_dir().join("regionmix_step_timing");
    let manifest = generate_toy_dataset(&dir, 32, config.net.resolution, 1, 0)?;
    let data = Arc::new(Dataset::open(manifest)?);
    let pool = data.split_indices(Split::Train);
    let mut trainer = Trainer::new(data.taxonomy().clone(), config.clone())?;
    println!("parameters: {}", trainer.bundle.params.num_scalars());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..steps {
        let batch = make_batch(&data, &pool, config.batch_size, false, &mut rng)?;
        let t = Instant::now();
        let rec = trainer.step(&batch)?;
        println!("{:.2}s  {}", t.elapsed().as_secs_f64(), serde_json::to_string(&rec)?);
    }
    Ok(())
}
