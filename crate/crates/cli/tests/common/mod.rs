#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionmix::data::{generate_toy_dataset, ingest, BaseToMeta, Dataset, IngestOptions};
use regionmix::nn::{NetConfig, NetworkBundle};
use regionmix::taxonomy::RegionTaxonomy;
use regionmix_cli::engine::{Engine, Snapshot};
use regionmix_cli::service::AppState;
use regionmix_cli::store::ResultStore;

pub fn tiny_net(regions: usize) -> NetConfig {
    NetConfig {
        regions,
        resolution: 16,
        style_dim: 4,
        code_channels: 4,
        code_size: 4,
        encoder_width: 2,
        decoder_width: 4,
        style_width: 2,
        modulation_hidden: 4,
        generator_width: 4,
        generator_base: 4,
        disc_width: 2,
        disc_depth: 2,
    }
}

/// A 12-sample toy dataset (4 held out) and an untrained checkpoint.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub checkpoint: PathBuf,
}

pub fn toy_fixture() -> Fixture {
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("data");
    generate_toy_dataset(&data, 12, 16, 5, 4).unwrap();
    let checkpoint = dir.path().join("toy.rmx");
    NetworkBundle::new(RegionTaxonomy::toy(), tiny_net(5), 3).unwrap().save(&checkpoint).unwrap();
    Fixture { dir, data, checkpoint }
}

/// Six face-taxonomy sources, each containing every region in a shifted
/// diagonal layout.
pub fn face_fixture() -> Fixture {
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("faces");
    std::fs::create_dir_all(data.join("images")).unwrap();
    std::fs::create_dir_all(data.join("masks")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for k in 0..6u32 {
        let id = format!("face{k}");
        image::GrayImage::from_fn(16, 16, |x, y| image::Luma([((x + y * 3 + k * 5) % 16) as u8]))
            .save(data.join(format!("masks/{id}.png")))
            .unwrap();
        let c = [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
        image::RgbImage::from_fn(16, 16, |x, _| image::Rgb([c[0], c[1].wrapping_add(x as u8 * 9), c[2]]))
            .save(data.join(format!("images/{id}.png")))
            .unwrap();
    }
    let tax = RegionTaxonomy::face();
    ingest(&data, &tax, &BaseToMeta::identity(&tax), &IngestOptions::default()).unwrap();
    let checkpoint = dir.path().join("face.rmx");
    NetworkBundle::new(tax, tiny_net(15), 9).unwrap().save(&checkpoint).unwrap();
    Fixture { dir, data, checkpoint }
}

pub fn state(f: &Fixture, store: &Path, capacity: usize) -> Arc<AppState> {
    let engine = Engine::new(
        Snapshot::load(&f.checkpoint).unwrap(),
        Arc::new(Dataset::load(&f.data).unwrap()),
    )
    .unwrap();
    Arc::new(AppState {
        engine,
        store: ResultStore::open(store, capacity).unwrap(),
    })
}
