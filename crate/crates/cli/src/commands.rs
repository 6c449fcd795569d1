//! Command-line interface.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use regionmix::data::{generate_toy_dataset, ingest, BaseToMeta, Dataset, DatasetManifest, IngestOptions, Split};
use regionmix::image::RgbImage;
use regionmix::mask::SemanticMask;
use regionmix::metrics::{evaluate, EvalPair, FeatureExtractor, RandomProjectionCnn};
use regionmix::taxonomy::RegionTaxonomy;
use regionmix::training::{train, TrainConfig, Trainer, CHECKPOINT_FILE};
use serde::Serialize;

use crate::engine::{Engine, Snapshot, SynthesisRequest};
use crate::eval::{evaluate_known, evaluate_random, KnownEval, RandomEval};
use crate::service::{router, AppState};
use crate::store::{write_result_files, ResultRecord, ResultStore};

#[derive(Debug, Parser)]
#[command(name = "regionmix", version, about = "Multi-source semantic image synthesis")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the networks from a TOML config.
    Train(TrainArgs),
    /// Score predictions against references, or a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Render one composition from a JSON spec file.
    Synthesize(SynthesizeArgs),
    /// Dataset preparation.
    #[command(subcommand)]
    Data(DataCommand),
    /// Start the HTTP synthesis service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (TOML).
    #[arg(long, env = "REGIONMIX_CONFIG")]
    pub config: PathBuf,
    /// Continue from `<out_dir>/checkpoint.rmx` when it exists.
    #[arg(long)]
    pub resume: bool,
    /// Override `max_steps`.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Print a progress line every N steps (0 = never).
    #[arg(long, default_value_t = 100)]
    pub log_every: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of predicted PNGs (compared by file name with --target-dir).
    #[arg(long, requires = "target_dir", conflicts_with = "checkpoint")]
    pub pred_dir: Option<PathBuf>,
    #[arg(long)]
    pub target_dir: Option<PathBuf>,
    /// Optional label masks of the references, same file names, for per-region scores.
    #[arg(long)]
    pub masks_dir: Option<PathBuf>,
    /// Taxonomy of --masks-dir: a built-in name or a taxonomy file.
    #[arg(long, default_value = "toy")]
    pub taxonomy: String,
    #[arg(long, env = "REGIONMIX_CHECKPOINT", requires = "data")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory or manifest.
    #[arg(long, env = "REGIONMIX_DATA")]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Evaluate at most this many samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Random-composition batches to evaluate (checkpoint mode).
    #[arg(long, default_value_t = 0)]
    pub random_batches: usize,
    #[arg(long, default_value_t = 8)]
    pub omega: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also compute the FID-like score with the random-projection CNN.
    #[arg(long)]
    pub fid: bool,
    /// Report path (JSON); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long, env = "REGIONMIX_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "REGIONMIX_DATA")]
    pub data: PathBuf,
    /// JSON file: `{"assignments": {"<region>": "<source id>", ...}}`.
    #[arg(long)]
    pub spec: PathBuf,
    /// Output directory for image.png, mask.png, fuzzy.json and result.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DataCommand {
    /// Normalize a raw dataset (images/ + masks/) into taxonomy labels.
    Ingest(IngestArgs),
    /// Generate the procedural toy dataset.
    Toy(ToyArgs),
    /// Check a manifest and every mask it references.
    Validate {
        #[arg(long, env = "REGIONMIX_DATA")]
        data: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub root: PathBuf,
    /// A built-in taxonomy name (toy, face, building) or a taxonomy file.
    #[arg(long)]
    pub taxonomy: String,
    /// `identity`, `celebamask-hq` or a `base = meta` label-map file.
    #[arg(long, default_value = "identity")]
    pub map: String,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2200)]
    pub n: usize,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Trailing samples held out as the test split.
    #[arg(long, default_value_t = 200)]
    pub test: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "REGIONMIX_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long, env = "REGIONMIX_DATA")]
    pub data: PathBuf,
    #[arg(long, env = "REGIONMIX_ADDR", default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Result cache directory.
    #[arg(long, default_value = "results")]
    pub store: PathBuf,
    /// Results kept before the oldest are evicted.
    #[arg(long, default_value_t = 1000)]
    pub capacity: usize,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Synthesize(a) => run_synthesize(a),
        Command::Data(DataCommand::Ingest(a)) => run_ingest(a),
        Command::Data(DataCommand::Toy(a)) => {
            let m = generate_toy_dataset(&a.out, a.n, a.resolution, a.seed, a.test)?;
            println!(
                "wrote {} toy samples ({} train, {} test) to {}",
                m.samples.len(),
                m.splits.train.len(),
                m.splits.test.len(),
                a.out.display()
            );
            Ok(())
        }
        Command::Data(DataCommand::Validate { data }) => {
            let m = DatasetManifest::load(&data).with_context(|| format!("loading {}", data.display()))?;
            let (n, tax) = (m.samples.len(), m.taxonomy.name().to_string());
            let d = Dataset::open(m)?;
            println!(
                "ok: {n} samples, taxonomy `{tax}`, {}x{}, splits train {} / val {} / test {}",
                d.manifest.resolution,
                d.manifest.resolution,
                d.manifest.splits.train.len(),
                d.manifest.splits.val.len(),
                d.manifest.splits.test.len()
            );
            Ok(())
        }
        Command::Serve(a) => run_serve(a),
    }
}

pub fn load_taxonomy(spec: &str) -> Result<RegionTaxonomy> {
    if let Some(t) = RegionTaxonomy::builtin(spec) {
        return Ok(t);
    }
    RegionTaxonomy::load(Path::new(spec)).with_context(|| format!("`{spec}` is neither a built-in taxonomy nor a taxonomy file"))
}

fn run_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config).with_context(|| format!("config {}", a.config.display()))?;
    if let Some(m) = a.max_steps {
        cfg.max_steps = m;
    }
    cfg.validate()?;
    let data = Dataset::load(&cfg.data).with_context(|| {
        format!(
            "loading dataset {} (generate one with `regionmix data toy --out {}`)",
            cfg.data.display(),
            cfg.data.display()
        )
    })?;
    let ckpt = cfg.out_dir.join(CHECKPOINT_FILE);
    let trainer = if a.resume && ckpt.exists() {
        let t = Trainer::resume(&ckpt, cfg.clone())?;
        log::info!("resuming from step {}", t.bundle.step);
        t
    } else {
        Trainer::new(data.taxonomy().clone(), cfg.clone())?
    };
    let every = a.log_every;
    let summary = train(trainer, Arc::new(data), |r| {
        if every > 0 && r.step % every == 0 {
            println!(
                "step {:>6}  d {:.3}/{:.3}  g {:.3}  rec {:.3}/{:.3}  style {:.3}  acc {:.2}/{:.2}  {:.0} ms",
                r.step,
                r.d_mask,
                r.d_image,
                r.g_total,
                r.rec_mask,
                r.rec_image,
                r.style,
                r.acc_mask,
                r.acc_image,
                r.wall_ms
            );
        }
    })?;
    println!(
        "trained to step {}{}; checkpoint {}, log {}",
        summary.steps,
        if summary.stopped_early { " (time budget reached)" } else { "" },
        summary.checkpoint.display(),
        summary.log.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct CheckpointEval {
    checkpoint: String,
    split: String,
    known: KnownEval,
    #[serde(skip_serializing_if = "Option::is_none")]
    random: Option<RandomEval>,
}

fn write_report(out: Option<&Path>, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let fx = RandomProjectionCnn::default();
    let extractor: Option<&dyn FeatureExtractor> = if a.fid { Some(&fx) } else { None };
    if let (Some(pred), Some(target)) = (&a.pred_dir, &a.target_dir) {
        let tax = load_taxonomy(&a.taxonomy)?;
        let mut names: Vec<String> = std::fs::read_dir(pred)
            .with_context(|| format!("reading {}", pred.display()))?
            .filter_map(|e| e.ok()?.file_name().into_string().ok())
            .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
            .collect();
        names.sort();
        if let Some(l) = a.limit {
            names.truncate(l);
        }
        if names.is_empty() {
            bail!("no PNG files in {}", pred.display());
        }
        let mut loaded = Vec::new();
        for n in &names {
            let p = RgbImage::load_png(&pred.join(n))?;
            let t = RgbImage::load_png(&target.join(n)).with_context(|| format!("reference for `{n}`"))?;
            let m = match &a.masks_dir {
                Some(d) => {
                    let m = SemanticMask::load_png(&d.join(n), n.as_str())?;
                    m.validate(&tax)?;
                    Some(m)
                }
                None => None,
            };
            loaded.push((n.clone(), p, t, m));
        }
        let pairs: Vec<EvalPair> = loaded
            .iter()
            .map(|(n, p, t, m)| EvalPair {
                id: n.clone(),
                pred: p,
                target: t,
                mask: m.as_ref(),
            })
            .collect();
        return write_report(a.out.as_deref(), &evaluate(&pairs, &tax, extractor)?);
    }
    let (Some(ckpt), Some(data)) = (&a.checkpoint, &a.data) else {
        bail!("eval needs either --pred-dir/--target-dir or --checkpoint/--data");
    };
    let snap = Snapshot::load(ckpt)?;
    let dataset = Dataset::load(data)?;
    let mut idx = dataset.split_indices(a.split);
    if idx.is_empty() {
        bail!("split `{:?}` of {} is empty", a.split, data.display());
    }
    let pool = idx.clone();
    if let Some(l) = a.limit {
        idx.truncate(l);
    }
    let known = evaluate_known(&snap.bundle, &dataset, &idx, extractor)?;
    let random = (a.random_batches > 0)
        .then(|| evaluate_random(&snap.bundle, &dataset, &pool, a.omega, a.random_batches, a.seed))
        .transpose()?;
    write_report(
        a.out.as_deref(),
        &CheckpointEval {
            checkpoint: snap.checkpoint_id.clone(),
            split: format!("{:?}", a.split).to_lowercase(),
            known,
            random,
        },
    )
}

fn run_synthesize(a: SynthesizeArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let req: SynthesisRequest =
        serde_json::from_str(&text).with_context(|| format!("malformed spec file {}", a.spec.display()))?;
    let engine = Engine::new(Snapshot::load(&a.checkpoint)?, Arc::new(Dataset::load(&a.data)?))?;
    let spec = engine.spec_from_assignments(&req.assignments)?;
    let rendered = engine.render(spec)?;
    let record = ResultRecord::new(&rendered, engine.taxonomy(), None);
    // outputs appear only after everything has been rendered and written
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let tmp = tempfile::Builder::new().prefix(".tmp-").tempdir_in(&a.out)?;
    write_result_files(tmp.path(), &rendered, &record)?;
    for e in std::fs::read_dir(tmp.path())? {
        let e = e?;
        std::fs::rename(e.path(), a.out.join(e.file_name()))?;
    }
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(())
}

fn run_ingest(a: IngestArgs) -> Result<()> {
    let tax = load_taxonomy(&a.taxonomy)?;
    let map = match a.map.as_str() {
        "identity" => BaseToMeta::identity(&tax),
        "celebamask-hq" => BaseToMeta::celebamask_hq(),
        path => BaseToMeta::load(Path::new(path))?,
    };
    let opts = IngestOptions {
        resolution: a.resolution,
        test_fraction: a.test_fraction,
        val_fraction: a.val_fraction,
    };
    let m = ingest(&a.root, &tax, &map, &opts)?;
    let mut per_split = BTreeMap::new();
    per_split.insert("train", m.splits.train.len());
    per_split.insert("val", m.splits.val.len());
    per_split.insert("test", m.splits.test.len());
    println!("ingested {} samples into {} {per_split:?}", m.samples.len(), m.path().display());
    Ok(())
}

fn run_serve(a: ServeArgs) -> Result<()> {
    let snap = Snapshot::load(&a.checkpoint)?;
    log::info!("loaded checkpoint {} ({})", a.checkpoint.display(), snap.checkpoint_id);
    let engine = Engine::new(snap, Arc::new(Dataset::load(&a.data)?))?;
    let store = ResultStore::open(&a.store, a.capacity)?;
    let state = Arc::new(AppState { engine, store });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.addr)
            .await
            .with_context(|| format!("binding {}", a.addr))?;
        println!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
