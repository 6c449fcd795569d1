//! Training batches: sampled sources, their known specs and one random
//! composition per batch slot.

use std::collections::BTreeSet;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::Dataset;
use crate::composition::{make_known_spec, sample_random_spec, CompositionSpec};
use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::mask::{SemanticMask, SourceId};

#[derive(Clone, Debug)]
pub struct Batch {
    pub images: Vec<RgbImage>,
    /// Masks carry batch-unique source ids (see [`Batch::source_ids`]).
    pub masks: Vec<SemanticMask>,
    /// Dataset id of every slot.
    pub sample_ids: Vec<SourceId>,
    pub known: Vec<CompositionSpec>,
    pub random: Vec<CompositionSpec>,
    /// `random_sources[j][i]` is the batch slot whose region `i` feeds random
    /// composition `j`.
    pub random_sources: Vec<Vec<Option<usize>>>,
    /// Fewer than two distinct dataset samples: random terms are meaningless.
    pub uniform: bool,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn source_ids(&self) -> Vec<SourceId> {
        self.masks.iter().map(|m| m.source_id().clone()).collect()
    }

    /// Assembles a batch from explicit slots.
    pub fn from_slots<R: Rng + ?Sized>(
        dataset: &Dataset,
        slots: &[usize],
        flips: &[bool],
        rng: &mut R,
    ) -> Result<Self> {
        if slots.len() < 2 {
            return Err(Error::Argument(format!("batch size {} < 2", slots.len())));
        }
        let tax = dataset.taxonomy();
        let mut images = Vec::with_capacity(slots.len());
        let mut masks = Vec::with_capacity(slots.len());
        let mut sample_ids = Vec::with_capacity(slots.len());
        let mut used = BTreeSet::new();
        for (k, &s) in slots.iter().enumerate() {
            let sample = dataset
                .samples
                .get(s)
                .ok_or_else(|| Error::Argument(format!("sample index {s} outside the dataset")))?;
            let flip = flips.get(k).copied().unwrap_or(false);
            let (img, mask) = if flip {
                (sample.image.flip_horizontal(), sample.mask.flip_horizontal(tax))
            } else {
                (sample.image.clone(), sample.mask.clone())
            };
            // repeated samples need distinct ids to keep specs resolvable
            let mut id = sample.id.0.clone();
            if !used.insert(id.clone()) {
                id = format!("{id}#{k}");
                used.insert(id.clone());
            }
            images.push(img);
            masks.push(mask.with_source_id(id));
            sample_ids.push(sample.id.clone());
        }
        let uniform = sample_ids.iter().collect::<BTreeSet<_>>().len() < 2;
        let known = masks.iter().map(|m| make_known_spec(m, tax)).collect();
        let ids: Vec<SourceId> = masks.iter().map(|m| m.source_id().clone()).collect();
        let mut random = Vec::with_capacity(slots.len());
        let mut random_sources = Vec::with_capacity(slots.len());
        for _ in 0..slots.len() {
            let spec = sample_random_spec(&masks, tax, rng)?;
            random_sources.push(spec.resolve(&ids)?);
            random.push(spec);
        }
        Ok(Self {
            images,
            masks,
            sample_ids,
            known,
            random,
            random_sources,
            uniform,
        })
    }
}

/// Draws `omega` distinct samples from `pool` (with replacement only when the
/// pool is smaller), flips each with probability ½ when `flip` is set.
pub fn make_batch<R: Rng + ?Sized>(
    dataset: &Dataset,
    pool: &[usize],
    omega: usize,
    flip: bool,
    rng: &mut R,
) -> Result<Batch> {
    if omega < 2 {
        return Err(Error::Argument(format!("batch size {omega} < 2")));
    }
    if pool.is_empty() {
        return Err(Error::Argument("cannot draw a batch from an empty split".into()));
    }
    let slots: Vec<usize> = if pool.len() >= omega {
        index::sample(rng, pool.len(), omega).into_iter().map(|k| pool[k]).collect()
    } else {
        (0..omega).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
    };
    let flips: Vec<bool> = (0..omega).map(|_| flip && rng.gen_bool(0.5)).collect();
    Batch::from_slots(dataset, &slots, &flips, rng)
}

/// Produces batches on a worker thread through a bounded queue. The
/// sequence is a pure function of the seed.
pub struct BatchStream {
    rx: Receiver<Result<Batch>>,
    worker: Option<JoinHandle<()>>,
}

impl BatchStream {
    pub fn spawn(dataset: Arc<Dataset>, pool: Vec<usize>, omega: usize, flip: bool, seed: u64, capacity: usize) -> Self {
        let (tx, rx) = sync_channel(capacity.max(1));
        let worker = std::thread::spawn(move || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            loop {
                let b = make_batch(&dataset, &pool, omega, flip, &mut rng);
                let failed = b.is_err();
                if tx.send(b).is_err() || failed {
                    break;
                }
            }
        });
        Self {
            rx,
            worker: Some(worker),
        }
    }

    pub fn next_batch(&self) -> Result<Batch> {
        self.rx
            .recv()
            .map_err(|_| Error::Argument("batch producer stopped".into()))?
    }
}

impl Drop for BatchStream {
    fn drop(&mut self) {
        // unblock the producer, then reap it
        let (_, dead) = sync_channel(0);
        let rx = std::mem::replace(&mut self.rx, dead);
        drop(rx);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}
