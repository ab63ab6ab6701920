//! Batch assembly with optional parallel workers.
//!
//! Each item's augmentation draws from a generator seeded by
//! `(seed, epoch, item index)`, so batch contents do not depend on how many
//! workers produced them.

use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::augment::{augment, normalize, AugmentConfig};
use super::image::{resize_bilinear, DecoderSet, Image, CHANNELS};
use super::manifest::DatasetManifest;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decoded, resized images of a manifest, optionally cached in memory.
pub struct ImageSource {
    manifest: DatasetManifest,
    decoders: DecoderSet,
    size: usize,
    cache: Option<Vec<OnceLock<Image>>>,
}

impl ImageSource {
    pub fn new(manifest: DatasetManifest, size: usize, cache: bool) -> Self {
        Self::with_decoders(manifest, size, cache, DecoderSet::default())
    }

    pub fn with_decoders(manifest: DatasetManifest, size: usize, cache: bool, decoders: DecoderSet) -> Self {
        let cache = cache.then(|| (0..manifest.len()).map(|_| OnceLock::new()).collect());
        Self {
            manifest,
            decoders,
            size,
            cache,
        }
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn decode(&self, index: usize) -> Result<Image> {
        let img = self.decoders.decode_file(&self.manifest.absolute_path(index))?;
        resize_bilinear(&img, self.size)
    }

    /// Resized image in `[0, 1]` before augmentation and normalization.
    pub fn image(&self, index: usize) -> Result<Image> {
        if index >= self.manifest.len() {
            return Err(Error::invalid(format!(
                "item {index} outside manifest of {}",
                self.manifest.len()
            )));
        }
        match &self.cache {
            Some(cache) => {
                if let Some(img) = cache[index].get() {
                    return Ok(img.clone());
                }
                let img = self.decode(index)?;
                Ok(cache[index].get_or_init(|| img).clone())
            }
            None => self.decode(index),
        }
    }

    pub fn label(&self, index: usize) -> f32 {
        self.manifest.entries[index].label.index() as f32
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of the augmentation generator for one item in one epoch.
pub fn item_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(epoch as u64 ^ splitmix64(index as u64)))
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 3, S, S]`, normalized.
    pub images: Tensor<f32>,
    /// `[N]`, 0 normal and 1 diabetic.
    pub labels: Tensor<f32>,
    pub indices: Vec<usize>,
}

/// Iterates a subset of a source in batches.
pub struct Loader<'a> {
    source: &'a ImageSource,
    indices: Vec<usize>,
    batch_size: usize,
    augment: Option<AugmentConfig>,
    shuffle: bool,
    seed: u64,
    workers: usize,
}

impl<'a> Loader<'a> {
    /// Deterministic loader: fixed order, no augmentation.
    pub fn eval(source: &'a ImageSource, indices: &[usize], batch_size: usize) -> Result<Self> {
        Self::new(source, indices, batch_size, None, false, 0, 1)
    }

    pub fn new(
        source: &'a ImageSource,
        indices: &[usize],
        batch_size: usize,
        augment: Option<AugmentConfig>,
        shuffle: bool,
        seed: u64,
        workers: usize,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= source.manifest.len()) {
            return Err(Error::invalid(format!(
                "item {bad} outside manifest of {}",
                source.manifest.len()
            )));
        }
        Ok(Self {
            source,
            indices: indices.to_vec(),
            batch_size,
            augment: augment.filter(|a| a.enabled),
            shuffle,
            seed,
            workers: workers.max(1),
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_batches(&self) -> usize {
        self.indices.len().div_ceil(self.batch_size)
    }

    /// Item order for an epoch: shuffled with `seed ⊕ epoch` when enabled.
    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let mut order = self.indices.clone();
        if self.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ epoch as u64));
        }
        order
    }

    /// Normalized pixels of one item as delivered in `epoch`.
    pub fn item(&self, index: usize, epoch: usize) -> Result<Vec<f32>> {
        let img = self.source.image(index)?;
        let img = match &self.augment {
            Some(cfg) => augment(&img, cfg, &mut ChaCha8Rng::seed_from_u64(item_seed(self.seed, epoch, index))),
            None => img,
        };
        Ok(normalize(&img))
    }

    fn assemble(&self, items: &[usize], epoch: usize) -> Result<Batch> {
        let per_item = CHANNELS * self.source.size * self.source.size;
        let mut pixels = vec![0.0f32; items.len() * per_item];
        if self.workers == 1 || items.len() == 1 {
            for (slot, &i) in pixels.chunks_mut(per_item).zip(items) {
                slot.copy_from_slice(&self.item(i, epoch)?);
            }
        } else {
            let chunk = items.len().div_ceil(self.workers);
            std::thread::scope(|scope| -> Result<()> {
                let handles: Vec<_> = pixels
                    .chunks_mut(chunk * per_item)
                    .zip(items.chunks(chunk))
                    .map(|(out, ids)| {
                        scope.spawn(move || -> Result<()> {
                            for (slot, &i) in out.chunks_mut(per_item).zip(ids) {
                                slot.copy_from_slice(&self.item(i, epoch)?);
                            }
                            Ok(())
                        })
                    })
                    .collect();
                for h in handles {
                    h.join().map_err(|_| Error::invalid("data worker panicked"))??;
                }
                Ok(())
            })?;
        }
        let s = self.source.size;
        Ok(Batch {
            images: Tensor::from_vec(&[items.len(), CHANNELS, s, s], pixels)?,
            labels: Tensor::from_vec(&[items.len()], items.iter().map(|&i| self.source.label(i)).collect())?,
            indices: items.to_vec(),
        })
    }

    /// Batches of one epoch, produced lazily.
    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Result<Batch>> + '_ {
        let order = self.order(epoch);
        let batch_size = self.batch_size;
        (0..self.num_batches()).map(move |b| {
            let end = ((b + 1) * batch_size).min(order.len());
            self.assemble(&order[b * batch_size..end], epoch)
        })
    }
}
