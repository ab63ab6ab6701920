//! Inference latency and model footprint measurement.
//!
//! Input batches are materialized before the clock starts and only the
//! forward pass is timed, with a monotonic clock. Measurements are serialized
//! process-wide so that no two timed regions overlap.

use std::cell::Cell;
use std::hint::black_box;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{count_parameters, serialized_size, FusionModel, FusionSpec};
use crate::nn::{Family, ScalePreset};
use crate::tensor::{live_bytes, peak_bytes, reset_peak_bytes, Tensor};

mod report;

pub use report::latency_svg;

pub const DEFAULT_BATCH_SIZES: [usize; 4] = [1, 10, 100, 1000];
pub const DEFAULT_REPEATS: usize = 3;
pub const DEFAULT_WARMUP_ITERS: usize = 10;

/// A model that can be timed.
pub trait Infer {
    fn input_size(&self) -> usize;
    /// Eval-mode forward pass over `[N, 3, S, S]`.
    fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Infer for FusionModel<f32> {
    fn input_size(&self) -> usize {
        FusionModel::input_size(self)
    }

    fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.logits(x)
    }
}

/// Wraps a model and counts its forward calls.
pub struct Counting<'a, M: Infer + ?Sized> {
    inner: &'a M,
    calls: Cell<usize>,
}

impl<'a, M: Infer + ?Sized> Counting<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        Self {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }
}

impl<M: Infer + ?Sized> Infer for Counting<'_, M> {
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }

    fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.calls.set(self.calls.get() + 1);
        self.inner.infer(x)
    }
}

fn default_batch_sizes() -> Vec<usize> {
    DEFAULT_BATCH_SIZES.to_vec()
}
fn default_repeats() -> usize {
    DEFAULT_REPEATS
}
fn default_warmup() -> usize {
    DEFAULT_WARMUP_ITERS
}
fn default_scale() -> ScalePreset {
    ScalePreset::Desk
}

/// Benchmark settings.
///
/// `models` holds labels such as `Res` or `Eff+Den`, built at `scale`; when
/// empty the run's own model is measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    #[serde(default = "default_batch_sizes")]
    pub batch_sizes: Vec<usize>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_warmup")]
    pub warmup_iters: usize,
    /// Cells whose estimated working set exceeds this are skipped.
    #[serde(default)]
    pub memory_budget_mb: Option<f64>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_scale")]
    pub scale: ScalePreset,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_sizes: default_batch_sizes(),
            repeats: default_repeats(),
            warmup_iters: default_warmup(),
            memory_budget_mb: None,
            models: Vec::new(),
            scale: default_scale(),
        }
    }
}

impl BenchConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            problems.push("bench.batch_sizes must be non-empty and positive".into());
        }
        if self.repeats == 0 {
            problems.push("bench.repeats must be >= 1".into());
        }
        if self.warmup_iters == 0 {
            problems.push("bench.warmup_iters must be >= 1".into());
        }
        if let Some(mb) = self.memory_budget_mb {
            if !(mb > 0.0 && mb.is_finite()) {
                problems.push(format!("bench.memory_budget_mb {mb} must be positive"));
            }
        }
        for label in &self.models {
            if let Err(e) = parse_model_label(label) {
                problems.push(format!("bench.models: {e}"));
            }
        }
        problems
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Model specs named by `models` at `scale`.
    pub fn model_specs(&self) -> Result<Vec<FusionSpec>> {
        self.models
            .iter()
            .map(|label| Ok(FusionSpec::preset(&parse_model_label(label)?, self.scale)))
            .collect()
    }
}

/// Families of a label such as `Eff+Den` or `residual+dense`.
pub fn parse_model_label(label: &str) -> Result<Vec<Family>> {
    let families = label
        .split('+')
        .map(|part| part.trim().parse())
        .collect::<Result<Vec<Family>>>()?;
    if !(1..=3).contains(&families.len()) {
        return Err(Error::invalid(format!("model label {label:?} must name 1 to 3 backbones")));
    }
    Ok(families)
}

/// CPU model, thread count and platform of this machine.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|info| {
            info.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split_once(':'))
                .map(|(_, v)| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{cpu}; {threads} logical cpus; {}-{}; single-threaded f32 inference",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

static MEASUREMENT: Mutex<()> = Mutex::new(());

fn exclusive() -> MutexGuard<'static, ()> {
    MEASUREMENT.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

/// Deterministic pseudo-image batch `[n, 3, size, size]` in normalized range.
pub fn synthetic_batch(n: usize, size: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f32> = (0..n * 3 * size * size).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(&[n, 3, size, size], data).expect("shape matches data length")
}

/// Runs `iters` untimed forward passes on `sample`.
pub fn warmup(model: &dyn Infer, sample: &Tensor<f32>, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::invalid("warmup needs at least one iteration"));
    }
    for _ in 0..iters {
        black_box(model.infer(sample)?);
    }
    Ok(())
}

/// Raw and summarized timings of one batch size.
#[derive(Debug, Clone, PartialEq)]
pub struct Timing {
    /// Total seconds of each repeat, in run order.
    pub repeats: Vec<f64>,
    pub mean_total_s: f64,
    pub min_total_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellResult {
    Measured(Timing),
    Unmeasured { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyCell {
    pub batch_size: usize,
    pub result: CellResult,
}

impl LatencyCell {
    pub fn timing(&self) -> Option<&Timing> {
        match &self.result {
            CellResult::Measured(t) => Some(t),
            CellResult::Unmeasured { .. } => None,
        }
    }

    /// Mean per-image milliseconds.
    pub fn per_image_ms(&self) -> Option<f64> {
        self.timing().map(|t| t.mean_total_s * 1000.0 / self.batch_size as f64)
    }

    /// Per-image milliseconds of the fastest repeat.
    pub fn min_per_image_ms(&self) -> Option<f64> {
        self.timing().map(|t| t.min_total_s * 1000.0 / self.batch_size as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelLatency {
    pub model: String,
    pub cells: Vec<LatencyCell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub hardware: String,
    pub warmup_iters: usize,
    pub repeats: usize,
    pub models: Vec<ModelLatency>,
}

/// Times every model at every batch size. A cell whose estimated working set
/// exceeds the memory budget is reported as unmeasured.
pub fn time_batches(models: &[(String, &dyn Infer)], cfg: &BenchConfig, seed: u64) -> Result<LatencyReport> {
    cfg.validate()?;
    let _guard = exclusive();
    let budget = cfg.memory_budget_mb.map(|mb| mb * (1 << 20) as f64);
    let mut report = LatencyReport {
        hardware: hardware_descriptor(),
        warmup_iters: cfg.warmup_iters,
        repeats: cfg.repeats,
        models: Vec::new(),
    };
    for (name, model) in models {
        let size = model.input_size();
        let warm_n = *cfg.batch_sizes.iter().min().expect("validated non-empty");
        let sample = synthetic_batch(warm_n, size, seed);
        reset_peak_bytes();
        let base = live_bytes();
        warmup(*model, &sample, cfg.warmup_iters)?;
        let per_image_bytes = peak_bytes().saturating_sub(base) as f64 / warm_n as f64;
        drop(sample);

        let mut cells = Vec::new();
        for &bs in &cfg.batch_sizes {
            let input_bytes = (bs * 3 * size * size * std::mem::size_of::<f32>()) as f64;
            let estimate = input_bytes + per_image_bytes * bs as f64;
            if let Some(limit) = budget.filter(|&limit| estimate > limit) {
                cells.push(LatencyCell {
                    batch_size: bs,
                    result: CellResult::Unmeasured {
                        reason: format!(
                            "estimated {:.1} MB exceeds budget {:.1} MB",
                            estimate / (1 << 20) as f64,
                            limit / (1 << 20) as f64
                        ),
                    },
                });
                continue;
            }
            let batch = synthetic_batch(bs, size, seed ^ bs as u64);
            let mut repeats = Vec::with_capacity(cfg.repeats);
            for _ in 0..cfg.repeats {
                let start = Instant::now();
                let out = model.infer(&batch)?;
                let elapsed = start.elapsed().as_secs_f64();
                black_box(out);
                repeats.push(elapsed);
            }
            let mean_total_s = repeats.iter().sum::<f64>() / repeats.len() as f64;
            let min_total_s = repeats.iter().copied().fold(f64::INFINITY, f64::min);
            cells.push(LatencyCell {
                batch_size: bs,
                result: CellResult::Measured(Timing {
                    repeats,
                    mean_total_s,
                    min_total_s,
                }),
            });
        }
        report.models.push(ModelLatency {
            model: name.clone(),
            cells,
        });
    }
    Ok(report)
}

/// Parameters and checkpoint bytes of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeRow {
    pub model: String,
    pub params: usize,
    pub bytes: usize,
}

impl SizeRow {
    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }

    /// Bytes in MB of 2^20 bytes.
    pub fn megabytes(&self) -> f64 {
        self.bytes as f64 / (1u64 << 20) as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeReport {
    pub rows: Vec<SizeRow>,
}

/// Parameter counts and serialized checkpoint sizes.
pub fn size_report(models: &[(String, &FusionModel<f32>)]) -> Result<SizeReport> {
    let rows = models
        .iter()
        .map(|(name, model)| {
            Ok(SizeRow {
                model: name.clone(),
                params: count_parameters(*model),
                bytes: serialized_size(*model)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SizeReport { rows })
}
