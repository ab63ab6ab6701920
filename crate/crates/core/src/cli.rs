//! Command-line entry point: `synth`, `split`, `train`, `eval`, `bench` and
//! `runs`.
//!
//! Exit codes: 0 on success, 1 for invalid input (arguments, config,
//! corrupt files), 2 for failures while running.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use time::macros::format_description;
use time::OffsetDateTime;

use crate::bench::{latency_svg, size_report, time_batches, Infer};
use crate::config::RunConfig;
use crate::data::{stratified_split, synth_generate, DatasetManifest, ImageSource, Split, DEFAULT_FRACTIONS, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::fusion::{load_checkpoint, FusionModel, FusionSpec, DEFAULT_THRESHOLD};
use crate::metrics::{
    aggregate_runs, bar_chart_svg, confusion_svg, confusion_tsv, evaluate, table_tsv, Metric, MetricsReport,
};
use crate::train::{fit, EventLog, FitData, FitOutputs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "retina-fusion", version, about = "Train, evaluate and benchmark fundus screening CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic two-class fundus dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Draw a stratified train/val/test split of a dataset.
    Split {
        /// Dataset directory holding the manifest.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train, val and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        fractions: Option<Vec<f64>>,
    },
    /// Train one model and keep its best checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on the test part of a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Dataset directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory; defaults to a new run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Measure inference latency and model size.
    Bench {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train and evaluate k seeded runs and aggregate their metrics.
    Runs {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Run in parallel threads, each writing its own directory.
        #[arg(long)]
        parallel: bool,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_FAILURE
            }
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            per_class,
            size,
            seed,
        } => cmd_synth(&out, per_class, size, seed),
        Command::Split {
            data,
            out,
            seed,
            fractions,
        } => cmd_split(&data, &out, seed, fractions),
        Command::Train { config } => cmd_train(&config).map(|dir| println!("{}", dir.display())),
        Command::Eval {
            checkpoint,
            split,
            data,
            out,
            threshold,
        } => cmd_eval(&checkpoint, &split, data.as_deref(), out.as_deref(), threshold)
            .map(|dir| println!("{}", dir.display())),
        Command::Bench { config } => cmd_bench(&config).map(|dir| println!("{}", dir.display())),
        Command::Runs { config, k, parallel } => cmd_runs(&config, k, parallel).map(|dir| println!("{}", dir.display())),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn commented(text: &str) -> String {
    text.lines().map(|l| format!("# {l}\n")).collect()
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_env();
    cfg.validate()?;
    Ok(cfg)
}

/// Creates `<parent>/<UTC timestamp>-seed<seed>`, adding a suffix when the
/// name is taken.
pub fn create_run_dir(parent: &Path, seed: u64) -> Result<PathBuf> {
    let stamp = OffsetDateTime::now_utc()
        .format(format_description!("[year][month][day]T[hour][minute][second]Z"))
        .map_err(|e| Error::invalid(format!("timestamp: {e}")))?;
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    for attempt in 0.. {
        let name = match attempt {
            0 => format!("{stamp}-seed{seed}"),
            n => format!("{stamp}-seed{seed}-{n}"),
        };
        let dir = parent.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!("run directory attempts are unbounded")
}

fn cmd_synth(out: &Path, per_class: usize, size: usize, seed: u64) -> Result<()> {
    let manifest = synth_generate(out, per_class, size, seed)?;
    println!("wrote {} images to {}", manifest.len(), out.display());
    Ok(())
}

fn cmd_split(data: &Path, out: &Path, seed: u64, fractions: Option<Vec<f64>>) -> Result<()> {
    let fractions = match fractions {
        Some(f) => [f[0], f[1], f[2]],
        None => DEFAULT_FRACTIONS,
    };
    let manifest = DatasetManifest::load(&data.join(MANIFEST_FILE))?;
    let split = stratified_split(&manifest.labels(), fractions, seed)?;
    split.save(out)?;
    println!(
        "train {} / val {} / test {} -> {}",
        split.train.len(),
        split.val.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

struct TrainedRun {
    model: FusionModel<f32>,
    dir: PathBuf,
}

fn train_in(dir: &Path, cfg: &RunConfig, source: &ImageSource, split: &Split) -> Result<TrainedRun> {
    let config_text = cfg.to_toml()?;
    write(&dir.join("config.toml"), &config_text)?;
    split.save(&dir.join("split.toml"))?;
    let mut model = FusionModel::seeded(&cfg.model, cfg.seed())?;
    let mut log = EventLog::new(config_text.clone());
    let data = FitData {
        source,
        split,
        augment: cfg.augment.clone(),
        workers: cfg.data.workers,
    };
    let outputs = FitOutputs {
        checkpoint: Some(dir.join("best.ckpt")),
        event_log: Some(dir.join("events.tsv")),
        run_config: Some(config_text),
    };
    let label = cfg.model.label();
    let seed = cfg.seed();
    let outcome = fit(&mut model, &data, &cfg.train, &outputs, &mut log, |r| {
        eprintln!(
            "[{label} seed {seed}] epoch {:>3}  train_loss {:.4}  train_acc {:.4}  val_loss {:.4}  val_acc {:.4}  lr {:.2e}",
            r.epoch, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.lr
        )
    })?;
    Ok(TrainedRun {
        model: outcome.best,
        dir: dir.to_path_buf(),
    })
}

fn cmd_train(config: &Path) -> Result<PathBuf> {
    let cfg = load_config(config)?;
    let dir = create_run_dir(&cfg.data.out_dir, cfg.seed())?;
    let (manifest, split) = cfg.prepare_data()?;
    let source = ImageSource::new(manifest, cfg.model.input_size(), cfg.data.cache);
    Ok(train_in(&dir, &cfg, &source, &split)?.dir)
}

fn metrics_tsv(report: &MetricsReport, preamble: &str) -> String {
    let mut out = commented(preamble);
    out.push_str("metric\tvalue\n");
    for m in Metric::ALL {
        if let Some(v) = m.value(report) {
            let _ = writeln!(out, "{}\t{v}", m.name());
        }
    }
    let _ = writeln!(out, "samples\t{}", report.sample_count);
    for (class, cm) in [("normal", &report.normal), ("diabetic", &report.diabetic)] {
        if cm.is_degenerate() {
            let _ = writeln!(out, "# {class} class has a zero denominator; affected values are reported as 0");
        }
    }
    out
}

fn write_eval_artifacts(dir: &Path, report: &MetricsReport, title: &str, preamble: &str) -> Result<()> {
    write(&dir.join("metrics.tsv"), metrics_tsv(report, preamble))?;
    write(
        &dir.join("confusion.tsv"),
        commented(preamble) + &confusion_tsv(&report.confusion),
    )?;
    write(&dir.join("confusion.svg"), confusion_svg(&report.confusion, title))
}

fn cmd_eval(checkpoint: &Path, split: &Path, data: Option<&Path>, out: Option<&Path>, threshold: f64) -> Result<PathBuf> {
    let (model, meta) = load_checkpoint::<f32>(checkpoint)?;
    let run_cfg = meta.run_config.as_deref().map(RunConfig::from_toml).transpose()?;
    let root = match (data, &run_cfg) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(cfg)) => {
            let mut cfg = cfg.clone();
            cfg.apply_env();
            cfg.data.root
        }
        (None, None) => {
            return Err(Error::invalid(
                "checkpoint records no dataset; pass --data",
            ))
        }
    };
    let split = Split::load(split)?;
    let manifest = DatasetManifest::load(&root.join(MANIFEST_FILE))?;
    split.check_partition(manifest.len())?;
    let dir = match out {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            d.to_path_buf()
        }
        None => {
            let parent = run_cfg.as_ref().map_or(PathBuf::from("runs"), |c| c.data.out_dir.clone());
            create_run_dir(&parent, meta.seed)?
        }
    };
    let source = ImageSource::new(manifest, model.input_size(), false);
    let batch = run_cfg.as_ref().map_or(32, |c| c.train.batch_size);
    let report = evaluate(&model, &source, &split.test, batch, threshold)?;
    let preamble = format!(
        "checkpoint: {}\nseed: {}\nthreshold: {threshold}\n{}",
        checkpoint.display(),
        meta.seed,
        meta.run_config.unwrap_or_default()
    );
    write_eval_artifacts(&dir, &report, &model.spec().label(), &preamble)?;
    Ok(dir)
}

fn cmd_bench(config: &Path) -> Result<PathBuf> {
    let cfg = load_config(config)?;
    let specs: Vec<FusionSpec> = if cfg.bench.models.is_empty() {
        vec![cfg.model.clone()]
    } else {
        cfg.bench.model_specs()?
    };
    let models = specs
        .iter()
        .map(|spec| Ok((spec.label(), FusionModel::<f32>::seeded(spec, cfg.seed())?)))
        .collect::<Result<Vec<_>>>()?;
    let dir = create_run_dir(&cfg.data.out_dir, cfg.seed())?;
    let config_text = cfg.to_toml()?;
    write(&dir.join("config.toml"), &config_text)?;
    let sizes = size_report(&models.iter().map(|(n, m)| (n.clone(), m)).collect::<Vec<_>>())?;
    write(&dir.join("size.tsv"), sizes.to_tsv(&config_text))?;
    let infer: Vec<(String, &dyn Infer)> = models.iter().map(|(n, m)| (n.clone(), m as &dyn Infer)).collect();
    let latency = time_batches(&infer, &cfg.bench, cfg.seed())?;
    write(&dir.join("latency.tsv"), latency.to_tsv(&config_text))?;
    write(&dir.join("latency.svg"), latency_svg(&latency))?;
    Ok(dir)
}

fn run_one(dir: &Path, cfg: &RunConfig, manifest: &DatasetManifest, split: &Split) -> Result<MetricsReport> {
    let source = ImageSource::new(manifest.clone(), cfg.model.input_size(), cfg.data.cache);
    let trained = train_in(dir, cfg, &source, split)?;
    let report = evaluate(&trained.model, &source, &split.test, cfg.train.batch_size, DEFAULT_THRESHOLD)?;
    let preamble = cfg.to_toml()?;
    write_eval_artifacts(dir, &report, &cfg.model.label(), &preamble)?;
    Ok(report)
}

/// Runs `k` trainings with seeds `seed, seed + 1, ...` on one fixed split and
/// writes the aggregated table and bar chart.
fn cmd_runs(config: &Path, k: usize, parallel: bool) -> Result<PathBuf> {
    if k < 2 {
        return Err(Error::invalid(format!("--k {k}: aggregation needs at least 2 runs")));
    }
    let cfg = load_config(config)?;
    let (manifest, split) = cfg.prepare_data()?;
    let dir = create_run_dir(&cfg.data.out_dir, cfg.seed())?;
    let config_text = cfg.to_toml()?;
    write(&dir.join("config.toml"), &config_text)?;
    split.save(&dir.join("split.toml"))?;
    let runs: Vec<(PathBuf, RunConfig)> = (0..k)
        .map(|i| {
            let mut run_cfg = cfg.clone();
            run_cfg.train.seed = cfg.seed().wrapping_add(i as u64);
            let run_dir = dir.join(format!("run-{i}-seed{}", run_cfg.train.seed));
            std::fs::create_dir(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
            Ok((run_dir, run_cfg))
        })
        .collect::<Result<_>>()?;
    let reports: Vec<MetricsReport> = if parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = runs
                .iter()
                .map(|(run_dir, run_cfg)| scope.spawn(|| run_one(run_dir, run_cfg, &manifest, &split)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|panic| std::panic::resume_unwind(panic)))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        runs.iter()
            .map(|(run_dir, run_cfg)| run_one(run_dir, run_cfg, &manifest, &split))
            .collect::<Result<_>>()?
    };
    let aggregate = aggregate_runs(&reports)?;
    let columns = vec![(cfg.model.label(), aggregate)];
    write(&dir.join("results.tsv"), commented(&config_text) + &table_tsv(&columns))?;
    write(&dir.join("metrics.svg"), bar_chart_svg(&columns))?;
    print!("{}", table_tsv(&columns));
    Ok(dir)
}
