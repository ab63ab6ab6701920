//! One PASS/FAIL line per acceptance criterion. Arguments filter criteria by
//! substring; the process exits nonzero if any selected criterion fails.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::arch;
use common::counting::{accuracy, class_scores, expand};
use common::{model_gradient_check, op_cases, op_gradient_error};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use retina_fusion::bench::{latency_svg, time_batches, BenchConfig, Infer, DEFAULT_BATCH_SIZES};
use retina_fusion::data::{stratified_split, synth_generate, AugmentConfig, ImageSource, Label, Split, DEFAULT_FRACTIONS};
use retina_fusion::fusion::{FusionModel, FusionSpec};
use retina_fusion::metrics::{
    aggregate_runs, bar_chart_svg, compute_metrics, confusion, confusion_svg, table_tsv, validate_svg,
    ConfusionMatrix,
};
use retina_fusion::nn::Family;
use retina_fusion::tensor::ops::bce_with_logits;
use retina_fusion::tensor::{Tensor, Var};
use retina_fusion::train::{evaluate_indices, fit, EventLog, FitData, FitOutputs, TrainConfig};
use retina_fusion::Result;

type Outcome = std::result::Result<String, String>;

const CRITERIA: [(&str, fn() -> Outcome); 9] = [
    ("gradient check", gradient_check),
    ("loss stability", loss_stability),
    ("architecture bookkeeping", architecture_bookkeeping),
    ("full-scale parameter counts", full_scale_counts),
    ("end-to-end learning", end_to_end_learning),
    ("pipeline determinism", pipeline_determinism),
    ("metrics oracle", metrics_oracle),
    ("benchmark protocol", benchmark_protocol),
    ("report formats", report_formats),
];

fn main() {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(reason) => {
                failed += 1;
                println!("FAIL {name}: {reason} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let cases = op_cases();
    let mut worst_op = (String::new(), 0.0f64);
    for (name, inputs, f) in cases.iter() {
        let err = op_gradient_error(inputs, f);
        ensure(err < 1e-3, || format!("{name}: relative error {err:e}"))?;
        if err > worst_op.1 {
            worst_op = (name.to_string(), err);
        }
    }
    let spec = FusionSpec::desk(&[Family::Residual, Family::Mbconv, Family::Dense]);
    let r = model_gradient_check(&spec, 2, 120, 5);
    ensure(r.checked >= 100, || format!("only {} coordinates checked", r.checked))?;
    ensure(r.max_rel_err < 1e-2, || format!("Res+Eff+Den: {:e} at {}", r.max_rel_err, r.worst))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} ops, worst {} {:.1e}; Res+Eff+Den {} coordinates, worst {:.1e}",
        cases.len(),
        worst_op.0,
        worst_op.1,
        r.checked,
        r.max_rel_err
    ))
}

fn loss_and_grad(z: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let logits = Var::parameter(Tensor::from_vec(&[z.len()], z.to_vec()).unwrap());
    let labels = Tensor::from_vec(&[y.len()], y.to_vec()).unwrap();
    let loss = bce_with_logits(&logits, &labels).unwrap();
    loss.backward().unwrap();
    (loss.data()[0], logits.grad_vec().unwrap())
}

fn loss_stability() -> Outcome {
    let (l, g) = loss_and_grad(&[100.0, -100.0, 100.0, -100.0], &[1.0, 0.0, 0.0, 1.0]);
    ensure(l.is_finite() && g.iter().all(|v| v.is_finite()), || format!("non-finite: {l} {g:?}"))?;
    ensure((l - 50.0).abs() < 1e-12, || format!("loss {l}, expected 50"))?;
    for (a, b) in g.iter().zip([0.0, 0.0, 0.25, -0.25]) {
        ensure((a - b).abs() < 1e-12, || format!("gradient {g:?}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let z: f64 = rng.gen_range(-10.0..10.0);
        let y = f64::from(u8::from(rng.gen::<bool>()));
        let (l, g) = loss_and_grad(&[z], &[y]);
        let p = 1.0 / (1.0 + (-z).exp());
        let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        let err = (l - naive).abs().max((g[0] - (p - y)).abs());
        ensure(err < 1e-6, || format!("z={z}, y={y}: error {err:e}"))?;
        worst = worst.max(err);
    }
    Ok(format!("±100 logits exact; 10000 random cases, worst {worst:.1e}"))
}

fn architecture_bookkeeping() -> Outcome {
    const DRAWS: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..DRAWS {
        let seed = rng.gen();
        arch::dense_block_growth(rng.gen_range(1..12), rng.gen_range(1..5), rng.gen_range(1..8), seed)?;
        arch::residual_zero_branch_identity(rng.gen_range(1..16), rng.gen_range(1..8), seed)?;
        let kernel = if rng.gen() { 5 } else { 3 };
        arch::mbconv_arithmetic(
            rng.gen_range(1..12),
            rng.gen_range(1..12),
            rng.gen_range(1..7),
            kernel,
            rng.gen_range(1..3),
            seed,
        )?;
        let widths: Vec<usize> = (0..rng.gen_range(2..4)).map(|_| rng.gen_range(1..6)).collect();
        arch::concat_then_slice(&widths, rng.gen_range(1..4), seed)?;
    }
    for _ in 0..24 {
        arch::fusion_additivity(rng.gen_range(1..8), rng.gen_range(1..64), rng.gen_range(1..64), rng.gen())?;
    }
    Ok(format!("{DRAWS} random draws per block check, 24 random fusion specs"))
}

fn full_scale_counts() -> Outcome {
    let start = Instant::now();
    let counts = arch::full_scale_singles()?;
    arch::full_scale_fusion_additivity()?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    let listed: Vec<String> =
        counts.iter().map(|(f, n)| format!("{} {:.2}M", f.short_label(), *n as f64 / 1e6)).collect();
    Ok(format!("{}; Eff+Den additive", listed.join(", ")))
}

struct Trained {
    label: String,
    best_val_acc: f64,
    first_epoch_at_95: Option<usize>,
    test_acc: f64,
    elapsed: Duration,
}

fn train(source: &ImageSource, split: &Split, families: &[Family], seed: u64) -> Result<Trained> {
    let spec = FusionSpec::desk(families);
    let mut model = FusionModel::seeded(&spec, seed)?;
    let data = FitData {
        source,
        split,
        augment: AugmentConfig::default(),
        workers: 1,
    };
    let start = Instant::now();
    let mut log = EventLog::new("");
    let outcome = fit(&mut model, &data, &TrainConfig::new(20, 32, seed), &FitOutputs::default(), &mut log, |_| {})?;
    let elapsed = start.elapsed();
    let records = log.records();
    Ok(Trained {
        label: spec.label(),
        best_val_acc: records.iter().map(|r| r.val_acc).fold(0.0, f64::max),
        first_epoch_at_95: records.iter().find(|r| r.val_acc >= 0.95).map(|r| r.epoch + 1),
        test_acc: evaluate_indices(&outcome.best, source, &split.test, 32)?.accuracy,
        elapsed,
    })
}

fn end_to_end_learning() -> Outcome {
    let seed = 7;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = synth_generate(tmp.path(), 200, 64, 1).map_err(|e| e.to_string())?;
    let source = ImageSource::new(manifest, 64, true);
    let split = stratified_split(&source.manifest().labels(), DEFAULT_FRACTIONS, seed).map_err(|e| e.to_string())?;
    let runs = [
        vec![Family::Residual],
        vec![Family::Mbconv],
        vec![Family::Dense],
        vec![Family::Mbconv, Family::Dense],
    ];
    let mut trained = Vec::new();
    for families in &runs {
        let t = train(&source, &split, families, seed).map_err(|e| e.to_string())?;
        ensure(t.best_val_acc >= 0.95, || format!("{} peaked at {:.3} val accuracy", t.label, t.best_val_acc))?;
        ensure(t.elapsed < Duration::from_secs(15 * 60), || format!("{} took {:?}", t.label, t.elapsed))?;
        trained.push(t);
    }
    let best_member = trained[1].test_acc.max(trained[2].test_acc);
    let fusion = &trained[3];
    ensure(fusion.test_acc >= best_member - 0.01, || {
        format!("fusion test accuracy {:.3} vs best member {best_member:.3}", fusion.test_acc)
    })?;
    let listed: Vec<String> = trained
        .iter()
        .map(|t| {
            format!(
                "{} val>=0.95 at epoch {}, test {:.3}, {:.0} s",
                t.label,
                t.first_epoch_at_95.unwrap_or(0),
                t.test_acc,
                t.elapsed.as_secs_f64()
            )
        })
        .collect();
    Ok(listed.join("; "))
}

fn train_log(source: &ImageSource, seed: u64, workers: usize) -> EventLog {
    let split = stratified_split(&source.manifest().labels(), [0.6, 0.2, 0.2], seed).unwrap();
    let mut model = FusionModel::seeded(&FusionSpec::desk(&[Family::Residual]), seed).unwrap();
    let data = FitData {
        source,
        split: &split,
        augment: AugmentConfig::default(),
        workers,
    };
    let mut log = EventLog::new("");
    fit(&mut model, &data, &TrainConfig::new(3, 8, seed), &FitOutputs::default(), &mut log, |_| {}).unwrap();
    log
}

fn max_log_gap(a: &EventLog, b: &EventLog) -> std::result::Result<f64, String> {
    ensure(a.len() == b.len(), || format!("{} vs {} epochs", a.len(), b.len()))?;
    let mut gap = 0.0f64;
    for (x, y) in a.records().iter().zip(b.records()) {
        for (u, v) in [
            (x.train_loss, y.train_loss),
            (x.train_acc, y.train_acc),
            (x.val_loss, y.val_loss),
            (x.val_acc, y.val_acc),
            (x.lr, y.lr),
        ] {
            gap = gap.max((u - v).abs());
        }
    }
    Ok(gap)
}

fn pipeline_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = synth_generate(tmp.path(), 16, 64, 2).map_err(|e| e.to_string())?;
    let source = ImageSource::new(manifest, 64, true);
    let first = train_log(&source, 4, 1);
    let gap = max_log_gap(&first, &train_log(&source, 4, 1))?.max(max_log_gap(&first, &train_log(&source, 4, 3))?);
    ensure(gap <= 1e-5, || format!("event logs differ by {gap:e}"))?;

    const SPLITS: usize = 500;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..SPLITS {
        let (a, b) = (rng.gen_range(3..80), rng.gen_range(3..80));
        let mut labels = [vec![Label::Normal; a], vec![Label::Diabetic; b]].concat();
        labels.shuffle(&mut rng);
        let (u, v): (f64, f64) = (rng.gen(), rng.gen());
        let (lo, hi) = (u.min(v), u.max(v));
        let fractions = [lo, hi - lo, 1.0 - hi];
        let seed = rng.gen();
        let split = stratified_split(&labels, fractions, seed).map_err(|e| e.to_string())?;
        split.check_partition(labels.len()).map_err(|e| e.to_string())?;
        for class in [Label::Normal, Label::Diabetic] {
            let total = labels.iter().filter(|&&l| l == class).count() as f64;
            for (part, fraction) in [&split.train, &split.val, &split.test].into_iter().zip(fractions) {
                let count = part.iter().filter(|&&i| labels[i] == class).count() as f64;
                ensure((count - fraction * total).abs() < 1.0 + 1e-9, || {
                    format!("{class:?}: {count} items for fraction {fraction} of {total}")
                })?;
            }
        }
        ensure(stratified_split(&labels, fractions, seed).ok() == Some(split), || {
            "split is not deterministic".into()
        })?;
    }
    Ok(format!("event logs within {gap:.1e} across reruns and worker counts; {SPLITS} random splits within one item"))
}

fn metrics_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut cases = 0;
    while cases < 1000 {
        let cm = ConfusionMatrix {
            tp: rng.gen_range(0..60),
            tn: rng.gen_range(0..60),
            fp: rng.gen_range(0..60),
            fn_: rng.gen_range(0..60),
        };
        if cm.tp + cm.tn + cm.fp + cm.fn_ == 0 {
            continue;
        }
        cases += 1;
        let (truth, pred) = expand(&cm);
        ensure(confusion(&truth, &pred).ok() == Some(cm), || format!("confusion of {cm:?}"))?;
        let r = compute_metrics(&cm).map_err(|e| e.to_string())?;
        let d = (r.diabetic.precision, r.diabetic.recall, r.diabetic.f1);
        let n = (r.normal.precision, r.normal.recall, r.normal.f1);
        ensure(
            r.accuracy == accuracy(&truth, &pred) && d == class_scores(&truth, &pred, 1) && n == class_scores(&truth, &pred, 0),
            || format!("{cm:?}: {r:?}"),
        )?;
    }
    let r = compute_metrics(&ConfusionMatrix { tp: 50, tn: 40, fp: 10, fn_: 0 }).map_err(|e| e.to_string())?;
    let round4 = |v: f64| (v * 1e4).round() / 1e4;
    let worked = (round4(r.accuracy), round4(r.diabetic.precision), round4(r.diabetic.recall), round4(r.diabetic.f1));
    ensure(worked == (0.90, 0.8333, 1.0, 0.9091), || format!("worked example gave {worked:?}"))?;
    Ok(format!("{cases} random matrices match counting; worked example {worked:?}"))
}

struct Sleeper(Duration);

impl Infer for Sleeper {
    fn input_size(&self) -> usize {
        8
    }

    fn infer(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        std::thread::sleep(self.0);
        Ok(Tensor::zeros(&[x.shape()[0]]))
    }
}

fn benchmark_protocol() -> Outcome {
    let models: Vec<_> = Family::ALL
        .iter()
        .map(|&f| (f.short_label().to_string(), FusionModel::<f32>::seeded(&FusionSpec::desk(&[f]), 11).unwrap()))
        .collect();
    let refs: Vec<(String, &dyn Infer)> = models.iter().map(|(n, m)| (n.clone(), m as &dyn Infer)).collect();
    let report = time_batches(&refs, &BenchConfig::default(), 5).map_err(|e| e.to_string())?;
    validate_svg(&latency_svg(&report)).map_err(|e| e.to_string())?;
    let mut listed = Vec::new();
    let mut problems = Vec::new();
    for m in &report.models {
        let sizes: Vec<usize> = m.cells.iter().map(|c| c.batch_size).collect();
        ensure(sizes == DEFAULT_BATCH_SIZES, || format!("{}: batch sizes {sizes:?}", m.model))?;
        for c in &m.cells {
            let t = c.timing().ok_or_else(|| format!("{} unmeasured at {}", m.model, c.batch_size))?;
            ensure(t.repeats.len() == 3, || format!("{}: {} repeats", m.model, t.repeats.len()))?;
        }
        let first = m.cells[0].per_image_ms().unwrap_or_default();
        let last = m.cells[3].per_image_ms().unwrap_or_default();
        listed.push(format!("{} {first:.2} -> {last:.2} ms/image", m.model));
        if !(last < first) {
            problems.push(format!("{} per-image time does not fall from 1 to 1000 ({first:.2} -> {last:.2} ms)", m.model));
        }
    }
    let cfg = BenchConfig {
        batch_sizes: vec![1, 10],
        warmup_iters: 1,
        ..BenchConfig::default()
    };
    let total = |ms: u64| -> std::result::Result<f64, String> {
        let report =
            time_batches(&[("s".into(), &Sleeper(Duration::from_millis(ms)))], &cfg, 0).map_err(|e| e.to_string())?;
        Ok(report.models[0].cells.iter().filter_map(|c| c.timing()).map(|t| t.mean_total_s).sum())
    };
    let ratio = total(40)? / total(20)?;
    if (ratio - 2.0).abs() >= 0.2 {
        problems.push(format!("doubling a sleep scaled totals by {ratio:.3}"));
    }
    let detail = format!("3 repeats x {:?}; {}; sleep ratio {ratio:.3}", DEFAULT_BATCH_SIZES, listed.join(", "));
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{}; {detail}", problems.join("; ")))
    }
}

fn report_formats() -> Outcome {
    let mut r = compute_metrics(&ConfusionMatrix { tp: 31, tn: 28, fp: 5, fn_: 6 }).map_err(|e| e.to_string())?;
    r.test_loss = Some(0.3712);
    let agg = aggregate_runs(&vec![r; 5]).map_err(|e| e.to_string())?;
    let table = table_tsv(&[("Eff+Den".into(), agg.clone())]);
    let cells: Vec<&str> = table
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter_map(|l| l.split('\t').nth(1))
        .filter(|c| !c.is_empty())
        .collect();
    ensure(cells.len() == 8, || format!("{} value cells in\n{table}", cells.len()))?;
    ensure(cells.contains(&"84.29 ± 0.00"), || format!("accuracy cell missing from\n{table}"))?;
    for cell in &cells {
        let (mean, std) = cell.split_once(" ± ").ok_or_else(|| format!("cell {cell:?} is not mean ± std"))?;
        let decimals = |s: &str| s.split_once('.').map_or(0, |(_, d)| d.len());
        ensure(decimals(mean) == 2 && std.trim_start_matches('0').trim_start_matches('.').chars().all(|c| c == '0'), || {
            format!("cell {cell:?}")
        })?;
    }
    let cm = ConfusionMatrix { tp: 12, tn: 9, fp: 3, fn_: 1 };
    let summary = validate_svg(&confusion_svg(&cm, "Eff+Den")).map_err(|e| e.to_string())?;
    ensure(summary.rects == 5, || format!("confusion chart has {} rects", summary.rects))?;
    let columns = vec![("Res".to_string(), agg.clone()), ("Eff+Den".to_string(), agg)];
    let summary = validate_svg(&bar_chart_svg(&columns)).map_err(|e| e.to_string())?;
    ensure(summary.rects == 1 + 7 * 2 + 2, || format!("bar chart has {} rects", summary.rects))?;
    Ok(format!("5 identical runs render {} cells with zero spread; confusion and bar charts validate", cells.len()))
}
