use proptest::prelude::*;
use retina_fusion::data::{stratified_split, synth_generate, AugmentConfig, ImageSource, Label};
use retina_fusion::fusion::{FusionModel, FusionSpec};
use retina_fusion::nn::Family;
use retina_fusion::train::{fit, EventLog, FitData, FitOutputs, TrainConfig};

fn train_log(source: &ImageSource, seed: u64, workers: usize) -> EventLog {
    let split = stratified_split(&source.manifest().labels(), [0.6, 0.2, 0.2], seed).unwrap();
    let spec = FusionSpec::desk(&[Family::Residual]);
    let mut model = FusionModel::seeded(&spec, seed).unwrap();
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

fn assert_logs_close(a: &EventLog, b: &EventLog) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.records().iter().zip(b.records()) {
        assert_eq!(x.epoch, y.epoch);
        for (u, v) in [
            (x.train_loss, y.train_loss),
            (x.train_acc, y.train_acc),
            (x.val_loss, y.val_loss),
            (x.val_acc, y.val_acc),
            (x.lr, y.lr),
        ] {
            assert!((u - v).abs() <= 1e-5, "{x:?} vs {y:?}");
        }
    }
}

#[test]
fn identical_seed_and_config_give_the_same_event_log() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_generate(tmp.path(), 16, 64, 2).unwrap();
    let source = ImageSource::new(manifest, 64, true);
    let first = train_log(&source, 4, 1);
    assert_logs_close(&first, &train_log(&source, 4, 1));
    assert_logs_close(&first, &train_log(&source, 4, 3));
    let other = train_log(&source, 5, 1);
    assert_ne!(first.records()[0].train_loss, other.records()[0].train_loss);
}

fn labels() -> impl Strategy<Value = Vec<Label>> {
    (3usize..80, 3usize..80).prop_flat_map(|(a, b)| {
        Just([vec![Label::Normal; a], vec![Label::Diabetic; b]].concat()).prop_shuffle()
    })
}

fn fractions() -> impl Strategy<Value = [f64; 3]> {
    (0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b)| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        [lo, hi - lo, 1.0 - hi]
    })
}

#[test]
fn tiny_classes_are_rejected() {
    let labels = [vec![Label::Normal; 2], vec![Label::Diabetic; 10]].concat();
    assert!(stratified_split(&labels, [0.6, 0.2, 0.2], 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn stratified_parts_are_within_one_item(labels in labels(), fractions in fractions(), seed in any::<u64>()) {
        let split = stratified_split(&labels, fractions, seed).unwrap();
        split.check_partition(labels.len()).unwrap();
        for class in [Label::Normal, Label::Diabetic] {
            let total = labels.iter().filter(|&&l| l == class).count() as f64;
            for (part, fraction) in [&split.train, &split.val, &split.test].into_iter().zip(fractions) {
                let count = part.iter().filter(|&&i| labels[i] == class).count() as f64;
                prop_assert!((count - fraction * total).abs() < 1.0 + 1e-9, "{count} vs {}", fraction * total);
            }
        }
        prop_assert_eq!(&stratified_split(&labels, fractions, seed).unwrap(), &split);
    }
}
