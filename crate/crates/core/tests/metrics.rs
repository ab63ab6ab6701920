mod common;

use common::counting::{accuracy, class_scores, expand};
use proptest::prelude::*;
use retina_fusion::metrics::{
    aggregate_runs, bar_chart_svg, compute_metrics, confusion, confusion_svg, parse_cell, render_cell, table_tsv,
    validate_svg, ConfusionMatrix, MeanStd, Metric,
};

fn any_cm() -> impl Strategy<Value = ConfusionMatrix> {
    (0usize..60, 0usize..60, 0usize..60, 0usize..60)
        .prop_filter("non-empty", |(a, b, c, d)| a + b + c + d > 0)
        .prop_map(|(tp, tn, fp, fn_)| ConfusionMatrix { tp, tn, fp, fn_ })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_counting_oracle(cm in any_cm()) {
        let (truth, pred) = expand(&cm);
        prop_assert_eq!(confusion(&truth, &pred).unwrap(), cm);
        let r = compute_metrics(&cm).unwrap();
        prop_assert_eq!(r.accuracy, accuracy(&truth, &pred));
        let d = class_scores(&truth, &pred, 1);
        let n = class_scores(&truth, &pred, 0);
        prop_assert_eq!((r.diabetic.precision, r.diabetic.recall, r.diabetic.f1), d);
        prop_assert_eq!((r.normal.precision, r.normal.recall, r.normal.f1), n);
    }

    #[test]
    fn swapping_classes_swaps_reports(cm in any_cm()) {
        let a = compute_metrics(&cm).unwrap();
        let b = compute_metrics(&cm.swapped()).unwrap();
        prop_assert_eq!(a.normal, b.diabetic);
        prop_assert_eq!(a.accuracy, b.accuracy);
    }

    #[test]
    fn rendered_cells_parse_back(mean in 0.0f64..1.0, std in 0.0f64..0.5) {
        for metric in Metric::ALL {
            let cell = render_cell(metric, MeanStd { mean, std });
            let back = parse_cell(metric, &cell).unwrap();
            prop_assert_eq!(render_cell(metric, back), cell);
        }
    }
}

#[test]
fn worked_example() {
    let r = compute_metrics(&ConfusionMatrix { tp: 50, tn: 40, fp: 10, fn_: 0 }).unwrap();
    let round4 = |v: f64| (v * 1e4).round() / 1e4;
    assert_eq!(
        (round4(r.accuracy), round4(r.diabetic.precision), round4(r.diabetic.recall), round4(r.diabetic.f1)),
        (0.90, 0.8333, 1.0, 0.9091)
    );
}

#[test]
fn identical_runs_have_zero_spread() {
    let mut r = compute_metrics(&ConfusionMatrix { tp: 31, tn: 28, fp: 5, fn_: 6 }).unwrap();
    r.test_loss = Some(0.3712);
    let agg = aggregate_runs(&vec![r; 5]).unwrap();
    assert_eq!(agg.k, 5);
    let table = table_tsv(&[("Eff+Den".into(), agg)]);
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    let labels: Vec<&str> = rows.iter().map(|r| r.split('\t').next().unwrap()).collect();
    assert_eq!(
        labels,
        [
            "Metric",
            "Test Loss",
            "Accuracy (%)",
            "Normal Class",
            "Precision",
            "Recall",
            "F1-Score",
            "Diabetic Class",
            "Precision",
            "Recall",
            "F1-Score"
        ]
    );
    assert_eq!(rows[1], "Test Loss\t0.37 ± 0.000");
    assert_eq!(rows[2], "Accuracy (%)\t84.29 ± 0.00");
    for row in rows.iter().skip(1).filter(|r| !r.ends_with('\t')) {
        let cell = row.split('\t').nth(1).unwrap();
        assert!(cell.ends_with("± 0.00") || cell.ends_with("± 0.000"), "{row}");
    }
    assert!(table.contains("population"));
}

#[test]
fn charts_validate() {
    let cm = ConfusionMatrix { tp: 12, tn: 9, fp: 3, fn_: 1 };
    let summary = validate_svg(&confusion_svg(&cm, "Eff+Den <test>")).unwrap();
    assert_eq!(summary.rects, 1 + 4);
    assert!(summary.texts.iter().any(|t| t == "Eff+Den <test>"));

    let runs: Vec<_> = (0..3)
        .map(|i| compute_metrics(&ConfusionMatrix { tp: 10 + i, tn: 9, fp: 2, fn_: 1 }).unwrap())
        .collect();
    let agg = aggregate_runs(&runs).unwrap();
    let columns = vec![("Res".to_string(), agg.clone()), ("Eff+Den".to_string(), agg)];
    let summary = validate_svg(&bar_chart_svg(&columns)).unwrap();
    assert_eq!(summary.rects, 1 + 7 * 2 + 2);
    assert!(summary.texts.iter().any(|t| t == "Eff+Den"));
}
