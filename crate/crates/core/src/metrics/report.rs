//! Results tables, confusion blocks and chart exports.

use std::fmt::Write as _;

use super::{ConfusionMatrix, MeanStd, Metric, RunAggregate};
use crate::error::{Error, Result};
use crate::svg::{Svg, PALETTE};

pub use crate::svg::{validate_svg, SvgSummary};

/// `mean ± std`: percent metrics with two decimals, loss with two decimals
/// and a three-decimal spread.
pub fn render_cell(metric: Metric, s: MeanStd) -> String {
    if metric.is_percent() {
        format!("{:.2} ± {:.2}", s.mean * 100.0, s.std * 100.0)
    } else {
        format!("{:.2} ± {:.3}", s.mean, s.std)
    }
}

/// Inverse of [`render_cell`], exact to the printed precision.
pub fn parse_cell(metric: Metric, cell: &str) -> Result<MeanStd> {
    let bad = || Error::invalid(format!("cannot parse {cell:?} as \"mean ± std\""));
    let (m, s) = cell.split_once('±').ok_or_else(bad)?;
    let mean: f64 = m.trim().parse().map_err(|_| bad())?;
    let std: f64 = s.trim().parse().map_err(|_| bad())?;
    let scale = if metric.is_percent() { 100.0 } else { 1.0 };
    Ok(MeanStd {
        mean: mean / scale,
        std: std / scale,
    })
}

fn row_label(metric: Metric) -> &'static str {
    match metric {
        Metric::TestLoss => "Test Loss",
        Metric::Accuracy => "Accuracy (%)",
        Metric::NormalPrecision | Metric::DiabeticPrecision => "Precision",
        Metric::NormalRecall | Metric::DiabeticRecall => "Recall",
        Metric::NormalF1 | Metric::DiabeticF1 => "F1-Score",
    }
}

/// Metric rows by model columns, with `Normal Class` and `Diabetic Class`
/// section rows, tab-separated.
pub fn table_tsv(columns: &[(String, RunAggregate)]) -> String {
    let mut out = String::from("Metric");
    for (name, _) in columns {
        let _ = write!(out, "\t{name}");
    }
    out.push('\n');
    let section = |out: &mut String, title: &str| {
        out.push_str(title);
        for _ in columns {
            out.push('\t');
        }
        out.push('\n');
    };
    for metric in Metric::ALL {
        match metric {
            Metric::NormalPrecision => section(&mut out, "Normal Class"),
            Metric::DiabeticPrecision => section(&mut out, "Diabetic Class"),
            _ => {}
        }
        out.push_str(row_label(metric));
        for (_, agg) in columns {
            let cell = agg.get(metric).map(|s| render_cell(metric, s)).unwrap_or_else(|| "n/a".into());
            let _ = write!(out, "\t{cell}");
        }
        out.push('\n');
    }
    let _ = writeln!(
        out,
        "# mean ± std over k = {} runs, {} standard deviation",
        columns.first().map_or(0, |(_, a)| a.k),
        super::STD_CONVENTION
    );
    out
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_tsv(cm: &ConfusionMatrix) -> String {
    format!(
        "true\\predicted\tNormal\tDiabetic\nNormal\t{}\t{}\nDiabetic\t{}\t{}\n",
        cm.tn, cm.fp, cm.fn_, cm.tp
    )
}

fn blend(t: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

/// 2×2 heatmap with counts printed in each cell.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let cell = 120.0;
    let (left, top) = (110.0, 60.0);
    let mut svg = Svg::new(left + 2.0 * cell + 30.0, top + 2.0 * cell + 60.0);
    svg.text((left + cell) as f64, 24.0, 16.0, "middle", "#000", title);
    let counts = [[cm.tn, cm.fp], [cm.fn_, cm.tp]];
    let max = counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;
    let names = ["Normal", "Diabetic"];
    for (r, row) in counts.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            let t = count as f64 / max;
            let (x, y) = (left + c as f64 * cell, top + r as f64 * cell);
            svg.rect(
                x,
                y,
                cell,
                cell,
                &blend(t),
                Some(&format!("true {}, predicted {}: {count}", names[r], names[c])),
            );
            let ink = if t > 0.5 { "#ffffff" } else { "#000000" };
            svg.text(x + cell / 2.0, y + cell / 2.0 + 6.0, 18.0, "middle", ink, &count.to_string());
        }
        svg.text(left - 8.0, top + r as f64 * cell + cell / 2.0 + 5.0, 13.0, "end", "#000", names[r]);
    }
    for (c, name) in names.iter().enumerate() {
        svg.text(left + c as f64 * cell + cell / 2.0, top + 2.0 * cell + 22.0, 13.0, "middle", "#000", name);
    }
    svg.text(left + cell, top + 2.0 * cell + 46.0, 13.0, "middle", "#000", "Predicted");
    svg.text(16.0, top - 12.0, 13.0, "start", "#000", "True");
    svg.finish()
}

/// Grouped bars of every percent metric, one bar per model.
pub fn bar_chart_svg(columns: &[(String, RunAggregate)]) -> String {
    let metrics: Vec<Metric> = Metric::ALL.iter().copied().filter(|m| m.is_percent()).collect();
    let group_w = 40.0 + 18.0 * columns.len() as f64;
    let (left, top, plot_h) = (60.0, 40.0, 260.0);
    let width = left + group_w * metrics.len() as f64 + 180.0;
    let mut svg = Svg::new(width, top + plot_h + 70.0);
    svg.text(width / 2.0, 24.0, 16.0, "middle", "#000", "Evaluation metrics by model (mean over runs)");
    for tick in 0..=5 {
        let v = tick as f64 * 20.0;
        let y = top + plot_h * (1.0 - v / 100.0);
        svg.line(left, y, left + group_w * metrics.len() as f64, y, "#dddddd");
        svg.text(left - 6.0, y + 4.0, 11.0, "end", "#000", &format!("{v:.0}"));
    }
    for (g, metric) in metrics.iter().enumerate() {
        let x0 = left + g as f64 * group_w + 20.0;
        for (k, (name, agg)) in columns.iter().enumerate() {
            let Some(s) = agg.get(*metric) else { continue };
            let h = plot_h * s.mean.clamp(0.0, 1.0);
            svg.rect(
                x0 + k as f64 * 18.0,
                top + plot_h - h,
                16.0,
                h,
                PALETTE[k % PALETTE.len()],
                Some(&format!("{name} {}: {}", metric.name(), render_cell(*metric, s))),
            );
        }
        let label = match metric {
            Metric::Accuracy => "Accuracy",
            Metric::NormalPrecision => "N-Prec",
            Metric::NormalRecall => "N-Rec",
            Metric::NormalF1 => "N-F1",
            Metric::DiabeticPrecision => "D-Prec",
            Metric::DiabeticRecall => "D-Rec",
            _ => "D-F1",
        };
        svg.text(x0 + 9.0 * columns.len() as f64, top + plot_h + 18.0, 11.0, "middle", "#000", label);
    }
    let lx = left + group_w * metrics.len() as f64 + 20.0;
    for (k, (name, _)) in columns.iter().enumerate() {
        let y = top + 10.0 + k as f64 * 20.0;
        svg.rect(lx, y - 10.0, 12.0, 12.0, PALETTE[k % PALETTE.len()], None);
        svg.text(lx + 18.0, y, 12.0, "start", "#000", name);
    }
    svg.finish()
}
