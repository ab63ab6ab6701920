//! Tab-separated and SVG renderings of benchmark reports.

use std::fmt::Write as _;

use super::{CellResult, LatencyReport, SizeReport};
use crate::svg::{Svg, PALETTE};

impl LatencyReport {
    /// One row per model and batch size. `preamble` lines are written first
    /// as `#` comments, followed by the hardware descriptor.
    pub fn to_tsv(&self, preamble: &str) -> String {
        let mut out = String::new();
        for line in preamble.lines() {
            let _ = writeln!(out, "# {line}");
        }
        let _ = writeln!(out, "# hardware: {}", self.hardware);
        let _ = writeln!(out, "# warmup_iters: {}", self.warmup_iters);
        out.push_str("model\tbatch_size");
        for r in 1..=self.repeats {
            let _ = write!(out, "\trepeat_{r}_s");
        }
        out.push_str("\tmean_total_s\tmin_total_s\tper_image_ms\tmin_per_image_ms\n");
        for m in &self.models {
            for cell in &m.cells {
                let _ = write!(out, "{}\t{}", m.model, cell.batch_size);
                match &cell.result {
                    CellResult::Measured(t) => {
                        for r in &t.repeats {
                            let _ = write!(out, "\t{r:.6}");
                        }
                        let _ = writeln!(
                            out,
                            "\t{:.6}\t{:.6}\t{:.4}\t{:.4}",
                            t.mean_total_s,
                            t.min_total_s,
                            cell.per_image_ms().unwrap_or_default(),
                            cell.min_per_image_ms().unwrap_or_default()
                        );
                    }
                    CellResult::Unmeasured { reason } => {
                        for _ in 0..self.repeats + 4 {
                            out.push_str("\tunmeasured");
                        }
                        let _ = writeln!(out, "\t# {reason}");
                    }
                }
            }
        }
        out
    }
}

impl SizeReport {
    pub fn to_tsv(&self, preamble: &str) -> String {
        let mut out = String::new();
        for line in preamble.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("model\tparams\tparams_m\tbytes\tsize_mb\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.2}\t{}\t{:.1}",
                r.model,
                r.params,
                r.params_millions(),
                r.bytes,
                r.megabytes()
            );
        }
        out
    }
}

struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
}

fn log_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| *v > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let (lo, hi) = (lo.log10().floor(), hi.log10().ceil());
    (lo, if hi > lo { hi } else { lo + 1.0 })
}

/// Two panels over batch size on log axes: total seconds (a) and per-image
/// milliseconds (b). One line per model.
pub fn latency_svg(report: &LatencyReport) -> String {
    let panels = [
        Panel {
            left: 80.0,
            top: 60.0,
            width: 360.0,
            height: 280.0,
        },
        Panel {
            left: 560.0,
            top: 60.0,
            width: 360.0,
            height: 280.0,
        },
    ];
    let mut svg = Svg::new(1120.0, 420.0);
    let batch_sizes: Vec<f64> = report
        .models
        .iter()
        .flat_map(|m| m.cells.iter().map(|c| c.batch_size as f64))
        .collect();
    let x_range = log_range(batch_sizes.into_iter());
    let series = |total: bool| -> Vec<(String, Vec<(f64, f64)>)> {
        report
            .models
            .iter()
            .map(|m| {
                let pts = m
                    .cells
                    .iter()
                    .filter_map(|c| {
                        let v = if total {
                            c.timing().map(|t| t.mean_total_s)
                        } else {
                            c.per_image_ms()
                        };
                        v.map(|v| (c.batch_size as f64, v))
                    })
                    .collect();
                (m.model.clone(), pts)
            })
            .collect()
    };
    let titles = ["(a) Total inference time (s)", "(b) Per-image inference time (ms)"];
    for (k, panel) in panels.iter().enumerate() {
        let data = series(k == 0);
        let y_range = log_range(data.iter().flat_map(|(_, pts)| pts.iter().map(|p| p.1)));
        let px = |x: f64| panel.left + (x.log10() - x_range.0) / (x_range.1 - x_range.0) * panel.width;
        let py = |y: f64| panel.top + panel.height - (y.log10() - y_range.0) / (y_range.1 - y_range.0) * panel.height;
        svg.text(panel.left + panel.width / 2.0, 30.0, 15.0, "middle", "#000", titles[k]);
        let bottom = panel.top + panel.height;
        svg.line(panel.left, bottom, panel.left + panel.width, bottom, "#000000");
        svg.line(panel.left, panel.top, panel.left, bottom, "#000000");
        for e in x_range.0 as i32..=x_range.1 as i32 {
            let x = px(10f64.powi(e));
            svg.line(x, bottom, x, bottom + 5.0, "#000000");
            svg.text(x, bottom + 20.0, 11.0, "middle", "#000", &format!("{}", 10f64.powi(e)));
        }
        for e in y_range.0 as i32..=y_range.1 as i32 {
            let y = py(10f64.powi(e));
            svg.line(panel.left, y, panel.left + panel.width, y, "#e0e0e0");
            svg.text(panel.left - 6.0, y + 4.0, 11.0, "end", "#000", &format!("1e{e}"));
        }
        svg.text(panel.left + panel.width / 2.0, bottom + 40.0, 12.0, "middle", "#000", "Batch size");
        for (i, (_, pts)) in data.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let mapped: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (px(x), py(y))).collect();
            if mapped.len() > 1 {
                svg.polyline(&mapped, color);
            }
            for &(x, y) in &mapped {
                svg.circle(x, y, 3.5, color);
            }
        }
    }
    for (i, m) in report.models.iter().enumerate() {
        let y = 80.0 + i as f64 * 20.0;
        svg.rect(960.0, y - 10.0, 12.0, 12.0, PALETTE[i % PALETTE.len()], None);
        svg.text(978.0, y, 12.0, "start", "#000", &m.model);
    }
    svg.text(560.0, 410.0, 10.0, "middle", "#555", &report.hardware);
    svg.finish()
}

#[cfg(test)]
mod tests {
    use super::super::{LatencyCell, ModelLatency, SizeRow, Timing};
    use super::*;
    use crate::svg::validate_svg;

    fn report() -> LatencyReport {
        let cell = |bs: usize, total: f64| LatencyCell {
            batch_size: bs,
            result: CellResult::Measured(Timing {
                repeats: vec![total; 3],
                mean_total_s: total,
                min_total_s: total,
            }),
        };
        LatencyReport {
            hardware: "test".into(),
            warmup_iters: 10,
            repeats: 3,
            models: vec![
                ModelLatency {
                    model: "Res".into(),
                    cells: vec![cell(1, 0.01), cell(10, 0.05), cell(100, 0.3), cell(1000, 2.0)],
                },
                ModelLatency {
                    model: "Eff".into(),
                    cells: vec![
                        cell(1, 0.02),
                        cell(10, 0.08),
                        cell(100, 0.5),
                        LatencyCell {
                            batch_size: 1000,
                            result: CellResult::Unmeasured { reason: "budget".into() },
                        },
                    ],
                },
            ],
        }
    }

    #[test]
    fn tsv_has_a_row_per_cell() {
        let text = report().to_tsv("seed = 1");
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows.len(), 1 + 8);
        assert!(rows[0].starts_with("model\tbatch_size\trepeat_1_s"));
        assert!(rows[1].contains("\t10.0000\t"));
        assert!(rows[8].contains("unmeasured"));
    }

    #[test]
    fn chart_has_two_panels_and_a_line_per_model() {
        let summary = validate_svg(&latency_svg(&report())).unwrap();
        assert_eq!(summary.polylines, 4);
        assert_eq!(summary.circles, 2 * 7);
        assert!(summary.texts.iter().any(|t| t.starts_with("(a)")));
        assert!(summary.texts.iter().any(|t| t.starts_with("(b)")));
    }

    #[test]
    fn size_units() {
        let r = SizeReport {
            rows: vec![SizeRow {
                model: "Res".into(),
                params: 24_557_057,
                bytes: 3 << 20,
            }],
        };
        assert!(r.to_tsv("").lines().nth(1).unwrap().ends_with("\t24.56\t3145728\t3.0"));
    }
}
