//! Minimal SVG writer and a structural validator for the exported charts.

use std::fmt::Write as _;

use quick_xml::events::Event;
use quick_xml::Reader;

use crate::error::{Error, Result};

pub(crate) const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

pub(crate) fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub(crate) struct Svg {
    body: String,
    width: f64,
    height: f64,
}

impl Svg {
    pub(crate) fn new(width: f64, height: f64) -> Self {
        let mut s = Self {
            body: String::new(),
            width,
            height,
        };
        s.rect(0.0, 0.0, width, height, "#ffffff", None);
        s
    }

    pub(crate) fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, title: Option<&str>) {
        let _ = write!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}""#,
            w.max(0.0),
            h.max(0.0)
        );
        match title {
            Some(t) => {
                let _ = writeln!(self.body, "><title>{}</title></rect>", escape(t));
            }
            None => self.body.push_str("/>\n"),
        }
    }

    pub(crate) fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="1"/>"#
        );
    }

    pub(crate) fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }

    pub(crate) fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="{fill}"/>"#);
    }

    pub(crate) fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, fill: &str, text: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-family="sans-serif" font-size="{size}" text-anchor="{anchor}" fill="{fill}">{}</text>"#,
            escape(text)
        );
    }

    pub(crate) fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Element counts of a parsed SVG document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SvgSummary {
    pub rects: usize,
    pub texts: Vec<String>,
    pub polylines: usize,
    pub circles: usize,
}

/// Parses `text` as XML with an `svg` root and counts drawing elements.
pub fn validate_svg(text: &str) -> Result<SvgSummary> {
    let mut reader = Reader::from_str(text);
    let mut summary = SvgSummary::default();
    let mut depth = 0usize;
    let mut root_seen = false;
    let mut in_text = false;
    let bad = |pos: u64, what: String| Error::Corrupt {
        offset: pos,
        reason: format!("svg: {what}"),
    };
    loop {
        let pos = reader.buffer_position();
        match reader.read_event() {
            Err(e) => return Err(bad(pos, e.to_string())),
            Ok(Event::Eof) => break,
            Ok(Event::Start(e)) | Ok(Event::Empty(e)) if !root_seen => {
                if e.name().as_ref() != b"svg" {
                    return Err(bad(pos, "root element is not <svg>".into()));
                }
                root_seen = true;
                depth += 1;
            }
            Ok(ev @ (Event::Start(_) | Event::Empty(_))) => {
                let (name, is_start) = match &ev {
                    Event::Start(e) => (e.name().as_ref().to_vec(), true),
                    Event::Empty(e) => (e.name().as_ref().to_vec(), false),
                    _ => unreachable!(),
                };
                match name.as_slice() {
                    b"rect" => summary.rects += 1,
                    b"polyline" => summary.polylines += 1,
                    b"circle" => summary.circles += 1,
                    b"text" if is_start => {
                        in_text = true;
                        summary.texts.push(String::new());
                    }
                    _ => {}
                }
                if is_start {
                    depth += 1;
                }
            }
            Ok(Event::Text(t)) if in_text => {
                let s = t.unescape().map_err(|e| bad(pos, e.to_string()))?;
                if let Some(last) = summary.texts.last_mut() {
                    last.push_str(&s);
                }
            }
            Ok(Event::End(e)) => {
                if e.name().as_ref() == b"text" {
                    in_text = false;
                }
                depth = depth.saturating_sub(1);
            }
            Ok(_) => {}
        }
    }
    if !root_seen {
        return Err(bad(0, "no <svg> element".into()));
    }
    if depth != 0 {
        return Err(bad(text.len() as u64, "unclosed elements".into()));
    }
    Ok(summary)
}
