//! Synthetic fundus-like images for desk-scale runs.
//!
//! Every image shows a dark reddish disc with an optic disc and smooth vessel
//! curves. Diabetic images also carry bright exudate-like blobs and dark
//! haemorrhage-like dots at random positions.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{encode_ppm, Image};
use super::manifest::{DatasetManifest, Label, ManifestEntry};
use crate::error::{Error, Result};

pub const SYNTH_SOURCE: &str = "synthetic";
pub const MANIFEST_FILE: &str = "manifest.tsv";

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Alpha-blends a soft-edged disc of `color` onto `img`.
fn stamp(img: &mut Image, cy: f64, cx: f64, radius: f64, color: [f64; 3], strength: f64) {
    let size = img.height();
    let lo_y = (cy - radius - 1.0).floor().max(0.0) as usize;
    let hi_y = ((cy + radius + 1.0).ceil() as usize).min(size - 1);
    let lo_x = (cx - radius - 1.0).floor().max(0.0) as usize;
    let hi_x = ((cx + radius + 1.0).ceil() as usize).min(img.width() - 1);
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
            let a = strength * (1.0 - smoothstep(radius - 0.75, radius + 0.75, d));
            if a <= 0.0 {
                continue;
            }
            for (c, &target) in color.iter().enumerate() {
                let v = img.get(c, y, x) as f64;
                img.set(c, y, x, (v * (1.0 - a) + target * a) as f32);
            }
        }
    }
}

/// Random point inside the fundus disc, away from its rim.
fn point_in_disc<R: Rng>(rng: &mut R, centre: f64, radius: f64) -> (f64, f64) {
    let r = radius * rng.gen::<f64>().sqrt();
    let t = rng.gen_range(0.0..std::f64::consts::TAU);
    (centre + r * t.sin(), centre + r * t.cos())
}

/// Renders one `size×size` image of the given class.
pub fn render<R: Rng>(label: Label, size: usize, rng: &mut R) -> Image {
    let s = size as f64;
    let centre = (s - 1.0) / 2.0;
    let radius = 0.46 * s;
    let tone = rng.gen_range(0.85..1.1);
    let base = [0.55 * tone, 0.24 * tone, 0.10 * tone];
    let mut img = Image::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let d = ((y as f64 - centre).powi(2) + (x as f64 - centre).powi(2)).sqrt();
            let inside = 1.0 - smoothstep(radius - 1.0, radius + 1.0, d);
            let shade = inside * (1.0 - 0.35 * (d / radius).powi(2));
            let grain = 1.0 + rng.gen_range(-0.03..0.03);
            for (c, b) in base.iter().enumerate() {
                img.set(c, y, x, (b * shade * grain).clamp(0.0, 1.0) as f32);
            }
        }
    }

    // Optic disc on a randomly chosen side.
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let od = (centre + rng.gen_range(-0.08..0.08) * s, centre + side * 0.22 * s);
    stamp(&mut img, od.0, od.1, 0.08 * s, [0.85, 0.65, 0.35], 0.9);

    // Vessels: a few sinuous curves leaving the optic disc.
    let vessel = [0.32, 0.06, 0.04];
    for _ in 0..rng.gen_range(4..7) {
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let wobble = rng.gen_range(0.5..1.5);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let width = (s / 90.0).max(0.6);
        let steps = (s * 0.9) as usize;
        for k in 0..steps {
            let t = k as f64 / steps as f64;
            let a = angle + 0.5 * (wobble * t * 6.0 + phase).sin();
            let r = t * radius;
            let (y, x) = (od.0 + r * a.sin(), od.1 + r * a.cos());
            if ((y - centre).powi(2) + (x - centre).powi(2)).sqrt() > radius - 2.0 {
                break;
            }
            stamp(&mut img, y, x, width * (1.0 - 0.5 * t), vessel, 0.7);
        }
    }

    if label == Label::Diabetic {
        for _ in 0..rng.gen_range(5..11) {
            let (y, x) = point_in_disc(rng, centre, radius * 0.8);
            let r = rng.gen_range(s / 32.0..s / 16.0).max(1.2);
            stamp(&mut img, y, x, r, [0.98, 0.9, 0.45], 0.95);
        }
        for _ in 0..rng.gen_range(3..7) {
            let (y, x) = point_in_disc(rng, centre, radius * 0.8);
            let r = rng.gen_range(s / 64.0..s / 32.0).max(0.8);
            stamp(&mut img, y, x, r, [0.18, 0.02, 0.02], 0.9);
        }
    }
    img.clamp01();
    img
}

/// Seed of image `index` of class `label`.
fn image_seed(seed: u64, label: Label, index: usize) -> u64 {
    seed ^ ((label.index() as u64 + 1) << 56) ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Writes `n_per_class` images per class under `root/synthetic/<class>/` and
/// a manifest file at `root/manifest.tsv`.
pub fn synth_generate(root: &Path, n_per_class: usize, size: usize, seed: u64) -> Result<DatasetManifest> {
    if n_per_class == 0 {
        return Err(Error::invalid("synthetic generation needs n_per_class >= 1"));
    }
    if size < 8 {
        return Err(Error::invalid(format!("synthetic image size {size} is below the minimum of 8")));
    }
    let mut manifest = DatasetManifest {
        root: root.to_path_buf(),
        ..Default::default()
    };
    for label in Label::ALL {
        let dir = root.join(SYNTH_SOURCE).join(label.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..n_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(image_seed(seed, label, i));
            let img = render(label, size, &mut rng);
            let name = format!("{}_{i:05}.ppm", label.as_str());
            let path = dir.join(&name);
            std::fs::write(&path, encode_ppm(&img)).map_err(|e| Error::io(&path, e))?;
            manifest.entries.push(ManifestEntry {
                path: Path::new(SYNTH_SOURCE).join(label.as_str()).join(name),
                label,
                source: SYNTH_SOURCE.to_string(),
            });
        }
    }
    manifest.entries.sort_by(|a, b| a.path.cmp(&b.path));
    manifest.save(&root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
