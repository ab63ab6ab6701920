//! Training-time augmentation and ImageNet normalization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::{self, Image, CHANNELS};
use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Random transforms applied to training images, in field order. Magnitudes
/// are relative: brightness and contrast factors are drawn from
/// `1 ± delta`, translation from `± translate_frac` of the side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub hflip_p: f64,
    pub rotation_deg: f64,
    pub brightness_delta: f64,
    pub contrast_delta: f64,
    pub translate_frac: f64,
    pub scale_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            hflip_p: 0.5,
            rotation_deg: 15.0,
            brightness_delta: 0.2,
            contrast_delta: 0.2,
            translate_frac: 0.1,
            scale_range: [0.9, 1.1],
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.hflip_p) {
            problems.push(format!("augment.hflip_p {} outside [0, 1]", self.hflip_p));
        }
        if !(self.rotation_deg >= 0.0) {
            problems.push(format!("augment.rotation_deg {} must be >= 0", self.rotation_deg));
        }
        for (name, v) in [
            ("brightness_delta", self.brightness_delta),
            ("contrast_delta", self.contrast_delta),
            ("translate_frac", self.translate_frac),
        ] {
            if !(0.0..1.0).contains(&v) {
                problems.push(format!("augment.{name} {v} outside [0, 1)"));
            }
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= 1.0 && hi >= 1.0) {
            problems.push(format!("augment.scale_range [{lo}, {hi}] must be positive and contain 1.0"));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Multiplies brightness by `brightness` and stretches contrast about the
/// mean grey level by `contrast`, then clamps to `[0, 1]`.
pub fn color_jitter(img: &Image, brightness: f64, contrast: f64) -> Image {
    let mut out = img.clone();
    let b = brightness as f32;
    out.data_mut().iter_mut().for_each(|v| *v *= b);
    let grey = out.mean() as f32;
    let c = contrast as f32;
    out.data_mut().iter_mut().for_each(|v| *v = (*v - grey) * c + grey);
    out.clamp01();
    out
}

/// Applies flip, rotation, colour jitter and affine scale/translate.
pub fn augment<R: Rng + ?Sized>(img: &Image, cfg: &AugmentConfig, rng: &mut R) -> Image {
    if !cfg.enabled {
        return img.clone();
    }
    let mut out = if rng.gen_bool(cfg.hflip_p) {
        image::hflip(img)
    } else {
        img.clone()
    };
    let angle = symmetric(rng, cfg.rotation_deg);
    out = image::rotate(&out, angle);
    let brightness = 1.0 + symmetric(rng, cfg.brightness_delta);
    let contrast = 1.0 + symmetric(rng, cfg.contrast_delta);
    out = color_jitter(&out, brightness, contrast);
    let [lo, hi] = cfg.scale_range;
    let scale = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
    let dy = symmetric(rng, cfg.translate_frac) * out.height() as f64;
    let dx = symmetric(rng, cfg.translate_frac) * out.width() as f64;
    out = image::affine(&out, scale, dy, dx);
    out.clamp01();
    out
}

/// Per-channel `(x − mean) / std` with the ImageNet statistics.
pub fn normalize(img: &Image) -> Vec<f32> {
    let plane = img.height() * img.width();
    let mut out = img.data().to_vec();
    for c in 0..CHANNELS {
        out[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = (*v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]);
    }
    out
}

pub fn denormalize(values: &[f32], height: usize, width: usize) -> Result<Image> {
    let plane = height * width;
    let mut data = values.to_vec();
    for c in 0..CHANNELS {
        data[c * plane..(c + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = *v * IMAGENET_STD[c] + IMAGENET_MEAN[c]);
    }
    Image::new(height, width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_is_identity() {
        let img = Image::new(4, 4, (0..48).map(|i| i as f32 / 48.0).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&img, &AugmentConfig::disabled(), &mut rng), img);
    }

    #[test]
    fn normalize_reference_points() {
        let img = Image::filled(1, 1, [IMAGENET_MEAN[0], 1.0, 0.0]);
        let n = normalize(&img);
        assert_eq!(n[0], 0.0);
        assert!((n[1] - (1.0 - 0.456) / 0.224).abs() < 1e-6);
        let white = normalize(&Image::filled(1, 1, [1.0; 3]));
        assert!((white[0] - 2.2489).abs() < 1e-4);
    }

    #[test]
    fn scale_range_must_contain_one() {
        let cfg = AugmentConfig {
            scale_range: [1.05, 1.2],
            ..AugmentConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }

    #[test]
    fn outputs_stay_in_unit_range() {
        let img = Image::new(8, 8, (0..192).map(|i| (i % 17) as f32 / 16.0).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let out = augment(&img, &AugmentConfig::default(), &mut rng);
            assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
