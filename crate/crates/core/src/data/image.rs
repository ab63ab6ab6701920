//! RGB images with values in `[0, 1]`, PPM codec and geometric resampling.

use crate::error::{Error, Result};

/// Planar `[3, H, W]` image, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != CHANNELS * height * width {
            return Err(Error::invalid(format!(
                "image {height}×{width} needs {} values, got {}",
                CHANNELS * height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let plane = height * width;
        let mut data = Vec::with_capacity(CHANNELS * plane);
        for v in rgb {
            data.extend(std::iter::repeat(v).take(plane));
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub fn clamp01(&mut self) {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Bilinear sample at fractional pixel coordinates; points outside the
    /// frame read as black.
    #[inline]
    pub fn sample(&self, c: usize, y: f64, x: f64) -> f32 {
        let (h, w) = (self.height as isize, self.width as isize);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let px = |yy: isize, xx: isize| {
            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                0.0
            } else {
                self.get(c, yy as usize, xx as usize)
            }
        };
        let top = px(y0, x0) * (1.0 - fx) + px(y0, x0 + 1) * fx;
        let bottom = px(y0 + 1, x0) * (1.0 - fx) + px(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Decodes one encoded image file.
pub trait ImageDecoder: Send + Sync {
    /// Lower-case file extensions this decoder handles.
    fn extensions(&self) -> &[&'static str];
    fn decode(&self, bytes: &[u8]) -> std::result::Result<Image, String>;
}

/// Binary PPM (`P6`), 8- or 16-bit samples.
#[derive(Debug, Clone, Copy, Default)]
pub struct PpmDecoder;

impl ImageDecoder for PpmDecoder {
    fn extensions(&self) -> &[&'static str] {
        &["ppm"]
    }

    fn decode(&self, bytes: &[u8]) -> std::result::Result<Image, String> {
        decode_ppm(bytes)
    }
}

/// Decoders tried by file extension.
pub struct DecoderSet {
    decoders: Vec<Box<dyn ImageDecoder>>,
}

impl Default for DecoderSet {
    fn default() -> Self {
        Self {
            decoders: vec![Box::new(PpmDecoder)],
        }
    }
}

impl DecoderSet {
    pub fn register(&mut self, decoder: Box<dyn ImageDecoder>) {
        self.decoders.push(decoder);
    }

    pub fn for_path(&self, path: &std::path::Path) -> Option<&dyn ImageDecoder> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        self.decoders
            .iter()
            .find(|d| d.extensions().contains(&ext.as_str()))
            .map(|d| d.as_ref())
    }

    pub fn decode_file(&self, path: &std::path::Path) -> Result<Image> {
        let decode_err = |reason: String| Error::Decode {
            path: path.to_path_buf(),
            reason,
        };
        let decoder = self
            .for_path(path)
            .ok_or_else(|| decode_err("no decoder for this file extension".into()))?;
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        decoder.decode(&bytes).map_err(decode_err)
    }
}

fn ppm_header(bytes: &[u8]) -> std::result::Result<([usize; 3], usize), String> {
    if bytes.get(..2) != Some(b"P6") {
        return Err("not a binary PPM (missing P6 magic)".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("malformed PPM header at byte {start}"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format!("malformed PPM header at byte {pos}"));
    }
    Ok((fields, pos + 1))
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let ([width, height, maxval], start) = ppm_header(bytes)?;
    if width == 0 || height == 0 || !(1..=65535).contains(&maxval) {
        return Err(format!("unsupported PPM geometry {width}×{height}, maxval {maxval}"));
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let plane = width * height;
    let need = plane * CHANNELS * sample_bytes;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| format!("truncated PPM raster: need {need} bytes after header"))?;
    let max = maxval as f32;
    let mut data = vec![0.0f32; CHANNELS * plane];
    for i in 0..plane {
        for c in 0..CHANNELS {
            let k = i * CHANNELS + c;
            let v = if sample_bytes == 1 {
                raster[k] as u32
            } else {
                u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]) as u32
            };
            data[c * plane + i] = v.min(maxval as u32) as f32 / max;
        }
    }
    Image::new(height, width, data).map_err(|e| e.to_string())
}

/// 8-bit `P6`; values are clamped to `[0, 1]` and rounded.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let plane = img.width * img.height;
    let mut out = Vec::with_capacity(header.len() + plane * CHANNELS);
    out.extend_from_slice(header.as_bytes());
    for i in 0..plane {
        for c in 0..CHANNELS {
            out.push((img.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

/// Align-corners bilinear resize to `target×target`: output corners sample
/// input corners exactly and interior points interpolate linearly between
/// them. A target of 1 samples the input centre.
pub fn resize_bilinear(img: &Image, target: usize) -> Result<Image> {
    if target == 0 {
        return Err(Error::invalid("resize target must be >= 1"));
    }
    let coord = |i: usize, src: usize| -> f64 {
        if target == 1 {
            (src as f64 - 1.0) / 2.0
        } else {
            i as f64 * (src as f64 - 1.0) / (target as f64 - 1.0)
        }
    };
    let mut out = Vec::with_capacity(CHANNELS * target * target);
    for c in 0..CHANNELS {
        for y in 0..target {
            let sy = coord(y, img.height);
            for x in 0..target {
                let sx = coord(x, img.width);
                out.push(sample_clamped(img, c, sy, sx));
            }
        }
    }
    Image::new(target, target, out)
}

/// Bilinear sample that stays inside the frame, so results never leave the
/// input's value range.
fn sample_clamped(img: &Image, c: usize, y: f64, x: f64) -> f32 {
    let y0 = (y.floor() as usize).min(img.height - 1);
    let x0 = (x.floor() as usize).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let fy = (y - y0 as f64).clamp(0.0, 1.0) as f32;
    let fx = (x - x0 as f64).clamp(0.0, 1.0) as f32;
    let top = img.get(c, y0, x0) * (1.0 - fx) + img.get(c, y0, x1) * fx;
    let bottom = img.get(c, y1, x0) * (1.0 - fx) + img.get(c, y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..CHANNELS {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, y, x, img.get(c, y, img.width - 1 - x));
            }
        }
    }
    out
}

/// Inverse-mapped warp about the image centre: each output pixel `p` reads
/// the input at `centre + A·(p − centre) − shift`, with black outside.
fn warp(img: &Image, a: [[f64; 2]; 2], shift: (f64, f64)) -> Image {
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut out = img.clone();
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let sy = cy + a[0][0] * dy + a[0][1] * dx - shift.0;
            let sx = cx + a[1][0] * dy + a[1][1] * dx - shift.1;
            for c in 0..CHANNELS {
                out.set(c, y, x, img.sample(c, sy, sx));
            }
        }
    }
    out
}

/// Counter-clockwise rotation by `degrees` about the centre, bilinear with
/// black fill.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (s, c) = degrees.to_radians().sin_cos();
    // Rows grow downwards, so a visual counter-clockwise turn maps output
    // (dy, dx) back through the clockwise matrix.
    warp(img, [[c, s], [-s, c]], (0.0, 0.0))
}

/// Scales about the centre by `scale` and then shifts by `(dy, dx)` pixels.
pub fn affine(img: &Image, scale: f64, dy: f64, dx: f64) -> Image {
    if scale == 1.0 && dy == 0.0 && dx == 0.0 {
        return img.clone();
    }
    let inv = 1.0 / scale;
    warp(img, [[inv, 0.0], [0.0, inv]], (dy * inv, dx * inv))
}
