//! Image containers, PNG and raw-tensor (NTF) file I/O, crops, flips,
//! resize, and the augmentation pipeline used during classifier training.
//!
//! Pixels are C×H×W f64 values in [0,1] after load or normalization.
//! Frequency-filtered images may leave that range; they carry
//! `unit_range == false` until a consumer clamps or standardizes them.

use crate::numerics::{RngStream, Tensor};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("decode error: {0}")]
    Decode(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("bounds error: {0}")]
    Bounds(String),
    #[error("ntf: {0}")]
    Ntf(String),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// C×H×W image of f64 intensities, row-major within each channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    unit_range: bool,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(ImagingError::Bounds(format!(
                "{}x{}x{} needs {} pixels, got {}",
                channels,
                height,
                width,
                channels * height * width,
                pixels.len()
            )));
        }
        if !pixels.iter().all(|v| v.is_finite()) {
            return Err(ImagingError::Decode("non-finite pixel value".into()));
        }
        let unit_range = pixels.iter().all(|&v| (0.0..=1.0).contains(&v));
        Ok(Self {
            channels,
            height,
            width,
            pixels,
            unit_range,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            pixels: vec![0.0; channels * height * width],
            unit_range: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn unit_range(&self) -> bool {
        self.unit_range
    }
    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }
    pub fn len(&self) -> usize {
        self.pixels.len()
    }
    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    /// One channel as a contiguous H×W slice.
    pub fn channel(&self, c: usize) -> &[f64] {
        let hw = self.height * self.width;
        &self.pixels[c * hw..(c + 1) * hw]
    }

    /// Replace pixel data wholesale, recomputing the unit-range flag.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Image::new(self.channels, self.height, self.width, pixels)
    }

    pub fn clamp01(&self) -> Self {
        let pixels = self.pixels.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            pixels,
            unit_range: true,
            ..*self
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.pixels.clone(),
        )
        .expect("image pixels are finite by construction")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [c, h, w] => Image::new(*c, *h, *w, t.data().to_vec()),
            [h, w] => Image::new(1, *h, *w, t.data().to_vec()),
            s => Err(ImagingError::Format(format!(
                "tensor rank {} is not an image",
                s.len()
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// NTF raw-tensor format: magic "NTF1", u32 LE rank, rank x u32 LE dims,
// then product(dims) f32 LE values.
// ---------------------------------------------------------------------------

pub mod ntf {
    use super::{ImagingError, Result};
    use crate::numerics::Tensor;

    pub const MAGIC: &[u8; 4] = b"NTF1";
    const MAX_RANK: u32 = 8;
    const MAX_ELEMENTS: u64 = 1 << 26;

    /// Decode an NTF byte stream. Never panics on malformed input.
    pub fn decode(bytes: &[u8]) -> Result<Tensor> {
        let err = |m: &str| ImagingError::Ntf(m.to_string());
        if bytes.len() < 8 {
            return Err(err("truncated header"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(err("bad magic"));
        }
        let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if rank == 0 || rank > MAX_RANK {
            return Err(ImagingError::Ntf(format!("rank {rank} out of range")));
        }
        let dims_end = 8usize + rank as usize * 4;
        if bytes.len() < dims_end {
            return Err(err("truncated dims"));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut count: u64 = 1;
        for i in 0..rank as usize {
            let d = u32::from_le_bytes(bytes[8 + i * 4..12 + i * 4].try_into().unwrap());
            if d == 0 {
                return Err(err("zero dimension"));
            }
            count = count
                .checked_mul(d as u64)
                .ok_or_else(|| err("dimension overflow"))?;
            if count > MAX_ELEMENTS {
                return Err(err("tensor too large"));
            }
            shape.push(d as usize);
        }
        let payload = &bytes[dims_end..];
        if payload.len() != count as usize * 4 {
            return Err(ImagingError::Ntf(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                count * 4
            )));
        }
        let mut data = Vec::with_capacity(count as usize);
        for chunk in payload.chunks_exact(4) {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(err("non-finite payload value"));
            }
            data.push(v as f64);
        }
        Tensor::new(shape, data).map_err(|e| ImagingError::Ntf(e.to_string()))
    }

    /// Encode a tensor; values are narrowed to f32.
    pub fn encode(t: &Tensor) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + t.shape().len() * 4 + t.data().len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }
}

/// Load a PNG (8-bit gray or RGB) or NTF file into an image; PNG bytes map
/// to [0,1] by v/255.
pub fn load_image(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ntf") => {
            let bytes = std::fs::read(path)?;
            let t = ntf::decode(&bytes)?;
            Image::from_tensor(&t)
        }
        Some("png") => {
            let img = image::open(path).map_err(|e| ImagingError::Decode(e.to_string()))?;
            match img {
                image::DynamicImage::ImageLuma8(g) => {
                    let (w, h) = (g.width() as usize, g.height() as usize);
                    let pixels = g.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
                    Image::new(1, h, w, pixels)
                }
                image::DynamicImage::ImageRgb8(rgb) => {
                    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                    let raw = rgb.as_raw();
                    let mut pixels = vec![0.0; 3 * h * w];
                    for y in 0..h {
                        for x in 0..w {
                            for c in 0..3 {
                                pixels[(c * h + y) * w + x] =
                                    raw[(y * w + x) * 3 + c] as f64 / 255.0;
                            }
                        }
                    }
                    Image::new(3, h, w, pixels)
                }
                other => Err(ImagingError::Format(format!(
                    "unsupported png color type {:?}",
                    other.color()
                ))),
            }
        }
        other => Err(ImagingError::Format(format!(
            "unsupported extension {:?}",
            other
        ))),
    }
}

/// Save as PNG (clamped, quantized to 8 bits) or NTF (lossless f32).
pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ntf") => {
            std::fs::write(path, ntf::encode(&img.to_tensor()))?;
            Ok(())
        }
        Some("png") => {
            let (c, h, w) = (img.channels, img.height, img.width);
            let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            match c {
                1 => {
                    let buf: Vec<u8> = img.pixels.iter().map(|&v| quant(v)).collect();
                    image::GrayImage::from_raw(w as u32, h as u32, buf)
                        .expect("buffer sized to extents")
                        .save(path)
                        .map_err(|e| ImagingError::Decode(e.to_string()))
                }
                3 => {
                    let mut buf = vec![0u8; 3 * h * w];
                    for y in 0..h {
                        for x in 0..w {
                            for ch in 0..3 {
                                buf[(y * w + x) * 3 + ch] = quant(img.get(ch, y, x));
                            }
                        }
                    }
                    image::RgbImage::from_raw(w as u32, h as u32, buf)
                        .expect("buffer sized to extents")
                        .save(path)
                        .map_err(|e| ImagingError::Decode(e.to_string()))
                }
                n => Err(ImagingError::Format(format!("{n} channels not savable"))),
            }
        }
        other => Err(ImagingError::Format(format!(
            "unsupported extension {:?}",
            other
        ))),
    }
}

/// Load every .png/.ntf file in a directory, ordered by filename so
/// downstream seeded shuffles stay deterministic.
pub fn load_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("png") | Some("ntf")
            )
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| load_image(p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Center,
    Random,
}

/// Crop and flip policy applied during training.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct AugmentationSpec {
    /// zero-pad by `pad` on every side, then crop back to `size`
    pub random_crop: Option<(usize, usize)>,
    pub horizontal_flip_prob: f64,
}

impl AugmentationSpec {
    pub fn none() -> Self {
        Self {
            random_crop: None,
            horizontal_flip_prob: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.random_crop.is_none() && self.horizontal_flip_prob == 0.0
    }
}

pub fn center_crop(img: &Image, s: usize) -> Result<Image> {
    crop_at(
        img,
        s,
        (img.height.checked_sub(s).ok_or_else(|| too_big(img, s))?) / 2,
        (img.width.checked_sub(s).ok_or_else(|| too_big(img, s))?) / 2,
    )
}

fn too_big(img: &Image, s: usize) -> ImagingError {
    ImagingError::Bounds(format!(
        "crop {} exceeds {}x{} image",
        s, img.height, img.width
    ))
}

fn crop_at(img: &Image, s: usize, top: usize, left: usize) -> Result<Image> {
    if s > img.height || s > img.width {
        return Err(too_big(img, s));
    }
    let mut out = Image::zeros(img.channels, s, s);
    for c in 0..img.channels {
        for y in 0..s {
            for x in 0..s {
                out.set(c, y, x, img.get(c, top + y, left + x));
            }
        }
    }
    out.unit_range = img.unit_range;
    Ok(out)
}

/// Crop at a corner drawn uniformly from the (H−s+1)×(W−s+1) grid.
pub fn random_crop(img: &Image, s: usize, rng: &mut RngStream) -> Result<Image> {
    if s > img.height || s > img.width {
        return Err(too_big(img, s));
    }
    let top = rng.uniform_usize(img.height - s + 1);
    let left = rng.uniform_usize(img.width - s + 1);
    crop_at(img, s, top, left)
}

pub fn hflip(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, y, x, img.get(c, y, img.width - 1 - x));
            }
        }
    }
    out
}

fn zero_pad(img: &Image, pad: usize) -> Image {
    let mut out = Image::zeros(img.channels, img.height + 2 * pad, img.width + 2 * pad);
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..img.width {
                out.set(c, y + pad, x + pad, img.get(c, y, x));
            }
        }
    }
    out.unit_range = img.unit_range;
    out
}

/// Bilinear resize with half-pixel (corner-aligned = false) sampling.
pub fn resize_bilinear(img: &Image, new_h: usize, new_w: usize) -> Image {
    let mut out = Image::zeros(img.channels, new_h, new_w);
    let sy = img.height as f64 / new_h as f64;
    let sx = img.width as f64 / new_w as f64;
    for c in 0..img.channels {
        for y in 0..new_h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(img.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..new_w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(img.width - 1);
                let wx = fx - x0 as f64;
                let v = img.get(c, y0, x0) * (1.0 - wy) * (1.0 - wx)
                    + img.get(c, y0, x1) * (1.0 - wy) * wx
                    + img.get(c, y1, x0) * wy * (1.0 - wx)
                    + img.get(c, y1, x1) * wy * wx;
                out.set(c, y, x, v);
            }
        }
    }
    out.unit_range = img.unit_range;
    out
}

/// Pad-then-random-crop followed by a probabilistic horizontal flip.
pub fn augment(img: &Image, spec: &AugmentationSpec, rng: &mut RngStream) -> Result<Image> {
    let mut cur = if let Some((pad, size)) = spec.random_crop {
        let padded = zero_pad(img, pad);
        random_crop(&padded, size, rng)?
    } else {
        img.clone()
    };
    if spec.horizontal_flip_prob > 0.0 && rng.bernoulli(spec.horizontal_flip_prob) {
        cur = hflip(&cur);
    }
    Ok(cur)
}
