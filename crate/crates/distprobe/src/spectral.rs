//! Ideal frequency-domain masks and filters over the centered spectrum,
//! in rectangular (L∞ radius) and circular (Euclidean radius) shapes.
//!
//! A low-pass mask keeps bins with radius ≤ t, high-pass keeps radius > t,
//! and band-pass keeps t_low ≤ radius ≤ t_high, so band-pass(0, t) equals
//! low-pass(t) and low/high masks at equal t are exact complements.

use crate::imaging::Image;
use crate::numerics::{self, NumericsError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpectralError {
    #[error("invalid filter spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, SpectralError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MaskShape {
    Rectangular,
    Circular,
}

/// A threshold either in absolute frequency-index units or as a fraction
/// of M/2, resolved when the mask is realized against a grid.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum Threshold {
    Abs(f64),
    Frac(f64),
}

impl Threshold {
    /// Fractional thresholds resolve against half the larger extent and
    /// are floored to an integer radius.
    pub fn resolve(&self, m: usize, n: usize) -> f64 {
        match *self {
            Threshold::Abs(t) => t,
            Threshold::Frac(f) => (f * (m.max(n) as f64) / 2.0).floor(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum FilterKind {
    Lowpass(Threshold),
    Highpass(Threshold),
    Bandpass(Threshold, Threshold),
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FilterSpec {
    pub kind: FilterKind,
    pub shape: MaskShape,
}

impl FilterSpec {
    pub fn lowpass(t: f64) -> Self {
        Self {
            kind: FilterKind::Lowpass(Threshold::Abs(t)),
            shape: MaskShape::Rectangular,
        }
    }

    pub fn highpass(t: f64) -> Self {
        Self {
            kind: FilterKind::Highpass(Threshold::Abs(t)),
            shape: MaskShape::Rectangular,
        }
    }

    pub fn bandpass(lo: f64, hi: f64) -> Self {
        Self {
            kind: FilterKind::Bandpass(Threshold::Abs(lo), Threshold::Abs(hi)),
            shape: MaskShape::Rectangular,
        }
    }

    pub fn with_shape(mut self, shape: MaskShape) -> Self {
        self.shape = shape;
        self
    }

    /// Compact display form matching the CLI grammar (`low:2`, `band:8-12`).
    pub fn label(&self) -> String {
        let t = |th: &Threshold| match th {
            Threshold::Abs(v) => format!("{v}"),
            Threshold::Frac(v) => format!("frac:{v}"),
        };
        let body = match &self.kind {
            FilterKind::Lowpass(v) => format!("low:{}", t(v)),
            FilterKind::Highpass(v) => format!("high:{}", t(v)),
            FilterKind::Bandpass(lo, hi) => format!("band:{}-{}", t(lo), t(hi)),
        };
        match self.shape {
            MaskShape::Rectangular => body,
            MaskShape::Circular => format!("{body}:circle"),
        }
    }
}

/// Parse the CLI filter grammar: `low:10`, `high:30`, `band:10-30`,
/// `low:frac:0.04`, `band:frac:0.1-0.4`.
pub fn parse_filter_spec(s: &str, shape: MaskShape) -> Result<FilterSpec> {
    let err = || SpectralError::Spec(format!("cannot parse filter {s:?}"));
    let (head, rest) = s.split_once(':').ok_or_else(err)?;
    let (frac, value_str) = match rest.strip_prefix("frac:") {
        Some(v) => (true, v),
        None => (false, rest),
    };
    let parse_one = |v: &str| -> Result<Threshold> {
        let x: f64 = v.trim().parse().map_err(|_| err())?;
        if !x.is_finite() || x < 0.0 {
            return Err(SpectralError::Spec(format!("threshold {v:?} out of range")));
        }
        Ok(if frac { Threshold::Frac(x) } else { Threshold::Abs(x) })
    };
    let kind = match head {
        "low" => FilterKind::Lowpass(parse_one(value_str)?),
        "high" => FilterKind::Highpass(parse_one(value_str)?),
        "band" => {
            let (lo, hi) = value_str.split_once('-').ok_or_else(err)?;
            let (lo, hi) = (parse_one(lo)?, parse_one(hi)?);
            let (Threshold::Abs(a) | Threshold::Frac(a), Threshold::Abs(b) | Threshold::Frac(b)) =
                (lo, hi);
            if a > b {
                return Err(SpectralError::Spec(format!(
                    "band low {a} exceeds high {b}"
                )));
            }
            FilterKind::Bandpass(lo, hi)
        }
        _ => return Err(err()),
    };
    Ok(FilterSpec { kind, shape })
}

/// Binary mask over the centered M×N spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyMask {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<bool>,
}

impl FrequencyMask {
    pub fn ones_count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }
}

/// Distance of bin (u,v) from the exact grid center (M/2, N/2):
/// L∞ for the rectangular shape, Euclidean for the circular one.
pub fn radius(u: usize, v: usize, m: usize, n: usize, shape: MaskShape) -> f64 {
    let du = u as f64 - m as f64 / 2.0;
    let dv = v as f64 - n as f64 / 2.0;
    match shape {
        MaskShape::Rectangular => du.abs().max(dv.abs()),
        MaskShape::Circular => (du * du + dv * dv).sqrt(),
    }
}

pub fn make_mask(spec: &FilterSpec, m: usize, n: usize) -> Result<FrequencyMask> {
    let keep: Box<dyn Fn(f64) -> bool> = match spec.kind {
        FilterKind::Lowpass(t) => {
            let t = t.resolve(m, n);
            Box::new(move |r| r <= t)
        }
        FilterKind::Highpass(t) => {
            let t = t.resolve(m, n);
            Box::new(move |r| r > t)
        }
        FilterKind::Bandpass(lo, hi) => {
            let (lo, hi) = (lo.resolve(m, n), hi.resolve(m, n));
            if lo > hi {
                return Err(SpectralError::Spec(format!(
                    "band low {lo} exceeds high {hi}"
                )));
            }
            Box::new(move |r| lo <= r && r <= hi)
        }
    };
    let mut values = vec![false; m * n];
    for u in 0..m {
        for v in 0..n {
            values[u * n + v] = keep(radius(u, v, m, n, spec.shape));
        }
    }
    Ok(FrequencyMask {
        rows: m,
        cols: n,
        values,
    })
}

/// Per channel: fft2 → fftshift → mask → ifftshift → ifft2 → real part.
/// The output is not clamped to [0,1].
pub fn apply_filter(img: &Image, spec: &FilterSpec) -> Result<Image> {
    let (h, w) = (img.height(), img.width());
    let mask = make_mask(spec, h, w)?;
    let mut out = Vec::with_capacity(img.len());
    for c in 0..img.channels() {
        let f = numerics::fft2(h, w, img.channel(c))?;
        let mut centered = numerics::fftshift(&f);
        for (i, &keep) in mask.values.iter().enumerate() {
            if !keep {
                centered.re[i] = 0.0;
                centered.im[i] = 0.0;
            }
        }
        let g = numerics::ifftshift(&centered);
        out.extend(numerics::ifft2(&g)?);
    }
    img.with_pixels(out)
        .map_err(|e| SpectralError::Spec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;
    use crate::numerics::RngStream;

    fn random_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = RngStream::new(seed, 0);
        let pixels = (0..h * w).map(|_| rng.next_f64()).collect();
        Image::new(1, h, w, pixels).unwrap()
    }

    #[test]
    fn radius_examples() {
        assert_eq!(radius(32, 32, 64, 64, MaskShape::Rectangular), 0.0);
        assert_eq!(radius(32, 32, 64, 64, MaskShape::Circular), 0.0);
        assert_eq!(radius(0, 0, 64, 64, MaskShape::Rectangular), 32.0);
        let r = radius(0, 0, 64, 64, MaskShape::Circular);
        assert!((r - 32.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn lowpass_mask_count_matches_formula() {
        // integer points in the L-inf ball of radius t around the center
        for t in 0..=8u32 {
            let spec = FilterSpec::lowpass(t as f64);
            let mask = make_mask(&spec, 64, 64).unwrap();
            // brute enumeration oracle
            let mut brute = 0usize;
            for u in 0..64usize {
                for v in 0..64usize {
                    let du = (u as f64 - 32.0).abs();
                    let dv = (v as f64 - 32.0).abs();
                    if du <= t as f64 && dv <= t as f64 {
                        brute += 1;
                    }
                }
            }
            assert_eq!(mask.ones_count(), brute);
            assert_eq!(brute, ((2 * t + 1) * (2 * t + 1)) as usize);
        }
    }

    #[test]
    fn highpass_is_exact_complement() {
        for shape in [MaskShape::Rectangular, MaskShape::Circular] {
            for t in [0.0, 2.0, 7.5, 31.0] {
                let lo = make_mask(&FilterSpec::lowpass(t).with_shape(shape), 64, 64).unwrap();
                let hi = make_mask(&FilterSpec::highpass(t).with_shape(shape), 64, 64).unwrap();
                for (a, b) in lo.values.iter().zip(&hi.values) {
                    assert!(a ^ b);
                }
            }
        }
        let hi = make_mask(&FilterSpec::highpass(2.0), 64, 64).unwrap();
        assert_eq!(hi.ones_count(), 64 * 64 - 25);
    }

    #[test]
    fn bandpass_from_zero_equals_lowpass() {
        let band = make_mask(&FilterSpec::bandpass(0.0, 10.0), 64, 64).unwrap();
        let low = make_mask(&FilterSpec::lowpass(10.0), 64, 64).unwrap();
        assert_eq!(band, low);
    }

    #[test]
    fn band_ladder_partitions_lowpass() {
        let (t1, t2) = (3.0, 9.0);
        let a = make_mask(&FilterSpec::bandpass(0.0, t1), 64, 64).unwrap();
        let b = make_mask(&FilterSpec::bandpass(t1 + 1.0, t2), 64, 64).unwrap();
        let low = make_mask(&FilterSpec::lowpass(t2), 64, 64).unwrap();
        for i in 0..a.values.len() {
            assert!(!(a.values[i] && b.values[i]), "bands overlap at {i}");
            assert_eq!(a.values[i] || b.values[i], low.values[i]);
        }
    }

    #[test]
    fn bandpass_rejects_inverted_band() {
        assert!(make_mask(&FilterSpec::bandpass(5.0, 2.0), 8, 8).is_err());
        assert!(parse_filter_spec("band:5-2", MaskShape::Rectangular).is_err());
    }

    #[test]
    fn allpass_is_identity() {
        let img = random_image(16, 16, 5);
        let rect = apply_filter(&img, &FilterSpec::lowpass(8.0)).unwrap();
        for (a, b) in img.pixels().iter().zip(rect.pixels()) {
            assert!((a - b).abs() < 1e-9);
        }
        let circ = apply_filter(
            &img,
            &FilterSpec::lowpass(8.0 * std::f64::consts::SQRT_2).with_shape(MaskShape::Circular),
        )
        .unwrap();
        for (a, b) in img.pixels().iter().zip(circ.pixels()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn highpass_kills_constant() {
        let img = Image::new(1, 16, 16, vec![0.7; 256]).unwrap();
        let out = apply_filter(&img, &FilterSpec::highpass(0.0)).unwrap();
        for &v in out.pixels() {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn low_plus_high_reconstructs() {
        let img = random_image(64, 64, 6);
        for t in [0.0, 2.0, 7.0, 25.0] {
            let lo = apply_filter(&img, &FilterSpec::lowpass(t)).unwrap();
            let hi = apply_filter(&img, &FilterSpec::highpass(t)).unwrap();
            for i in 0..img.len() {
                assert!((lo.pixels()[i] + hi.pixels()[i] - img.pixels()[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn filter_is_linear_and_idempotent() {
        let x = random_image(16, 16, 7);
        let y = random_image(16, 16, 8);
        let spec = FilterSpec::bandpass(2.0, 5.0);
        let (a, b) = (0.37, -1.21);
        let combo: Vec<f64> = x
            .pixels()
            .iter()
            .zip(y.pixels())
            .map(|(p, q)| a * p + b * q)
            .collect();
        let combo_img = x.with_pixels(combo).unwrap();
        let f_combo = apply_filter(&combo_img, &spec).unwrap();
        let fx = apply_filter(&x, &spec).unwrap();
        let fy = apply_filter(&y, &spec).unwrap();
        for i in 0..x.len() {
            assert!((f_combo.pixels()[i] - (a * fx.pixels()[i] + b * fy.pixels()[i])).abs() < 1e-9);
        }
        let twice = apply_filter(&fx, &spec).unwrap();
        for i in 0..x.len() {
            assert!((twice.pixels()[i] - fx.pixels()[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn lowpass_energy_is_monotone_in_threshold() {
        let img = random_image(32, 32, 9);
        let mut prev = 0.0;
        for t in [0.0, 1.0, 2.0, 4.0, 8.0, 16.0] {
            let out = apply_filter(&img, &FilterSpec::lowpass(t)).unwrap();
            let energy: f64 = out.pixels().iter().map(|v| v * v).sum();
            assert!(energy + 1e-9 >= prev, "energy dropped at t={t}");
            prev = energy;
        }
    }

    #[test]
    fn parse_grammar() {
        let s = parse_filter_spec("low:10", MaskShape::Rectangular).unwrap();
        assert_eq!(s.kind, FilterKind::Lowpass(Threshold::Abs(10.0)));
        let s = parse_filter_spec("high:30", MaskShape::Circular).unwrap();
        assert_eq!(s.shape, MaskShape::Circular);
        let s = parse_filter_spec("band:10-30", MaskShape::Rectangular).unwrap();
        assert_eq!(
            s.kind,
            FilterKind::Bandpass(Threshold::Abs(10.0), Threshold::Abs(30.0))
        );
        let s = parse_filter_spec("low:frac:0.04", MaskShape::Rectangular).unwrap();
        assert_eq!(s.kind, FilterKind::Lowpass(Threshold::Frac(0.04)));
        for bad in ["", "low", "low:", "mid:3", "band:3", "low:-2", "low:nan"] {
            assert!(parse_filter_spec(bad, MaskShape::Rectangular).is_err(), "{bad}");
        }
    }

    #[test]
    fn fractional_thresholds_floor_against_half_extent() {
        // fractions 10/128 etc. land on {2,7,12,25} at 64x64
        for (frac, want) in [
            (10.0 / 128.0, 2.0),
            (30.0 / 128.0, 7.0),
            (50.0 / 128.0, 12.0),
            (100.0 / 128.0, 25.0),
        ] {
            assert_eq!(Threshold::Frac(frac).resolve(64, 64), want);
        }
    }
}
