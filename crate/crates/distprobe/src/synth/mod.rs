//! Synthetic sample distributions with exact density oracles, the toy
//! diffusion generator with classifier guidance, and the autophagy
//! (generations trained on their own output) loop.

pub mod autophagy;
pub mod diffusion;

use crate::imaging::Image;
use crate::numerics::{self, RngStream};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid distribution spec: {0}")]
    Spec(String),
    #[error("oracle contract violation: {0}")]
    Oracle(String),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
    #[error(transparent)]
    Classifier(#[from] crate::classifier::ClassifierError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// One Gaussian intensity bump with a jittered center.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct BlobComponent {
    pub weight: f64,
    pub center_y: f64,
    pub center_x: f64,
    /// sd of the center jitter in pixels
    pub jitter: f64,
    /// spatial sd of the rendered bump
    pub sigma: f64,
}

/// One 2-D Gaussian mixture component.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GaussComponent2d {
    pub weight: f64,
    pub mean: [f64; 2],
    /// covariance entries [sxx, sxy, syy]
    pub cov: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub enum Family {
    /// i.i.d. {0,1} pixels with success probability theta
    BernoulliPixels {
        theta: f64,
        c: usize,
        h: usize,
        w: usize,
    },
    /// Gaussian spectra shaped per integer L∞-radius band, inverse-FFT'd,
    /// standardized to mean 0.5 / sd 0.15 and clamped to [0,1]
    SpectralNoise {
        c: usize,
        h: usize,
        w: usize,
        /// sigma for radius band r ∈ [r, r+1); zero beyond the ladder
        band_sigmas: Vec<f64>,
    },
    /// grayscale Gaussian bumps with jittered centers plus pixel noise
    BlobImage {
        h: usize,
        w: usize,
        components: Vec<BlobComponent>,
        pixel_noise: f64,
    },
    /// 2-D Gaussian mixture emitted as 1×1×2 "images"
    Point2dMixture { components: Vec<GaussComponent2d> },
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DistributionSpec {
    pub name: String,
    pub family: Family,
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        match &self.family {
            Family::BernoulliPixels { theta, c, h, w } => {
                if !(0.0..=1.0).contains(theta) {
                    return Err(SynthError::Spec(format!("theta {theta} outside [0,1]")));
                }
                if *c == 0 || *h == 0 || *w == 0 {
                    return Err(SynthError::Spec("zero extent".into()));
                }
            }
            Family::SpectralNoise {
                c, h, w, band_sigmas,
            } => {
                if *c == 0 || *h == 0 || *w == 0 {
                    return Err(SynthError::Spec("zero extent".into()));
                }
                if !h.is_power_of_two() || !w.is_power_of_two() || *h < 2 || *w < 2 {
                    return Err(SynthError::Spec(format!(
                        "spectral noise needs power-of-two extents, got {h}x{w}"
                    )));
                }
                if band_sigmas.is_empty() || band_sigmas.iter().any(|s| *s < 0.0 || !s.is_finite())
                {
                    return Err(SynthError::Spec("band sigmas must be nonnegative".into()));
                }
            }
            Family::BlobImage {
                h, w, components, pixel_noise,
            } => {
                if *h == 0 || *w == 0 || components.is_empty() {
                    return Err(SynthError::Spec("blob image needs extents and components".into()));
                }
                check_weights(components.iter().map(|b| b.weight))?;
                if *pixel_noise < 0.0 {
                    return Err(SynthError::Spec("negative pixel noise".into()));
                }
            }
            Family::Point2dMixture { components } => {
                if components.is_empty() {
                    return Err(SynthError::Spec("empty mixture".into()));
                }
                check_weights(components.iter().map(|g| g.weight))?;
                for g in components {
                    let [sxx, sxy, syy] = g.cov;
                    if sxx < 0.0 || syy < 0.0 || sxx * syy - sxy * sxy < -1e-12 {
                        return Err(SynthError::Spec(format!(
                            "component covariance {:?} is not PSD",
                            g.cov
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Sample shape as (channels, height, width); point clouds are 1×1×2.
    pub fn sample_shape(&self) -> (usize, usize, usize) {
        match &self.family {
            Family::BernoulliPixels { c, h, w, .. } => (*c, *h, *w),
            Family::SpectralNoise { c, h, w, .. } => (*c, *h, *w),
            Family::BlobImage { h, w, .. } => (1, *h, *w),
            Family::Point2dMixture { .. } => (1, 1, 2),
        }
    }
}

fn check_weights(weights: impl Iterator<Item = f64>) -> Result<()> {
    let mut sum = 0.0;
    for w in weights {
        if w < 0.0 || !w.is_finite() {
            return Err(SynthError::Spec(format!("bad mixture weight {w}")));
        }
        sum += w;
    }
    if (sum - 1.0).abs() > 1e-12 {
        return Err(SynthError::Spec(format!("mixture weights sum to {sum}")));
    }
    Ok(())
}

fn pick_component(weights: &[f64], rng: &mut RngStream) -> usize {
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Draw n i.i.d. samples. Deterministic given the rng stream state.
pub fn sample(spec: &DistributionSpec, n: usize, rng: &mut RngStream) -> Result<Vec<Image>> {
    spec.validate()?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(sample_one(spec, rng)?);
    }
    Ok(out)
}

fn sample_one(spec: &DistributionSpec, rng: &mut RngStream) -> Result<Image> {
    match &spec.family {
        Family::BernoulliPixels { theta, c, h, w } => {
            let pixels = (0..c * h * w)
                .map(|_| if rng.bernoulli(*theta) { 1.0 } else { 0.0 })
                .collect();
            Ok(Image::new(*c, *h, *w, pixels)?)
        }
        Family::SpectralNoise {
            c, h, w, band_sigmas,
        } => {
            let mut pixels = Vec::with_capacity(c * h * w);
            for _ in 0..*c {
                pixels.extend(spectral_channel(*h, *w, band_sigmas, rng)?);
            }
            Ok(Image::new(*c, *h, *w, pixels)?)
        }
        Family::BlobImage {
            h, w, components, pixel_noise,
        } => {
            let weights: Vec<f64> = components.iter().map(|b| b.weight).collect();
            let comp = &components[pick_component(&weights, rng)];
            let cy = comp.center_y + comp.jitter * rng.gaussian();
            let cx = comp.center_x + comp.jitter * rng.gaussian();
            let inv = 1.0 / (2.0 * comp.sigma * comp.sigma);
            let mut pixels = Vec::with_capacity(h * w);
            for y in 0..*h {
                for x in 0..*w {
                    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    let mut v = (-d2 * inv).exp();
                    if *pixel_noise > 0.0 {
                        v += pixel_noise * rng.gaussian();
                    }
                    pixels.push(v.clamp(0.0, 1.0));
                }
            }
            Ok(Image::new(1, *h, *w, pixels)?)
        }
        Family::Point2dMixture { components } => {
            let weights: Vec<f64> = components.iter().map(|g| g.weight).collect();
            let g = &components[pick_component(&weights, rng)];
            let [sxx, sxy, syy] = g.cov;
            // 2x2 Cholesky
            let l11 = sxx.max(0.0).sqrt();
            let l21 = if l11 > 0.0 { sxy / l11 } else { 0.0 };
            let l22 = (syy - l21 * l21).max(0.0).sqrt();
            let (z1, z2) = (rng.gaussian(), rng.gaussian());
            let x = g.mean[0] + l11 * z1;
            let y = g.mean[1] + l21 * z1 + l22 * z2;
            Ok(Image::new(1, 1, 2, vec![x, y])?)
        }
    }
}

/// Shaped spectral noise for one channel: white noise, FFT, multiply each
/// centered bin by the sigma of its integer L∞ band, inverse FFT, then
/// standardize to mean 0.5 / sd 0.15 and clamp.
fn spectral_channel(
    h: usize,
    w: usize,
    band_sigmas: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    let white: Vec<f64> = (0..h * w).map(|_| rng.gaussian()).collect();
    let f = numerics::fft2(h, w, &white)?;
    let mut centered = numerics::fftshift(&f);
    for u in 0..h {
        for v in 0..w {
            let r = crate::spectral::radius(u, v, h, w, crate::spectral::MaskShape::Rectangular);
            let band = r.floor() as usize;
            let sigma = band_sigmas.get(band).copied().unwrap_or(0.0);
            let i = u * w + v;
            centered.re[i] *= sigma;
            centered.im[i] *= sigma;
        }
    }
    let spatial = numerics::ifft2(&numerics::ifftshift(&centered))?;
    let n = spatial.len() as f64;
    let mean: f64 = spatial.iter().sum::<f64>() / n;
    let var: f64 = spatial.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(1e-12);
    Ok(spatial
        .iter()
        .map(|v| (0.5 + 0.15 * (v - mean) / sd).clamp(0.0, 1.0))
        .collect())
}

/// Fraction of pixels that hit the clamp rails in a sample set; the
/// spectral construction keeps this small but nonzero.
pub fn clamp_rate(images: &[Image]) -> f64 {
    let mut clamped = 0usize;
    let mut total = 0usize;
    for img in images {
        for &v in img.pixels() {
            if v == 0.0 || v == 1.0 {
                clamped += 1;
            }
            total += 1;
        }
    }
    clamped as f64 / total.max(1) as f64
}

// ---------------------------------------------------------------------------
// Exact density oracles for finite-support families.
// ---------------------------------------------------------------------------

/// Pointwise densities over an enumerated finite support (Bernoulli-pixel
/// images with at most 20 pixels).
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOracle {
    /// dimension of the binary support (support size is 2^dim)
    pub dim: usize,
    /// probability of each outcome, indexed by the pixel bitmask
    pub probs: Vec<f64>,
}

pub const MAX_ORACLE_DIM: usize = 20;

impl DensityOracle {
    pub fn enumerate(spec: &DistributionSpec) -> Result<Self> {
        spec.validate()?;
        let Family::BernoulliPixels { theta, c, h, w } = &spec.family else {
            return Err(SynthError::Oracle(format!(
                "{} has no finite enumeration",
                spec.name
            )));
        };
        let dim = c * h * w;
        if dim > MAX_ORACLE_DIM {
            return Err(SynthError::Oracle(format!(
                "support 2^{dim} too large to enumerate"
            )));
        }
        let mut probs = Vec::with_capacity(1 << dim);
        for mask in 0u64..(1 << dim) {
            let ones = mask.count_ones() as i32;
            probs.push(theta.powi(ones) * (1.0 - theta).powi(dim as i32 - ones));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-10 {
            return Err(SynthError::Oracle(format!("probabilities sum to {total}")));
        }
        Ok(Self { dim, probs })
    }

    /// Outcome index of a sampled image under this oracle's enumeration.
    pub fn outcome_index(&self, img: &Image) -> Result<usize> {
        if img.len() != self.dim {
            return Err(SynthError::Oracle(format!(
                "image has {} pixels, oracle dim is {}",
                img.len(),
                self.dim
            )));
        }
        let mut mask = 0usize;
        for (i, &v) in img.pixels().iter().enumerate() {
            if v >= 0.5 {
                mask |= 1 << i;
            }
        }
        Ok(mask)
    }
}

fn check_matching(p: &DensityOracle, q: &DensityOracle) -> Result<()> {
    if p.dim != q.dim {
        return Err(SynthError::Oracle(format!(
            "support mismatch: dim {} vs {}",
            p.dim, q.dim
        )));
    }
    Ok(())
}

/// Exact (TV, JSD) over a shared finite support, JSD in nats with the
/// 0·log 0 := 0 convention.
pub fn exact_divergences(p: &DensityOracle, q: &DensityOracle) -> Result<(f64, f64)> {
    check_matching(p, q)?;
    let mut tv = 0.0;
    let mut jsd = 0.0;
    for (&pp, &qq) in p.probs.iter().zip(&q.probs) {
        tv += (pp - qq).abs();
        let m = 0.5 * (pp + qq);
        if pp > 0.0 {
            jsd += 0.5 * pp * (pp / m).ln();
        }
        if qq > 0.0 {
            jsd += 0.5 * qq * (qq / m).ln();
        }
    }
    Ok((0.5 * tv, jsd))
}

/// Best achievable balanced binary accuracy: ½Σ max(p,q) = (1+TV)/2.
pub fn bayes_accuracy(p: &DensityOracle, q: &DensityOracle) -> Result<f64> {
    check_matching(p, q)?;
    Ok(0.5
        * p.probs
            .iter()
            .zip(&q.probs)
            .map(|(&a, &b)| a.max(b))
            .sum::<f64>())
}

// ---------------------------------------------------------------------------
// Distribution-spec string grammar (the `synth:` CLI source).
// ---------------------------------------------------------------------------

/// Parse a compact spec string:
///   `bern:theta=0.3,c=1,h=2,w=2`
///   `spectral:c=1,h=32,w=32,bands=0-4:1;8-12:0.5`
///   `blob:h=16,w=16,noise=0.05,comps=8:8:2:2:1`      (cy:cx:jitter:sigma:weight)
///   `point2:comps=-1:0:0.09:0:0.09:0.5;1:0:0.09:0:0.09:0.5`
///                                     (mx:my:sxx:sxy:syy:weight)
/// Upper bound on c·h·w accepted from textual specs; keeps hostile input
/// from forcing absurd allocations before sampling even starts.
pub const MAX_PARSED_PIXELS: usize = 1 << 24;

pub fn parse_dist_spec(name: &str, s: &str) -> Result<DistributionSpec> {
    let err = |m: String| SynthError::Spec(m);
    let check_extent = |c: usize, h: usize, w: usize| -> Result<()> {
        if c.saturating_mul(h).saturating_mul(w) > MAX_PARSED_PIXELS {
            Err(SynthError::Spec(format!(
                "extent {c}x{h}x{w} exceeds {MAX_PARSED_PIXELS} pixels"
            )))
        } else {
            Ok(())
        }
    };
    let (head, rest) = s
        .split_once(':')
        .ok_or_else(|| err(format!("missing family in {s:?}")))?;
    let mut kv = std::collections::BTreeMap::new();
    for part in rest.split(',') {
        if part.is_empty() {
            continue;
        }
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {part:?}")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get_f64 = |kv: &std::collections::BTreeMap<String, String>, key: &str, default: Option<f64>| -> Result<f64> {
        match kv.get(key) {
            Some(v) => v
                .parse::<f64>()
                .map_err(|e| err(format!("bad {key}={v}: {e}")))
                .and_then(|x| {
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(err(format!("non-finite {key}")))
                    }
                }),
            None => default.ok_or_else(|| err(format!("missing {key}"))),
        }
    };
    let get_usize = |kv: &std::collections::BTreeMap<String, String>, key: &str, default: Option<usize>| -> Result<usize> {
        match kv.get(key) {
            Some(v) => v.parse::<usize>().map_err(|e| err(format!("bad {key}={v}: {e}"))),
            None => default.ok_or_else(|| err(format!("missing {key}"))),
        }
    };
    let family = match head {
        "bern" => Family::BernoulliPixels {
            theta: get_f64(&kv, "theta", None)?,
            c: get_usize(&kv, "c", Some(1))?,
            h: get_usize(&kv, "h", None)?,
            w: get_usize(&kv, "w", None)?,
        },
        "spectral" => {
            let h = get_usize(&kv, "h", None)?;
            let w = get_usize(&kv, "w", None)?;
            check_extent(get_usize(&kv, "c", Some(1))?, h, w)?;
            let bands = kv
                .get("bands")
                .ok_or_else(|| err("missing bands".into()))?;
            let mut ladder: Vec<f64> = Vec::new();
            for seg in bands.split(';') {
                let (range, sigma) = seg
                    .split_once(':')
                    .ok_or_else(|| err(format!("bad band {seg:?}")))?;
                let sigma: f64 = sigma
                    .parse()
                    .map_err(|e| err(format!("bad sigma in {seg:?}: {e}")))?;
                if !sigma.is_finite() || sigma < 0.0 {
                    return Err(err(format!("bad sigma in {seg:?}")));
                }
                let (lo, hi) = match range.split_once('-') {
                    Some((a, b)) => (
                        a.parse::<usize>().map_err(|e| err(format!("bad band {seg:?}: {e}")))?,
                        b.parse::<usize>().map_err(|e| err(format!("bad band {seg:?}: {e}")))?,
                    ),
                    None => {
                        let r = range
                            .parse::<usize>()
                            .map_err(|e| err(format!("bad band {seg:?}: {e}")))?;
                        (r, r)
                    }
                };
                if lo > hi || hi > h.max(w) {
                    return Err(err(format!("band {seg:?} out of range")));
                }
                if ladder.len() <= hi {
                    ladder.resize(hi + 1, 0.0);
                }
                for slot in ladder.iter_mut().take(hi + 1).skip(lo) {
                    *slot = sigma;
                }
            }
            Family::SpectralNoise {
                c: get_usize(&kv, "c", Some(1))?,
                h,
                w,
                band_sigmas: ladder,
            }
        }
        "blob" => {
            let comps_raw = kv.get("comps").ok_or_else(|| err("missing comps".into()))?;
            let mut components = Vec::new();
            for seg in comps_raw.split(';') {
                let fields: Vec<&str> = seg.split(':').collect();
                if fields.len() != 5 {
                    return Err(err(format!("blob component {seg:?} needs 5 fields")));
                }
                let nums: Vec<f64> = fields
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad {f:?}: {e}"))))
                    .collect::<Result<_>>()?;
                components.push(BlobComponent {
                    center_y: nums[0],
                    center_x: nums[1],
                    jitter: nums[2],
                    sigma: nums[3],
                    weight: nums[4],
                });
            }
            Family::BlobImage {
                h: get_usize(&kv, "h", None)?,
                w: get_usize(&kv, "w", None)?,
                components,
                pixel_noise: get_f64(&kv, "noise", Some(0.0))?,
            }
        }
        "point2" => {
            let comps_raw = kv.get("comps").ok_or_else(|| err("missing comps".into()))?;
            let mut components = Vec::new();
            for seg in comps_raw.split(';') {
                let fields: Vec<&str> = seg.split(':').collect();
                if fields.len() != 6 {
                    return Err(err(format!("point2 component {seg:?} needs 6 fields")));
                }
                let nums: Vec<f64> = fields
                    .iter()
                    .map(|f| f.parse::<f64>().map_err(|e| err(format!("bad {f:?}: {e}"))))
                    .collect::<Result<_>>()?;
                components.push(GaussComponent2d {
                    mean: [nums[0], nums[1]],
                    cov: [nums[2], nums[3], nums[4]],
                    weight: nums[5],
                });
            }
            Family::Point2dMixture { components }
        }
        other => return Err(err(format!("unknown family {other:?}"))),
    };
    let spec = DistributionSpec {
        name: name.to_string(),
        family,
    };
    let (c, h, w) = spec.sample_shape();
    check_extent(c, h, w)?;
    spec.validate()?;
    Ok(spec)
}

/// Materialize a spec into the dataset directory layout:
/// `<root>/<name>/{train,val}/NNNNN.<ext>`.
pub fn materialize(
    spec: &DistributionSpec,
    root: &std::path::Path,
    train_n: usize,
    val_n: usize,
    rng: &mut RngStream,
    use_png: bool,
) -> Result<()> {
    let ext = if use_png { "png" } else { "ntf" };
    for (split, n) in [("train", train_n), ("val", val_n)] {
        let dir = root.join(&spec.name).join(split);
        std::fs::create_dir_all(&dir).map_err(crate::imaging::ImagingError::Io)?;
        let images = sample(spec, n, rng)?;
        for (i, img) in images.iter().enumerate() {
            crate::imaging::save_image(img, &dir.join(format!("{i:05}.{ext}")))?;
        }
    }
    Ok(())
}
