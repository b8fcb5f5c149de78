//! Experiment harness: probes, null checks, scaling curves, frequency and
//! crop sweeps, mixing evaluation, multi-way classification, autophagy
//! drift tracking, the guidance demo, and the Fréchet comparator.
//!
//! Every ladder point draws its data from a dedicated rng stream derived
//! from (experiment kind, abscissa, trial), so points never share random
//! state and any point can be reproduced in isolation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::classifier::{
    self, ClassData, ModelSpec, ProbeReport, TrainConfig, TrainedModel,
};
use crate::imaging::{self, Image};
use crate::numerics::{mix_str, mix_stream_id, RngStream};
use crate::spectral::FilterSpec;
use crate::synth::autophagy::{autophagy_loop, AutophagyConfig, GaussianModel};
use crate::synth::diffusion::{
    ancestral_sample, train_denoiser, train_noised_classifier, DiffusionTrainConfig, Guidance,
    GuidanceTrainConfig, NoiseSchedule,
};
use crate::synth::{self, DistributionSpec};

#[derive(Debug, Error)]
pub enum ProbesError {
    #[error("experiment spec error: {0}")]
    Spec(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Classifier(#[from] classifier::ClassifierError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Spectral(#[from] crate::spectral::SpectralError),
    #[error(transparent)]
    Imaging(#[from] imaging::ImagingError),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ProbesError>;

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ModelKind {
    Logistic,
    Mlp,
    SmallConv,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(Self::Logistic),
            "mlp" => Ok(Self::Mlp),
            "smallconv" => Ok(Self::SmallConv),
            _ => Err(ProbesError::Spec(format!(
                "unknown model {s:?} (expected logistic | mlp | smallconv)"
            ))),
        }
    }

    pub fn spec(&self, c: usize, h: usize, w: usize, k: usize) -> ModelSpec {
        match self {
            Self::Logistic => ModelSpec::logistic(c, h, w, k),
            Self::Mlp => ModelSpec::mlp(c, h, w, k),
            Self::SmallConv => ModelSpec::smallconv(c, h, w, k),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Logistic => "logistic",
            Self::Mlp => "mlp",
            Self::SmallConv => "smallconv",
        }
    }
}

/// One participating distribution: an oracle-backed synthetic spec or a
/// pre-loaded dataset with fixed splits.
#[derive(Debug, Clone)]
pub struct DistInput {
    pub name: String,
    pub source: Source,
}

#[derive(Debug, Clone)]
pub enum Source {
    Synth(DistributionSpec),
    Images {
        train: Vec<Image>,
        heldout: Vec<Image>,
    },
}

impl DistInput {
    pub fn synth(spec: DistributionSpec) -> Self {
        Self {
            name: spec.name.clone(),
            source: Source::Synth(spec),
        }
    }

    pub fn shape(&self) -> Result<(usize, usize, usize)> {
        match &self.source {
            Source::Synth(s) => Ok(s.sample_shape()),
            Source::Images { train, .. } => {
                let img = train
                    .first()
                    .ok_or_else(|| ProbesError::Spec(format!("{}: empty train split", self.name)))?;
                Ok((img.channels(), img.height(), img.width()))
            }
        }
    }

    /// Materialize train/held-out splits. Synthetic sources draw fresh
    /// samples from `rng`; image sources take deterministic prefixes.
    pub fn draw(&self, train_n: usize, heldout_n: usize, rng: &mut RngStream) -> Result<ClassData> {
        match &self.source {
            Source::Synth(spec) => Ok(ClassData {
                name: self.name.clone(),
                train: synth::sample(spec, train_n, rng)?,
                heldout: synth::sample(spec, heldout_n, rng)?,
            }),
            Source::Images { train, heldout } => {
                if train.len() < train_n || heldout.len() < heldout_n {
                    return Err(ProbesError::Spec(format!(
                        "{}: need {train_n}+{heldout_n} samples, have {}+{}",
                        self.name,
                        train.len(),
                        heldout.len()
                    )));
                }
                Ok(ClassData {
                    name: self.name.clone(),
                    train: train[..train_n].to_vec(),
                    heldout: heldout[..heldout_n].to_vec(),
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    pub model: ModelKind,
    pub train: TrainConfig,
    pub train_n: usize,
    pub heldout_n: usize,
    pub master_seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Logistic,
            train: TrainConfig::default(),
            train_n: 200,
            heldout_n: 400,
            master_seed: 0,
        }
    }
}

/// Stream id for one ladder point: hash of (kind, abscissa, trial).
pub fn point_stream(kind: &str, abscissa: f64, trial: u64) -> u64 {
    mix_stream_id(&[mix_str(kind), abscissa.to_bits(), trial])
}

fn train_seed(master_seed: u64, stream: u64) -> u64 {
    mix_stream_id(&[master_seed, stream, mix_str("train")])
}

// ---------------------------------------------------------------------------
// Report plumbing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CurvePoint {
    pub abscissa: f64,
    /// human-readable point label (filter spec, mix mode, ...)
    pub label: String,
    pub trial: u64,
    /// rng stream id this point drew its data from
    pub seed: u64,
    pub report: Option<ProbeReport>,
    /// kind-specific metrics (fake_rate, frechet, ...)
    pub extras: BTreeMap<String, f64>,
}

impl CurvePoint {
    fn accuracy(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Summary {
    pub points: usize,
    pub mean_accuracy: Option<f64>,
    pub sd_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReportBundle {
    pub kind: String,
    /// every effective parameter, echoed as strings
    pub config_echo: BTreeMap<String, String>,
    pub points: Vec<CurvePoint>,
    pub summary: Summary,
    /// exact reference values, when an oracle applies
    pub oracle: BTreeMap<String, f64>,
}

impl ReportBundle {
    pub fn assemble(
        kind: &str,
        config_echo: BTreeMap<String, String>,
        mut points: Vec<CurvePoint>,
        oracle: BTreeMap<String, f64>,
    ) -> Self {
        points.sort_by(|a, b| {
            (a.abscissa, &a.label, a.trial)
                .partial_cmp(&(b.abscissa, &b.label, b.trial))
                .unwrap()
        });
        let accs: Vec<f64> = points.iter().filter_map(|p| p.accuracy()).collect();
        let summary = if accs.is_empty() {
            Summary {
                points: points.len(),
                mean_accuracy: None,
                sd_accuracy: None,
            }
        } else {
            let mean = accs.iter().sum::<f64>() / accs.len() as f64;
            let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>()
                / accs.len() as f64;
            Summary {
                points: points.len(),
                mean_accuracy: Some(mean),
                sd_accuracy: Some(var.sqrt()),
            }
        };
        Self {
            kind: kind.to_string(),
            config_echo,
            points,
            summary,
            oracle,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Copy with wall-clock fields zeroed, for byte-level reproducibility
    /// comparisons.
    pub fn normalized(&self) -> Self {
        let mut out = self.clone();
        for p in out.points.iter_mut() {
            if let Some(r) = p.report.as_mut() {
                r.wall_clock_secs = 0.0;
            }
        }
        out
    }

    /// CSV with one row per point: fixed metric columns then the sorted
    /// union of extra-metric keys.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        let mut extra_keys: Vec<&str> = Vec::new();
        for p in &self.points {
            for k in p.extras.keys() {
                if !extra_keys.contains(&k.as_str()) {
                    extra_keys.push(k);
                }
            }
        }
        extra_keys.sort_unstable();
        write!(
            w,
            "abscissa,label,trial,seed,accuracy,cross_entropy_nats,tv_lower,jsd_estimate"
        )?;
        for k in &extra_keys {
            write!(w, ",{k}")?;
        }
        writeln!(w)?;
        for p in &self.points {
            write!(w, "{},{},{},{}", p.abscissa, p.label, p.trial, p.seed)?;
            match &p.report {
                Some(r) => {
                    write!(w, ",{},{}", r.accuracy, r.cross_entropy_nats)?;
                    match &r.divergence {
                        Some(d) => write!(w, ",{},{}", d.tv_lower, d.jsd_estimate)?,
                        None => write!(w, ",,")?,
                    }
                }
                None => write!(w, ",,,,")?,
            }
            for k in &extra_keys {
                match p.extras.get(*k) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Core probe path
// ---------------------------------------------------------------------------

/// Draw every class's splits for one ladder point. Class i reads from
/// substream i of the point's data stream.
pub fn draw_classes(
    dists: &[DistInput],
    cfg: &ProbeConfig,
    kind: &str,
    abscissa: f64,
    trial: u64,
) -> Result<(Vec<ClassData>, u64)> {
    if dists.len() < 2 {
        return Err(ProbesError::Spec(format!(
            "need >= 2 distributions, got {}",
            dists.len()
        )));
    }
    let shape = dists[0].shape()?;
    for d in &dists[1..] {
        if d.shape()? != shape {
            return Err(ProbesError::Spec(format!(
                "{} disagrees on sample shape",
                d.name
            )));
        }
    }
    let stream = point_stream(kind, abscissa, trial);
    let base = RngStream::new(cfg.master_seed, stream);
    let classes = dists
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut rng = base.substream(i as u64);
            d.draw(cfg.train_n, cfg.heldout_n, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((classes, stream))
}

/// Train one classifier over prepared class splits.
pub fn train_on_classes(
    classes: &[ClassData],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(TrainedModel, ProbeReport)> {
    let img = classes[0]
        .train
        .first()
        .ok_or_else(|| ProbesError::Spec("empty class".into()))?;
    let (c, h, w) = match cfg.train.augmentation.random_crop {
        Some((_, s)) => (img.channels(), s, s),
        None => (img.channels(), img.height(), img.width()),
    };
    let spec = cfg.model.spec(c, h, w, classes.len());
    let mut tc = cfg.train.clone();
    tc.seed = seed;
    Ok(classifier::train(&spec, classes, &tc)?)
}

/// One complete probe: draw, train, evaluate. Returns the model, the
/// held-out report, and the data stream id.
pub fn run_probe(
    dists: &[DistInput],
    cfg: &ProbeConfig,
    kind: &str,
    abscissa: f64,
    trial: u64,
) -> Result<(TrainedModel, ProbeReport, u64)> {
    let (classes, stream) = draw_classes(dists, cfg, kind, abscissa, trial)?;
    let (model, report) = train_on_classes(&classes, cfg, train_seed(cfg.master_seed, stream))?;
    Ok((model, report, stream))
}

/// k-way probe (k >= 3) with the full confusion matrix in the report.
pub fn multiway_probe(dists: &[DistInput], cfg: &ProbeConfig, trial: u64) -> Result<ProbeReport> {
    if dists.len() < 3 {
        return Err(ProbesError::Spec(format!(
            "multiway probe needs >= 3 distributions, got {}",
            dists.len()
        )));
    }
    let (_, report, _) = run_probe(dists, cfg, "multiway", dists.len() as f64, trial)?;
    Ok(report)
}

/// Repeated independent probes of the same pair (or k-tuple); the
/// same-distribution null is this with one spec listed twice.
pub fn repeat_probe(
    dists: &[DistInput],
    cfg: &ProbeConfig,
    kind: &str,
    trials: u64,
) -> Result<ReportBundle> {
    let points = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let (_, report, stream) = run_probe(dists, cfg, kind, 0.0, trial)?;
            Ok(CurvePoint {
                abscissa: 0.0,
                label: dists.iter().map(|d| d.name.as_str()).collect::<Vec<_>>().join("|"),
                trial,
                seed: stream,
                report: Some(report),
                extras: BTreeMap::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = base_echo(cfg);
    echo.insert("trials".into(), trials.to_string());
    Ok(ReportBundle::assemble(kind, echo, points, BTreeMap::new()))
}

fn base_echo(cfg: &ProbeConfig) -> BTreeMap<String, String> {
    let mut echo = BTreeMap::new();
    echo.insert("model".into(), cfg.model.name().into());
    echo.insert("train_n".into(), cfg.train_n.to_string());
    echo.insert("heldout_n".into(), cfg.heldout_n.to_string());
    echo.insert("master_seed".into(), cfg.master_seed.to_string());
    echo.insert("learning_rate".into(), cfg.train.learning_rate.to_string());
    echo.insert("momentum".into(), cfg.train.momentum.to_string());
    echo.insert("batch_size".into(), cfg.train.batch_size.to_string());
    echo.insert("epochs".into(), cfg.train.epochs.to_string());
    echo.insert(
        "label_smoothing".into(),
        cfg.train.label_smoothing.to_string(),
    );
    echo.insert(
        "normalization".into(),
        format!("{:?}", cfg.train.normalization),
    );
    echo.insert(
        "augmentation".into(),
        format!("{:?}", cfg.train.augmentation),
    );
    echo
}

// ---------------------------------------------------------------------------
// Ladder experiments
// ---------------------------------------------------------------------------

fn check_ladder<T: PartialOrd + std::fmt::Debug>(ladder: &[T]) -> Result<()> {
    if ladder.is_empty() {
        return Err(ProbesError::Spec("empty ladder".into()));
    }
    if ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ProbesError::Spec(format!(
            "ladder {ladder:?} is not strictly increasing"
        )));
    }
    Ok(())
}

/// Accuracy as a function of training-set size. For each trial a single
/// pool of max-ladder size is drawn; smaller sizes train on its prefix so
/// the held-out set is identical across sizes.
pub fn scale_curve(
    dists: &[DistInput],
    ladder: &[usize],
    trials: u64,
    cfg: &ProbeConfig,
) -> Result<ReportBundle> {
    check_ladder(ladder)?;
    let max_size = *ladder.last().unwrap();
    let jobs: Vec<(usize, u64)> = ladder
        .iter()
        .flat_map(|&s| (0..trials).map(move |t| (s, t)))
        .collect();
    let points = jobs
        .into_par_iter()
        .map(|(size, trial)| {
            let mut pool_cfg = cfg.clone();
            pool_cfg.train_n = max_size;
            let (mut classes, _) = draw_classes(dists, &pool_cfg, "scale", max_size as f64, trial)?;
            for c in classes.iter_mut() {
                c.train.truncate(size);
            }
            let stream = point_stream("scale", size as f64, trial);
            let (_, report) = train_on_classes(&classes, cfg, train_seed(cfg.master_seed, stream))?;
            Ok(CurvePoint {
                abscissa: size as f64,
                label: "train_size".into(),
                trial,
                seed: stream,
                report: Some(report),
                extras: BTreeMap::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = base_echo(cfg);
    echo.insert("ladder".into(), format!("{ladder:?}"));
    echo.insert("trials".into(), trials.to_string());
    Ok(ReportBundle::assemble("scale_curve", echo, points, BTreeMap::new()))
}

/// Accuracy per frequency filter: both distributions pass through the
/// identical filter before training and evaluation.
pub fn freq_sweep(
    dists: &[DistInput],
    filters: &[FilterSpec],
    trials: u64,
    cfg: &ProbeConfig,
) -> Result<ReportBundle> {
    if filters.is_empty() {
        return Err(ProbesError::Spec("empty filter ladder".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..filters.len())
        .flat_map(|i| (0..trials).map(move |t| (i, t)))
        .collect();
    let points = jobs
        .into_par_iter()
        .map(|(fi, trial)| {
            let filter = &filters[fi];
            let (mut classes, stream) = draw_classes(dists, cfg, "freq", fi as f64, trial)?;
            for c in classes.iter_mut() {
                for img in c.train.iter_mut().chain(c.heldout.iter_mut()) {
                    *img = crate::spectral::apply_filter(img, filter)?;
                }
            }
            let (_, report) = train_on_classes(&classes, cfg, train_seed(cfg.master_seed, stream))?;
            Ok(CurvePoint {
                abscissa: fi as f64,
                label: filter.label(),
                trial,
                seed: stream,
                report: Some(report),
                extras: BTreeMap::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = base_echo(cfg);
    echo.insert(
        "filters".into(),
        filters.iter().map(|f| f.label()).collect::<Vec<_>>().join("|"),
    );
    echo.insert("trials".into(), trials.to_string());
    Ok(ReportBundle::assemble("freq_sweep", echo, points, BTreeMap::new()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CropStrategy {
    Center,
    /// four independently-seeded croppings per size
    Random,
}

pub const RANDOM_CROP_TRIALS: u64 = 4;

/// Accuracy per crop size. Center crops are deterministic; random mode
/// re-crops every image per trial and emits four trials per size.
pub fn crop_sweep(
    dists: &[DistInput],
    sizes: &[usize],
    strategy: CropStrategy,
    cfg: &ProbeConfig,
) -> Result<ReportBundle> {
    check_ladder(sizes)?;
    let (_, h, w) = dists[0].shape()?;
    if sizes.iter().any(|&s| s > h.min(w) || s == 0) {
        return Err(ProbesError::Spec(format!(
            "crop sizes {sizes:?} exceed image extent {h}x{w}"
        )));
    }
    let trials = match strategy {
        CropStrategy::Center => 1,
        CropStrategy::Random => RANDOM_CROP_TRIALS,
    };
    let kind = match strategy {
        CropStrategy::Center => "crop_center",
        CropStrategy::Random => "crop_random",
    };
    let jobs: Vec<(usize, u64)> = sizes
        .iter()
        .flat_map(|&s| (0..trials).map(move |t| (s, t)))
        .collect();
    let points = jobs
        .into_par_iter()
        .map(|(size, trial)| {
            let (mut classes, stream) = draw_classes(dists, cfg, kind, size as f64, trial)?;
            if size < h.min(w) {
                let mut crop_rng = RngStream::new(
                    cfg.master_seed,
                    mix_stream_id(&[stream, mix_str("crop"), trial]),
                );
                for c in classes.iter_mut() {
                    for img in c.train.iter_mut().chain(c.heldout.iter_mut()) {
                        *img = match strategy {
                            CropStrategy::Center => imaging::center_crop(img, size)?,
                            CropStrategy::Random => imaging::random_crop(img, size, &mut crop_rng)?,
                        };
                    }
                }
            }
            let (_, report) = train_on_classes(&classes, cfg, train_seed(cfg.master_seed, stream))?;
            Ok(CurvePoint {
                abscissa: size as f64,
                label: kind.into(),
                trial,
                seed: stream,
                report: Some(report),
                extras: BTreeMap::new(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = base_echo(cfg);
    echo.insert("sizes".into(), format!("{sizes:?}"));
    echo.insert("strategy".into(), format!("{strategy:?}"));
    Ok(ReportBundle::assemble(kind, echo, points, BTreeMap::new()))
}

// ---------------------------------------------------------------------------
// Mixing evaluation (downstream task trained on real/generated mixtures)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum MixMode {
    /// substitute a fraction α of the real training data
    Replace,
    /// add α·|real| generated samples on top of the real data
    Augment,
}

impl MixMode {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Replace => "replace",
            Self::Augment => "augment",
        }
    }

    fn check_alpha(&self, alpha: f64) -> Result<()> {
        let ok = match self {
            Self::Replace => (0.0..=1.0).contains(&alpha),
            Self::Augment => (0.0..=3.0).contains(&alpha),
        };
        if ok {
            Ok(())
        } else {
            Err(ProbesError::Spec(format!(
                "alpha {alpha} out of range for {:?}",
                self
            )))
        }
    }
}

/// Downstream-task accuracy when the labeled training set is mixed with
/// output from a deliberately imperfect generator (a per-class Gaussian
/// moment fit). Replace and augment points at equal α share data and
/// training seeds, so the α = 0 endpoints coincide bit-for-bit with the
/// all-real baseline.
pub fn mix_eval(
    task: &[DistributionSpec],
    alphas: &[f64],
    modes: &[MixMode],
    trials: u64,
    cfg: &ProbeConfig,
) -> Result<ReportBundle> {
    if task.len() < 2 {
        return Err(ProbesError::Spec("mix eval needs a multi-class task".into()));
    }
    if alphas.is_empty() || modes.is_empty() {
        return Err(ProbesError::Spec("empty alpha or mode ladder".into()));
    }
    for m in modes {
        for &a in alphas {
            m.check_alpha(a)?;
        }
    }
    let max_alpha = alphas.iter().cloned().fold(0.0, f64::max);
    let jobs: Vec<(usize, usize, u64)> = modes
        .iter()
        .enumerate()
        .flat_map(|(mi, _)| {
            alphas
                .iter()
                .enumerate()
                .flat_map(move |(ai, _)| (0..trials).map(move |t| (mi, ai, t)))
        })
        .collect();
    let points = jobs
        .into_par_iter()
        .map(|(mi, ai, trial)| {
            let mode = modes[mi];
            let alpha = alphas[ai];
            // the real data and the generator pool depend only on the trial,
            // so every (mode, alpha) point mixes from the same ingredients
            let data_stream = point_stream("mix_data", 0.0, trial);
            let base = RngStream::new(cfg.master_seed, data_stream);
            let mut real: Vec<ClassData> = Vec::with_capacity(task.len());
            for (i, spec) in task.iter().enumerate() {
                let mut rng = base.substream(i as u64);
                real.push(ClassData {
                    name: spec.name.clone(),
                    train: synth::sample(spec, cfg.train_n, &mut rng)?,
                    heldout: synth::sample(spec, cfg.heldout_n, &mut rng)?,
                });
            }
            let max_gen = (cfg.train_n as f64 * max_alpha).round() as usize;
            let mut generated: Vec<Vec<Image>> = Vec::with_capacity(task.len());
            for (i, class) in real.iter().enumerate() {
                let pixels: Vec<Vec<f64>> =
                    class.train.iter().map(|im| im.pixels().to_vec()).collect();
                let fit = GaussianModel::fit(&pixels)?;
                let mut rng = base.substream(1000 + i as u64);
                let (c, h, w) = task[i].sample_shape();
                let imgs = fit
                    .sample(max_gen, &mut rng)
                    .into_iter()
                    .map(|p| {
                        Image::new(c, h, w, p.iter().map(|v| v.clamp(0.0, 1.0)).collect())
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                generated.push(imgs);
            }
            let g = (cfg.train_n as f64 * alpha).round() as usize;
            let classes: Vec<ClassData> = real
                .iter()
                .zip(&generated)
                .map(|(class, gen_pool)| {
                    let mut train = match mode {
                        MixMode::Replace => class.train[..cfg.train_n - g].to_vec(),
                        MixMode::Augment => class.train.clone(),
                    };
                    train.extend(gen_pool[..g].iter().cloned());
                    ClassData {
                        name: class.name.clone(),
                        train,
                        heldout: class.heldout.clone(),
                    }
                })
                .collect();
            // seed depends on (alpha, trial) but not on the mode, so the
            // alpha = 0 points are literally the same computation
            let stream = point_stream("mix_train", alpha, trial);
            let (_, report) = train_on_classes(&classes, cfg, train_seed(cfg.master_seed, stream))?;
            let mut extras = BTreeMap::new();
            extras.insert("generated_per_class".into(), g as f64);
            Ok(CurvePoint {
                abscissa: alpha,
                label: mode.label().into(),
                trial,
                seed: stream,
                report: Some(report),
                extras,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut echo = base_echo(cfg);
    echo.insert("alphas".into(), format!("{alphas:?}"));
    echo.insert(
        "modes".into(),
        modes.iter().map(|m| m.label()).collect::<Vec<_>>().join("|"),
    );
    echo.insert("trials".into(), trials.to_string());
    echo.insert(
        "task".into(),
        task.iter().map(|t| t.name.as_str()).collect::<Vec<_>>().join("|"),
    );
    Ok(ReportBundle::assemble("mix_eval", echo, points, BTreeMap::new()))
}

// ---------------------------------------------------------------------------
// Autophagy drift
// ---------------------------------------------------------------------------

/// Run the self-consuming loop once per seed and flatten every generation
/// into a curve point carrying the Fréchet drift and (when configured)
/// the generated-vs-real probe accuracy.
pub fn mad_probe(
    real: &DistributionSpec,
    base: &AutophagyConfig,
    seeds: &[u64],
) -> Result<ReportBundle> {
    if seeds.is_empty() {
        return Err(ProbesError::Spec("no seeds".into()));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            Ok((seed, autophagy_loop(real, &cfg)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for (seed, records) in runs {
        for r in records {
            let mut extras = BTreeMap::new();
            extras.insert("frechet_to_real".into(), r.frechet_to_real);
            extras.insert("regularized".into(), if r.regularized { 1.0 } else { 0.0 });
            if let Some(acc) = r.probe_accuracy {
                extras.insert("probe_accuracy".into(), acc);
            }
            if let Some(tv) = r.tv_lower {
                extras.insert("tv_lower".into(), tv);
            }
            points.push(CurvePoint {
                abscissa: r.generation as f64,
                label: format!("{:?}", base.policy).to_lowercase(),
                trial: seed,
                seed,
                report: None,
                extras,
            });
        }
    }
    let mut echo = BTreeMap::new();
    echo.insert("generations".into(), base.generations.to_string());
    echo.insert(
        "samples_per_generation".into(),
        base.samples_per_generation.to_string(),
    );
    echo.insert("policy".into(), format!("{:?}", base.policy));
    echo.insert("generator".into(), format!("{:?}", base.generator));
    echo.insert("seeds".into(), format!("{seeds:?}"));
    Ok(ReportBundle::assemble("mad", echo, points, BTreeMap::new()))
}

// ---------------------------------------------------------------------------
// Guidance demo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GuideDemoConfig {
    pub denoiser: DiffusionTrainConfig,
    pub guidance: GuidanceTrainConfig,
    pub judge: TrainConfig,
    pub schedule_steps: usize,
    /// real samples used to train the denoiser / guidance / judge
    pub train_samples: usize,
    /// generated samples scored per scale
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for GuideDemoConfig {
    fn default() -> Self {
        Self {
            denoiser: DiffusionTrainConfig::default(),
            guidance: GuidanceTrainConfig::default(),
            judge: TrainConfig::default(),
            schedule_steps: 50,
            train_samples: 400,
            eval_samples: 300,
            seed: 0,
        }
    }
}

/// Fake-rate of guided samples under a judge trained on real-vs-unguided
/// data, swept over guidance scales. Every scale generates from an
/// identically-seeded stream, so scale 0 reproduces the unguided samples
/// bit for bit.
pub fn guide_demo(
    real: &DistributionSpec,
    scales: &[f64],
    cfg: &GuideDemoConfig,
) -> Result<ReportBundle> {
    if scales.is_empty() {
        return Err(ProbesError::Spec("empty scale ladder".into()));
    }
    if scales.iter().any(|s| *s < 0.0 || !s.is_finite()) {
        return Err(ProbesError::Spec(format!("bad scales {scales:?}")));
    }
    let (c, h, w) = real.sample_shape();
    if c != 1 || h != 1 {
        return Err(ProbesError::Spec(
            "guidance demo runs on point distributions (1×1×d samples)".into(),
        ));
    }
    let dim = w;
    let schedule = NoiseSchedule::linear(cfg.schedule_steps);

    let mut real_rng = RngStream::new(cfg.seed, mix_str("guide-real"));
    let draw_points = |n: usize, rng: &mut RngStream| -> Result<Vec<Vec<f64>>> {
        Ok(synth::sample(real, n, rng)?
            .iter()
            .map(|im| im.pixels().to_vec())
            .collect())
    };
    let real_train = draw_points(cfg.train_samples, &mut real_rng)?;

    let mut dcfg = cfg.denoiser.clone();
    dcfg.seed = mix_stream_id(&[cfg.seed, mix_str("guide-denoiser")]);
    let (denoiser, _) = train_denoiser(&real_train, &schedule, &dcfg)?;

    // unguided pool for training the guidance classifier and the judge
    let mut pool_rng = RngStream::new(cfg.seed, mix_str("guide-pool"));
    let unguided_pool = ancestral_sample(&denoiser, &schedule, cfg.train_samples, &mut pool_rng, None)?;

    let mut gcfg = cfg.guidance.clone();
    gcfg.seed = mix_stream_id(&[cfg.seed, mix_str("guide-classifier")]);
    let guide_cls = train_noised_classifier(&real_train, &unguided_pool, &schedule, &gcfg)?;

    // judge: a plain classifier on clean samples, real = class 0
    let judge_real_train = draw_points(cfg.train_samples, &mut real_rng)?;
    let judge_real_heldout = draw_points(cfg.train_samples / 2, &mut real_rng)?;
    let to_images = |pts: &[Vec<f64>]| -> Result<Vec<Image>> {
        pts.iter()
            .map(|p| Ok(Image::new(1, 1, dim, p.clone())?))
            .collect()
    };
    let mid = unguided_pool.len() / 2;
    let judge_classes = vec![
        ClassData {
            name: "real".into(),
            train: to_images(&judge_real_train)?,
            heldout: to_images(&judge_real_heldout)?,
        },
        ClassData {
            name: "generated".into(),
            train: to_images(&unguided_pool[..mid])?,
            heldout: to_images(&unguided_pool[mid..])?,
        },
    ];
    let mut jcfg = cfg.judge.clone();
    jcfg.seed = mix_stream_id(&[cfg.seed, mix_str("guide-judge")]);
    let spec = ModelSpec::mlp_with_hidden(1, 1, dim, 2, 32);
    let (judge, judge_report) = classifier::train(&spec, &judge_classes, &jcfg)?;

    let fake_rate = |samples: &[Vec<f64>]| -> Result<f64> {
        let mut fake = 0usize;
        for s in samples {
            let input = judge.preprocess(&Image::new(1, 1, dim, s.clone())?)?;
            let out = classifier::logits(&judge.spec, &judge.params, std::slice::from_ref(&input))?;
            if out[0][1] > out[0][0] {
                fake += 1;
            }
        }
        Ok(fake as f64 / samples.len() as f64)
    };

    let points = scales
        .par_iter()
        .enumerate()
        .map(|(i, &s)| {
            // identical stream per scale: s = 0 reproduces unguided bits
            let mut grng = RngStream::new(cfg.seed, mix_str("guide-eval"));
            let samples = ancestral_sample(
                &denoiser,
                &schedule,
                cfg.eval_samples,
                &mut grng,
                Some(Guidance {
                    classifier: &guide_cls,
                    scale: s,
                }),
            )?;
            let mut extras = BTreeMap::new();
            extras.insert("fake_rate".into(), fake_rate(&samples)?);
            Ok(CurvePoint {
                abscissa: s,
                label: "guidance_scale".into(),
                trial: i as u64,
                seed: cfg.seed,
                report: None,
                extras,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut oracle = BTreeMap::new();
    let mut baseline_rng = RngStream::new(cfg.seed, mix_str("guide-eval"));
    let baseline = ancestral_sample(&denoiser, &schedule, cfg.eval_samples, &mut baseline_rng, None)?;
    oracle.insert("unguided_fake_rate".into(), fake_rate(&baseline)?);
    oracle.insert("judge_accuracy".into(), judge_report.accuracy);

    let mut echo = BTreeMap::new();
    echo.insert("scales".into(), format!("{scales:?}"));
    echo.insert("schedule_steps".into(), cfg.schedule_steps.to_string());
    echo.insert("train_samples".into(), cfg.train_samples.to_string());
    echo.insert("eval_samples".into(), cfg.eval_samples.to_string());
    echo.insert("seed".into(), cfg.seed.to_string());
    Ok(ReportBundle::assemble("guide_demo", echo, points, oracle))
}

// ---------------------------------------------------------------------------
// Fréchet comparator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum FeatureSource {
    /// raw flattened samples (dimension <= 64)
    Raw,
    /// the trained probe's penultimate activations
    Penultimate,
}

pub const FRECHET_MAX_DIM: usize = 64;

/// Gaussian-fit Fréchet distance between the two distributions' held-out
/// features, reported next to (never instead of) the probe metrics.
pub fn frechet_compare(
    dists: &[DistInput],
    source: FeatureSource,
    cfg: &ProbeConfig,
    trial: u64,
) -> Result<(f64, ProbeReport)> {
    if dists.len() != 2 {
        return Err(ProbesError::Spec("frechet comparator takes exactly 2 distributions".into()));
    }
    let (classes, stream) = draw_classes(dists, cfg, "frechet", 0.0, trial)?;
    let (model, report) = train_on_classes(&classes, cfg, train_seed(cfg.master_seed, stream))?;
    let mut fits = Vec::with_capacity(2);
    for class in &classes {
        let feats: Vec<Vec<f64>> = class
            .heldout
            .iter()
            .map(|img| -> Result<Vec<f64>> {
                let input = model.preprocess(img)?;
                match source {
                    FeatureSource::Raw => Ok(input),
                    FeatureSource::Penultimate => {
                        Ok(classifier::extract_features(&model.spec, &model.params, &input)?)
                    }
                }
            })
            .collect::<Result<_>>()?;
        let d = feats[0].len();
        if d > FRECHET_MAX_DIM {
            return Err(ProbesError::Spec(format!(
                "feature dimension {d} exceeds the comparator limit {FRECHET_MAX_DIM}"
            )));
        }
        fits.push(GaussianModel::fit(&feats)?);
    }
    let distance = fits[0].frechet_to(&fits[1])?;
    Ok((distance, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Family;

    fn bern(name: &str, theta: f64, h: usize, w: usize) -> DistInput {
        DistInput::synth(DistributionSpec {
            name: name.into(),
            family: Family::BernoulliPixels { theta, c: 1, h, w },
        })
    }

    fn quick_cfg() -> ProbeConfig {
        ProbeConfig {
            train: TrainConfig {
                epochs: 12,
                ..Default::default()
            },
            train_n: 150,
            heldout_n: 300,
            master_seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn disjoint_support_probe_is_near_perfect() {
        let dists = [bern("lo", 0.02, 4, 4), bern("hi", 0.98, 4, 4)];
        let (_, report, _) = run_probe(&dists, &quick_cfg(), "probe", 0.0, 0).unwrap();
        assert!(report.accuracy >= 0.999, "accuracy {}", report.accuracy);
        let d = report.divergence.unwrap();
        assert!(d.tv_lower >= 0.998);
    }

    #[test]
    fn same_distribution_null_hovers_at_chance() {
        let dists = [bern("a", 0.5, 4, 4), bern("b", 0.5, 4, 4)];
        let bundle = repeat_probe(&dists, &quick_cfg(), "same_dist", 3).unwrap();
        for p in &bundle.points {
            let acc = p.accuracy().unwrap();
            assert!((0.4..=0.6).contains(&acc), "null accuracy {acc}");
        }
    }

    #[test]
    fn probe_rejects_single_distribution_and_shape_mismatch() {
        let cfg = quick_cfg();
        assert!(run_probe(&[bern("a", 0.5, 4, 4)], &cfg, "probe", 0.0, 0).is_err());
        let mismatched = [bern("a", 0.5, 4, 4), bern("b", 0.5, 2, 2)];
        assert!(run_probe(&mismatched, &cfg, "probe", 0.0, 0).is_err());
    }

    #[test]
    fn single_size_scale_curve_reduces_to_run_probe() {
        let dists = [bern("lo", 0.3, 2, 2), bern("hi", 0.7, 2, 2)];
        let mut cfg = quick_cfg();
        cfg.train_n = 120;
        let bundle = scale_curve(&dists, &[120], 1, &cfg).unwrap();
        assert_eq!(bundle.points.len(), 1);
        let (_, direct, _) = run_probe(&dists, &cfg, "scale", 120.0, 0).unwrap();
        let got = bundle.points[0].report.as_ref().unwrap();
        assert_eq!(got.accuracy, direct.accuracy);
        assert_eq!(got.confusion, direct.confusion);
        assert_eq!(got.train_loss_curve, direct.train_loss_curve);
    }

    #[test]
    fn ladders_must_strictly_increase() {
        let dists = [bern("a", 0.3, 2, 2), bern("b", 0.7, 2, 2)];
        let cfg = quick_cfg();
        assert!(scale_curve(&dists, &[100, 100], 1, &cfg).is_err());
        assert!(scale_curve(&dists, &[], 1, &cfg).is_err());
        assert!(crop_sweep(&dists, &[2, 1], CropStrategy::Center, &cfg).is_err());
    }

    #[test]
    fn full_size_crop_equals_plain_probe() {
        let dists = [bern("lo", 0.2, 4, 4), bern("hi", 0.8, 4, 4)];
        let mut cfg = quick_cfg();
        cfg.train_n = 80;
        cfg.heldout_n = 150;
        let bundle = crop_sweep(&dists, &[4], CropStrategy::Center, &cfg).unwrap();
        let (_, direct, _) = run_probe(&dists, &cfg, "crop_center", 4.0, 0).unwrap();
        let got = bundle.points[0].report.as_ref().unwrap();
        assert_eq!(got.accuracy, direct.accuracy);
        assert_eq!(got.train_loss_curve, direct.train_loss_curve);
    }

    #[test]
    fn random_crop_emits_four_trials_per_size() {
        let dists = [bern("lo", 0.2, 8, 8), bern("hi", 0.8, 8, 8)];
        let mut cfg = quick_cfg();
        cfg.train_n = 60;
        cfg.heldout_n = 100;
        cfg.train.epochs = 5;
        let bundle = crop_sweep(&dists, &[4], CropStrategy::Random, &cfg).unwrap();
        assert_eq!(bundle.points.len(), 4);
        let trials: Vec<u64> = bundle.points.iter().map(|p| p.trial).collect();
        assert_eq!(trials, vec![0, 1, 2, 3]);
    }

    fn blob_task() -> Vec<DistributionSpec> {
        use crate::synth::BlobComponent;
        [(2.0, 2.0), (2.0, 6.0), (6.0, 4.0)]
            .iter()
            .enumerate()
            .map(|(i, &(cy, cx))| DistributionSpec {
                name: format!("blob{i}"),
                family: Family::BlobImage {
                    h: 8,
                    w: 8,
                    components: vec![BlobComponent {
                        weight: 1.0,
                        center_y: cy,
                        center_x: cx,
                        jitter: 0.6,
                        sigma: 1.2,
                    }],
                    pixel_noise: 0.05,
                },
            })
            .collect()
    }

    #[test]
    fn mix_eval_zero_alpha_endpoints_coincide() {
        let task = blob_task();
        let mut cfg = quick_cfg();
        cfg.train_n = 60;
        cfg.heldout_n = 90;
        cfg.train.epochs = 6;
        let bundle = mix_eval(
            &task,
            &[0.0, 0.5],
            &[MixMode::Replace, MixMode::Augment],
            1,
            &cfg,
        )
        .unwrap();
        let at = |label: &str, alpha: f64| {
            bundle
                .points
                .iter()
                .find(|p| p.label == label && p.abscissa == alpha)
                .unwrap()
                .report
                .clone()
                .unwrap()
        };
        let mut r0 = at("replace", 0.0);
        let mut a0 = at("augment", 0.0);
        r0.wall_clock_secs = 0.0;
        a0.wall_clock_secs = 0.0;
        assert_eq!(r0, a0);
        // alpha range enforcement
        assert!(mix_eval(&task, &[1.5], &[MixMode::Replace], 1, &cfg).is_err());
        assert!(mix_eval(&task, &[2.0], &[MixMode::Augment], 1, &cfg).is_ok());
    }

    #[test]
    fn multiway_needs_three_and_reports_confusion() {
        let cfg = quick_cfg();
        let pair = [bern("a", 0.1, 2, 2), bern("b", 0.9, 2, 2)];
        assert!(multiway_probe(&pair, &cfg, 0).is_err());
        let trio = [
            bern("a", 0.05, 4, 4),
            bern("b", 0.5, 4, 4),
            bern("c", 0.95, 4, 4),
        ];
        let report = multiway_probe(&trio, &cfg, 0).unwrap();
        assert_eq!(report.confusion.len(), 3);
        assert!(report.divergence.is_none());
        assert!(report.accuracy > 0.9, "accuracy {}", report.accuracy);
    }

    #[test]
    fn mad_probe_flattens_generations() {
        let spec = DistributionSpec {
            name: "pts".into(),
            family: Family::Point2dMixture {
                components: vec![crate::synth::GaussComponent2d {
                    weight: 1.0,
                    mean: [0.0, 0.0],
                    cov: [0.25, 0.0, 0.25],
                }],
            },
        };
        let base = AutophagyConfig {
            generations: 2,
            samples_per_generation: 80,
            reference_samples: 400,
            ..Default::default()
        };
        let bundle = mad_probe(&spec, &base, &[1, 2]).unwrap();
        assert_eq!(bundle.points.len(), 6); // 2 seeds x 3 generations
        for p in &bundle.points {
            assert!(p.extras.contains_key("frechet_to_real"));
            assert!(p.report.is_none());
        }
    }

    #[test]
    fn bundle_json_and_csv_are_deterministic() {
        let dists = [bern("a", 0.3, 2, 2), bern("b", 0.7, 2, 2)];
        let mut cfg = quick_cfg();
        cfg.train_n = 60;
        cfg.heldout_n = 80;
        cfg.train.epochs = 4;
        let b1 = repeat_probe(&dists, &cfg, "probe", 2).unwrap();
        let b2 = repeat_probe(&dists, &cfg, "probe", 2).unwrap();
        assert_eq!(
            b1.normalized().to_json().unwrap(),
            b2.normalized().to_json().unwrap()
        );
        let mut csv = Vec::new();
        b1.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "abscissa,label,trial,seed,accuracy,cross_entropy_nats,tv_lower,jsd_estimate"
        );
        assert_eq!(lines.count(), 2);
    }

    #[test]
    fn frechet_mean_shift_matches_closed_form() {
        use crate::synth::GaussComponent2d;
        let gauss = |name: &str, mx: f64| {
            DistInput::synth(DistributionSpec {
                name: name.into(),
                family: Family::Point2dMixture {
                    components: vec![GaussComponent2d {
                        weight: 1.0,
                        mean: [mx, 0.0],
                        cov: [1.0, 0.0, 1.0],
                    }],
                },
            })
        };
        let mut cfg = quick_cfg();
        cfg.model = ModelKind::Mlp;
        cfg.train_n = 400;
        cfg.heldout_n = 4000;
        cfg.train.epochs = 15;
        let (d, report) = frechet_compare(
            &[gauss("a", 0.0), gauss("b", 3.0)],
            FeatureSource::Raw,
            &cfg,
            0,
        )
        .unwrap();
        assert!((d - 9.0).abs() < 0.9, "distance {d}");
        assert!(report.accuracy >= 0.9, "accuracy {}", report.accuracy);
        // identical pair: distance near the sampling floor, accuracy near chance
        let (d0, r0) =
            frechet_compare(&[gauss("a", 0.0), gauss("c", 0.0)], FeatureSource::Raw, &cfg, 0)
                .unwrap();
        assert!(d0 < 0.05, "identical-pair distance {d0}");
        assert!((0.45..=0.55).contains(&r0.accuracy), "null accuracy {}", r0.accuracy);
    }

    #[test]
    fn frechet_penultimate_features_work_for_mlp() {
        let dists = [bern("lo", 0.2, 2, 2), bern("hi", 0.8, 2, 2)];
        let mut cfg = quick_cfg();
        cfg.model = ModelKind::Mlp;
        cfg.train_n = 80;
        cfg.heldout_n = 120;
        cfg.train.epochs = 6;
        // mlp hidden layer is 128-dimensional: over the comparator limit
        let err = frechet_compare(&dists, FeatureSource::Penultimate, &cfg, 0);
        assert!(err.is_err());
        // raw works and separates
        let (d, _) = frechet_compare(&dists, FeatureSource::Raw, &cfg, 0).unwrap();
        assert!(d > 0.5, "distance {d}");
    }

    #[test]
    fn guide_demo_zero_scale_matches_unguided_rate() {
        use crate::synth::GaussComponent2d;
        let real = DistributionSpec {
            name: "real".into(),
            family: Family::Point2dMixture {
                components: vec![GaussComponent2d {
                    weight: 1.0,
                    mean: [1.0, -1.0],
                    cov: [0.16, 0.0, 0.16],
                }],
            },
        };
        let cfg = GuideDemoConfig {
            denoiser: DiffusionTrainConfig {
                steps: 250,
                hidden: 24,
                ..Default::default()
            },
            guidance: GuidanceTrainConfig {
                epochs: 4,
                hidden: 24,
                ..Default::default()
            },
            judge: TrainConfig {
                epochs: 8,
                ..Default::default()
            },
            schedule_steps: 25,
            train_samples: 150,
            eval_samples: 80,
            seed: 3,
        };
        let bundle = guide_demo(&real, &[0.0, 1.0], &cfg).unwrap();
        let s0 = bundle.points.iter().find(|p| p.abscissa == 0.0).unwrap();
        assert_eq!(
            s0.extras["fake_rate"],
            bundle.oracle["unguided_fake_rate"],
            "scale-0 fake rate must equal the unguided baseline exactly"
        );
        assert!(bundle.oracle.contains_key("judge_accuracy"));
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!(ModelKind::parse("logistic").unwrap(), ModelKind::Logistic);
        assert_eq!(ModelKind::parse("mlp").unwrap(), ModelKind::Mlp);
        assert_eq!(ModelKind::parse("smallconv").unwrap(), ModelKind::SmallConv);
        assert!(ModelKind::parse("resnet").is_err());
    }
}
