//! Command-line front end: dataset ingestion, experiment dispatch, and
//! report emission.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.
//!
//! Config file: UTF-8 `key=value` lines, `#` comments. Keys match the
//! long flag names (dashes and underscores interchangeable); flags
//! override config-file values, and every effective value is echoed both
//! to stdout and into the report bundle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use distprobe::classifier::TrainConfig;
use distprobe::imaging;
use distprobe::numerics::{mix_stream_id, RngStream};
use distprobe::probes::{
    self, crop_sweep, freq_sweep, frechet_compare, guide_demo, mad_probe, mix_eval, multiway_probe,
    point_stream, repeat_probe, scale_curve, CropStrategy, CurvePoint, DistInput, FeatureSource,
    GuideDemoConfig, MixMode, ModelKind, ProbeConfig, ReportBundle, Source,
};
use distprobe::spectral::{parse_filter_spec, FilterSpec, MaskShape};
use distprobe::synth::autophagy::{AutophagyConfig, AutophagyPolicy, GeneratorKind};
use distprobe::synth::diffusion::{DiffusionTrainConfig, GuidanceTrainConfig};
use distprobe::synth::{self, DistributionSpec};

#[derive(Parser)]
#[command(
    name = "distprobe",
    about = "Classifier-based distribution probes over images and point clouds",
    version
)]
struct Cli {
    /// key=value config file overlaid under the flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// master seed; all experiment randomness derives from it
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// output root (reports land in <out>/<kind>-seed<seed>/)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// cap on concurrently executed ladder points
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct CommonOpts {
    /// distribution source: name=dir:<path> or name=synth:<spec> (repeat)
    #[arg(long = "dist")]
    dists: Vec<String>,
    /// classifier family: logistic | mlp | smallconv
    #[arg(long)]
    model: Option<String>,
    /// training samples per class
    #[arg(long)]
    train_n: Option<usize>,
    /// held-out samples per class
    #[arg(long)]
    heldout_n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// input normalization: none | standardize | clamp01
    #[arg(long)]
    normalization: Option<String>,
    /// independent repetitions
    #[arg(long)]
    trials: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one classifier over >= 2 distributions and report held-out metrics
    Probe(ProbeCmd),
    /// Null check: probe one distribution against an independent draw of itself
    SameDist(ProbeCmd),
    /// Accuracy as a function of training-set size
    ScaleCurve(ScaleCmd),
    /// Accuracy per frequency filter applied to both distributions
    FreqSweep(FreqCmd),
    /// Accuracy per crop size (center or random crops)
    CropSweep(CropCmd),
    /// Downstream-task accuracy on real/generated training mixtures
    MixEval(MixCmd),
    /// k-way probe (k >= 3) with a full confusion matrix
    Multiway(ProbeCmd),
    /// Self-consuming generator loop: Fréchet drift per generation
    MadSim(MadCmd),
    /// Classifier-guided sampling: fake-rate per guidance scale
    GuideDemo(GuideCmd),
    /// Gaussian-fit Fréchet distance next to the probe metrics
    Frechet(FrechetCmd),
    /// Materialize synthetic distributions into dataset directories
    Synth(SynthCmd),
}

#[derive(Args)]
struct ProbeCmd {
    #[command(flatten)]
    common: CommonOpts,
}

#[derive(Args)]
struct ScaleCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// strictly increasing training-set sizes, e.g. 50,200,1000
    #[arg(long)]
    sizes: Option<String>,
}

#[derive(Args)]
struct FreqCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// filter spec, e.g. low:10, high:30, band:8-12, low:frac:0.04 (repeat)
    #[arg(long = "filter")]
    filters: Vec<String>,
    /// mask shape: rect | circle
    #[arg(long)]
    shape: Option<String>,
}

#[derive(Args)]
struct CropCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// strictly increasing crop sizes, e.g. 4,8,16
    #[arg(long)]
    sizes: Option<String>,
    /// center | random (random averages over four trials per size)
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct MixCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// mixing ratios, e.g. 0,0.5,1
    #[arg(long)]
    alphas: Option<String>,
    /// comma-separated subset of replace,augment
    #[arg(long)]
    modes: Option<String>,
}

#[derive(Args)]
struct MadCmd {
    #[command(flatten)]
    common: CommonOpts,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long)]
    samples_per_gen: Option<usize>,
    /// replace | augment:<real fraction>
    #[arg(long)]
    policy: Option<String>,
    /// gaussian | diffusion
    #[arg(long)]
    generator: Option<String>,
    /// comma-separated run seeds, e.g. 0,1,2
    #[arg(long)]
    seeds: Option<String>,
    /// also train a generated-vs-real probe each generation
    #[arg(long)]
    probe: bool,
}

#[derive(Args)]
struct GuideCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// guidance scales, e.g. 0,1,50
    #[arg(long)]
    scales: Option<String>,
    /// diffusion steps in the noise schedule
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    eval_samples: Option<usize>,
}

#[derive(Args)]
struct FrechetCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// raw | penultimate
    #[arg(long)]
    features: Option<String>,
}

#[derive(Args)]
struct SynthCmd {
    #[command(flatten)]
    common: CommonOpts,
    /// validation samples per distribution
    #[arg(long)]
    val_n: Option<usize>,
    /// png | ntf
    #[arg(long)]
    format: Option<String>,
}

// ---------------------------------------------------------------------------
// Errors and config overlay
// ---------------------------------------------------------------------------

enum CliError {
    Usage(String),
    Run(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parsed config file; every lookup normalizes dashes to underscores.
struct Overlay {
    map: BTreeMap<String, String>,
}

impl Overlay {
    fn empty() -> Self {
        Self {
            map: BTreeMap::new(),
        }
    }

    fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
        let map = distprobe::config::parse_config_text(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        Ok(Self { map })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(&key.replace('-', "_")).map(|s| s.as_str())
    }
}

/// Effective-config resolution: flag beats config file beats default.
/// Every resolved value is recorded in the echo map.
struct Resolver<'a> {
    overlay: &'a Overlay,
    echo: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    fn new(overlay: &'a Overlay) -> Self {
        Self {
            overlay,
            echo: BTreeMap::new(),
        }
    }

    fn value<T: FromStr + ToString>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T> {
        let v = match flag {
            Some(v) => v,
            None => match self.overlay.raw(key) {
                Some(raw) => raw
                    .parse::<T>()
                    .map_err(|_| usage(format!("config value {key}={raw} does not parse")))?,
                None => default,
            },
        };
        self.echo.insert(key.replace('-', "_"), v.to_string());
        Ok(v)
    }

    fn string(&mut self, key: &str, flag: Option<String>, default: &str) -> Result<String> {
        self.value(key, flag, default.to_string())
    }
}

// ---------------------------------------------------------------------------
// Argument materialization
// ---------------------------------------------------------------------------

fn parse_list<T: FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim()
                .parse::<T>()
                .map_err(|_| usage(format!("bad {what} entry {p:?}")))
        })
        .collect()
}

fn parse_dist(arg: &str) -> Result<DistInput> {
    let (name, rest) = arg
        .split_once('=')
        .ok_or_else(|| usage(format!("--dist {arg:?}: expected name=dir:<path> or name=synth:<spec>")))?;
    if name.is_empty() {
        return Err(usage(format!("--dist {arg:?}: empty name")));
    }
    if let Some(path) = rest.strip_prefix("dir:") {
        let root = PathBuf::from(path);
        let train = imaging::load_dir(&root.join("train"))
            .map_err(|e| CliError::Run(format!("{name}: {e}")))?;
        let heldout = imaging::load_dir(&root.join("val"))
            .map_err(|e| CliError::Run(format!("{name}: {e}")))?;
        Ok(DistInput {
            name: name.to_string(),
            source: Source::Images { train, heldout },
        })
    } else if let Some(spec) = rest.strip_prefix("synth:") {
        Ok(DistInput::synth(
            synth::parse_dist_spec(name, spec).map_err(|e| usage(e.to_string()))?,
        ))
    } else {
        Err(usage(format!(
            "--dist {arg:?}: source must start with dir: or synth:"
        )))
    }
}

fn dists_from(common: &CommonOpts, overlay: &Overlay, min: usize) -> Result<Vec<DistInput>> {
    let mut raw: Vec<String> = common.dists.clone();
    if raw.is_empty() {
        if let Some(line) = overlay.raw("dist") {
            raw = line.split_whitespace().map(|s| s.to_string()).collect();
        }
    }
    if raw.len() < min {
        return Err(usage(format!(
            "need at least {min} --dist sources, got {}",
            raw.len()
        )));
    }
    raw.iter().map(|s| parse_dist(s)).collect()
}

fn probe_config(
    common: &CommonOpts,
    res: &mut Resolver<'_>,
    master_seed: u64,
) -> Result<ProbeConfig> {
    let defaults = TrainConfig::default();
    let model = ModelKind::parse(&res.string("model", common.model.clone(), "logistic")?)
        .map_err(|e| usage(e.to_string()))?;
    let normalization = match res
        .string("normalization", common.normalization.clone(), "standardize")?
        .as_str()
    {
        "none" => distprobe::classifier::Normalization::None,
        "standardize" => distprobe::classifier::Normalization::PerChannelStandardize,
        "clamp01" => distprobe::classifier::Normalization::Clamp01,
        other => return Err(usage(format!("unknown normalization {other:?}"))),
    };
    let train = TrainConfig {
        learning_rate: res.value(
            "learning_rate",
            common.learning_rate,
            defaults.learning_rate,
        )?,
        momentum: defaults.momentum,
        batch_size: res.value("batch_size", common.batch_size, defaults.batch_size)?,
        epochs: res.value("epochs", common.epochs, defaults.epochs)?,
        label_smoothing: res.value(
            "label_smoothing",
            common.label_smoothing,
            defaults.label_smoothing,
        )?,
        augmentation: defaults.augmentation,
        seed: 0, // overwritten per ladder point
        normalization,
    };
    Ok(ProbeConfig {
        model,
        train,
        train_n: res.value("train_n", common.train_n, 200)?,
        heldout_n: res.value("heldout_n", common.heldout_n, 400)?,
        master_seed,
    })
}

fn synth_only(dists: Vec<DistInput>) -> Result<Vec<DistributionSpec>> {
    dists
        .into_iter()
        .map(|d| match d.source {
            Source::Synth(s) => Ok(s),
            Source::Images { .. } => Err(usage(format!(
                "{}: this subcommand takes synth: sources only",
                d.name
            ))),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Emission
// ---------------------------------------------------------------------------

fn emit(mut bundle: ReportBundle, res: Resolver<'_>, out_root: &Path, seed: u64) -> Result<()> {
    bundle.config_echo.extend(res.echo);
    bundle
        .config_echo
        .insert("out".into(), out_root.display().to_string());
    let dir = out_root.join(format!("{}-seed{}", bundle.kind, seed));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Run(format!("{}: {e}", dir.display())))?;
    let json = bundle.to_json().map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json)
        .map_err(|e| CliError::Run(format!("{}: {e}", dir.display())))?;
    let mut csv = Vec::new();
    bundle
        .write_csv(&mut csv)
        .map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(dir.join("curve.csv"), csv)
        .map_err(|e| CliError::Run(format!("{}: {e}", dir.display())))?;
    for (k, v) in &bundle.config_echo {
        println!("{k}={v}");
    }
    if let Some(acc) = bundle.summary.mean_accuracy {
        println!("mean_accuracy={acc}");
    }
    println!("report={}", dir.join("report.json").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn run(cli: Cli) -> Result<()> {
    let overlay = match &cli.config {
        Some(p) => Overlay::load(p)?,
        None => Overlay::empty(),
    };
    let mut res = Resolver::new(&overlay);
    let seed = res.value("seed", cli.seed, 0u64)?;
    let out_root = PathBuf::from(res.string(
        "out",
        cli.out.as_ref().map(|p| p.display().to_string()),
        "runs",
    )?);
    let jobs = res.value("jobs", cli.jobs, 0usize)?;
    if jobs > 0 {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    match cli.cmd {
        Cmd::Probe(c) => {
            let dists = dists_from(&c.common, &overlay, 2)?;
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let trials = res.value("trials", c.common.trials, 1u64)?;
            let bundle = repeat_probe(&dists, &cfg, "probe", trials).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::SameDist(c) => {
            let dists = dists_from(&c.common, &overlay, 1)?;
            if dists.len() != 1 {
                return Err(usage("same-dist takes exactly one --dist source"));
            }
            let spec = match &dists[0].source {
                Source::Synth(s) => s.clone(),
                Source::Images { .. } => {
                    return Err(usage("same-dist needs a synth: source to redraw from"))
                }
            };
            let pair = [
                DistInput::synth(DistributionSpec {
                    name: format!("{}_a", spec.name),
                    ..spec.clone()
                }),
                DistInput::synth(DistributionSpec {
                    name: format!("{}_b", spec.name),
                    ..spec
                }),
            ];
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let trials = res.value("trials", c.common.trials, 20u64)?;
            let bundle = repeat_probe(&pair, &cfg, "same_dist", trials).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::ScaleCurve(c) => {
            let dists = dists_from(&c.common, &overlay, 2)?;
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let trials = res.value("trials", c.common.trials, 5u64)?;
            let sizes: Vec<usize> = parse_list(
                &res.string("sizes", c.sizes, "50,200,1000")?,
                "size",
            )?;
            let bundle = scale_curve(&dists, &sizes, trials, &cfg).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::FreqSweep(c) => {
            let dists = dists_from(&c.common, &overlay, 2)?;
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let trials = res.value("trials", c.common.trials, 1u64)?;
            let shape = match res.string("shape", c.shape, "rect")?.as_str() {
                "rect" => MaskShape::Rectangular,
                "circle" => MaskShape::Circular,
                other => return Err(usage(format!("unknown shape {other:?}"))),
            };
            let mut raw = c.filters;
            if raw.is_empty() {
                if let Some(line) = overlay.raw("filter") {
                    raw = line.split_whitespace().map(|s| s.to_string()).collect();
                }
            }
            if raw.is_empty() {
                return Err(usage("freq-sweep needs at least one --filter"));
            }
            res.echo.insert("filter".into(), raw.join(" "));
            let filters: Vec<FilterSpec> = raw
                .iter()
                .map(|f| parse_filter_spec(f, shape).map_err(|e| usage(e.to_string())))
                .collect::<Result<_>>()?;
            let bundle = freq_sweep(&dists, &filters, trials, &cfg).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::CropSweep(c) => {
            let dists = dists_from(&c.common, &overlay, 2)?;
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let sizes: Vec<usize> = parse_list(&res.string("sizes", c.sizes, "4,8,16")?, "size")?;
            let strategy = match res.string("mode", c.mode, "center")?.as_str() {
                "center" => CropStrategy::Center,
                "random" => CropStrategy::Random,
                other => return Err(usage(format!("unknown crop mode {other:?}"))),
            };
            let bundle = crop_sweep(&dists, &sizes, strategy, &cfg).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::MixEval(c) => {
            let task = synth_only(dists_from(&c.common, &overlay, 2)?)?;
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let trials = res.value("trials", c.common.trials, 1u64)?;
            let alphas: Vec<f64> = parse_list(&res.string("alphas", c.alphas, "0,0.5,1")?, "alpha")?;
            let modes: Vec<MixMode> = res
                .string("modes", c.modes, "replace,augment")?
                .split(',')
                .map(|m| match m.trim() {
                    "replace" => Ok(MixMode::Replace),
                    "augment" => Ok(MixMode::Augment),
                    other => Err(usage(format!("unknown mix mode {other:?}"))),
                })
                .collect::<Result<_>>()?;
            let bundle = mix_eval(&task, &alphas, &modes, trials, &cfg).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::Multiway(c) => {
            let dists = dists_from(&c.common, &overlay, 3)?;
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let trials = res.value("trials", c.common.trials, 1u64)?;
            let points = (0..trials)
                .map(|trial| {
                    let report = multiway_probe(&dists, &cfg, trial).map_err(run_err)?;
                    Ok(CurvePoint {
                        abscissa: dists.len() as f64,
                        label: "k".into(),
                        trial,
                        seed: point_stream("multiway", dists.len() as f64, trial),
                        report: Some(report),
                        extras: BTreeMap::new(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let bundle =
                ReportBundle::assemble("multiway", BTreeMap::new(), points, BTreeMap::new());
            emit(bundle, res, &out_root, seed)
        }
        Cmd::MadSim(c) => {
            let specs = synth_only(dists_from(&c.common, &overlay, 1)?)?;
            if specs.len() != 1 {
                return Err(usage("mad-sim takes exactly one --dist source"));
            }
            let policy_raw = res.string("policy", c.policy, "replace")?;
            let policy = if policy_raw == "replace" {
                AutophagyPolicy::Replace
            } else if let Some(rho) = policy_raw.strip_prefix("augment:") {
                AutophagyPolicy::Augment {
                    real_fraction: rho
                        .parse()
                        .map_err(|_| usage(format!("bad real fraction {rho:?}")))?,
                }
            } else {
                return Err(usage(format!(
                    "policy {policy_raw:?} must be replace or augment:<fraction>"
                )));
            };
            let generator = match res.string("generator", c.generator, "gaussian")?.as_str() {
                "gaussian" => GeneratorKind::GaussianFit,
                "diffusion" => GeneratorKind::Diffusion,
                other => return Err(usage(format!("unknown generator {other:?}"))),
            };
            let probe = if c.probe || overlay.raw("probe") == Some("true") {
                res.echo.insert("probe".into(), "true".into());
                Some(TrainConfig {
                    epochs: res.value("epochs", c.common.epochs, 10usize)?,
                    ..TrainConfig::default()
                })
            } else {
                res.echo.insert("probe".into(), "false".into());
                None
            };
            let base = AutophagyConfig {
                generations: res.value("generations", c.generations, 5usize)?,
                samples_per_generation: res.value("samples_per_gen", c.samples_per_gen, 200usize)?,
                policy,
                generator,
                seed: 0, // overwritten per run seed
                probe,
                reference_samples: 2000,
            };
            let seeds: Vec<u64> = parse_list(&res.string("seeds", c.seeds, "0")?, "seed")?
                .into_iter()
                .map(|s: u64| mix_stream_id(&[seed, s]))
                .collect();
            let bundle = mad_probe(&specs[0], &base, &seeds).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::GuideDemo(c) => {
            let specs = synth_only(dists_from(&c.common, &overlay, 1)?)?;
            if specs.len() != 1 {
                return Err(usage("guide-demo takes exactly one --dist source"));
            }
            let scales: Vec<f64> = parse_list(&res.string("scales", c.scales, "0,1")?, "scale")?;
            let cfg = GuideDemoConfig {
                denoiser: DiffusionTrainConfig {
                    seed: 0,
                    ..Default::default()
                },
                guidance: GuidanceTrainConfig::default(),
                judge: TrainConfig {
                    epochs: res.value("epochs", c.common.epochs, 20usize)?,
                    ..Default::default()
                },
                schedule_steps: res.value("steps", c.steps, 50usize)?,
                train_samples: res.value("train_samples", c.train_samples, 400usize)?,
                eval_samples: res.value("eval_samples", c.eval_samples, 300usize)?,
                seed,
            };
            let bundle = guide_demo(&specs[0], &scales, &cfg).map_err(run_err)?;
            emit(bundle, res, &out_root, seed)
        }
        Cmd::Frechet(c) => {
            let dists = dists_from(&c.common, &overlay, 2)?;
            if dists.len() != 2 {
                return Err(usage("frechet takes exactly two --dist sources"));
            }
            let cfg = probe_config(&c.common, &mut res, seed)?;
            let source = match res.string("features", c.features, "raw")?.as_str() {
                "raw" => FeatureSource::Raw,
                "penultimate" => FeatureSource::Penultimate,
                other => return Err(usage(format!("unknown feature source {other:?}"))),
            };
            let trials = res.value("trials", c.common.trials, 1u64)?;
            let mut points = Vec::new();
            let mut oracle = BTreeMap::new();
            let mut distances = Vec::new();
            for trial in 0..trials {
                let (d, report) = frechet_compare(&dists, source, &cfg, trial).map_err(run_err)?;
                distances.push(d);
                let mut extras = BTreeMap::new();
                extras.insert("frechet_distance".into(), d);
                points.push(CurvePoint {
                    abscissa: 0.0,
                    label: format!("{source:?}").to_lowercase(),
                    trial,
                    seed: point_stream("frechet", 0.0, trial),
                    report: Some(report),
                    extras,
                });
            }
            oracle.insert(
                "mean_frechet_distance".into(),
                distances.iter().sum::<f64>() / distances.len() as f64,
            );
            let bundle = ReportBundle::assemble("frechet", BTreeMap::new(), points, oracle);
            emit(bundle, res, &out_root, seed)
        }
        Cmd::Synth(c) => {
            let specs = synth_only(dists_from(&c.common, &overlay, 1)?)?;
            let train_n = res.value("train_n", c.common.train_n, 200usize)?;
            let val_n = res.value("val_n", c.val_n, 400usize)?;
            let use_png = match res.string("format", c.format, "ntf")?.as_str() {
                "png" => true,
                "ntf" => false,
                other => return Err(usage(format!("unknown format {other:?}"))),
            };
            std::fs::create_dir_all(&out_root)
                .map_err(|e| CliError::Run(format!("{}: {e}", out_root.display())))?;
            // draw from the probe subcommand's streams, so probing the
            // emitted directories reproduces the in-memory probe
            let stream = point_stream("probe", 0.0, 0);
            let base = RngStream::new(seed, stream);
            for (i, spec) in specs.iter().enumerate() {
                let mut rng = base.substream(i as u64);
                synth::materialize(spec, &out_root, train_n, val_n, &mut rng, use_png)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                println!("wrote {}", out_root.join(&spec.name).display());
            }
            for (k, v) in &res.echo {
                println!("{k}={v}");
            }
            Ok(())
        }
    }
}

fn run_err(e: probes::ProbesError) -> CliError {
    CliError::Run(e.to_string())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(), // clap: 0 for --help/--version, 2 for usage errors
    };
    match run(cli) {
        Ok(()) => {}
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(1);
        }
    }
}
