//! Model-autophagy loop: generation g trains on generation g−1's output
//! (optionally mixed with fresh real data) and we track how far the
//! generator drifts from the real distribution.

use super::diffusion::{
    ancestral_sample, train_denoiser, DiffusionTrainConfig, NoiseSchedule,
};
use super::{sample, DistributionSpec, Result, SynthError};
use crate::classifier::{self, ClassData, ModelSpec, TrainConfig};
use crate::imaging::Image;
use crate::numerics::{self, RngStream, SymmetricMatrix};

/// Single-Gaussian moment fit with eigenvalue-floor regularization.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub cov: SymmetricMatrix,
    /// true when the covariance needed the +1e-6·I floor
    pub regularized: bool,
    sqrt_cov: SymmetricMatrix,
}

pub const EIG_FLOOR: f64 = 1e-9;
pub const RIDGE: f64 = 1e-6;

impl GaussianModel {
    /// Maximum-likelihood fit (population covariance, 1/n). If the
    /// smallest covariance eigenvalue drops below 1e-9 the fit adds
    /// 1e-6·I and flags itself.
    pub fn fit(points: &[Vec<f64>]) -> Result<Self> {
        if points.is_empty() {
            return Err(SynthError::Spec("cannot fit a Gaussian to no points".into()));
        }
        let d = points[0].len();
        if points.iter().any(|p| p.len() != d) {
            return Err(SynthError::Spec("ragged point set".into()));
        }
        let n = points.len() as f64;
        let mut mean = vec![0.0; d];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        let mut entries = vec![0.0; d * d];
        for p in points {
            for i in 0..d {
                for j in 0..d {
                    entries[i * d + j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
                }
            }
        }
        let mut cov = SymmetricMatrix::new(d, entries)?;
        let (eigvals, _) = numerics::eig_sym(&cov)?;
        let min_eig = eigvals.iter().cloned().fold(f64::INFINITY, f64::min);
        let regularized = min_eig < EIG_FLOOR;
        if regularized {
            let mut e = cov.entries().to_vec();
            for i in 0..d {
                e[i * d + i] += RIDGE;
            }
            cov = SymmetricMatrix::new(d, e)?;
        }
        let sqrt_cov = numerics::sqrt_psd(&cov)?;
        Ok(Self {
            mean,
            cov,
            regularized,
            sqrt_cov,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// x = μ + Σ^{1/2} z with z ~ N(0, I).
    pub fn sample(&self, count: usize, rng: &mut RngStream) -> Vec<Vec<f64>> {
        let d = self.dim();
        let s = self.sqrt_cov.entries();
        (0..count)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| rng.gaussian()).collect();
                (0..d)
                    .map(|i| {
                        self.mean[i] + (0..d).map(|j| s[i * d + j] * z[j]).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }

    pub fn frechet_to(&self, other: &GaussianModel) -> Result<f64> {
        Ok(numerics::frechet_gaussian_distance(
            &self.mean,
            &self.cov,
            &other.mean,
            &other.cov,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum AutophagyPolicy {
    /// train generation g only on generation g−1's samples
    Replace,
    /// mix in a fresh real fraction each generation
    Augment { real_fraction: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum GeneratorKind {
    /// moment-matched Gaussian refit each generation (fast path)
    GaussianFit,
    /// small diffusion model retrained each generation (slow path)
    Diffusion,
}

#[derive(Debug, Clone)]
pub struct AutophagyConfig {
    pub generations: usize,
    pub samples_per_generation: usize,
    pub policy: AutophagyPolicy,
    pub generator: GeneratorKind,
    pub seed: u64,
    /// when set, each generation also trains a binary probe against a
    /// fresh real held-out set and records its accuracy
    pub probe: Option<TrainConfig>,
    /// reference set size for the real-moment baseline
    pub reference_samples: usize,
}

impl Default for AutophagyConfig {
    fn default() -> Self {
        Self {
            generations: 10,
            samples_per_generation: 200,
            policy: AutophagyPolicy::Replace,
            generator: GeneratorKind::GaussianFit,
            seed: 0,
            probe: None,
            reference_samples: 2000,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Fréchet distance between the generator's moments and the real
    /// reference moments, on raw coordinates
    pub frechet_to_real: f64,
    /// held-out accuracy of a generated-vs-real probe, when configured
    pub probe_accuracy: Option<f64>,
    pub tv_lower: Option<f64>,
    pub regularized: bool,
    pub generator_mean: Vec<f64>,
    pub generator_cov: Vec<f64>,
}

fn points_to_images(points: &[Vec<f64>]) -> Result<Vec<Image>> {
    points
        .iter()
        .map(|p| Ok(Image::new(1, 1, p.len(), p.clone())?))
        .collect()
}

fn images_to_points(images: &[Image]) -> Vec<Vec<f64>> {
    images.iter().map(|i| i.pixels().to_vec()).collect()
}

/// Moments of a sample cloud, for recording drift of the diffusion path.
fn sample_moments(points: &[Vec<f64>]) -> Result<GaussianModel> {
    GaussianModel::fit(points)
}

/// Run the self-consuming training loop against a real point
/// distribution. Record 0 describes the generation-0 fit on real data;
/// records 1..=G describe successive self-trained generations.
pub fn autophagy_loop(
    real_spec: &DistributionSpec,
    config: &AutophagyConfig,
) -> Result<Vec<GenerationRecord>> {
    if real_spec.sample_shape().0 != 1 || real_spec.sample_shape().1 != 1 {
        return Err(SynthError::Spec(
            "autophagy loop runs on point distributions (1×1×d samples)".into(),
        ));
    }
    if let AutophagyPolicy::Augment { real_fraction } = config.policy {
        if !(0.0..=1.0).contains(&real_fraction) {
            return Err(SynthError::Spec(format!(
                "real fraction {real_fraction} outside [0,1]"
            )));
        }
    }
    let mut real_rng = RngStream::new(config.seed, numerics::mix_str("autophagy-real"));
    let mut gen_rng = RngStream::new(config.seed, numerics::mix_str("autophagy-gen"));
    let reference =
        images_to_points(&sample(real_spec, config.reference_samples, &mut real_rng)?);
    let real_model = GaussianModel::fit(&reference)?;

    let n = config.samples_per_generation;
    let mut training = images_to_points(&sample(real_spec, n, &mut real_rng)?);
    let mut records = Vec::with_capacity(config.generations + 1);
    for generation in 0..=config.generations {
        let (model, generated) = match config.generator {
            GeneratorKind::GaussianFit => {
                let m = GaussianModel::fit(&training)?;
                let s = m.sample(n, &mut gen_rng);
                (m, s)
            }
            GeneratorKind::Diffusion => {
                let dcfg = DiffusionTrainConfig {
                    steps: 800,
                    hidden: 32,
                    seed: config.seed ^ generation as u64,
                    ..Default::default()
                };
                let schedule = NoiseSchedule::linear(50);
                let (den, _) = train_denoiser(&training, &schedule, &dcfg)?;
                let s = ancestral_sample(&den, &schedule, n, &mut gen_rng, None)?;
                // moments of the sample cloud stand in for the generator
                (sample_moments(&s)?, s)
            }
        };
        let frechet = model.frechet_to(&real_model)?;
        let (probe_accuracy, tv_lower) = match &config.probe {
            Some(tc) => {
                let acc = probe_generated_vs_real(
                    real_spec,
                    &generated,
                    tc,
                    config.seed ^ (generation as u64).wrapping_mul(0x9e37),
                )?;
                (
                    Some(acc),
                    Some(classifier::tv_lower_bound(acc, 2)?),
                )
            }
            None => (None, None),
        };
        records.push(GenerationRecord {
            generation,
            frechet_to_real: frechet,
            probe_accuracy,
            tv_lower,
            regularized: model.regularized,
            generator_mean: model.mean.clone(),
            generator_cov: model.cov.entries().to_vec(),
        });
        // assemble the next generation's training set
        training = match config.policy {
            AutophagyPolicy::Replace => generated,
            AutophagyPolicy::Augment { real_fraction } => {
                let real_n = ((n as f64) * real_fraction).round() as usize;
                let mut mixed =
                    images_to_points(&sample(real_spec, real_n, &mut real_rng)?);
                mixed.extend(generated.into_iter().take(n - real_n.min(n)));
                mixed
            }
        };
    }
    Ok(records)
}

/// Held-out accuracy of a binary probe between generated points and fresh
/// real draws.
fn probe_generated_vs_real(
    real_spec: &DistributionSpec,
    generated: &[Vec<f64>],
    tc: &TrainConfig,
    seed: u64,
) -> Result<f64> {
    let mut rng = RngStream::new(seed, numerics::mix_str("autophagy-probe"));
    let heldout_n = generated.len().max(64);
    let real_train = sample(real_spec, generated.len(), &mut rng)?;
    let real_heldout = sample(real_spec, heldout_n, &mut rng)?;
    let gen_images = points_to_images(generated)?;
    // split generated samples: first half trains, second half evaluates
    let mid = gen_images.len() / 2;
    let real_mid = real_train.len() / 2;
    let classes = vec![
        ClassData {
            name: "real".into(),
            train: real_train[..real_mid].to_vec(),
            heldout: real_heldout,
        },
        ClassData {
            name: "generated".into(),
            train: gen_images[..mid].to_vec(),
            heldout: gen_images[mid..].to_vec(),
        },
    ];
    let d = generated[0].len();
    let spec = ModelSpec::mlp_with_hidden(1, 1, d, 2, 32);
    let mut cfg = tc.clone();
    cfg.seed = seed;
    let (_, report) = classifier::train(&spec, &classes, &cfg)?;
    Ok(report.accuracy)
}
