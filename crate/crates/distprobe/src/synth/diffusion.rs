//! Toy denoising-diffusion generator over flat vectors, with optional
//! classifier guidance during ancestral sampling.
//!
//! Forward process: z_t = √ᾱ_t·x + √(1−ᾱ_t)·ε with a linear beta
//! schedule. The denoiser is an mlp that maps [z_t | time embedding] to a
//! prediction of ε, trained with mean squared error.

use super::{Result, SynthError};
use crate::classifier::{self, model, ModelSpec, Parameters};
use crate::numerics::RngStream;

/// Dimension of the sinusoidal time embedding appended to the state.
pub const TIME_EMBED_DIM: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    /// betas[t-1] is the variance added at step t, t ∈ 1..=T
    pub betas: Vec<f64>,
    /// alpha_bars[t] = Π_{s≤t} (1 − β_s); alpha_bars[0] = 1
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear schedule from 1e-4 to 0.02 over `steps` steps.
    pub fn linear(steps: usize) -> Self {
        assert!(steps >= 1);
        let (b0, b1) = (1e-4, 0.02);
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    b0
                } else {
                    b0 + (b1 - b0) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Self { betas, alpha_bars }
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }
}

/// Sinusoidal embedding of an integer step index.
pub fn time_embedding(t: usize, steps: usize) -> Vec<f64> {
    let half = TIME_EMBED_DIM / 2;
    let tt = t as f64 / steps as f64;
    (0..half)
        .flat_map(|i| {
            let freq = (10_000f64).powf(-(i as f64) / half as f64);
            let angle = tt * freq * std::f64::consts::TAU;
            [angle.sin(), angle.cos()]
        })
        .collect()
}

/// Noise a clean vector to step t. Returns (z_t, ε); t = 0 returns x
/// unchanged with zero noise.
pub fn forward_diffuse(
    x: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut RngStream,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if t > schedule.steps() {
        return Err(SynthError::Spec(format!(
            "step {t} beyond schedule length {}",
            schedule.steps()
        )));
    }
    if t == 0 {
        return Ok((x.to_vec(), vec![0.0; x.len()]));
    }
    let ab = schedule.alpha_bars[t];
    let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
    let eps: Vec<f64> = (0..x.len()).map(|_| rng.gaussian()).collect();
    let z = x
        .iter()
        .zip(&eps)
        .map(|(&xi, &ei)| sa * xi + sb * ei)
        .collect();
    Ok((z, eps))
}

/// The ε-prediction network: an mlp over [z | time embedding] with `n`
/// outputs (one per state coordinate).
#[derive(Debug, Clone)]
pub struct Denoiser {
    pub n: usize,
    pub spec: ModelSpec,
    pub params: Parameters,
}

impl Denoiser {
    pub fn new(n: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let spec = ModelSpec::mlp_with_hidden(1, 1, n + TIME_EMBED_DIM, n, hidden);
        let params = model::init_params(&spec, rng);
        Self { n, spec, params }
    }

    fn embed(&self, z: &[f64], t: usize, steps: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.n + TIME_EMBED_DIM);
        input.extend_from_slice(z);
        input.extend(time_embedding(t, steps));
        input
    }

    pub fn predict(&self, z: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let input = self.embed(z, t, schedule.steps());
        let out = model::logits(&self.spec, &self.params, std::slice::from_ref(&input))?;
        Ok(out.into_iter().next().unwrap())
    }
}

/// Mean squared ε-prediction error over a batch of (z_t, t, ε) triples,
/// and its gradient with respect to the denoiser parameters.
pub fn noise_prediction_loss(
    denoiser: &Denoiser,
    batch: &[(Vec<f64>, usize, Vec<f64>)],
    schedule: &NoiseSchedule,
) -> Result<(f64, Vec<f64>)> {
    let inputs: Vec<Vec<f64>> = batch
        .iter()
        .map(|(z, t, _)| denoiser.embed(z, *t, schedule.steps()))
        .collect();
    let cache = model::forward(&denoiser.spec, &denoiser.params, &inputs)?;
    let b = batch.len() as f64;
    let mut loss = 0.0;
    let mut dlogits = Vec::with_capacity(batch.len());
    for (pred, (_, _, eps)) in cache.logits.iter().zip(batch) {
        let mut row = Vec::with_capacity(denoiser.n);
        for (p, e) in pred.iter().zip(eps) {
            let diff = p - e;
            loss += diff * diff;
            row.push(2.0 * diff / b);
        }
        dlogits.push(row);
    }
    loss /= b;
    let grad = model::backward(&denoiser.spec, &denoiser.params, &inputs, &cache, &dlogits)?;
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct DiffusionTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for DiffusionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            learning_rate: 0.01,
            momentum: 0.9,
            hidden: 64,
            seed: 0,
        }
    }
}

/// SGD training of a fresh denoiser on clean vectors. Returns the model
/// and the recorded loss curve (one entry per optimization step).
pub fn train_denoiser(
    data: &[Vec<f64>],
    schedule: &NoiseSchedule,
    config: &DiffusionTrainConfig,
) -> Result<(Denoiser, Vec<f64>)> {
    if data.is_empty() {
        return Err(SynthError::Spec("empty denoiser training set".into()));
    }
    let n = data[0].len();
    if data.iter().any(|x| x.len() != n) {
        return Err(SynthError::Spec("ragged denoiser training set".into()));
    }
    let mut init_rng = RngStream::new(config.seed, 0);
    let mut batch_rng = RngStream::new(config.seed, 1);
    let mut denoiser = Denoiser::new(n, config.hidden, &mut init_rng);
    let mut velocity = vec![0.0; denoiser.params.values.len()];
    let mut curve = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let x = &data[batch_rng.uniform_usize(data.len())];
            let t = 1 + batch_rng.uniform_usize(schedule.steps());
            let (z, eps) = forward_diffuse(x, t, schedule, &mut batch_rng)?;
            batch.push((z, t, eps));
        }
        let (loss, grad) = noise_prediction_loss(&denoiser, &batch, schedule)?;
        if !loss.is_finite() {
            return Err(SynthError::Classifier(
                classifier::ClassifierError::Diverged { epoch: step },
            ));
        }
        for ((v, g), p) in velocity
            .iter_mut()
            .zip(&grad)
            .zip(denoiser.params.values.iter_mut())
        {
            *v = config.momentum * *v - config.learning_rate * g;
            *p += *v;
        }
        curve.push(loss);
    }
    Ok((denoiser, curve))
}

/// A binary classifier trained on noised inputs [z_t | time embedding];
/// class 0 is "real". Drives the guidance term during sampling.
#[derive(Debug, Clone)]
pub struct GuidanceClassifier {
    pub n: usize,
    pub spec: ModelSpec,
    pub params: Parameters,
}

impl GuidanceClassifier {
    /// log-probability-of-real gradient with respect to the state part of
    /// the input.
    pub fn real_log_prob_grad(
        &self,
        z: &[f64],
        t: usize,
        schedule: &NoiseSchedule,
    ) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(self.n + TIME_EMBED_DIM);
        input.extend_from_slice(z);
        input.extend(time_embedding(t, schedule.steps()));
        let full = model::input_grad(&self.spec, &self.params, &input, 0)?;
        Ok(full[..self.n].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct GuidanceTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for GuidanceTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            hidden: 64,
            seed: 0,
        }
    }
}

/// Train a real-vs-generated classifier on noised inputs: each example is
/// noised to a uniformly random step before classification.
pub fn train_noised_classifier(
    real: &[Vec<f64>],
    generated: &[Vec<f64>],
    schedule: &NoiseSchedule,
    config: &GuidanceTrainConfig,
) -> Result<GuidanceClassifier> {
    if real.is_empty() || generated.is_empty() {
        return Err(SynthError::Spec("empty guidance training set".into()));
    }
    let n = real[0].len();
    if real.iter().chain(generated).any(|x| x.len() != n) {
        return Err(SynthError::Spec("ragged guidance training set".into()));
    }
    let spec = ModelSpec::mlp_with_hidden(1, 1, n + TIME_EMBED_DIM, 2, config.hidden);
    let mut init_rng = RngStream::new(config.seed, 10);
    let mut batch_rng = RngStream::new(config.seed, 11);
    let mut params = model::init_params(&spec, &mut init_rng);
    let mut velocity = vec![0.0; params.values.len()];
    let per_epoch = (real.len() + generated.len()) / config.batch_size.max(1);
    for epoch in 0..config.epochs {
        for _ in 0..per_epoch.max(1) {
            let mut inputs = Vec::with_capacity(config.batch_size);
            let mut labels = Vec::with_capacity(config.batch_size);
            for i in 0..config.batch_size {
                // alternate classes for balance
                let (pool, label) = if i % 2 == 0 {
                    (real, 0usize)
                } else {
                    (generated, 1usize)
                };
                let x = &pool[batch_rng.uniform_usize(pool.len())];
                let t = 1 + batch_rng.uniform_usize(schedule.steps());
                let (z, _) = forward_diffuse(x, t, schedule, &mut batch_rng)?;
                let mut input = z;
                input.extend(time_embedding(t, schedule.steps()));
                inputs.push(input);
                labels.push(label);
            }
            let (loss, grad) = model::loss_and_grad(&spec, &params, &inputs, &labels, 0.0)?;
            if !loss.is_finite() {
                return Err(SynthError::Classifier(
                    classifier::ClassifierError::Diverged { epoch },
                ));
            }
            for ((v, g), p) in velocity.iter_mut().zip(&grad).zip(params.values.iter_mut()) {
                *v = config.momentum * *v - config.learning_rate * g;
                *p += *v;
            }
        }
    }
    Ok(GuidanceClassifier { n, spec, params })
}

#[derive(Debug, Clone, Copy)]
pub struct Guidance<'a> {
    pub classifier: &'a GuidanceClassifier,
    /// guidance scale s; the posterior mean is shifted by s·β_t·∇log p(real)
    pub scale: f64,
}

/// DDPM ancestral sampling from pure noise. With `guidance`, each reverse
/// step's mean is shifted by scale·σ_t²·∇_z log p(real | z_t, t); scale 0
/// is bit-identical to passing no guidance.
pub fn ancestral_sample(
    denoiser: &Denoiser,
    schedule: &NoiseSchedule,
    count: usize,
    rng: &mut RngStream,
    guidance: Option<Guidance<'_>>,
) -> Result<Vec<Vec<f64>>> {
    let n = denoiser.n;
    let steps = schedule.steps();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut z: Vec<f64> = (0..n).map(|_| rng.gaussian()).collect();
        for t in (1..=steps).rev() {
            let beta = schedule.betas[t - 1];
            let alpha = 1.0 - beta;
            let ab = schedule.alpha_bars[t];
            let eps_hat = denoiser.predict(&z, t, schedule)?;
            let coef = beta / (1.0 - ab).sqrt();
            let mut mean: Vec<f64> = z
                .iter()
                .zip(&eps_hat)
                .map(|(&zi, &ei)| (zi - coef * ei) / alpha.sqrt())
                .collect();
            if let Some(g) = guidance {
                if g.scale != 0.0 {
                    let grad = g.classifier.real_log_prob_grad(&z, t, schedule)?;
                    for (m, gr) in mean.iter_mut().zip(&grad) {
                        *m += g.scale * beta * gr;
                    }
                }
            }
            if t > 1 {
                for m in mean.iter_mut() {
                    *m += beta.sqrt() * rng.gaussian();
                }
            }
            z = mean;
        }
        out.push(z);
    }
    Ok(out)
}
