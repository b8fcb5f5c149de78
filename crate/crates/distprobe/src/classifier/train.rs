//! Seeded-shuffle minibatch SGD with momentum, balanced class sampling,
//! deterministic held-out evaluation, and checkpoint I/O.

use super::model::{init_params, logits, loss_and_grad, ModelFamily, ModelSpec, Parameters};
use super::{jsd_estimate, tv_lower_bound, ClassifierError, DivergenceEstimate, ProbeReport, Result};
use crate::imaging::{augment, center_crop, ntf, AugmentationSpec, Image};
use crate::numerics::{RngStream, Tensor};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Normalization {
    None,
    /// standardize with per-channel mean/sd fitted on the training split
    PerChannelStandardize,
    Clamp01,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub augmentation: AugmentationSpec,
    pub seed: u64,
    pub normalization: Normalization,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 64,
            epochs: 30,
            label_smoothing: 0.1,
            augmentation: AugmentationSpec::none(),
            seed: 0,
            normalization: Normalization::None,
        }
    }
}

/// One class of a probe: a name plus disjoint train/held-out splits.
#[derive(Debug, Clone)]
pub struct ClassData {
    pub name: String,
    pub train: Vec<Image>,
    pub heldout: Vec<Image>,
}

/// Input normalization fitted on the training split so evaluation applies
/// the identical transform.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Normalizer {
    pub kind: Normalization,
    pub channel_mean: Vec<f64>,
    pub channel_sd: Vec<f64>,
}

impl Normalizer {
    pub fn identity() -> Self {
        Self {
            kind: Normalization::None,
            channel_mean: Vec::new(),
            channel_sd: Vec::new(),
        }
    }

    pub fn fit(kind: Normalization, images: &[&Image]) -> Self {
        match kind {
            Normalization::None | Normalization::Clamp01 => Self {
                kind,
                channel_mean: Vec::new(),
                channel_sd: Vec::new(),
            },
            Normalization::PerChannelStandardize => {
                let channels = images[0].channels();
                let mut mean = vec![0.0; channels];
                let mut sq = vec![0.0; channels];
                let mut count = vec![0usize; channels];
                for img in images {
                    for c in 0..channels {
                        for &v in img.channel(c) {
                            mean[c] += v;
                            sq[c] += v * v;
                            count[c] += 1;
                        }
                    }
                }
                let mut sd = vec![0.0; channels];
                for c in 0..channels {
                    mean[c] /= count[c] as f64;
                    sd[c] = (sq[c] / count[c] as f64 - mean[c] * mean[c]).max(0.0).sqrt();
                    if sd[c] < 1e-8 {
                        sd[c] = 1.0;
                    }
                }
                Self {
                    kind,
                    channel_mean: mean,
                    channel_sd: sd,
                }
            }
        }
    }

    /// Flatten an image into a model input under this normalization.
    pub fn apply(&self, img: &Image) -> Vec<f64> {
        match self.kind {
            Normalization::None => img.pixels().to_vec(),
            Normalization::Clamp01 => img.pixels().iter().map(|v| v.clamp(0.0, 1.0)).collect(),
            Normalization::PerChannelStandardize => {
                let hw = img.height() * img.width();
                img.pixels()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let c = i / hw;
                        (v - self.channel_mean[c]) / self.channel_sd[c]
                    })
                    .collect()
            }
        }
    }

    pub fn describe(&self) -> String {
        match self.kind {
            Normalization::None => "none".into(),
            Normalization::Clamp01 => "clamp01".into(),
            Normalization::PerChannelStandardize => format!(
                "per_channel_standardize(mean={:?}, sd={:?})",
                self.channel_mean, self.channel_sd
            ),
        }
    }
}

/// A trained classifier together with everything evaluation needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub spec: ModelSpec,
    pub params: Parameters,
    pub normalizer: Normalizer,
    /// crop applied at evaluation time when training augmentation changed
    /// the input extent
    pub eval_crop: Option<usize>,
}

impl TrainedModel {
    pub fn preprocess(&self, img: &Image) -> Result<Vec<f64>> {
        let img = match self.eval_crop {
            Some(s) if s != img.height() || s != img.width() => center_crop(img, s)?,
            _ => img.clone(),
        };
        Ok(self.normalizer.apply(&img))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub cross_entropy_nats: f64,
    pub confusion: Vec<Vec<usize>>,
    /// two-term binary cross-entropy (sum of per-class mean terms), k=2 only
    pub two_term_ce: Option<f64>,
}

/// Deterministic single pass over preprocessed inputs. Argmax ties break
/// toward the lower class index.
pub fn evaluate(
    spec: &ModelSpec,
    params: &Parameters,
    inputs: &[Vec<f64>],
    labels: &[usize],
) -> Result<EvalResult> {
    if inputs.is_empty() {
        return Err(ClassifierError::Data("empty evaluation set".into()));
    }
    let k = spec.num_classes;
    let out = logits(spec, params, inputs)?;
    let mut confusion = vec![vec![0usize; k]; k];
    let mut ce = 0.0;
    // two-term accumulation for the binary Jensen-Shannon identity
    let mut term = vec![0.0; k];
    let mut term_n = vec![0usize; k];
    for (row, &label) in out.iter().zip(labels) {
        let mut best = 0usize;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        confusion[label][best] += 1;
        let ls = super::model::log_softmax(row);
        ce -= ls[label];
        term[label] -= ls[label];
        term_n[label] += 1;
    }
    let total = labels.len() as f64;
    let trace: usize = (0..k).map(|c| confusion[c][c]).sum();
    let two_term_ce = if k == 2 && term_n[0] > 0 && term_n[1] > 0 {
        Some(term[0] / term_n[0] as f64 + term[1] / term_n[1] as f64)
    } else {
        None
    };
    Ok(EvalResult {
        accuracy: trace as f64 / total,
        cross_entropy_nats: ce / total,
        confusion,
        two_term_ce,
    })
}

fn validate_classes(classes: &[ClassData]) -> Result<()> {
    if classes.len() < 2 {
        return Err(ClassifierError::Data(format!(
            "need >= 2 classes, got {}",
            classes.len()
        )));
    }
    for c in classes {
        if c.train.is_empty() || c.heldout.is_empty() {
            return Err(ClassifierError::Data(format!(
                "class {:?} has an empty split",
                c.name
            )));
        }
    }
    Ok(())
}

/// Balanced, seeded-shuffle minibatch SGD with momentum. Augmentation is
/// re-sampled each epoch; the final report is computed on the held-out
/// split with augmentation-free preprocessing.
pub fn train(
    spec: &ModelSpec,
    classes: &[ClassData],
    config: &TrainConfig,
) -> Result<(TrainedModel, ProbeReport)> {
    let start = std::time::Instant::now();
    validate_classes(classes)?;
    let k = classes.len();
    if k != spec.num_classes {
        return Err(ClassifierError::Contract(format!(
            "spec expects {} classes, data has {}",
            spec.num_classes, k
        )));
    }
    let mut rng = RngStream::new(config.seed, 0);
    let mut params = init_params(spec, &mut rng);

    let train_refs: Vec<&Image> = classes.iter().flat_map(|c| c.train.iter()).collect();
    let normalizer = Normalizer::fit(config.normalization, &train_refs);
    let eval_crop = config.augmentation.random_crop.map(|(_, s)| s);

    let min_count = classes.iter().map(|c| c.train.len()).min().unwrap();
    let mut velocity = vec![0.0; params.values.len()];
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        // fresh per-class permutations each epoch, interleaved so every
        // batch stays class-balanced
        let mut perms: Vec<Vec<usize>> = classes
            .iter()
            .map(|c| (0..c.train.len()).collect())
            .collect();
        for p in perms.iter_mut() {
            rng.shuffle(p);
        }
        let order: Vec<(usize, usize)> = (0..min_count)
            .flat_map(|i| (0..k).map(move |c| (c, i)))
            .collect();

        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size.max(1)) {
            let mut batch = Vec::with_capacity(chunk.len());
            let mut labels = Vec::with_capacity(chunk.len());
            for &(c, i) in chunk {
                let img = &classes[c].train[perms[c][i]];
                let img = augment(img, &config.augmentation, &mut rng)?;
                batch.push(normalizer.apply(&img));
                labels.push(c);
            }
            let (loss, grad) =
                match loss_and_grad(spec, &params, &batch, &labels, config.label_smoothing) {
                    Ok(v) => v,
                    // overflowing activations are a divergence, not a contract bug
                    Err(ClassifierError::Contract(msg)) if msg.contains("non-finite") => {
                        return Err(ClassifierError::Diverged { epoch })
                    }
                    Err(e) => return Err(e),
                };
            if !loss.is_finite() {
                return Err(ClassifierError::Diverged { epoch });
            }
            for i in 0..params.values.len() {
                velocity[i] = config.momentum * velocity[i] - config.learning_rate * grad[i];
                params.values[i] += velocity[i];
            }
            if params.values.iter().any(|v| !v.is_finite()) {
                return Err(ClassifierError::Diverged { epoch });
            }
            epoch_loss += loss;
            batches += 1;
        }
        loss_curve.push(epoch_loss / batches as f64);
    }

    let model = TrainedModel {
        spec: spec.clone(),
        params,
        normalizer,
        eval_crop,
    };
    let report = build_report(&model, classes, config, loss_curve, start)?;
    Ok((model, report))
}

fn build_report(
    model: &TrainedModel,
    classes: &[ClassData],
    config: &TrainConfig,
    loss_curve: Vec<f64>,
    start: std::time::Instant,
) -> Result<ProbeReport> {
    let k = classes.len();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        for img in &class.heldout {
            inputs.push(model.preprocess(img)?);
            labels.push(ci);
        }
    }
    let eval = evaluate(&model.spec, &model.params, &inputs, &labels)?;
    let divergence = if k == 2 {
        let tv = tv_lower_bound(eval.accuracy, 2)?;
        let jsd = jsd_estimate(eval.two_term_ce.expect("binary eval emits two-term ce"));
        Some(DivergenceEstimate {
            tv_lower: tv,
            jsd_estimate: jsd,
            source: "accuracy/cross_entropy".into(),
            classifier_limited: true,
        })
    } else {
        None
    };
    let report = ProbeReport {
        class_names: classes.iter().map(|c| c.name.clone()).collect(),
        per_class_counts: classes.iter().map(|c| c.heldout.len()).collect(),
        accuracy: eval.accuracy,
        cross_entropy_nats: eval.cross_entropy_nats,
        confusion: eval.confusion,
        divergence,
        preprocessing: format!(
            "normalization={}; augmentation={:?}; eval_crop={:?}",
            model.normalizer.describe(),
            config.augmentation,
            model.eval_crop
        ),
        seed: config.seed,
        train_loss_curve: loss_curve,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    report.check_consistency()?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Checkpoints: one NTF tensor per named layer plus a key=value manifest.
// ---------------------------------------------------------------------------

pub fn save_checkpoint(model: &TrainedModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
    let mut manifest = String::new();
    let spec = &model.spec;
    let family = match spec.family {
        ModelFamily::Logistic => "logistic".to_string(),
        ModelFamily::Mlp { hidden } => format!("mlp:{hidden}"),
        ModelFamily::SmallConv { c1, c2 } => format!("smallconv:{c1}:{c2}"),
    };
    manifest.push_str(&format!("family={family}\n"));
    manifest.push_str(&format!("in_channels={}\n", spec.in_channels));
    manifest.push_str(&format!("in_h={}\n", spec.in_h));
    manifest.push_str(&format!("in_w={}\n", spec.in_w));
    manifest.push_str(&format!("num_classes={}\n", spec.num_classes));
    for (name, range) in spec.layout() {
        let t = Tensor::new(vec![range.len()], model.params.values[range].to_vec())
            .map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
        std::fs::write(dir.join(format!("{name}.ntf")), ntf::encode(&t))
            .map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
        manifest.push_str(&format!("layer={name}\n"));
    }
    std::fs::write(dir.join("manifest.txt"), manifest)
        .map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel> {
    let err = |m: String| ClassifierError::Checkpoint(m);
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))
        .map_err(|e| err(format!("manifest: {e}")))?;
    let mut kv = std::collections::BTreeMap::new();
    for line in manifest.lines() {
        if let Some((key, value)) = line.split_once('=') {
            if key != "layer" {
                kv.insert(key.to_string(), value.to_string());
            }
        }
    }
    let get = |key: &str| {
        kv.get(key)
            .cloned()
            .ok_or_else(|| err(format!("manifest missing {key}")))
    };
    let parse_usize =
        |v: String| v.parse::<usize>().map_err(|e| err(format!("bad value {v}: {e}")));
    let family_raw = get("family")?;
    let family = if family_raw == "logistic" {
        ModelFamily::Logistic
    } else if let Some(h) = family_raw.strip_prefix("mlp:") {
        ModelFamily::Mlp {
            hidden: parse_usize(h.to_string())?,
        }
    } else if let Some(rest) = family_raw.strip_prefix("smallconv:") {
        let (c1, c2) = rest
            .split_once(':')
            .ok_or_else(|| err(format!("bad family {family_raw}")))?;
        ModelFamily::SmallConv {
            c1: parse_usize(c1.to_string())?,
            c2: parse_usize(c2.to_string())?,
        }
    } else {
        return Err(err(format!("unknown family {family_raw}")));
    };
    let spec = ModelSpec {
        family,
        in_channels: parse_usize(get("in_channels")?)?,
        in_h: parse_usize(get("in_h")?)?,
        in_w: parse_usize(get("in_w")?)?,
        num_classes: parse_usize(get("num_classes")?)?,
    };
    let mut values = vec![0.0; spec.param_count()];
    for (name, range) in spec.layout() {
        let bytes = std::fs::read(dir.join(format!("{name}.ntf")))
            .map_err(|e| err(format!("{name}: {e}")))?;
        let t = ntf::decode(&bytes).map_err(|e| err(format!("{name}: {e}")))?;
        if t.data().len() != range.len() {
            return Err(err(format!(
                "{name} holds {} values, expected {}",
                t.data().len(),
                range.len()
            )));
        }
        values[range].copy_from_slice(t.data());
    }
    Ok(TrainedModel {
        params: Parameters {
            values,
            layout: spec.layout().into_iter().collect(),
        },
        spec,
        normalizer: Normalizer::identity(),
        eval_crop: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::model::init_params;
    use crate::numerics::RngStream;

    fn bernoulli_images(theta: f64, n: usize, rng: &mut RngStream) -> Vec<Image> {
        (0..n)
            .map(|_| {
                let pixels = (0..16)
                    .map(|_| if rng.bernoulli(theta) { 1.0 } else { 0.0 })
                    .collect();
                Image::new(1, 4, 4, pixels).unwrap()
            })
            .collect()
    }

    fn blob_classes(seed: u64) -> Vec<ClassData> {
        // linearly separable 2-D blobs (means ±3, sd 0.5) coded as constant
        // half-images
        let mut rng = RngStream::new(seed, 0);
        let mut make = |mean: f64, n: usize| -> Vec<Image> {
            (0..n)
                .map(|_| {
                    let p1 = ((mean + 0.5 * rng.gaussian()) + 6.0) / 12.0;
                    let p2 = ((mean + 0.5 * rng.gaussian()) + 6.0) / 12.0;
                    let mut pixels = vec![p1.clamp(0.0, 1.0); 64];
                    for v in pixels.iter_mut().skip(32) {
                        *v = p2.clamp(0.0, 1.0);
                    }
                    Image::new(1, 8, 8, pixels).unwrap()
                })
                .collect()
        };
        vec![
            ClassData {
                name: "neg".into(),
                train: make(-3.0, 100),
                heldout: make(-3.0, 100),
            },
            ClassData {
                name: "pos".into(),
                train: make(3.0, 100),
                heldout: make(3.0, 100),
            },
        ]
    }

    #[test]
    fn separable_blobs_reach_high_accuracy() {
        let classes = blob_classes(1);
        let spec = ModelSpec::logistic(1, 8, 8, 2);
        let config = TrainConfig {
            epochs: 20,
            seed: 3,
            ..TrainConfig::default()
        };
        let (_, report) = train(&spec, &classes, &config).unwrap();
        assert!(report.accuracy >= 0.99, "accuracy {}", report.accuracy);
        report.check_consistency().unwrap();
        let div = report.divergence.unwrap();
        assert!(div.tv_lower >= 0.98);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let classes = blob_classes(2);
        let spec = ModelSpec::mlp_with_hidden(1, 8, 8, 2, 16);
        let config = TrainConfig {
            epochs: 3,
            seed: 11,
            augmentation: AugmentationSpec {
                random_crop: Some((1, 8)),
                horizontal_flip_prob: 0.5,
            },
            ..TrainConfig::default()
        };
        let (m1, mut r1) = train(&spec, &classes, &config).unwrap();
        let (m2, mut r2) = train(&spec, &classes, &config).unwrap();
        assert_eq!(m1.params.values, m2.params.values);
        r1.wall_clock_secs = 0.0;
        r2.wall_clock_secs = 0.0;
        assert_eq!(r1, r2);
    }

    #[test]
    fn training_loss_is_not_increasing_overall() {
        let classes = blob_classes(4);
        let spec = ModelSpec::logistic(1, 8, 8, 2);
        let config = TrainConfig {
            epochs: 10,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, report) = train(&spec, &classes, &config).unwrap();
        let curve = &report.train_loss_curve;
        assert!(
            curve.last().unwrap() <= curve.first().unwrap(),
            "loss went up: {curve:?}"
        );
    }

    #[test]
    fn empty_class_is_data_error() {
        let mut classes = blob_classes(6);
        classes[0].train.clear();
        let spec = ModelSpec::logistic(1, 8, 8, 2);
        assert!(matches!(
            train(&spec, &classes, &TrainConfig::default()),
            Err(ClassifierError::Data(_))
        ));
        let one = vec![blob_classes(6).remove(0)];
        assert!(matches!(
            train(&spec, &one, &TrainConfig::default()),
            Err(ClassifierError::Data(_))
        ));
    }

    #[test]
    fn absurd_learning_rate_diverges_loudly() {
        let classes = blob_classes(7);
        let spec = ModelSpec::mlp_with_hidden(1, 8, 8, 2, 16);
        let config = TrainConfig {
            learning_rate: 1e200,
            epochs: 5,
            seed: 1,
            ..TrainConfig::default()
        };
        match train(&spec, &classes, &config) {
            Err(ClassifierError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn evaluate_constant_predictor_is_half() {
        let spec = ModelSpec::logistic(1, 4, 4, 2);
        let mut params = init_params(&spec, &mut RngStream::new(1, 0));
        for v in params.values.iter_mut() {
            *v = 0.0;
        }
        // bias toward class 0: constant prediction
        let b = params.layout["b"].start;
        params.values[b] = 5.0;
        let mut rng = RngStream::new(2, 0);
        let a = bernoulli_images(0.3, 50, &mut rng);
        let b_imgs = bernoulli_images(0.7, 50, &mut rng);
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for img in a.iter().chain(&b_imgs) {
            inputs.push(img.pixels().to_vec());
        }
        labels.extend(std::iter::repeat(0).take(50));
        labels.extend(std::iter::repeat(1).take(50));
        let eval = evaluate(&spec, &params, &inputs, &labels).unwrap();
        assert_eq!(eval.accuracy, 0.5);
        // argmax ties (all-zero params) break toward class 0
        params.values[b] = 0.0;
        let eval = evaluate(&spec, &params, &inputs, &labels).unwrap();
        assert_eq!(eval.confusion[0][0], 50);
        assert_eq!(eval.confusion[1][0], 50);
    }

    #[test]
    fn checkpoint_roundtrip_preserves_parameters() {
        let dir = tempfile::tempdir().unwrap();
        for spec in [
            ModelSpec::logistic(1, 4, 4, 2),
            ModelSpec::mlp_with_hidden(3, 4, 4, 5, 9),
            ModelSpec::smallconv(1, 8, 8, 3),
        ] {
            let mut rng = RngStream::new(13, 0);
            let mut params = init_params(&spec, &mut rng);
            // f32-exact values so NTF narrowing is lossless
            for v in params.values.iter_mut() {
                *v = *v as f32 as f64;
            }
            let model = TrainedModel {
                spec: spec.clone(),
                params: params.clone(),
                normalizer: Normalizer::identity(),
                eval_crop: None,
            };
            let path = dir.path().join(format!("{:?}", spec.family));
            save_checkpoint(&model, &path).unwrap();
            let loaded = load_checkpoint(&path).unwrap();
            assert_eq!(loaded.spec, spec);
            assert_eq!(loaded.params.values, params.values);
        }
    }

    #[test]
    fn standardize_fits_on_train_set() {
        let mut rng = RngStream::new(14, 0);
        let imgs = bernoulli_images(0.5, 200, &mut rng);
        let refs: Vec<&Image> = imgs.iter().collect();
        let norm = Normalizer::fit(Normalization::PerChannelStandardize, &refs);
        let mut mean = 0.0;
        let mut count = 0;
        for img in &imgs {
            for v in norm.apply(img) {
                mean += v;
                count += 1;
            }
        }
        mean /= count as f64;
        assert!(mean.abs() < 1e-10);
    }
}
