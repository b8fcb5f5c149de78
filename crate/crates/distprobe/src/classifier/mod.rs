//! Differentiable classifiers, the training/evaluation loop, and the
//! estimators that turn classifier performance into distribution-distance
//! bounds.
//!
//! For a balanced binary probe, Bayes accuracy equals (1 + TV)/2, so
//! 2·accuracy − 1 lower-bounds the total variation. The optimal binary
//! classifier's two-term cross-entropy L* satisfies L* = ln 4 − 2·JSD,
//! so (ln 4 − L)/2 estimates the Jensen-Shannon divergence from below
//! (a trained classifier is never better than the optimal one).

pub mod model;
pub mod train;

pub use model::{
    cross_entropy_loss, extract_features, forward, init_params, input_grad, log_softmax, logits,
    loss_and_grad, softmax, ModelFamily, ModelSpec, Parameters,
};
pub use train::{
    evaluate, load_checkpoint, save_checkpoint, train, ClassData, EvalResult, Normalization,
    Normalizer, TrainConfig, TrainedModel,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unsupported: {0}")]
    Unsupported(&'static str),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Imaging(#[from] crate::imaging::ImagingError),
}

pub type Result<T> = std::result::Result<T, ClassifierError>;

/// Divergence estimates recovered from one balanced binary probe.
/// Both are classifier-limited: a weak classifier underestimates.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DivergenceEstimate {
    /// clamp(2·accuracy − 1, 0, 1)
    pub tv_lower: f64,
    /// clamp((ln 4 − L)/2, 0, ln 2) from the two-term binary cross-entropy
    pub jsd_estimate: f64,
    /// which measurements fed the two fields
    pub source: String,
    pub classifier_limited: bool,
}

/// Held-out metrics and metadata for one experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProbeReport {
    pub class_names: Vec<String>,
    /// held-out sample count per class
    pub per_class_counts: Vec<usize>,
    /// top-1 accuracy on the held-out split
    pub accuracy: f64,
    /// mean softmax cross-entropy in nats (no smoothing)
    pub cross_entropy_nats: f64,
    /// confusion[i][j] = count of true class i predicted as j
    pub confusion: Vec<Vec<usize>>,
    /// binary probes only
    pub divergence: Option<DivergenceEstimate>,
    pub preprocessing: String,
    pub seed: u64,
    pub train_loss_curve: Vec<f64>,
    /// excluded from reproducibility comparisons
    pub wall_clock_secs: f64,
}

impl ProbeReport {
    /// Confusion rows must sum to per-class counts and the trace must
    /// reproduce the accuracy.
    pub fn check_consistency(&self) -> Result<()> {
        let total: usize = self.per_class_counts.iter().sum();
        let mut trace = 0usize;
        for (i, row) in self.confusion.iter().enumerate() {
            let sum: usize = row.iter().sum();
            if sum != self.per_class_counts[i] {
                return Err(ClassifierError::Contract(format!(
                    "confusion row {i} sums to {sum}, expected {}",
                    self.per_class_counts[i]
                )));
            }
            trace += row[i];
        }
        let acc = trace as f64 / total as f64;
        if (acc - self.accuracy).abs() > 1e-12 {
            return Err(ClassifierError::Contract(format!(
                "accuracy {} does not match confusion trace {}",
                self.accuracy, acc
            )));
        }
        Ok(())
    }
}

pub const LN_2: f64 = std::f64::consts::LN_2;
pub const LN_4: f64 = 2.0 * std::f64::consts::LN_2;

/// Lower bound on total variation from balanced binary accuracy:
/// clamp(2·accuracy − 1, 0, 1). Multi-way probes report accuracy only.
pub fn tv_lower_bound(accuracy: f64, num_classes: usize) -> Result<f64> {
    if num_classes != 2 {
        return Err(ClassifierError::Unsupported(
            "tv lower bound is defined for balanced binary probes",
        ));
    }
    Ok((2.0 * accuracy - 1.0).clamp(0.0, 1.0))
}

/// JSD estimate from the two-term binary cross-entropy (in nats):
/// clamp((ln 4 − L)/2, 0, ln 2).
pub fn jsd_estimate(two_term_cross_entropy: f64) -> f64 {
    ((LN_4 - two_term_cross_entropy) / 2.0).clamp(0.0, LN_2)
}
