//! Measure the distance between sample distributions by training
//! classifiers to tell them apart.
//!
//! The crate converts classifier performance into divergence estimates
//! (total-variation lower bounds and Jensen-Shannon estimates from the
//! binary cross-entropy loss) and ships a diagnostic battery around that
//! core: ideal frequency filters, crop sweeps, sample-scaling curves,
//! replace-vs-augment data mixing, generative autophagy loops, and
//! classifier-guided sampling from a toy diffusion model — all runnable
//! at desk scale against exact analytic oracles.

pub mod classifier;
pub mod config;
pub mod imaging;
pub mod numerics;
pub mod probes;
pub mod spectral;
pub mod synth;
