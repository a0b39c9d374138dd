//! Few-shot neural radiance fields on the CPU.
//!
//! This crate trains a small MLP radiance field from a handful of posed views
//! and regularizes the rendering loss so that sparse supervision does not
//! collapse into high-frequency overfitting. The pieces:
//!
//! * [`autodiff`] — a reverse-mode tape over scalars and fused affine ops,
//!   plus Adam and a finite-difference gradient checker.
//! * [`encoding`] — sinusoidal positional encoding and the linearly
//!   increasing frequency mask that unlocks bands during training.
//! * [`field`] — the MLP mapping masked encodings to color mean, color
//!   variance and density.
//! * [`rendering`] — ray generation, stratified sampling, alpha compositing
//!   and ray-density computation.
//! * [`losses`] — two-phase blurred supervision, the uncertainty-weighted
//!   rendering loss, ray-density regularization, occlusion regularization and
//!   the ablation alternatives.
//! * [`supervision`] — posed-image datasets, Gaussian blurring and the
//!   edge-based low/high-frequency pixel classifier.
//! * [`scenes`] — analytic test scenes rendered by dense quadrature, used as
//!   ground truth for training and for floater measurements.
//! * [`metrics`] — PSNR, SSIM and frequency-split PSNR.
//! * [`trainer`] — the optimization loop, schedules, checkpointing and the
//!   scripted analysis experiments.

pub mod autodiff;
pub mod encoding;
pub mod error;
pub mod eval;
pub mod field;
pub mod graph;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod rendering;
pub mod scenes;
pub mod supervision;
pub mod trainer;

pub use autodiff::{AdamState, ParamSet, Tape, ValueId};
pub use encoding::{EncodingConfig, FrequencyMask};
pub use error::{Error, Result};
pub use field::{Checkpoint, FieldOutput, MlpArchitecture};
pub use losses::{LossBreakdown, LossWeights};
pub use metrics::EvalReport;
pub use rendering::{Camera, Ray, RaySamples, RenderedPixel};
pub use scenes::AnalyticScene;
pub use supervision::{Dataset, Image, PosedImage};
pub use trainer::{LossMode, TrainConfig};
