//! Training-loop orchestration: schedules, batch assembly, optimization,
//! logging, checkpointing and resume.

mod experiments;

pub use experiments::{
    run_ablation, run_fig_low_freq, run_regularizer_comparison, AblationOutcome, ExperimentRow,
    LowFreqOutcome, RegComparisonOutcome,
};

use crate::autodiff::{adam_step, AdamState, LrSchedule, Tape};
use crate::encoding::mask_at;
use crate::error::{Error, Result};
use crate::eval::evaluate_on_dataset;
use crate::field::{init_parameters, layer_offsets, query_cached, Checkpoint, MlpArchitecture, QueryScratch};
use crate::graph::{build_ray_graph, GraphConfig, RayInputs, RayRegularizer};
use crate::losses::{
    blur_active, linear_high_freq_weight, occlusion_window, squared_error, two_phase_target,
    LossBreakdown, LossWeights,
};
use crate::math::{mean, mix_seed};
use crate::rendering::{composite, stratified_depths, RaySamples};
use crate::supervision::{
    sample_ray_batch, save_dataset, Dataset, RaySupervision, TrainViews,
};
use crate::encoding::{masked_encode, EncodingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Which loss terms a run trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Frequency mask + occlusion term, raw targets (the reference setup).
    Baseline,
    /// Adds two-phase blurred supervision.
    TwoPhase,
    /// Adds the uncertainty-weighted loss on raw targets.
    Adaptive,
    /// Two-phase supervision plus uncertainty weighting.
    TwoPhaseAdaptive,
    /// Everything incl. ray-density regularization.
    Full,
    /// Scheduler ablation: linearly ramped weight on high-frequency pixels.
    Linear,
    /// Scheduler ablation: blur sigma decays linearly to zero.
    AdaptiveBlur,
    /// Regularizer ablation: ray-density entropy instead of log(1+sp).
    Entropy,
    /// Regularizer ablation: log(1+sw) on compositing weights.
    EmptinessW,
}

impl LossMode {
    pub fn all() -> [LossMode; 9] {
        [
            LossMode::Baseline,
            LossMode::TwoPhase,
            LossMode::Adaptive,
            LossMode::TwoPhaseAdaptive,
            LossMode::Full,
            LossMode::Linear,
            LossMode::AdaptiveBlur,
            LossMode::Entropy,
            LossMode::EmptinessW,
        ]
    }

    pub fn label(self) -> &'static str {
        match self {
            LossMode::Baseline => "baseline",
            LossMode::TwoPhase => "two-phase",
            LossMode::Adaptive => "adaptive",
            LossMode::TwoPhaseAdaptive => "two-phase-adaptive",
            LossMode::Full => "full",
            LossMode::Linear => "linear",
            LossMode::AdaptiveBlur => "adaptive-blur",
            LossMode::Entropy => "entropy",
            LossMode::EmptinessW => "emptiness-w",
        }
    }

    pub fn parse(text: &str) -> Result<LossMode> {
        LossMode::all()
            .into_iter()
            .find(|m| m.label() == text)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown loss mode `{text}`; expected one of {}",
                    LossMode::all().map(|m| m.label()).join(", ")
                ))
            })
    }

    fn uses_two_phase(self) -> bool {
        matches!(
            self,
            LossMode::TwoPhase
                | LossMode::TwoPhaseAdaptive
                | LossMode::Full
                | LossMode::Entropy
                | LossMode::EmptinessW
        )
    }

    fn uses_uncertainty(self) -> bool {
        matches!(
            self,
            LossMode::Adaptive
                | LossMode::TwoPhaseAdaptive
                | LossMode::Full
                | LossMode::Entropy
                | LossMode::EmptinessW
        )
    }

    fn regularizer(self) -> RayRegularizer {
        match self {
            LossMode::Full => RayRegularizer::Density,
            LossMode::Entropy => RayRegularizer::Entropy,
            LossMode::EmptinessW => RayRegularizer::EmptinessWeights,
            _ => RayRegularizer::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub trunk_depth: usize,
    pub trunk_width: usize,
    pub head_width: usize,
    pub skip_layers: Vec<usize>,
    pub pos_bands: usize,
    pub dir_bands: usize,
    pub beta_min: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            trunk_depth: 4,
            trunk_width: 64,
            head_width: 32,
            skip_layers: vec![2],
            pos_bands: 8,
            dir_bands: 4,
            beta_min: 1e-4,
        }
    }
}

impl NetworkConfig {
    pub fn to_arch(&self) -> MlpArchitecture {
        MlpArchitecture {
            trunk_depth: self.trunk_depth,
            trunk_width: self.trunk_width,
            skip_layers: self.skip_layers.clone(),
            head_width: self.head_width,
            pos_encoding: EncodingConfig::new(self.pos_bands),
            dir_encoding: EncodingConfig::new(self.dir_bands),
            beta_min: self.beta_min,
        }
    }
}

/// All schedules and balance terms of a run. Fractional schedule knobs are
/// resolved against `total_iters`. The horizon fractions follow the usual
/// frequency-regularization convention (mask over 90% of training); the
/// phase switch scales the reference 3-view setting down to desk scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: u64,
    /// Frequency-mask horizon T as a fraction of `total_iters`.
    pub mask_horizon_frac: f64,
    /// Phase switch T_s as a fraction of `total_iters`. Values > 1 keep the
    /// blurred phase active for the whole run; 0 disables it.
    pub phase_switch_frac: f64,
    /// Freezes the mask at this unlock fraction for the whole run
    /// (low-frequency-only studies).
    pub freeze_mask_frac: Option<f64>,
    pub batch_size: usize,
    pub samples_per_ray: usize,
    pub lambda_u: f64,
    pub lambda_o: f64,
    pub lambda_r_start: f64,
    pub lambda_r_end: f64,
    pub lambda_r_ramp_iters: u64,
    pub steepness: f64,
    pub blur_kernel_size: usize,
    pub blur_sigma: f64,
    pub edge_threshold: f64,
    pub occlusion_window_frac: f64,
    /// Composited-variance floor inside the NLL.
    pub beta_bar_floor: f64,
    pub lr: f64,
    pub lr_final_factor: f64,
    pub lr_warmup_iters: u64,
    pub seed: u64,
    pub mode: LossMode,
    /// Whether the NLL target follows the two-phase transform (the default)
    /// or always uses raw pixels.
    pub uncertainty_uses_phase_target: bool,
    pub network: NetworkConfig,
    /// Midpoint sampling instead of jittered stratified sampling.
    pub no_jitter: bool,
    pub log_interval: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_interval: u64,
    /// Iterations at which the per-pixel uncertainty weights are probed;
    /// empty selects ceil(T/4) and T.
    pub probe_iters: Vec<u64>,
    /// Worker threads; 0 uses all cores, 1 forces the sequential path.
    pub threads: usize,
    /// Starting sigma for the adaptive-blur scheduler ablation.
    pub adaptive_blur_sigma_max: f64,
    pub adaptive_blur_interval: u64,
    /// Samples per ray for evaluation renders; 0 reuses `samples_per_ray`.
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            total_iters: 5000,
            mask_horizon_frac: 0.9,
            phase_switch_frac: 0.25,
            freeze_mask_frac: None,
            batch_size: 1024,
            samples_per_ray: 64,
            lambda_u: 0.01,
            lambda_o: 0.01,
            lambda_r_start: 1e-5,
            lambda_r_end: 1e-3,
            lambda_r_ramp_iters: 512,
            steepness: 10.0,
            blur_kernel_size: 3,
            blur_sigma: 0.8,
            edge_threshold: 0.1,
            occlusion_window_frac: 0.1,
            beta_bar_floor: 1e-4,
            lr: 5e-3,
            lr_final_factor: 0.1,
            lr_warmup_iters: 100,
            seed: 0,
            mode: LossMode::Full,
            uncertainty_uses_phase_target: true,
            network: NetworkConfig::default(),
            no_jitter: false,
            log_interval: 1,
            checkpoint_interval: 0,
            probe_iters: Vec::new(),
            threads: 0,
            adaptive_blur_sigma_max: 1.6,
            adaptive_blur_interval: 250,
            eval_samples: 0,
        }
    }
}

impl TrainConfig {
    pub fn mask_horizon(&self) -> u64 {
        ((self.total_iters as f64 * self.mask_horizon_frac).round() as u64).max(1)
    }

    /// Effective phase switch for the configured mode.
    pub fn phase_switch(&self) -> u64 {
        match self.mode {
            LossMode::AdaptiveBlur => self.mask_horizon(),
            m if m.uses_two_phase() => {
                (self.total_iters as f64 * self.phase_switch_frac).round() as u64
            }
            _ => 0,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda_u: if self.mode.uses_uncertainty() {
                self.lambda_u
            } else {
                0.0
            },
            lambda_o: self.lambda_o,
            lambda_r_start: if self.mode.regularizer() == RayRegularizer::None {
                0.0
            } else {
                self.lambda_r_start
            },
            lambda_r_end: if self.mode.regularizer() == RayRegularizer::None {
                0.0
            } else {
                self.lambda_r_end
            },
            lambda_r_ramp_iters: self.lambda_r_ramp_iters,
            steepness: self.steepness,
            phase_switch: self.phase_switch(),
            mask_horizon: self.mask_horizon(),
        }
    }

    pub fn lr_schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            decay_factor: self.lr_final_factor,
            decay_iters: self.total_iters.max(1),
            warmup_iters: self.lr_warmup_iters,
        }
    }

    pub fn eval_sample_count(&self) -> usize {
        if self.eval_samples == 0 {
            self.samples_per_ray
        } else {
            self.eval_samples
        }
    }

    /// Mask iteration used at training iteration `iter`.
    pub fn mask_t_at(&self, iter: u64) -> u64 {
        match self.freeze_mask_frac {
            Some(frac) => (self.mask_horizon() as f64 * frac).round() as u64,
            None => iter,
        }
    }

    pub fn probe_schedule(&self) -> Vec<u64> {
        if !self.probe_iters.is_empty() {
            return self.probe_iters.clone();
        }
        let t = self.mask_horizon();
        vec![t.div_ceil(4), t]
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters == 0 {
            return Err(Error::config("total_iters must be > 0"));
        }
        if self.mask_horizon_frac <= 0.0 || self.mask_horizon_frac > 1.0 {
            return Err(Error::config("mask_horizon_frac must lie in (0, 1]"));
        }
        if self.phase_switch_frac < 0.0 {
            return Err(Error::config("phase_switch_frac must be >= 0"));
        }
        if self.phase_switch() > self.total_iters && self.phase_switch_frac <= 1.0 {
            return Err(Error::config("phase switch exceeds total iterations"));
        }
        if self.batch_size == 0 || self.samples_per_ray == 0 {
            return Err(Error::config("batch_size and samples_per_ray must be > 0"));
        }
        if self.blur_kernel_size.is_multiple_of(2) {
            return Err(Error::config("blur kernel size must be odd"));
        }
        if !(0.0..=1.0).contains(&self.occlusion_window_frac) {
            return Err(Error::config("occlusion_window_frac must lie in [0, 1]"));
        }
        if self.beta_bar_floor <= 0.0 {
            return Err(Error::config("beta_bar_floor must be > 0"));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("train config: {e}")))
    }
}

/// Per-probe summary of the learned loss weights 1/β̄², split by the
/// low/high-frequency pixel classes of the training views.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub iter: u64,
    pub mean_inv_beta2_low: f64,
    pub mean_inv_beta2_high: f64,
    pub mean_beta2_low: f64,
    pub mean_beta2_high: f64,
    pub n_low: usize,
    pub n_high: usize,
}

/// Everything a finished run leaves on disk.
#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub eval: Option<crate::metrics::EvalReport>,
    pub final_loss: LossBreakdown,
    pub probes: Vec<ProbeRecord>,
}

pub const CSV_HEADER: &str =
    "iter,l_s,l_u,l_r,l_o,l_total,mean_beta_bar2,lr,lambda_r,blur_active,target_gap";

struct ChunkOutput {
    grads: Vec<f64>,
    sum_ls: f64,
    sum_lu: f64,
    sum_lr: f64,
    sum_lo: f64,
    sum_bb2: f64,
    sum_inv_bb2: f64,
    sum_target_gap: f64,
}

/// State threaded through one training run.
struct Runner<'a> {
    cfg: &'a TrainConfig,
    views: TrainViews,
    arch: MlpArchitecture,
    graph_base: GraphConfig,
    weights: LossWeights,
    lr: LrSchedule,
    phase_switch: u64,
    mask_horizon: u64,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a TrainConfig, dataset: &'a Dataset) -> Result<Self> {
        cfg.validate()?;
        let views = TrainViews::prepare(
            dataset.train.clone(),
            dataset.near,
            dataset.far,
            cfg.blur_kernel_size,
            cfg.blur_sigma,
            cfg.edge_threshold,
        )?;
        let arch = cfg.network.to_arch();
        let graph_base = GraphConfig {
            arch: arch.clone(),
            bounds: dataset.bounds,
            background: dataset.background,
            beta_bar_floor: cfg.beta_bar_floor,
            steepness: cfg.steepness,
            occlusion_window: occlusion_window(cfg.samples_per_ray, cfg.occlusion_window_frac),
            build_uncertainty: cfg.mode.uses_uncertainty(),
            regularizer: cfg.mode.regularizer(),
            uncertainty_uses_phase_target: cfg.uncertainty_uses_phase_target,
        };
        Ok(Runner {
            cfg,
            views,
            arch,
            graph_base,
            weights: cfg.loss_weights(),
            lr: cfg.lr_schedule(),
            phase_switch: cfg.phase_switch(),
            mask_horizon: cfg.mask_horizon(),
        })
    }

    /// Loss + gradient of one sampled batch at the current parameters.
    /// Rays are processed in fixed-size chunks and chunk results reduced in
    /// order, so the result is bit-identical for any thread count.
    fn batch_gradient(
        &self,
        params: &crate::autodiff::ParamSet,
        offsets: &crate::field::LayerOffsets,
        batch: &[RaySupervision],
        iter: u64,
    ) -> Result<(LossBreakdown, Vec<f64>, f64)> {
        let cfg = self.cfg;
        let mask_pos = mask_at(cfg.mask_t_at(iter), self.mask_horizon, self.arch.pos_encoding.n_bands);
        let mask_dir = mask_at(cfg.mask_t_at(iter), self.mask_horizon, self.arch.dir_encoding.n_bands);
        let lambda_r = self.weights.lambda_r_at(iter);
        let h_linear = linear_high_freq_weight(iter, self.mask_horizon);
        let is_linear = cfg.mode == LossMode::Linear;
        let lambda_u = self.weights.lambda_u;
        let lambda_o = self.weights.lambda_o;
        let n_params = params.len();

        const CHUNK: usize = 32;
        let ranges: Vec<(usize, usize)> = (0..batch.len())
            .step_by(CHUNK)
            .map(|s| (s, (s + CHUNK).min(batch.len())))
            .collect();

        let process = |&(start, end): &(usize, usize)| -> Result<ChunkOutput> {
            let mut out = ChunkOutput {
                grads: vec![0.0; n_params],
                sum_ls: 0.0,
                sum_lu: 0.0,
                sum_lr: 0.0,
                sum_lo: 0.0,
                sum_bb2: 0.0,
                sum_inv_bb2: 0.0,
                sum_target_gap: 0.0,
            };
            let mut tape = Tape::new();
            for (ray_idx, sup) in batch[start..end].iter().enumerate() {
                let global_idx = (start + ray_idx) as u64;
                let depths = if cfg.no_jitter {
                    stratified_depths(sup.ray.t_near, sup.ray.t_far, cfg.samples_per_ray, None)
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
                        cfg.seed,
                        &[0x57A7, iter, global_idx],
                    ));
                    stratified_depths(
                        sup.ray.t_near,
                        sup.ray.t_far,
                        cfg.samples_per_ray,
                        Some(&mut rng),
                    )
                };
                let target = two_phase_target(
                    iter,
                    self.phase_switch,
                    sup.target_raw,
                    sup.target_blurred,
                );
                out.sum_target_gap += squared_error(target, sup.target_raw);
                let inputs = RayInputs {
                    origin: sup.ray.origin.to_array(),
                    dir: sup.ray.dir.to_array(),
                    depths: &depths,
                    t_far: sup.ray.t_far,
                    target,
                    target_raw: sup.target_raw,
                };
                tape.clear();
                let terms = build_ray_graph(
                    &mut tape,
                    params,
                    offsets,
                    &self.graph_base,
                    &mask_pos,
                    &mask_dir,
                    &inputs,
                )?;

                // per-ray weighted root
                let ls_scale = if is_linear && sup.is_high_freq {
                    h_linear
                } else {
                    1.0
                };
                let mut root = if ls_scale == 1.0 {
                    terms.l_s
                } else {
                    tape.mul_const(terms.l_s, ls_scale)
                };
                if let Some(lu) = terms.l_u {
                    let scaled = tape.mul_const(lu, lambda_u);
                    root = tape.add(root, scaled);
                    out.sum_lu += tape.value(lu);
                }
                if let Some(lreg) = terms.l_reg {
                    let scaled = tape.mul_const(lreg, lambda_r);
                    root = tape.add(root, scaled);
                    out.sum_lr += tape.value(lreg);
                }
                let lo_scaled = tape.mul_const(terms.l_o, lambda_o);
                root = tape.add(root, lo_scaled);

                tape.backward(root, params.values(), &mut out.grads);

                out.sum_ls += tape.value(terms.l_s) * ls_scale;
                out.sum_lo += tape.value(terms.l_o);
                let bb2 = terms.beta_bar2.max(cfg.beta_bar_floor);
                out.sum_bb2 += bb2;
                out.sum_inv_bb2 += 1.0 / bb2;
            }
            Ok(out)
        };

        let chunk_outputs: Vec<Result<ChunkOutput>> = if cfg.threads == 1 {
            ranges.iter().map(process).collect()
        } else {
            ranges.par_iter().map(process).collect()
        };

        let mut grads = vec![0.0; n_params];
        let mut totals = ChunkOutput {
            grads: Vec::new(),
            sum_ls: 0.0,
            sum_lu: 0.0,
            sum_lr: 0.0,
            sum_lo: 0.0,
            sum_bb2: 0.0,
            sum_inv_bb2: 0.0,
            sum_target_gap: 0.0,
        };
        for chunk in chunk_outputs {
            let chunk = chunk?;
            for (g, cg) in grads.iter_mut().zip(&chunk.grads) {
                *g += cg;
            }
            totals.sum_ls += chunk.sum_ls;
            totals.sum_lu += chunk.sum_lu;
            totals.sum_lr += chunk.sum_lr;
            totals.sum_lo += chunk.sum_lo;
            totals.sum_bb2 += chunk.sum_bb2;
            totals.sum_inv_bb2 += chunk.sum_inv_bb2;
            totals.sum_target_gap += chunk.sum_target_gap;
        }
        let n = batch.len() as f64;
        for g in &mut grads {
            *g /= n;
        }
        let breakdown = LossBreakdown::compose(
            totals.sum_ls / n,
            totals.sum_lu / n,
            totals.sum_lr / n,
            totals.sum_lo / n,
            &self.weights,
            iter,
            totals.sum_bb2 / n,
            totals.sum_inv_bb2 / n,
        );
        Ok((breakdown, grads, totals.sum_target_gap / n))
    }

    /// Means of the learned per-pixel weights 1/β̄² over the training
    /// views, split by frequency class.
    fn probe_uncertainty(
        &self,
        params: &crate::autodiff::ParamSet,
        iter: u64,
    ) -> Result<ProbeRecord> {
        let cfg = self.cfg;
        let mask_pos = mask_at(cfg.mask_t_at(iter), self.mask_horizon, self.arch.pos_encoding.n_bands);
        let mask_dir = mask_at(cfg.mask_t_at(iter), self.mask_horizon, self.arch.dir_encoding.n_bands);
        let offsets = layer_offsets(&self.arch, params);
        let mut low = Vec::new();
        let mut high = Vec::new();
        for (vi, view) in self.views.views.iter().enumerate() {
            let rows: Vec<Result<Vec<f64>>> = (0..view.image.height)
                .into_par_iter()
                .map(|row| {
                    let mut scratch = QueryScratch::default();
                    let mut out = Vec::with_capacity(view.image.width as usize);
                    for col in 0..view.image.width {
                        let ray = crate::rendering::generate_ray(
                            &view.camera,
                            view.view_id,
                            row,
                            col,
                            self.views.near,
                            self.views.far,
                        );
                        let depths = stratified_depths(
                            self.views.near,
                            self.views.far,
                            cfg.samples_per_ray,
                            None,
                        );
                        let d_enc =
                            masked_encode(ray.dir.to_array(), &self.arch.dir_encoding, &mask_dir)?;
                        let mut outputs = Vec::with_capacity(depths.len());
                        for &t in &depths {
                            let p = ray.point_at(t).to_array();
                            let x_enc = masked_encode(
                                self.graph_base.bounds.normalize(p),
                                &self.arch.pos_encoding,
                                &mask_pos,
                            )?;
                            outputs.push(query_cached(
                                params,
                                &self.arch,
                                &offsets,
                                &mut scratch,
                                &x_enc,
                                &d_enc,
                            )?);
                        }
                        let px = composite(&RaySamples::new(depths.clone(), self.views.far, outputs));
                        out.push(px.beta_bar2.max(cfg.beta_bar_floor));
                    }
                    Ok(out)
                })
                .collect();
            for (row, vals) in rows.into_iter().enumerate() {
                for (col, bb2) in vals?.into_iter().enumerate() {
                    if self.views.classes[vi].is_high(row as u32, col as u32) {
                        high.push(bb2);
                    } else {
                        low.push(bb2);
                    }
                }
            }
        }
        let inv = |v: &[f64]| {
            if v.is_empty() {
                0.0
            } else {
                mean(&v.iter().map(|&b| 1.0 / b).collect::<Vec<_>>())
            }
        };
        Ok(ProbeRecord {
            iter,
            mean_inv_beta2_low: inv(&low),
            mean_inv_beta2_high: inv(&high),
            mean_beta2_low: mean(&low),
            mean_beta2_high: mean(&high),
            n_low: low.len(),
            n_high: high.len(),
        })
    }
}

/// Blur sigma for the adaptive-blur scheduler: decays linearly from
/// `adaptive_blur_sigma_max` at iteration 0 to zero (identity supervision)
/// at the mask horizon.
pub fn adaptive_blur_sigma(cfg: &TrainConfig, iter: u64) -> f64 {
    let t = cfg.mask_horizon();
    let frac = (iter as f64 / t as f64).min(1.0);
    cfg.adaptive_blur_sigma_max * (1.0 - frac)
}

/// Trains from scratch; see [`train_resumed`] for checkpoint resume.
pub fn train(cfg: &TrainConfig, dataset: &Dataset, out_dir: &Path) -> Result<RunArtifacts> {
    train_resumed(cfg, dataset, out_dir, None)
}

pub fn train_resumed(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunArtifacts> {
    if cfg.threads <= 1 {
        train_inner(cfg, dataset, out_dir, resume)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?;
        pool.install(|| train_inner(cfg, dataset, out_dir, resume))
    }
}

fn train_inner(
    cfg: &TrainConfig,
    dataset: &Dataset,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<RunArtifacts> {
    let mut runner = Runner::new(cfg, dataset)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("config.toml"), cfg.to_toml()?)
        .map_err(|e| Error::io(out_dir.join("config.toml"), e))?;

    let arch = runner.arch.clone();
    let (mut params, mut adam, start_iter) = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.arch != arch {
                return Err(Error::config(
                    "checkpoint architecture does not match the configured network".to_string(),
                ));
            }
            let adam = ckpt.adam.clone().ok_or_else(|| {
                Error::data("checkpoint has no optimizer state; cannot resume")
            })?;
            (ckpt.params, adam, ckpt.iter)
        }
        None => {
            let params = init_parameters(&arch, cfg.seed);
            let n = params.len();
            (params, AdamState::new(n), 0)
        }
    };
    let offsets = layer_offsets(&arch, &params);

    let csv_path = out_dir.join("loss.csv");
    let mut csv: Box<dyn Write> = if start_iter == 0 {
        let f = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        let mut f = std::io::BufWriter::new(f);
        writeln!(f, "{CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
        Box::new(f)
    } else {
        // resumed runs append; a fresh directory still needs the header
        let had_csv = csv_path.exists();
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv_path)
            .map_err(|e| Error::io(&csv_path, e))?;
        let mut f = std::io::BufWriter::new(f);
        if !had_csv {
            writeln!(f, "{CSV_HEADER}").map_err(|e| Error::io(&csv_path, e))?;
        }
        Box::new(f)
    };

    let probe_iters = if cfg.mode.uses_uncertainty() {
        cfg.probe_schedule()
    } else {
        Vec::new()
    };
    let mut probes: Vec<ProbeRecord> = Vec::new();
    let mut final_loss = LossBreakdown::default();
    let mut current_blur_sigma = f64::NAN;

    for iter in start_iter..cfg.total_iters {
        if cfg.mode == LossMode::AdaptiveBlur
            && (iter == start_iter || iter % cfg.adaptive_blur_interval == 0)
        {
            let sigma = adaptive_blur_sigma(cfg, iter);
            if current_blur_sigma.is_nan() || (sigma - current_blur_sigma).abs() > 1e-12 {
                runner.views.reblur(cfg.blur_kernel_size, sigma)?;
                current_blur_sigma = sigma;
            }
        }
        if probe_iters.contains(&iter) {
            probes.push(runner.probe_uncertainty(&params, iter)?);
        }

        let batch = sample_ray_batch(&runner.views, cfg.batch_size, cfg.seed, iter);
        let (breakdown, grads, target_gap) =
            runner.batch_gradient(&params, &offsets, &batch, iter)?;
        if !breakdown.l_total.is_finite() {
            return Err(Error::Divergence {
                iter,
                detail: format!(
                    "non-finite loss: l_s={} l_u={} l_r={} l_o={}",
                    breakdown.l_s, breakdown.l_u, breakdown.l_r, breakdown.l_o
                ),
            });
        }
        let lr_t = runner.lr.at(iter);
        adam_step(&mut params, &grads, &mut adam, lr_t, iter)?;
        final_loss = breakdown;

        if iter % cfg.log_interval == 0 || iter + 1 == cfg.total_iters {
            // raw-target modes have phase_switch == 0, so the flag stays 0
            let blur = blur_active(iter, runner.phase_switch);
            writeln!(
                csv,
                "{iter},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
                breakdown.l_s,
                breakdown.l_u,
                breakdown.l_r,
                breakdown.l_o,
                breakdown.l_total,
                breakdown.mean_beta_bar2,
                lr_t,
                runner.weights.lambda_r_at(iter),
                if blur { 1 } else { 0 },
                target_gap,
            )
            .map_err(|e| Error::io(&csv_path, e))?;
        }

        if cfg.checkpoint_interval > 0
            && iter + 1 != cfg.total_iters
            && (iter + 1) % cfg.checkpoint_interval == 0
        {
            let ckpt = Checkpoint {
                arch: arch.clone(),
                iter: iter + 1,
                mask_t: cfg.mask_t_at(iter + 1),
                mask_horizon: runner.mask_horizon,
                params: params.clone(),
                adam: Some(adam.clone()),
            };
            ckpt.save(&out_dir.join(format!("checkpoint_{:06}.ckpt", iter + 1)))?;
        }
    }
    csv.flush().map_err(|e| Error::io(&csv_path, e))?;
    drop(csv);

    // T is usually inside the run; make sure the trailing probe still fires
    for &pi in &probe_iters {
        if pi >= cfg.total_iters && !probes.iter().any(|p| p.iter == pi) {
            probes.push(runner.probe_uncertainty(&params, pi)?);
        }
    }
    if !probes.is_empty() {
        let probe_path = out_dir.join("probes.csv");
        let mut f = std::fs::File::create(&probe_path).map_err(|e| Error::io(&probe_path, e))?;
        writeln!(
            f,
            "iter,mean_inv_beta2_low,mean_inv_beta2_high,mean_beta2_low,mean_beta2_high,n_low,n_high"
        )
        .map_err(|e| Error::io(&probe_path, e))?;
        for p in &probes {
            writeln!(
                f,
                "{},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
                p.iter,
                p.mean_inv_beta2_low,
                p.mean_inv_beta2_high,
                p.mean_beta2_low,
                p.mean_beta2_high,
                p.n_low,
                p.n_high
            )
            .map_err(|e| Error::io(&probe_path, e))?;
        }
    }

    let final_ckpt_path = out_dir.join("checkpoint_final.ckpt");
    let ckpt = Checkpoint {
        arch: arch.clone(),
        iter: cfg.total_iters,
        mask_t: cfg.mask_t_at(cfg.total_iters),
        mask_horizon: runner.mask_horizon,
        params,
        adam: Some(adam),
    };
    ckpt.save(&final_ckpt_path)?;

    let mut renders_written: Vec<String> = Vec::new();
    let eval = if dataset.test.is_empty() {
        None
    } else {
        let (report, renders) = evaluate_on_dataset(
            &ckpt,
            dataset,
            cfg.eval_sample_count(),
            cfg.edge_threshold,
        )?;
        let render_dir = out_dir.join("renders");
        std::fs::create_dir_all(&render_dir).map_err(|e| Error::io(&render_dir, e))?;
        for (view, img) in dataset.test.iter().zip(&renders) {
            let name = format!("renders/test_{:03}.png", view.view_id);
            crate::supervision::write_png(&out_dir.join(&name), img)?;
            renders_written.push(name);
        }
        report.save_json(&out_dir.join("eval.json"))?;
        Some(report)
    };

    let manifest = serde_json::json!({
        "config": "config.toml",
        "loss_csv": "loss.csv",
        "final_checkpoint": "checkpoint_final.ckpt",
        "eval": eval.as_ref().map(|_| "eval.json"),
        "probes": if probes.is_empty() { None } else { Some("probes.csv") },
        "renders": renders_written,
        "mode": cfg.mode.label(),
        "seed": cfg.seed,
        "total_iters": cfg.total_iters,
    });
    let manifest_path = out_dir.join("run_manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest json"),
    )
    .map_err(|e| Error::io(&manifest_path, e))?;

    Ok(RunArtifacts {
        out_dir: out_dir.to_path_buf(),
        final_checkpoint: final_ckpt_path,
        loss_csv: csv_path,
        eval,
        final_loss,
        probes,
    })
}

/// Parses one loss CSV back into (header, rows).
pub fn read_loss_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::data("empty csv"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|e| Error::data(format!("csv: {e}"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Writes the dataset to disk (re-exported here so the command surface can
/// call one place for generation plus persistence).
pub fn generate_and_save_dataset(
    scene_cfg: &crate::scenes::SceneConfig,
    n_train: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<Dataset> {
    let ds = crate::scenes::make_dataset(&scene_cfg.scene, &scene_cfg.render, n_train, n_test)?;
    save_dataset(out_dir, &ds)?;
    std::fs::write(out_dir.join("scene.toml"), scene_cfg.to_toml()?)
        .map_err(|e| Error::io(out_dir.join("scene.toml"), e))?;
    Ok(ds)
}
