//! Differentiable per-ray loss assembly.
//!
//! One tape per ray: masked encodings enter as constants (positions do not
//! depend on the parameters), every sample runs the MLP on the tape, the
//! compositing recurrence and the active loss terms are recorded on top,
//! and a single weighted root drives the backward pass. The recorded
//! formulas mirror the plain-evaluation paths in `rendering` and `losses`;
//! tests pin the two against each other.

use crate::autodiff::{ParamSet, Tape, ValueId};
use crate::encoding::{masked_encode, FrequencyMask};
use crate::error::Result;
use crate::field::{query_tape, FieldOutputIds, LayerOffsets, MlpArchitecture};
use crate::rendering::deltas_from_depths;
use crate::supervision::SceneBounds;

/// Which loss terms a training mode assembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RayRegularizer {
    None,
    /// log(1 + s·p_i) on the ray density.
    Density,
    /// −Σ p_i log p_i on the ray density.
    Entropy,
    /// log(1 + s·w_i) on the compositing weights.
    EmptinessWeights,
}

#[derive(Clone, Debug)]
pub struct GraphConfig {
    pub arch: MlpArchitecture,
    pub bounds: SceneBounds,
    pub background: [f64; 3],
    /// Floor applied to the composited variance before the NLL.
    pub beta_bar_floor: f64,
    pub steepness: f64,
    /// Near-camera window M for the occlusion term.
    pub occlusion_window: usize,
    pub build_uncertainty: bool,
    pub regularizer: RayRegularizer,
    /// Whether the NLL shares the two-phase target or always sees raw.
    pub uncertainty_uses_phase_target: bool,
}

/// Inputs for one supervising ray.
pub struct RayInputs<'a> {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub depths: &'a [f64],
    pub t_far: f64,
    /// Active rendering target (already phase-selected).
    pub target: [f64; 3],
    /// Raw target, used by the NLL when the phase flag says so.
    pub target_raw: [f64; 3],
}

/// Recorded loss terms and diagnostics for one ray.
pub struct RayTerms {
    pub l_s: ValueId,
    pub l_u: Option<ValueId>,
    pub l_reg: Option<ValueId>,
    pub l_o: ValueId,
    /// Composited variance after flooring (diagnostic).
    pub beta_bar2: f64,
    /// Rendered color (diagnostic).
    pub color: [f64; 3],
}

/// Records the full per-ray graph and returns the term handles.
pub fn build_ray_graph(
    tape: &mut Tape,
    params: &ParamSet,
    offsets: &LayerOffsets,
    cfg: &GraphConfig,
    mask_pos: &FrequencyMask,
    mask_dir: &FrequencyMask,
    ray: &RayInputs,
) -> Result<RayTerms> {
    let n = ray.depths.len();
    let deltas = deltas_from_depths(ray.depths, ray.t_far);
    let enc_len = cfg.arch.pos_encoding.feature_len();

    let d_enc = masked_encode(ray.dir, &cfg.arch.dir_encoding, mask_dir)?;
    let d_range = tape.const_range(&d_enc);

    // field queries per sample
    let mut samples: Vec<FieldOutputIds> = Vec::with_capacity(n);
    for i in 0..n {
        let t = ray.depths[i];
        let p = [
            ray.origin[0] + t * ray.dir[0],
            ray.origin[1] + t * ray.dir[1],
            ray.origin[2] + t * ray.dir[2],
        ];
        let x_enc = masked_encode(cfg.bounds.normalize(p), &cfg.arch.pos_encoding, mask_pos)?;
        let x_range = tape.const_range(&x_enc);
        samples.push(query_tape(
            tape, params, offsets, &cfg.arch, x_range, d_range, enc_len,
        ));
    }

    // compositing recurrence: alpha_i = 1 - exp(-sigma_i * delta_i),
    // T_{i+1} = T_i (1 - alpha_i), w_i = T_i alpha_i
    let mut alphas: Vec<ValueId> = Vec::with_capacity(n);
    let mut weights: Vec<ValueId> = Vec::with_capacity(n);
    let mut transmittance: Option<ValueId> = None; // None encodes T == 1
    for i in 0..n {
        let sd = tape.mul_const(samples[i].sigma, deltas[i]);
        let neg_sd = tape.neg(sd);
        let e = tape.exp(neg_sd);
        let neg_e = tape.neg(e);
        let alpha = tape.add_const(neg_e, 1.0);
        let w = match transmittance {
            Some(t_run) => tape.mul(t_run, alpha),
            None => alpha,
        };
        transmittance = Some(match transmittance {
            Some(t_run) => tape.mul(t_run, e), // 1 - alpha == exp(-sigma delta)
            None => e,
        });
        alphas.push(alpha);
        weights.push(w);
    }
    let residual = transmittance.expect("at least one sample");

    // rendered color (optionally over a non-black background)
    let mut color_ids = [ValueId::default(); 3];
    let mut scratch: Vec<ValueId> = Vec::with_capacity(n);
    for (c, slot) in color_ids.iter_mut().enumerate() {
        scratch.clear();
        for i in 0..n {
            scratch.push(tape.mul(weights[i], samples[i].color[c]));
        }
        let mut ch = tape.sum(&scratch);
        if cfg.background[c] != 0.0 {
            let bg = tape.mul_const(residual, cfg.background[c]);
            ch = tape.add(ch, bg);
        }
        *slot = ch;
    }
    let color = [
        tape.value(color_ids[0]),
        tape.value(color_ids[1]),
        tape.value(color_ids[2]),
    ];

    // L_s: squared error against the active target
    let l_s = squared_error_node(tape, color_ids, ray.target);

    // L_u: NLL with composited variance
    let (l_u, beta_bar2) = if cfg.build_uncertainty {
        scratch.clear();
        for i in 0..n {
            let w2 = tape.mul(weights[i], weights[i]);
            scratch.push(tape.mul(w2, samples[i].beta2));
        }
        let raw_bb2 = tape.sum(&scratch);
        let bb2 = tape.clamp_min(raw_bb2, cfg.beta_bar_floor);
        let nll_target = if cfg.uncertainty_uses_phase_target {
            ray.target
        } else {
            ray.target_raw
        };
        let r2 = squared_error_node(tape, color_ids, nll_target);
        let two_bb2 = tape.mul_const(bb2, 2.0);
        let quad = tape.div(r2, two_bb2)?;
        let log_bb2 = tape.log(bb2)?;
        let half_log = tape.mul_const(log_bb2, 0.5);
        (Some(tape.add(quad, half_log)), tape.value(bb2))
    } else {
        (None, 0.0)
    };

    // ray regularizer
    let l_reg = match cfg.regularizer {
        RayRegularizer::None => None,
        RayRegularizer::Density => {
            let p = density_nodes(tape, &alphas)?;
            scratch.clear();
            for &pi in &p {
                let sp = tape.mul_const(pi, cfg.steepness);
                let sp1 = tape.add_const(sp, 1.0);
                scratch.push(tape.log(sp1)?);
            }
            let total = tape.sum(&scratch);
            Some(tape.mul_const(total, 1.0 / n as f64))
        }
        RayRegularizer::Entropy => {
            let p = density_nodes(tape, &alphas)?;
            scratch.clear();
            for &pi in &p {
                // 0 log 0 := 0; entropy drives densities to exact zero and
                // the convention (with zero subgradient) keeps the term
                // defined there, matching the plain evaluation
                if tape.value(pi) == 0.0 {
                    continue;
                }
                let log_p = tape.log(pi)?;
                scratch.push(tape.mul(pi, log_p));
            }
            let total = tape.sum(&scratch);
            Some(tape.neg(total))
        }
        RayRegularizer::EmptinessWeights => {
            scratch.clear();
            for &wi in &weights {
                let sw = tape.mul_const(wi, cfg.steepness);
                let sw1 = tape.add_const(sw, 1.0);
                scratch.push(tape.log(sw1)?);
            }
            let total = tape.sum(&scratch);
            Some(tape.mul_const(total, 1.0 / n as f64))
        }
    };

    // L_o: mean weight in the near-camera window
    let m = cfg.occlusion_window.min(n);
    let head = tape.sum(&weights[..m]);
    let l_o = tape.mul_const(head, 1.0 / m as f64);

    Ok(RayTerms {
        l_s,
        l_u,
        l_reg,
        l_o,
        beta_bar2,
        color,
    })
}

fn squared_error_node(tape: &mut Tape, color: [ValueId; 3], target: [f64; 3]) -> ValueId {
    let mut parts = [ValueId::default(); 3];
    for c in 0..3 {
        let diff = tape.add_const(color[c], -target[c]);
        parts[c] = tape.mul(diff, diff);
    }
    tape.sum(&parts)
}

/// p_i = alpha_i / Σ alpha_j; the softplus density head keeps every alpha
/// strictly positive during training, so the division is safe. A fully
/// transparent ray (possible only with degenerate parameters) falls back to
/// a constant uniform distribution with zero gradient, matching the plain
/// path.
fn density_nodes(tape: &mut Tape, alphas: &[ValueId]) -> Result<Vec<ValueId>> {
    let total = tape.sum(alphas);
    if tape.value(total) == 0.0 {
        let uniform = 1.0 / alphas.len() as f64;
        return Ok(alphas.iter().map(|_| tape.constant(uniform)).collect());
    }
    alphas.iter().map(|&a| tape.div(a, total)).collect()
}
