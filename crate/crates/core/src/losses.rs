//! Training losses.
//!
//! * `loss_s` — squared rendering error against the two-phase target
//!   (Gaussian-blurred views before the phase switch, raw views after).
//! * `loss_u` — Gaussian negative log likelihood of the target under the
//!   composited color distribution; 1/β̄² acts as a learned per-ray weight.
//! * `loss_r` — log(1 + s·p_i) on the ray density, penalizing small
//!   densities to sparsify free space.
//! * `loss_o` — mean compositing weight in a near-camera window.
//! * alternatives used by the scheduler/regularizer comparisons: a linearly
//!   ramped high-frequency weight, ray-density entropy and the same
//!   log(1 + s·x) form applied to compositing weights.
//!
//! All batch reductions are means over rays so the balance terms keep their
//! meaning across batch sizes.

use crate::error::{Error, Result};
use crate::math::{kahan_sum, mean};
use serde::{Deserialize, Serialize};

/// Balance terms and schedule constants for the total loss.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_u: f64,
    pub lambda_o: f64,
    /// λ_r ramps linearly from `lambda_r_start` to `lambda_r_end` over
    /// `lambda_r_ramp_iters` iterations, then plateaus.
    pub lambda_r_start: f64,
    pub lambda_r_end: f64,
    pub lambda_r_ramp_iters: u64,
    /// Steepness s of log(1 + s·p).
    pub steepness: f64,
    /// Iteration of the blurred-to-raw supervision switch.
    pub phase_switch: u64,
    /// Frequency-mask horizon T.
    pub mask_horizon: u64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_u: 0.01,
            lambda_o: 0.01,
            lambda_r_start: 1e-5,
            lambda_r_end: 1e-3,
            lambda_r_ramp_iters: 512,
            steepness: 10.0,
            phase_switch: 1250,
            mask_horizon: 4500,
        }
    }
}

impl LossWeights {
    pub fn lambda_r_at(&self, iter: u64) -> f64 {
        if self.lambda_r_ramp_iters == 0 {
            return self.lambda_r_end;
        }
        let frac = (iter as f64 / self.lambda_r_ramp_iters as f64).min(1.0);
        self.lambda_r_start + (self.lambda_r_end - self.lambda_r_start) * frac
    }
}

/// Φ(t, T_s; ·): blurred target strictly before the switch, raw at and
/// after it.
pub fn two_phase_target(iter: u64, phase_switch: u64, raw: [f64; 3], blurred: [f64; 3]) -> [f64; 3] {
    if iter < phase_switch {
        blurred
    } else {
        raw
    }
}

/// True while the blurred phase is active.
pub fn blur_active(iter: u64, phase_switch: u64) -> bool {
    iter < phase_switch
}

pub fn squared_error(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    dr * dr + dg * dg + db * db
}

/// Mean over rays of the squared RGB error.
pub fn loss_s(rendered: &[[f64; 3]], target: &[[f64; 3]]) -> f64 {
    assert_eq!(rendered.len(), target.len());
    let per_ray: Vec<f64> = rendered
        .iter()
        .zip(target)
        .map(|(r, t)| squared_error(*r, *t))
        .collect();
    mean(&per_ray)
}

/// Gaussian NLL per ray: ‖target − c̄‖² / (2β̄²) + log(β̄²)/2, averaged.
pub fn loss_u(rendered: &[[f64; 3]], beta_bar2: &[f64], target: &[[f64; 3]]) -> f64 {
    assert_eq!(rendered.len(), target.len());
    assert_eq!(rendered.len(), beta_bar2.len());
    let per_ray: Vec<f64> = rendered
        .iter()
        .zip(target)
        .zip(beta_bar2)
        .map(|((r, t), &b2)| {
            assert!(b2 > 0.0, "beta_bar2 must stay above its floor (got {b2})");
            squared_error(*r, *t) / (2.0 * b2) + b2.ln() / 2.0
        })
        .collect();
    mean(&per_ray)
}

/// Per-ray (1/N) Σ log(1 + s·p_i), averaged over rays.
pub fn loss_r(densities: &[Vec<f64>], steepness: f64) -> f64 {
    let per_ray: Vec<f64> = densities
        .iter()
        .map(|p| kahan_sum(p.iter().map(|&pi| (1.0 + steepness * pi).ln())) / p.len() as f64)
        .collect();
    mean(&per_ray)
}

/// Mean of the first `window` compositing weights per ray, averaged.
pub fn loss_o(weights: &[Vec<f64>], window: usize) -> Result<f64> {
    for w in weights {
        if window > w.len() {
            return Err(Error::config(format!(
                "occlusion window {} exceeds sample count {}",
                window,
                w.len()
            )));
        }
    }
    let per_ray: Vec<f64> = weights
        .iter()
        .map(|w| kahan_sum(w[..window].iter().copied()) / window as f64)
        .collect();
    Ok(mean(&per_ray))
}

/// Near-camera window size M = ⌈frac · N⌉.
pub fn occlusion_window(n_samples: usize, frac: f64) -> usize {
    ((n_samples as f64 * frac).ceil() as usize).clamp(1, n_samples)
}

/// Ray-density entropy −Σ p_i log p_i with 0·log 0 := 0, averaged.
pub fn entropy_loss(densities: &[Vec<f64>]) -> f64 {
    let per_ray: Vec<f64> = densities
        .iter()
        .map(|p| -kahan_sum(p.iter().map(|&pi| if pi > 0.0 { pi * pi.ln() } else { 0.0 })))
        .collect();
    mean(&per_ray)
}

/// log(1 + s·w_i) applied to compositing weights instead of densities.
pub fn emptiness_on_weights(weights: &[Vec<f64>], steepness: f64) -> f64 {
    let per_ray: Vec<f64> = weights
        .iter()
        .map(|w| kahan_sum(w.iter().map(|&wi| (1.0 + steepness * wi).ln())) / w.len() as f64)
        .collect();
    mean(&per_ray)
}

/// Ramp h(t) = clamp(t / horizon, 0, 1) for the linear scheduler ablation.
pub fn linear_high_freq_weight(iter: u64, horizon: u64) -> f64 {
    if horizon == 0 {
        return 1.0;
    }
    (iter as f64 / horizon as f64).min(1.0)
}

/// L' = L_low + h · L_high where each side is the squared-error sum of its
/// rays divided by the whole batch size; h = 1 recovers the plain mean.
pub fn linear_weight_loss(sq_errors: &[f64], is_high: &[bool], h: f64) -> f64 {
    assert_eq!(sq_errors.len(), is_high.len());
    let n = sq_errors.len() as f64;
    let low = kahan_sum(
        sq_errors
            .iter()
            .zip(is_high)
            .filter(|(_, &hi)| !hi)
            .map(|(&e, _)| e),
    );
    let high = kahan_sum(
        sq_errors
            .iter()
            .zip(is_high)
            .filter(|(_, &hi)| hi)
            .map(|(&e, _)| e),
    );
    (low + h * high) / n
}

/// One iteration's loss values and diagnostics.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_s: f64,
    pub l_u: f64,
    pub l_r: f64,
    pub l_o: f64,
    pub l_total: f64,
    pub mean_beta_bar2: f64,
    pub mean_inv_beta_bar2: f64,
}

impl LossBreakdown {
    /// Composes the weighted total; the identity
    /// l_total = l_s + λ_u·l_u + λ_r·l_r + λ_o·l_o holds exactly.
    #[allow(clippy::too_many_arguments)]
    pub fn compose(
        l_s: f64,
        l_u: f64,
        l_r: f64,
        l_o: f64,
        weights: &LossWeights,
        iter: u64,
        mean_beta_bar2: f64,
        mean_inv_beta_bar2: f64,
    ) -> Self {
        let lambda_r = weights.lambda_r_at(iter);
        LossBreakdown {
            l_s,
            l_u,
            l_r,
            l_o,
            l_total: l_s + weights.lambda_u * l_u + lambda_r * l_r + weights.lambda_o * l_o,
            mean_beta_bar2,
            mean_inv_beta_bar2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_phase_boundary_belongs_to_identity_phase() {
        let raw = [0.8, 0.2, 0.1];
        let blurred = [0.5, 0.5, 0.5];
        assert_eq!(two_phase_target(9, 10, raw, blurred), blurred);
        assert_eq!(two_phase_target(10, 10, raw, blurred), raw);
        assert_eq!(two_phase_target(11, 10, raw, blurred), raw);
    }

    #[test]
    fn two_phase_of_constant_image_is_identity() {
        // blur of a constant equals the constant, so both phases agree
        let c = [0.3, 0.3, 0.3];
        assert_eq!(two_phase_target(0, 10, c, c), c);
    }

    #[test]
    fn loss_s_zero_when_equal() {
        let a = vec![[0.1, 0.5, 0.9]];
        assert_eq!(loss_s(&a, &a), 0.0);
    }

    #[test]
    fn loss_s_single_channel_error() {
        let rendered = vec![[0.6, 0.2, 0.4]];
        let target = vec![[0.5, 0.2, 0.4]];
        assert!((loss_s(&rendered, &target) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn loss_s_mean_invariant_under_duplication() {
        let rendered = vec![[0.6, 0.2, 0.4], [0.1, 0.9, 0.3]];
        let target = vec![[0.5, 0.25, 0.4], [0.15, 0.8, 0.35]];
        let single = loss_s(&rendered, &target);
        let doubled_r: Vec<_> = rendered.iter().chain(&rendered).copied().collect();
        let doubled_t: Vec<_> = target.iter().chain(&target).copied().collect();
        assert!((loss_s(&doubled_r, &doubled_t) - single).abs() < 1e-15);
    }

    #[test]
    fn loss_u_zero_residual_unit_variance() {
        let c = vec![[0.4, 0.4, 0.4]];
        assert_eq!(loss_u(&c, &[1.0], &c), 0.0);
    }

    #[test]
    fn loss_u_hand_value() {
        // residual^2 = 0.02, beta_bar2 = 0.01:
        // 0.02/0.02 + ln(0.01)/2 = 1 - 2.302585 = -1.302585
        let rendered = vec![[0.1, 0.1, 0.0]];
        let target = vec![[0.0, 0.0, 0.0]];
        let l = loss_u(&rendered, &[0.01], &target);
        assert!((l - (-1.302_585_092_994_045_6)).abs() < 1e-9, "l={l}");
    }

    #[test]
    fn loss_u_minimized_at_beta_equal_residual() {
        // d/dβ² of r²/(2β²) + ln(β²)/2 vanishes at β² = r²
        let r2 = 0.02_f64;
        let rendered = vec![[r2.sqrt(), 0.0, 0.0]];
        let target = vec![[0.0, 0.0, 0.0]];
        let at = |b2: f64| loss_u(&rendered, &[b2], &target);
        let l_star = at(r2);
        assert!(at(r2 * 1.05) > l_star);
        assert!(at(r2 * 0.95) > l_star);
    }

    #[test]
    fn loss_r_hand_values() {
        // concentrated on one of two samples, s = 10
        let l = loss_r(&[vec![1.0, 0.0]], 10.0);
        assert!((l - 0.5 * 11.0_f64.ln()).abs() < 1e-12);
        assert!((l - 1.198_947_636_399_185_3).abs() < 1e-9);
        // uniform over two samples
        let l = loss_r(&[vec![0.5, 0.5]], 10.0);
        assert!((l - 6.0_f64.ln()).abs() < 1e-12);
        // zero steepness kills the loss
        assert_eq!(loss_r(&[vec![0.3, 0.7]], 0.0), 0.0);
    }

    #[test]
    fn loss_r_concentration_decreases_loss() {
        // log(1+s·p) is concave, so moving mass toward the larger entry
        // lowers the sum
        let spread = loss_r(&[vec![0.4, 0.6]], 10.0);
        let tight = loss_r(&[vec![0.2, 0.8]], 10.0);
        assert!(tight < spread);
    }

    #[test]
    fn loss_o_empty_space_is_zero() {
        assert_eq!(loss_o(&[vec![0.0; 8]], 2).unwrap(), 0.0);
    }

    #[test]
    fn loss_o_reads_only_the_window() {
        let mut w = vec![0.0; 10];
        w[0] = 0.5;
        assert!((loss_o(&[w.clone()], 1).unwrap() - 0.5).abs() < 1e-15);
        // all mass beyond the window
        let mut w = vec![0.0; 10];
        w[5] = 0.9;
        assert_eq!(loss_o(&[w], 2).unwrap(), 0.0);
    }

    #[test]
    fn loss_o_rejects_oversized_window() {
        assert!(loss_o(&[vec![0.0; 4]], 5).is_err());
    }

    #[test]
    fn occlusion_window_is_tenth_of_samples() {
        assert_eq!(occlusion_window(64, 0.1), 7);
        assert_eq!(occlusion_window(10, 0.1), 1);
        assert_eq!(occlusion_window(3, 0.1), 1);
    }

    #[test]
    fn entropy_examples() {
        let l = entropy_loss(&[vec![0.25; 4]]);
        assert!((l - 4.0_f64.ln()).abs() < 1e-12);
        let l = entropy_loss(&[vec![1.0, 0.0, 0.0]]);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn emptiness_on_weights_hand_value() {
        // w = (0.5, 0.25), s=10: (ln 6 + ln 3.5)/2
        let l = emptiness_on_weights(&[vec![0.5, 0.25]], 10.0);
        let expect = (6.0_f64.ln() + 3.5_f64.ln()) / 2.0;
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 1.522_261).abs() < 1e-4);
    }

    #[test]
    fn linear_weight_cases() {
        let sq = vec![0.3, 0.9, 0.1];
        let hi = vec![false, true, false];
        // h=0 ignores high-frequency rays
        let l0 = linear_weight_loss(&sq, &hi, 0.0);
        assert!((l0 - 0.4 / 3.0).abs() < 1e-15);
        // h=1 equals the plain batch mean
        let l1 = linear_weight_loss(&sq, &hi, 1.0);
        assert!((l1 - 1.3 / 3.0).abs() < 1e-15);
        // mixed weight
        let lh = linear_weight_loss(&sq, &hi, 0.5);
        assert!((lh - (0.4 + 0.45) / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_r_linear_ramp() {
        let w = LossWeights::default();
        assert_eq!(w.lambda_r_at(0), 1e-5);
        assert!((w.lambda_r_at(256) - 5.05e-4).abs() < 1e-12);
        assert_eq!(w.lambda_r_at(512), 1e-3);
        assert_eq!(w.lambda_r_at(100_000), 1e-3);
    }

    #[test]
    fn breakdown_identity_is_exact() {
        let w = LossWeights::default();
        let b = LossBreakdown::compose(0.37, -1.2, 1.62, 0.004, &w, 700, 0.01, 100.0);
        let expect = 0.37 + w.lambda_u * (-1.2) + w.lambda_r_at(700) * 1.62 + w.lambda_o * 0.004;
        assert!((b.l_total - expect).abs() < 1e-12);
    }

    #[test]
    fn degenerate_weights_reduce_to_ls() {
        let w = LossWeights {
            lambda_u: 0.0,
            lambda_o: 0.0,
            lambda_r_start: 0.0,
            lambda_r_end: 0.0,
            ..LossWeights::default()
        };
        let b = LossBreakdown::compose(0.42, 5.0, 3.0, 1.0, &w, 10, 0.0, 0.0);
        assert_eq!(b.l_total, 0.42);
    }
}
