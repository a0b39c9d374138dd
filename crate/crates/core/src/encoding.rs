//! Sinusoidal positional encoding and the linearly increasing frequency
//! mask that drives coarse-to-fine training.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Band layout of a positional encoding: the raw 3-vector (optional)
/// followed by `n_bands` octaves of sin/cos pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    /// Number of frequency bands K; band k uses frequency 2^k · π.
    pub n_bands: usize,
    /// Whether the raw input leads the feature vector.
    pub include_raw: bool,
}

impl EncodingConfig {
    pub fn new(n_bands: usize) -> Self {
        EncodingConfig {
            n_bands,
            include_raw: true,
        }
    }

    pub fn feature_len(&self) -> usize {
        let raw = if self.include_raw { 3 } else { 0 };
        raw + 6 * self.n_bands
    }
}

/// Per-group mask over an encoding: 3 raw-input groups then L band groups,
/// each band group covering its 6 sin/cos entries.
///
/// The schedule keeps the raw groups at 1, fully enables bands below the
/// unlock frontier u = t·L/T, ramps the single frontier band by frac(u) and
/// zeroes everything above. This is the unique per-group schedule that is
/// continuous and non-decreasing in t for every group, reaches all-ones at
/// t = T, and starts from raw-inputs-only at t = 0.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyMask {
    bits: Vec<f64>,
    pub t: u64,
    pub horizon: u64,
    pub n_bands: usize,
}

impl FrequencyMask {
    /// Group bits, length L+3.
    pub fn bits(&self) -> &[f64] {
        &self.bits
    }

    /// Mask value for band `k` (0-based).
    pub fn band(&self, k: usize) -> f64 {
        self.bits[3 + k]
    }

    /// Number of fully enabled bands.
    pub fn bands_unlocked(&self) -> usize {
        (3..self.bits.len()).filter(|&i| self.bits[i] >= 1.0).count()
    }

    /// Fraction of band mass enabled, in [0, 1].
    pub fn unlock_fraction(&self) -> f64 {
        let band_sum: f64 = self.bits[3..].iter().sum();
        band_sum / self.n_bands as f64
    }

    /// An all-ones mask (the schedule endpoint).
    pub fn all_ones(n_bands: usize) -> Self {
        FrequencyMask {
            bits: vec![1.0; n_bands + 3],
            t: 1,
            horizon: 1,
            n_bands,
        }
    }
}

/// Frequency mask at iteration `t` with horizon `horizon` over `n_bands`
/// band groups. `t >= horizon` clamps to all-ones.
pub fn mask_at(t: u64, horizon: u64, n_bands: usize) -> FrequencyMask {
    assert!(horizon >= 1, "mask horizon must be >= 1");
    assert!(n_bands >= 1, "band count must be >= 1");
    let mut bits = vec![0.0; n_bands + 3];
    bits[0] = 1.0;
    bits[1] = 1.0;
    bits[2] = 1.0;
    let u = if t >= horizon {
        n_bands as f64
    } else {
        (t as f64) * (n_bands as f64) / (horizon as f64)
    };
    let full = u.floor() as usize;
    for k in 0..n_bands {
        if k < full {
            bits[3 + k] = 1.0;
        } else if k == full {
            bits[3 + k] = u - u.floor();
        }
    }
    FrequencyMask {
        bits,
        t,
        horizon,
        n_bands,
    }
}

/// PE(a) = [a, sin(2^0 π a), cos(2^0 π a), ..., sin(2^{K-1} π a),
/// cos(2^{K-1} π a)], each term a 3-vector slot.
pub fn encode(a: [f64; 3], cfg: &EncodingConfig) -> Result<Vec<f64>> {
    for (i, &c) in a.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::NonFinite(format!(
                "positional encoding input component {i} = {c}"
            )));
        }
    }
    let mut out = Vec::with_capacity(cfg.feature_len());
    if cfg.include_raw {
        out.extend_from_slice(&a);
    }
    let mut freq = std::f64::consts::PI;
    for _ in 0..cfg.n_bands {
        for &c in &a {
            out.push((freq * c).sin());
        }
        for &c in &a {
            out.push((freq * c).cos());
        }
        freq *= 2.0;
    }
    Ok(out)
}

/// PE'(t, T; a) = PE(a) ⊙ m(t, T, L): raw components scaled by their group
/// bits, each band's 6 entries scaled by that band's bit.
pub fn masked_encode(a: [f64; 3], cfg: &EncodingConfig, mask: &FrequencyMask) -> Result<Vec<f64>> {
    if mask.n_bands != cfg.n_bands {
        return Err(Error::config(format!(
            "frequency mask has {} bands but encoding expects {}",
            mask.n_bands, cfg.n_bands
        )));
    }
    let mut out = encode(a, cfg)?;
    let mut idx = 0;
    if cfg.include_raw {
        for raw_group in 0..3 {
            out[idx] *= mask.bits[raw_group];
            idx += 1;
        }
    }
    for k in 0..cfg.n_bands {
        let bit = mask.bits[3 + k];
        for _ in 0..6 {
            out[idx] *= bit;
            idx += 1;
        }
    }
    Ok(out)
}
