//! Image-quality metrics: PSNR, single-scale SSIM on luminance, the
//! frequency-split PSNR used by the supervision analysis, and a two-factor
//! aggregate score (geometric mean of 10^(-PSNR/10) and sqrt(1-SSIM)).
//!
//! The aggregate omits the perceptual factor of the usual three-way score,
//! so it is not comparable with numbers that include one.

use crate::error::{Error, Result};
use crate::math::kahan_sum;
use crate::supervision::{FrequencyClassMap, Image};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Mean squared error over all channels, restricted to `mask` (pixel-level)
/// when given. Returns `None` for an empty selection.
pub fn mse_masked(a: &Image, b: &Image, mask: Option<&[bool]>) -> Option<f64> {
    assert_eq!(a.width, b.width);
    assert_eq!(a.height, b.height);
    let n_px = a.n_pixels();
    if let Some(m) = mask {
        assert_eq!(m.len(), n_px);
    }
    let mut count = 0usize;
    let sum = kahan_sum((0..n_px).flat_map(|i| {
        let keep = mask.map(|m| m[i]).unwrap_or(true);
        (0..3).map(move |c| (i, c, keep))
    })
    .map(|(i, c, keep)| {
        if keep {
            let d = a.data()[i * 3 + c] - b.data()[i * 3 + c];
            d * d
        } else {
            0.0
        }
    }));
    for i in 0..n_px {
        if mask.map(|m| m[i]).unwrap_or(true) {
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(sum / (count * 3) as f64)
    }
}

pub fn mse(a: &Image, b: &Image) -> f64 {
    mse_masked(a, b, None).unwrap()
}

/// 10·log10(1/MSE) for unit-range images; +inf when the images agree.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> f64 {
    psnr_from_mse(mse(a, b))
}

/// PSNR over the low- and high-frequency pixel partitions; a side with no
/// pixels reports `None`.
pub fn frequency_split_psnr(
    a: &Image,
    b: &Image,
    classes: &FrequencyClassMap,
) -> (Option<f64>, Option<f64>) {
    let low_mask: Vec<bool> = classes.flags().iter().map(|&h| !h).collect();
    let high_mask: Vec<bool> = classes.flags().to_vec();
    let low = mse_masked(a, b, Some(&low_mask)).map(psnr_from_mse);
    let high = mse_masked(a, b, Some(&high_mask)).map(psnr_from_mse);
    (low, high)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_window_weights() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in -r..=r {
        for x in -r..=r {
            w.push((-((x * x + y * y) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Single-scale SSIM on luminance: 11x11 Gaussian window (sigma 1.5),
/// C1=(0.01)^2, C2=(0.03)^2, averaged over all fully interior windows.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::config("ssim: image sizes differ"));
    }
    if (a.width as usize) < SSIM_WINDOW || (a.height as usize) < SSIM_WINDOW {
        return Err(Error::config(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let la = a.luminance();
    let lb = b.luminance();
    let w = ssim_window_weights();
    let width = a.width as usize;
    let height = a.height as usize;
    let r = SSIM_WINDOW / 2;
    let mut scores = Vec::with_capacity((height - 2 * r) * (width - 2 * r));
    for cy in r..height - r {
        for cx in r..width - r {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            let mut wi = 0;
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let idx = (cy + dy - r) * width + (cx + dx - r);
                    let wv = w[wi];
                    wi += 1;
                    let va = la[idx];
                    let vb = lb[idx];
                    mu_a += wv * va;
                    mu_b += wv * vb;
                    aa += wv * va * va;
                    bb += wv * vb * vb;
                    ab += wv * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let s = ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            scores.push(s);
        }
    }
    Ok(kahan_sum(scores.iter().copied()) / scores.len() as f64)
}

/// Geometric mean of the MSE factor 10^(-PSNR/10) and sqrt(1-SSIM).
pub fn aggregate_score(psnr_db: f64, ssim_val: f64) -> f64 {
    let mse_factor = 10f64.powf(-psnr_db / 10.0);
    let ssim_factor = (1.0 - ssim_val).max(0.0).sqrt();
    (mse_factor * ssim_factor).sqrt()
}

/// Per-view metric row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewEval {
    pub view_id: u32,
    pub psnr: MetricValue,
    pub ssim: f64,
    pub low_freq_psnr: Option<MetricValue>,
    pub high_freq_psnr: Option<MetricValue>,
}

/// A dB value that may be the +inf sentinel; serialized as the string
/// "inf" so the report stays valid JSON.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue(pub f64);

impl Serialize for MetricValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            s.serialize_f64(self.0)
        } else {
            s.serialize_str("inf")
        }
    }
}

impl<'de> Deserialize<'de> for MetricValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(#[allow(dead_code)] String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Num(v) => MetricValue(v),
            Raw::Text(_) => MetricValue(f64::INFINITY),
        })
    }
}

/// Evaluation summary over a set of views.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_view: Vec<ViewEval>,
    pub mean_psnr: MetricValue,
    pub mean_ssim: f64,
    pub mean_low_freq_psnr: Option<MetricValue>,
    pub mean_high_freq_psnr: Option<MetricValue>,
    pub aggregate: f64,
}

impl EvalReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::data(format!("eval report: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::data(format!("eval report: {e}")))
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("view    psnr_db    ssim    low_psnr    high_psnr\n");
        let fmt = |v: f64| {
            if v.is_finite() {
                format!("{v:.3}")
            } else {
                "inf".to_string()
            }
        };
        for v in &self.per_view {
            out.push_str(&format!(
                "{:<6}  {:<9}  {:<6.4}  {:<10}  {}\n",
                v.view_id,
                fmt(v.psnr.0),
                v.ssim,
                v.low_freq_psnr.map(|m| fmt(m.0)).unwrap_or("-".into()),
                v.high_freq_psnr.map(|m| fmt(m.0)).unwrap_or("-".into()),
            ));
        }
        out.push_str(&format!(
            "mean    {:<9}  {:<6.4}  {:<10}  {}\naggregate {:.6}\n",
            fmt(self.mean_psnr.0),
            self.mean_ssim,
            self.mean_low_freq_psnr.map(|m| fmt(m.0)).unwrap_or("-".into()),
            self.mean_high_freq_psnr.map(|m| fmt(m.0)).unwrap_or("-".into()),
            self.aggregate,
        ));
        out
    }
}
