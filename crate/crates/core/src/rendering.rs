//! Ray generation, stratified sampling and volume rendering.
//!
//! A pixel is rendered by alpha compositing field samples along its ray:
//! α_i = 1 − exp(−σ_i δ_i), T_i = Π_{j<i} (1 − α_j), w_i = T_i α_i,
//! color = Σ w_i c_i and variance = Σ w_i² β²_i. The ray density
//! p_i = α_i / Σ_j α_j feeds the sparsity regularizer.
//!
//! The paper-facing symbol `t` is split here into `ray_t` (distance along a
//! ray) and `iter` (training iteration) to avoid the collision.

use crate::error::{Error, Result};
use crate::field::FieldOutput;
use crate::math::{kahan_sum, median, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Pinhole camera: intrinsics plus a rigid camera-to-world transform.
/// The camera looks along its local −z axis with +y up in camera space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Row-major camera-to-world matrix.
    pub c2w: [[f64; 4]; 4],
}

impl Camera {
    pub fn position(&self) -> Vec3 {
        Vec3::new(self.c2w[0][3], self.c2w[1][3], self.c2w[2][3])
    }

    fn rotate(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.c2w[0][0] * v.x + self.c2w[0][1] * v.y + self.c2w[0][2] * v.z,
            self.c2w[1][0] * v.x + self.c2w[1][1] * v.y + self.c2w[1][2] * v.z,
            self.c2w[2][0] * v.x + self.c2w[2][1] * v.y + self.c2w[2][2] * v.z,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.fx == 0.0 || self.fy == 0.0 || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::config(format!(
                "singular camera intrinsics: fx={}, fy={}",
                self.fx, self.fy
            )));
        }
        Ok(())
    }
}

/// Which view/pixel a ray supervises.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRef {
    pub view: u32,
    pub row: u32,
    pub col: u32,
}

#[derive(Clone, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
    pub pixel: PixelRef,
}

impl Ray {
    pub fn point_at(&self, ray_t: f64) -> Vec3 {
        self.origin + self.dir * ray_t
    }
}

/// Back-projects one pixel center through the pinhole model.
pub fn generate_ray(
    cam: &Camera,
    view: u32,
    row: u32,
    col: u32,
    t_near: f64,
    t_far: f64,
) -> Ray {
    let px = col as f64 + 0.5;
    let py = row as f64 + 0.5;
    let dir_cam = Vec3::new((px - cam.cx) / cam.fx, (cam.cy - py) / cam.fy, -1.0);
    let dir = cam.rotate(dir_cam).normalized();
    Ray {
        origin: cam.position(),
        dir,
        t_near,
        t_far,
        pixel: PixelRef { view, row, col },
    }
}

/// Rays for every pixel of a view, row-major.
pub fn generate_rays(cam: &Camera, view: u32, t_near: f64, t_far: f64) -> Result<Vec<Ray>> {
    cam.validate()?;
    let mut rays = Vec::with_capacity((cam.width * cam.height) as usize);
    for row in 0..cam.height {
        for col in 0..cam.width {
            rays.push(generate_ray(cam, view, row, col, t_near, t_far));
        }
    }
    Ok(rays)
}

/// One uniform draw per stratum of [t_near, t_far]; `None` rng gives the
/// deterministic bin midpoints.
pub fn stratified_depths(
    t_near: f64,
    t_far: f64,
    n: usize,
    mut rng: Option<&mut rand_chacha::ChaCha8Rng>,
) -> Vec<f64> {
    assert!(n >= 1);
    let width = (t_far - t_near) / n as f64;
    (0..n)
        .map(|i| {
            let jitter = match rng.as_deref_mut() {
                Some(r) => r.random_range(0.0..1.0),
                None => 0.5,
            };
            t_near + (i as f64 + jitter) * width
        })
        .collect()
}

/// Interval lengths δ_i = t_{i+1} − t_i; the open final interval is capped
/// at min(t_far − t_N, median of the other intervals) so it cannot dominate.
pub fn deltas_from_depths(depths: &[f64], t_far: f64) -> Vec<f64> {
    let n = depths.len();
    assert!(n >= 1);
    let mut deltas: Vec<f64> = depths.windows(2).map(|w| w[1] - w[0]).collect();
    let last = if n >= 2 {
        (t_far - depths[n - 1]).min(median(&deltas))
    } else {
        t_far - depths[0]
    };
    deltas.push(last.max(f64::MIN_POSITIVE));
    deltas
}

/// Ordered samples along one ray with their field outputs.
#[derive(Clone, Debug)]
pub struct RaySamples {
    pub ray_t: Vec<f64>,
    pub deltas: Vec<f64>,
    pub outputs: Vec<FieldOutput>,
}

impl RaySamples {
    pub fn new(ray_t: Vec<f64>, t_far: f64, outputs: Vec<FieldOutput>) -> Self {
        assert_eq!(ray_t.len(), outputs.len());
        debug_assert!(ray_t.windows(2).all(|w| w[0] < w[1]), "depths must increase");
        let deltas = deltas_from_depths(&ray_t, t_far);
        RaySamples {
            ray_t,
            deltas,
            outputs,
        }
    }

    pub fn len(&self) -> usize {
        self.ray_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ray_t.is_empty()
    }
}

/// Compositing products for one ray.
#[derive(Clone, Debug)]
pub struct RenderedPixel {
    /// Composited color mean Σ w_i c_i.
    pub color: [f64; 3],
    /// Composited color variance Σ w_i² β²_i.
    pub beta_bar2: f64,
    pub weights: Vec<f64>,
    pub alphas: Vec<f64>,
    /// T_i before each sample (length N).
    pub transmittances: Vec<f64>,
    /// T_{N+1}: light that passes the whole ray.
    pub residual_transmittance: f64,
}

/// Quadrature alpha compositing of the samples.
pub fn composite(samples: &RaySamples) -> RenderedPixel {
    let n = samples.len();
    let mut alphas = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut transmittances = Vec::with_capacity(n);
    let mut color = [0.0; 3];
    let mut beta_bar2 = 0.0;
    let mut t_run = 1.0;
    for i in 0..n {
        let out = &samples.outputs[i];
        let alpha = 1.0 - (-out.sigma * samples.deltas[i]).exp();
        transmittances.push(t_run);
        let w = t_run * alpha;
        for (acc, &c) in color.iter_mut().zip(&out.color) {
            *acc += w * c;
        }
        beta_bar2 += w * w * out.beta2;
        alphas.push(alpha);
        weights.push(w);
        t_run *= 1.0 - alpha;
    }
    RenderedPixel {
        color,
        beta_bar2,
        weights,
        alphas,
        transmittances,
        residual_transmittance: t_run,
    }
}

/// Composites onto a background color: c̄ + T_{N+1} · bg.
pub fn composite_over_background(pixel: &RenderedPixel, background: [f64; 3]) -> [f64; 3] {
    [
        pixel.color[0] + pixel.residual_transmittance * background[0],
        pixel.color[1] + pixel.residual_transmittance * background[1],
        pixel.color[2] + pixel.residual_transmittance * background[2],
    ]
}

/// Ray density p_i = α_i / Σ_j α_j; rays with no opacity fall back to the
/// uniform distribution so the regularizer stays defined.
pub fn ray_density(alphas: &[f64]) -> Vec<f64> {
    let total = kahan_sum(alphas.iter().copied());
    if total <= 0.0 {
        return vec![1.0 / alphas.len() as f64; alphas.len()];
    }
    alphas.iter().map(|&a| a / total).collect()
}
