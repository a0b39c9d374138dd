//! Ground-truth view management: posed images, Gaussian blurring for the
//! early training phase, the edge-based low/high-frequency pixel split and
//! ray-batch sampling across sparse views.

mod dataset;

pub use dataset::{load_dataset, read_png, save_dataset, write_png, Dataset, SceneBounds};

use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::rendering::{generate_ray, Camera, Ray};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Row-major RGB image with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: u32, height: u32) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; (width * height * 3) as usize],
        }
    }

    pub fn from_data(width: u32, height: u32, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), (width * height * 3) as usize);
        Image {
            width,
            height,
            data,
        }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: u32, col: u32) -> [f64; 3] {
        let i = ((row * self.width + col) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, row: u32, col: u32, rgb: [f64; 3]) {
        let i = ((row * self.width + col) * 3) as usize;
        self.data[i] = rgb[0];
        self.data[i + 1] = rgb[1];
        self.data[i + 2] = rgb[2];
    }

    pub fn n_pixels(&self) -> usize {
        (self.width * self.height) as usize
    }

    pub fn mean_value(&self) -> f64 {
        crate::math::mean(&self.data)
    }

    /// 0.299 R + 0.587 G + 0.114 B per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        (0..self.n_pixels())
            .map(|i| {
                let p = &self.data[i * 3..i * 3 + 3];
                0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
            })
            .collect()
    }
}

/// A training or test view: image plus camera.
#[derive(Clone, Debug)]
pub struct PosedImage {
    pub image: Image,
    pub camera: Camera,
    pub view_id: u32,
    /// Optional object mask; pixels with `false` are ignored by metrics.
    pub mask: Option<Vec<bool>>,
}

impl PosedImage {
    pub fn validate(&self) -> Result<()> {
        if self.image.width < 8 || self.image.height < 8 {
            return Err(Error::data(format!(
                "view {}: images must be at least 8x8",
                self.view_id
            )));
        }
        if self
            .image
            .data()
            .iter()
            .any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::data(format!(
                "view {}: pixel values must lie in [0,1]",
                self.view_id
            )));
        }
        if self.camera.width != self.image.width || self.camera.height != self.image.height {
            return Err(Error::data(format!(
                "view {}: camera/image size mismatch",
                self.view_id
            )));
        }
        Ok(())
    }
}

/// Normalized 1D Gaussian taps, centered, odd length.
pub fn gaussian_kernel(kernel_size: usize, sigma: f64) -> Result<Vec<f64>> {
    if kernel_size.is_multiple_of(2) {
        return Err(Error::config(format!(
            "blur kernel size must be odd, got {kernel_size}"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::config(format!("blur sigma must be > 0, got {sigma}")));
    }
    let r = (kernel_size / 2) as i64;
    let taps: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

/// Mirrors an index into [0, len): ..., 1, 0 | 0, 1, ..., len-1 | len-1, ...
fn reflect(idx: i64, len: i64) -> usize {
    let mut i = idx;
    // at most two folds for kernels narrower than the image
    if i < 0 {
        i = -i - 1;
    }
    if i >= len {
        i = 2 * len - 1 - i;
    }
    i.clamp(0, len - 1) as usize
}

/// Separable Gaussian blur with reflect padding. The inclusive mirror keeps
/// the kernel mass inside the image, so the mean pixel value is preserved.
pub fn gaussian_blur(img: &Image, kernel_size: usize, sigma: f64) -> Result<Image> {
    let k = gaussian_kernel(kernel_size, sigma)?;
    if kernel_size == 1 {
        return Ok(img.clone());
    }
    let r = (kernel_size / 2) as i64;
    let (w, h) = (img.width as i64, img.height as i64);

    // horizontal pass
    let mut tmp = Image::new(img.width, img.height);
    for row in 0..h {
        for col in 0..w {
            let mut acc = [0.0; 3];
            for (j, &kj) in k.iter().enumerate() {
                let src = img.get(row as u32, reflect(col + j as i64 - r, w) as u32);
                for c in 0..3 {
                    acc[c] += kj * src[c];
                }
            }
            tmp.set(row as u32, col as u32, acc);
        }
    }
    // vertical pass
    let mut out = Image::new(img.width, img.height);
    for row in 0..h {
        for col in 0..w {
            let mut acc = [0.0; 3];
            for (j, &kj) in k.iter().enumerate() {
                let src = tmp.get(reflect(row + j as i64 - r, h) as u32, col as u32);
                for c in 0..3 {
                    acc[c] += kj * src[c];
                }
            }
            out.set(row as u32, col as u32, acc);
        }
    }
    Ok(out)
}

/// Sobel gradient magnitude of the luminance channel, reflect padding.
pub fn sobel_magnitude(img: &Image) -> Vec<f64> {
    let lum = img.luminance();
    let (w, h) = (img.width as i64, img.height as i64);
    let at = |row: i64, col: i64| lum[reflect(row, h) * w as usize + reflect(col, w)];
    let mut mag = vec![0.0; (w * h) as usize];
    for row in 0..h {
        for col in 0..w {
            let gx = -at(row - 1, col - 1) + at(row - 1, col + 1)
                - 2.0 * at(row, col - 1)
                + 2.0 * at(row, col + 1)
                - at(row + 1, col - 1)
                + at(row + 1, col + 1);
            let gy = -at(row - 1, col - 1) - 2.0 * at(row - 1, col) - at(row - 1, col + 1)
                + at(row + 1, col - 1)
                + 2.0 * at(row + 1, col)
                + at(row + 1, col + 1);
            mag[(row * w + col) as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    mag
}

/// Per-pixel low/high-frequency split: `true` marks an edge pixel.
#[derive(Clone, Debug)]
pub struct FrequencyClassMap {
    pub width: u32,
    pub height: u32,
    high: Vec<bool>,
}

impl FrequencyClassMap {
    pub fn is_high(&self, row: u32, col: u32) -> bool {
        self.high[(row * self.width + col) as usize]
    }

    pub fn flags(&self) -> &[bool] {
        &self.high
    }

    pub fn high_count(&self) -> usize {
        self.high.iter().filter(|&&h| h).count()
    }
}

/// Marks pixels whose Sobel magnitude exceeds `threshold` times the image
/// maximum. A constant image has no high-frequency pixels.
pub fn classify_frequency(img: &Image, threshold: f64) -> Result<FrequencyClassMap> {
    if !(0.0..=1.0).contains(&threshold) || threshold == 0.0 {
        return Err(Error::config(format!(
            "edge threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mag = sobel_magnitude(img);
    let max = mag.iter().cloned().fold(0.0, f64::max);
    // rounding residue on flat images must not count as structure
    let high = if max <= 1e-12 {
        vec![false; mag.len()]
    } else {
        mag.iter().map(|&m| m > threshold * max).collect()
    };
    Ok(FrequencyClassMap {
        width: img.width,
        height: img.height,
        high,
    })
}

/// Training views with their precomputed blurred copies and frequency maps.
#[derive(Clone, Debug)]
pub struct TrainViews {
    pub views: Vec<PosedImage>,
    pub blurred: Vec<Image>,
    pub classes: Vec<FrequencyClassMap>,
    pub near: f64,
    pub far: f64,
}

impl TrainViews {
    pub fn prepare(
        views: Vec<PosedImage>,
        near: f64,
        far: f64,
        kernel_size: usize,
        sigma: f64,
        edge_threshold: f64,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::data("need at least one training view"));
        }
        for v in &views {
            v.validate()?;
        }
        let blurred = views
            .iter()
            .map(|v| gaussian_blur(&v.image, kernel_size, sigma))
            .collect::<Result<Vec<_>>>()?;
        let classes = views
            .iter()
            .map(|v| classify_frequency(&v.image, edge_threshold))
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainViews {
            views,
            blurred,
            classes,
            near,
            far,
        })
    }

    /// Re-blurs all views (adaptive Gaussian blur scheduler). A sigma of
    /// zero (or below) resets the blurred copies to the raw views.
    pub fn reblur(&mut self, kernel_size: usize, sigma: f64) -> Result<()> {
        for (i, v) in self.views.iter().enumerate() {
            self.blurred[i] = if sigma <= 1e-9 {
                v.image.clone()
            } else {
                gaussian_blur(&v.image, kernel_size, sigma)?
            };
        }
        Ok(())
    }

    pub fn total_pixels(&self) -> usize {
        self.views.iter().map(|v| v.image.n_pixels()).sum()
    }

    /// Sampling payload for the pixel with flat index `flat` over the
    /// concatenated views.
    fn payload(&self, flat: usize) -> RaySupervision {
        let mut rest = flat;
        for (vi, view) in self.views.iter().enumerate() {
            let n = view.image.n_pixels();
            if rest < n {
                let row = (rest as u32) / view.image.width;
                let col = (rest as u32) % view.image.width;
                let ray = generate_ray(&view.camera, view.view_id, row, col, self.near, self.far);
                return RaySupervision {
                    ray,
                    target_raw: view.image.get(row, col),
                    target_blurred: self.blurred[vi].get(row, col),
                    is_high_freq: self.classes[vi].is_high(row, col),
                };
            }
            rest -= n;
        }
        unreachable!("flat pixel index out of range")
    }
}

/// A supervising ray with both target variants and its frequency flag.
#[derive(Clone, Debug)]
pub struct RaySupervision {
    pub ray: Ray,
    pub target_raw: [f64; 3],
    pub target_blurred: [f64; 3],
    pub is_high_freq: bool,
}

/// Uniform pixel sampling (with replacement) across all training views,
/// seeded per (run seed, iteration).
pub fn sample_ray_batch(
    views: &TrainViews,
    batch_size: usize,
    seed: u64,
    iter: u64,
) -> Vec<RaySupervision> {
    let total = views.total_pixels();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0xBA7C, iter]));
    (0..batch_size)
        .map(|_| views.payload(rng.random_range(0..total)))
        .collect()
}

/// Every pixel of every view exactly once, in scan order.
pub fn exhaustive_ray_batch(views: &TrainViews) -> Vec<RaySupervision> {
    (0..views.total_pixels()).map(|i| views.payload(i)).collect()
}
