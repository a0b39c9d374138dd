//! Rendering trained fields to images and scoring them against held-out
//! ground truth.

use crate::encoding::{mask_at, masked_encode};
use crate::error::Result;
use crate::field::{layer_offsets, query, query_cached, Checkpoint, QueryScratch};
use crate::math::Vec3;
use crate::metrics::{
    aggregate_score, frequency_split_psnr, psnr, ssim, EvalReport, MetricValue, ViewEval,
};
use crate::rendering::{composite, composite_over_background, generate_ray, Camera, RaySamples};
use crate::supervision::{classify_frequency, Dataset, Image, PosedImage, SceneBounds};
use rayon::prelude::*;

/// Deterministic midpoint-quadrature render of a checkpointed field.
#[allow(clippy::too_many_arguments)]
pub fn render_view(
    ckpt: &Checkpoint,
    cam: &Camera,
    near: f64,
    far: f64,
    bounds: &SceneBounds,
    background: [f64; 3],
    n_samples: usize,
) -> Result<Image> {
    cam.validate()?;
    let arch = &ckpt.arch;
    let mask_pos = mask_at(ckpt.mask_t, ckpt.mask_horizon.max(1), arch.pos_encoding.n_bands);
    let mask_dir = mask_at(ckpt.mask_t, ckpt.mask_horizon.max(1), arch.dir_encoding.n_bands);
    let offsets = layer_offsets(arch, &ckpt.params);
    let rows: Vec<Result<Vec<[f64; 3]>>> = (0..cam.height)
        .into_par_iter()
        .map(|row| {
            let mut scratch = QueryScratch::default();
            let mut out = Vec::with_capacity(cam.width as usize);
            for col in 0..cam.width {
                let ray = generate_ray(cam, 0, row, col, near, far);
                let depths = crate::rendering::stratified_depths(near, far, n_samples, None);
                let d_enc = masked_encode(ray.dir.to_array(), &arch.dir_encoding, &mask_dir)?;
                let mut outputs = Vec::with_capacity(n_samples);
                for &t in &depths {
                    let p = ray.point_at(t);
                    let x_enc = masked_encode(
                        bounds.normalize(p.to_array()),
                        &arch.pos_encoding,
                        &mask_pos,
                    )?;
                    outputs.push(query_cached(
                        &ckpt.params,
                        arch,
                        &offsets,
                        &mut scratch,
                        &x_enc,
                        &d_enc,
                    )?);
                }
                let px = composite(&RaySamples::new(depths, far, outputs));
                out.push(composite_over_background(&px, background));
            }
            Ok(out)
        })
        .collect();
    let mut img = Image::new(cam.width, cam.height);
    for (row, cols) in rows.into_iter().enumerate() {
        for (col, rgb) in cols?.into_iter().enumerate() {
            img.set(row as u32, col as u32, [
                rgb[0].clamp(0.0, 1.0),
                rgb[1].clamp(0.0, 1.0),
                rgb[2].clamp(0.0, 1.0),
            ]);
        }
    }
    Ok(img)
}

/// Density probe σ(x) with an all-ones mask, for floater measurements.
pub fn density_at(ckpt: &Checkpoint, bounds: &SceneBounds, p: Vec3) -> Result<f64> {
    let arch = &ckpt.arch;
    let mask_pos = mask_at(ckpt.mask_t, ckpt.mask_horizon.max(1), arch.pos_encoding.n_bands);
    let mask_dir = mask_at(ckpt.mask_t, ckpt.mask_horizon.max(1), arch.dir_encoding.n_bands);
    let x_enc = masked_encode(bounds.normalize(p.to_array()), &arch.pos_encoding, &mask_pos)?;
    let d_enc = masked_encode([1.0, 0.0, 0.0], &arch.dir_encoding, &mask_dir)?;
    Ok(query(&ckpt.params, arch, &x_enc, &d_enc)?.sigma)
}

fn apply_object_mask(img: &Image, mask: &[bool]) -> Image {
    let mut out = img.clone();
    for row in 0..img.height {
        for col in 0..img.width {
            if !mask[(row * img.width + col) as usize] {
                out.set(row, col, [0.0, 0.0, 0.0]);
            }
        }
    }
    out
}

fn mean_metric(values: &[f64]) -> MetricValue {
    if values.iter().any(|v| v.is_infinite()) {
        MetricValue(f64::INFINITY)
    } else {
        MetricValue(crate::math::mean(values))
    }
}

/// Renders and scores one view set (usually the held-out split).
#[allow(clippy::too_many_arguments)]
pub fn evaluate_views(
    ckpt: &Checkpoint,
    views: &[PosedImage],
    near: f64,
    far: f64,
    bounds: &SceneBounds,
    background: [f64; 3],
    n_samples: usize,
    edge_threshold: f64,
) -> Result<(EvalReport, Vec<Image>)> {
    let mut per_view = Vec::new();
    let mut renders = Vec::new();
    let mut psnrs = Vec::new();
    let mut ssims = Vec::new();
    let mut lows = Vec::new();
    let mut highs = Vec::new();
    for view in views {
        let render = render_view(ckpt, &view.camera, near, far, bounds, background, n_samples)?;
        let (gt, pred) = match &view.mask {
            Some(m) => (apply_object_mask(&view.image, m), apply_object_mask(&render, m)),
            None => (view.image.clone(), render.clone()),
        };
        let p = psnr(&gt, &pred);
        let s = ssim(&gt, &pred)?;
        let classes = classify_frequency(&gt, edge_threshold)?;
        let (low, high) = frequency_split_psnr(&gt, &pred, &classes);
        psnrs.push(p);
        ssims.push(s);
        if let Some(l) = low {
            lows.push(l);
        }
        if let Some(h) = high {
            highs.push(h);
        }
        per_view.push(ViewEval {
            view_id: view.view_id,
            psnr: MetricValue(p),
            ssim: s,
            low_freq_psnr: low.map(MetricValue),
            high_freq_psnr: high.map(MetricValue),
        });
        renders.push(render);
    }
    let mean_psnr = mean_metric(&psnrs);
    let mean_ssim = crate::math::mean(&ssims);
    let report = EvalReport {
        per_view,
        mean_psnr,
        mean_ssim,
        mean_low_freq_psnr: if lows.is_empty() {
            None
        } else {
            Some(mean_metric(&lows))
        },
        mean_high_freq_psnr: if highs.is_empty() {
            None
        } else {
            Some(mean_metric(&highs))
        },
        aggregate: aggregate_score(mean_psnr.0, mean_ssim),
    };
    Ok((report, renders))
}

/// Evaluates a checkpoint on the dataset's test split.
pub fn evaluate_on_dataset(
    ckpt: &Checkpoint,
    dataset: &Dataset,
    n_samples: usize,
    edge_threshold: f64,
) -> Result<(EvalReport, Vec<Image>)> {
    evaluate_views(
        ckpt,
        &dataset.test,
        dataset.near,
        dataset.far,
        &dataset.bounds,
        dataset.background,
        n_samples,
        edge_threshold,
    )
}
