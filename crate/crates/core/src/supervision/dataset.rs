//! On-disk dataset format: one PNG per view plus a JSON manifest carrying
//! intrinsics, camera-to-world poses, near/far bounds, scene bounds,
//! background color and the train/test split.

use super::{Image, PosedImage};
use crate::error::{Error, Result};
use crate::rendering::Camera;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

/// Axis-aligned box enclosing the scene; positions are normalized into
/// [-1, 1]^3 against it before encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl SceneBounds {
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let half = (self.max[i] - self.min[i]) / 2.0;
            let center = (self.max[i] + self.min[i]) / 2.0;
            out[i] = (p[i] - center) / half;
        }
        out
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<PosedImage>,
    pub test: Vec<PosedImage>,
    pub near: f64,
    pub far: f64,
    pub background: [f64; 3],
    pub bounds: SceneBounds,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    near: f64,
    far: f64,
    background: [f64; 3],
    bounds: SceneBounds,
    views: Vec<ManifestView>,
}

#[derive(Serialize, Deserialize)]
struct ManifestView {
    file: String,
    split: String,
    view_id: u32,
    intrinsics: Intrinsics,
    /// Row-major 4x4 camera-to-world.
    pose_c2w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_file: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Intrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

/// Writes an [`Image`] as 16-bit RGB PNG.
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), img.width, img.height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::data(format!("png encode {}: {e}", path.display())))?;
    let mut bytes = Vec::with_capacity(img.data().len() * 2);
    for &v in img.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::data(format!("png encode {}: {e}", path.display())))?;
    Ok(())
}

/// Reads an 8- or 16-bit RGB(A) PNG into [0, 1] floats.
pub fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::data(format!("png decode {}: {e}", path.display())))?;
    let mut buf = vec![
        0u8;
        reader
            .output_buffer_size()
            .ok_or_else(|| Error::data(format!("{}: png too large", path.display())))?
    ];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::data(format!("png decode {}: {e}", path.display())))?;
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Grayscale => 1,
        other => {
            return Err(Error::data(format!(
                "{}: unsupported png color type {other:?}",
                path.display()
            )))
        }
    };
    let n_px = (info.width * info.height) as usize;
    let mut data = Vec::with_capacity(n_px * 3);
    match info.bit_depth {
        png::BitDepth::Eight => {
            for px in 0..n_px {
                for c in 0..3 {
                    let idx = px * channels + c.min(channels - 1);
                    data.push(buf[idx] as f64 / 255.0);
                }
            }
        }
        png::BitDepth::Sixteen => {
            for px in 0..n_px {
                for c in 0..3 {
                    let idx = (px * channels + c.min(channels - 1)) * 2;
                    let v = u16::from_be_bytes([buf[idx], buf[idx + 1]]);
                    data.push(v as f64 / 65535.0);
                }
            }
        }
        other => {
            return Err(Error::data(format!(
                "{}: unsupported png bit depth {other:?}",
                path.display()
            )))
        }
    }
    Ok(Image::from_data(info.width, info.height, data))
}

fn pose_to_vec(c2w: &[[f64; 4]; 4]) -> Vec<f64> {
    c2w.iter().flat_map(|row| row.iter().copied()).collect()
}

fn pose_from_vec(v: &[f64]) -> Result<[[f64; 4]; 4]> {
    if v.len() != 16 {
        return Err(Error::data("pose must have 16 entries"));
    }
    let mut m = [[0.0; 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            m[r][c] = v[r * 4 + c];
        }
    }
    Ok(m)
}

/// Writes the dataset directory: PNGs plus `manifest.json`.
pub fn save_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut views = Vec::new();
    for (split, list) in [("train", &ds.train), ("test", &ds.test)] {
        for v in list {
            let file = format!("{split}_{:03}.png", v.view_id);
            write_png(&dir.join(&file), &v.image)?;
            let mask_file = match &v.mask {
                Some(mask) => {
                    let name = format!("{split}_{:03}_mask.png", v.view_id);
                    let mut img = Image::new(v.image.width, v.image.height);
                    for row in 0..v.image.height {
                        for col in 0..v.image.width {
                            let on = mask[(row * v.image.width + col) as usize];
                            let val = if on { 1.0 } else { 0.0 };
                            img.set(row, col, [val, val, val]);
                        }
                    }
                    write_png(&dir.join(&name), &img)?;
                    Some(name)
                }
                None => None,
            };
            views.push(ManifestView {
                file,
                split: split.to_string(),
                view_id: v.view_id,
                intrinsics: Intrinsics {
                    fx: v.camera.fx,
                    fy: v.camera.fy,
                    cx: v.camera.cx,
                    cy: v.camera.cy,
                },
                pose_c2w: pose_to_vec(&v.camera.c2w),
                mask_file,
            });
        }
    }
    let manifest = Manifest {
        near: ds.near,
        far: ds.far,
        background: ds.background,
        bounds: ds.bounds,
        views,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::data(format!("manifest: {e}")))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

/// Loads a dataset directory written by [`save_dataset`] (or by hand).
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::data(format!("manifest: {e}")))?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in &manifest.views {
        let image = read_png(&dir.join(&v.file))?;
        let mask = match &v.mask_file {
            Some(name) => {
                let m = read_png(&dir.join(name))?;
                if m.width != image.width || m.height != image.height {
                    return Err(Error::data(format!("mask size mismatch for {}", v.file)));
                }
                Some(m.data().chunks(3).map(|px| px[0] > 0.5).collect())
            }
            None => None,
        };
        let camera = Camera {
            fx: v.intrinsics.fx,
            fy: v.intrinsics.fy,
            cx: v.intrinsics.cx,
            cy: v.intrinsics.cy,
            width: image.width,
            height: image.height,
            c2w: pose_from_vec(&v.pose_c2w)?,
        };
        camera.validate()?;
        let posed = PosedImage {
            image,
            camera,
            view_id: v.view_id,
            mask,
        };
        posed.validate()?;
        match v.split.as_str() {
            "train" => train.push(posed),
            "test" => test.push(posed),
            other => return Err(Error::data(format!("unknown split `{other}`"))),
        }
    }
    if train.is_empty() {
        return Err(Error::data(format!(
            "{}: dataset has no training views",
            dir.display()
        )));
    }
    Ok(Dataset {
        train,
        test,
        near: manifest.near,
        far: manifest.far,
        background: manifest.background,
        bounds: manifest.bounds,
    })
}
