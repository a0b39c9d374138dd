//! Analytic test scenes. Density and albedo are closed-form functions of
//! position, so ground-truth images come from dense quadrature through the
//! same compositing code the trainer uses, and free space is known exactly
//! for floater measurements.

use crate::error::{Error, Result};
use crate::field::FieldOutput;
use crate::math::Vec3;
use crate::rendering::{composite, composite_over_background, generate_ray, Camera, RaySamples};
use crate::supervision::{Dataset, Image, PosedImage, SceneBounds};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum PrimitiveShape {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Albedo {
    Solid([f64; 3]),
    /// Smooth checker over the primitive's local x/y frame: the two colors
    /// are blended by 0.5·(1 + sin(π·cells·lx)·sin(π·cells·ly)). The C^∞
    /// profile keeps the oracle quadrature convergent while the pattern
    /// still projects to a few pixels per cell.
    Checker {
        colors: [[f64; 3]; 2],
        /// Half-cycles per half-extent.
        cells: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: PrimitiveShape,
    pub center: [f64; 3],
    pub albedo: Albedo,
    /// Peak density inside the primitive.
    pub density: f64,
}

impl Primitive {
    /// Normalized boundary distance: < 1 inside, 1 on the surface.
    fn boundary_coordinate(&self, x: Vec3) -> f64 {
        let d = x - Vec3::from_array(self.center);
        match &self.shape {
            PrimitiveShape::Sphere { radius } => d.norm() / radius,
            PrimitiveShape::Box { half_extents } => {
                let dx = (d.x / half_extents[0]).abs();
                let dy = (d.y / half_extents[1]).abs();
                let dz = (d.z / half_extents[2]).abs();
                dx.max(dy).max(dz)
            }
        }
    }

    /// Density with a cosine taper over the outer `taper` fraction of the
    /// primitive radius; exactly zero at and beyond the surface.
    fn density_at(&self, x: Vec3, taper: f64) -> f64 {
        let q = self.boundary_coordinate(x);
        if q >= 1.0 {
            return 0.0;
        }
        let inner = 1.0 - taper;
        if q <= inner {
            self.density
        } else {
            let s = (q - inner) / taper;
            self.density * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
        }
    }

    fn albedo_at(&self, x: Vec3) -> [f64; 3] {
        match &self.albedo {
            Albedo::Solid(c) => *c,
            Albedo::Checker { colors, cells } => {
                let d = x - Vec3::from_array(self.center);
                let (lx, ly) = match &self.shape {
                    PrimitiveShape::Sphere { radius } => (d.x / radius, d.y / radius),
                    PrimitiveShape::Box { half_extents } => {
                        (d.x / half_extents[0], d.y / half_extents[1])
                    }
                };
                let a = std::f64::consts::PI * cells;
                let w = 0.5 * (1.0 + (a * lx).sin() * (a * ly).sin());
                [
                    colors[0][0] + w * (colors[1][0] - colors[0][0]),
                    colors[0][1] + w * (colors[1][1] - colors[0][1]),
                    colors[0][2] + w * (colors[1][2] - colors[0][2]),
                ]
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub background: [f64; 3],
    pub bounds: SceneBounds,
    /// Falloff width as a fraction of each primitive's radius.
    #[serde(default = "default_taper")]
    pub taper: f64,
}

fn default_taper() -> f64 {
    0.12
}

impl AnalyticScene {
    /// Summed density and density-weighted albedo blend at `x`. Outside all
    /// primitives the density is zero and the albedo falls back to the
    /// background color.
    pub fn eval(&self, x: Vec3) -> ([f64; 3], f64) {
        let mut density = 0.0;
        let mut albedo = [0.0; 3];
        for p in &self.primitives {
            let d = p.density_at(x, self.taper);
            if d > 0.0 {
                let a = p.albedo_at(x);
                for c in 0..3 {
                    albedo[c] += d * a[c];
                }
                density += d;
            }
        }
        if density <= 0.0 {
            return (self.background, 0.0);
        }
        for c in &mut albedo {
            *c /= density;
        }
        (albedo, density)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::config("scene needs at least one primitive"));
        }
        for p in &self.primitives {
            if p.density < 0.0 {
                return Err(Error::config("primitive densities must be >= 0"));
            }
            if !self.bounds.contains(p.center) {
                return Err(Error::config("primitive centers must lie inside bounds"));
            }
        }
        if !(0.0 < self.taper && self.taper < 1.0) {
            return Err(Error::config("taper must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Camera ring and quadrature settings for oracle renders.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneRenderSpec {
    pub image_size: u32,
    /// Ring radius around the scene center.
    pub camera_radius: f64,
    pub elevation_deg: f64,
    /// Focal length in pixels.
    pub focal_px: f64,
    pub near: f64,
    pub far: f64,
    /// Quadrature samples per ray for ground-truth renders.
    pub oracle_samples: usize,
}

impl Default for SceneRenderSpec {
    fn default() -> Self {
        SceneRenderSpec {
            image_size: 64,
            camera_radius: 3.0,
            elevation_deg: 28.0,
            focal_px: 80.0,
            near: 1.1,
            far: 5.0,
            oracle_samples: 512,
        }
    }
}

impl SceneRenderSpec {
    pub fn validate(&self, train_samples: usize) -> Result<()> {
        if self.oracle_samples < 4 * train_samples {
            return Err(Error::config(format!(
                "oracle quadrature must use >= 4x the training sample count \
                 ({} < 4*{train_samples})",
                self.oracle_samples
            )));
        }
        if self.near <= 0.0 || self.near >= self.far {
            return Err(Error::config("need 0 < near < far"));
        }
        Ok(())
    }
}

/// Camera on the ring at `azimuth_deg`, looking at the origin with +z up.
pub fn ring_camera(spec: &SceneRenderSpec, azimuth_deg: f64) -> Camera {
    let az = azimuth_deg.to_radians();
    let el = spec.elevation_deg.to_radians();
    let pos = Vec3::new(
        spec.camera_radius * el.cos() * az.cos(),
        spec.camera_radius * el.cos() * az.sin(),
        spec.camera_radius * el.sin(),
    );
    // camera -z points at the origin
    let forward = (Vec3::ZERO - pos).normalized();
    let world_up = Vec3::new(0.0, 0.0, 1.0);
    let right = forward.cross(world_up).normalized();
    let up = right.cross(forward).normalized();
    let z_axis = -forward;
    let c2w = [
        [right.x, up.x, z_axis.x, pos.x],
        [right.y, up.y, z_axis.y, pos.y],
        [right.z, up.z, z_axis.z, pos.z],
        [0.0, 0.0, 0.0, 1.0],
    ];
    let half = spec.image_size as f64 / 2.0;
    Camera {
        fx: spec.focal_px,
        fy: spec.focal_px,
        cx: half,
        cy: half,
        width: spec.image_size,
        height: spec.image_size,
        c2w,
    }
}

/// Ground-truth render by dense midpoint quadrature through the shared
/// compositing routine.
pub fn render_oracle(scene: &AnalyticScene, cam: &Camera, spec: &SceneRenderSpec) -> Image {
    let width = cam.width;
    let height = cam.height;
    let rows: Vec<Vec<[f64; 3]>> = (0..height)
        .into_par_iter()
        .map(|row| {
            let mut out = Vec::with_capacity(width as usize);
            for col in 0..width {
                let ray = generate_ray(cam, 0, row, col, spec.near, spec.far);
                let depths =
                    crate::rendering::stratified_depths(spec.near, spec.far, spec.oracle_samples, None);
                let outputs: Vec<FieldOutput> = depths
                    .iter()
                    .map(|&t| {
                        let (albedo, density) = scene.eval(ray.point_at(t));
                        FieldOutput {
                            color: albedo,
                            beta2: 0.0,
                            sigma: density,
                        }
                    })
                    .collect();
                let samples = RaySamples::new(depths, spec.far, outputs);
                let px = composite(&samples);
                out.push(composite_over_background(&px, scene.background));
            }
            out
        })
        .collect();
    let mut img = Image::new(width, height);
    for (row, cols) in rows.into_iter().enumerate() {
        for (col, rgb) in cols.into_iter().enumerate() {
            img.set(row as u32, col as u32, rgb);
        }
    }
    img
}

/// Builds the posed train/test image sets: `n_train` views evenly spaced in
/// azimuth, test views interleaved halfway between neighbors.
pub fn make_dataset(
    scene: &AnalyticScene,
    spec: &SceneRenderSpec,
    n_train: usize,
    n_test: usize,
) -> Result<Dataset> {
    scene.validate()?;
    if ![3, 6, 9].contains(&n_train) {
        return Err(Error::config(format!(
            "unsupported train view count {n_train}; expected 3, 6 or 9"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    let train_step = 360.0 / n_train as f64;
    for i in 0..n_train {
        let cam = ring_camera(spec, train_step * i as f64);
        let image = render_oracle(scene, &cam, spec);
        train.push(PosedImage {
            image,
            camera: cam,
            view_id: i as u32,
            mask: None,
        });
    }
    let test_step = 360.0 / n_test.max(1) as f64;
    for j in 0..n_test {
        let az = train_step / 2.0 + test_step * j as f64;
        let cam = ring_camera(spec, az);
        let image = render_oracle(scene, &cam, spec);
        test.push(PosedImage {
            image,
            camera: cam,
            view_id: (n_train + j) as u32,
            mask: None,
        });
    }
    Ok(Dataset {
        train,
        test,
        near: spec.near,
        far: spec.far,
        background: scene.background,
        bounds: scene.bounds,
    })
}

/// Mean value of `sigma_fn` over a fixed grid of points whose ground-truth
/// density is exactly zero. Measures spurious density in free space.
pub fn floater_mass_of(
    scene: &AnalyticScene,
    grid_res: usize,
    sigma_fn: &(dyn Fn(Vec3) -> f64 + Sync),
) -> f64 {
    let b = scene.bounds;
    let mut total = 0.0;
    let mut count = 0usize;
    let step = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * (i as f64 + 0.5) / grid_res as f64;
    for ix in 0..grid_res {
        for iy in 0..grid_res {
            for iz in 0..grid_res {
                let p = Vec3::new(
                    step(b.min[0], b.max[0], ix),
                    step(b.min[1], b.max[1], iy),
                    step(b.min[2], b.max[2], iz),
                );
                let (_, density) = scene.eval(p);
                if density == 0.0 {
                    total += sigma_fn(p);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// The default scene: two solid spheres and a checkered box over a black
/// background, inside a camera ring with generous near/far slack. The
/// checker creates genuine high-frequency pixels for the low/high-frequency
/// supervision split; the empty margin between the near plane and the
/// objects leaves room for the floaters that sparse-view training
/// hallucinates, which is what the ray regularizers are measured on.
pub fn default_scene() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            Primitive {
                shape: PrimitiveShape::Sphere { radius: 0.55 },
                center: [-0.45, 0.35, 0.1],
                albedo: Albedo::Solid([0.85, 0.25, 0.2]),
                density: 10.0,
            },
            Primitive {
                shape: PrimitiveShape::Sphere { radius: 0.4 },
                center: [0.5, -0.25, 0.45],
                albedo: Albedo::Solid([0.2, 0.45, 0.85]),
                density: 10.0,
            },
            Primitive {
                shape: PrimitiveShape::Box {
                    half_extents: [0.65, 0.65, 0.28],
                },
                center: [0.1, 0.05, -0.55],
                albedo: Albedo::Checker {
                    colors: [[0.92, 0.85, 0.25], [0.12, 0.55, 0.3]],
                    cells: 6.0,
                },
                density: 10.0,
            },
        ],
        background: [0.0, 0.0, 0.0],
        bounds: SceneBounds {
            min: [-1.8; 3],
            max: [1.8; 3],
        },
        taper: 0.12,
    }
}

/// Declarative scene + camera configuration file (TOML).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(flatten)]
    pub scene: AnalyticScene,
    #[serde(default)]
    pub render: SceneRenderSpec,
}

impl SceneConfig {
    pub fn builtin_default() -> Self {
        SceneConfig {
            scene: default_scene(),
            render: SceneRenderSpec::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("scene config: {e}")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::config(format!("scene config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_outside_primitives_is_background_and_zero() {
        let scene = default_scene();
        let (albedo, density) = scene.eval(Vec3::new(1.5, 1.5, 1.5));
        assert_eq!(density, 0.0);
        assert_eq!(albedo, scene.background);
    }

    #[test]
    fn eval_at_sphere_center_is_peak_density_and_albedo() {
        let scene = default_scene();
        let c = scene.primitives[0].center;
        let (albedo, density) = scene.eval(Vec3::from_array(c));
        assert_eq!(density, 10.0);
        assert_eq!(albedo, [0.85, 0.25, 0.2]);
    }

    #[test]
    fn overlapping_equal_primitives_blend_to_average() {
        let mk = |albedo: [f64; 3]| Primitive {
            shape: PrimitiveShape::Sphere { radius: 0.5 },
            center: [0.0, 0.0, 0.0],
            albedo: Albedo::Solid(albedo),
            density: 5.0,
        };
        let scene = AnalyticScene {
            primitives: vec![mk([1.0, 0.0, 0.0]), mk([0.0, 1.0, 0.0])],
            background: [0.0; 3],
            bounds: SceneBounds {
                min: [-1.0; 3],
                max: [1.0; 3],
            },
            taper: 0.05,
        };
        let (albedo, density) = scene.eval(Vec3::ZERO);
        assert_eq!(density, 10.0);
        assert_eq!(albedo, [0.5, 0.5, 0.0]);
    }

    #[test]
    fn background_only_camera_renders_constant_image() {
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: PrimitiveShape::Sphere { radius: 0.2 },
                center: [0.0, 0.0, 0.0],
                albedo: Albedo::Solid([1.0, 1.0, 1.0]),
                density: 10.0,
            }],
            background: [0.1, 0.2, 0.3],
            bounds: SceneBounds {
                min: [-1.6; 3],
                max: [1.6; 3],
            },
            taper: 0.05,
        };
        let spec = SceneRenderSpec {
            image_size: 16,
            oracle_samples: 64,
            ..SceneRenderSpec::default()
        };
        // camera on the ring, pointed away from the scene
        let mut cam = ring_camera(&spec, 0.0);
        for row in cam.c2w.iter_mut().take(3) {
            row[3] *= 4.0; // move far out; the frustum-near segment sees only empty space
        }
        let img = render_oracle(&scene, &cam, &spec);
        for row in 0..16 {
            for col in 0..16 {
                let px = img.get(row, col);
                for (got, want) in px.iter().zip(&scene.background) {
                    assert!((got - want).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn oracle_quadrature_self_converges() {
        let scene = default_scene();
        let spec = SceneRenderSpec {
            image_size: 16,
            ..SceneRenderSpec::default()
        };
        let spec2 = SceneRenderSpec {
            oracle_samples: 2 * spec.oracle_samples,
            ..spec.clone()
        };
        let cam = ring_camera(&spec, 40.0);
        let a = render_oracle(&scene, &cam, &spec);
        let b = render_oracle(&scene, &cam, &spec2);
        let max_diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-3, "max_diff={max_diff}");
    }

    #[test]
    fn opaque_sphere_silhouette_matches_projection() {
        let scene = AnalyticScene {
            primitives: vec![Primitive {
                shape: PrimitiveShape::Sphere { radius: 0.5 },
                center: [0.0, 0.0, 0.0],
                albedo: Albedo::Solid([1.0, 1.0, 1.0]),
                density: 200.0,
            }],
            background: [0.0; 3],
            bounds: SceneBounds {
                min: [-1.6; 3],
                max: [1.6; 3],
            },
            taper: 0.05,
        };
        let spec = SceneRenderSpec {
            image_size: 64,
            elevation_deg: 0.0,
            focal_px: 80.0,
            camera_radius: 3.0,
            oracle_samples: 512,
            ..SceneRenderSpec::default()
        };
        let cam = ring_camera(&spec, 0.0);
        let img = render_oracle(&scene, &cam, &spec);
        // count lit pixels along the central row and compare the silhouette
        // width against the pinhole prediction 2 * f * r / sqrt(d^2 - r^2)
        let row = 31;
        let lit: usize = (0..64).filter(|&c| img.get(row, c)[0] > 0.5).count();
        let predicted = 2.0 * spec.focal_px * 0.5 / (3.0f64 * 3.0 - 0.25).sqrt();
        assert!(
            (lit as f64 - predicted).abs() <= 2.0,
            "lit={lit} predicted={predicted}"
        );
    }

    #[test]
    fn make_dataset_spacing_and_split() {
        let scene = default_scene();
        let spec = SceneRenderSpec {
            image_size: 16,
            oracle_samples: 64,
            ..SceneRenderSpec::default()
        };
        let ds = make_dataset(&scene, &spec, 3, 3).unwrap();
        assert_eq!(ds.train.len(), 3);
        assert_eq!(ds.test.len(), 3);
        // 120 degrees apart on the ring: dot products of camera positions
        let positions: Vec<Vec3> = ds.train.iter().map(|v| v.camera.position()).collect();
        let angle = |a: Vec3, b: Vec3| (a.dot(b) / (a.norm() * b.norm())).acos().to_degrees();
        // at equal elevation, azimuthal spacing of 120 degrees
        assert!((angle(positions[0], positions[1]) - angle(positions[1], positions[2])).abs() < 1e-9);
        let train_ids: std::collections::HashSet<u32> =
            ds.train.iter().map(|v| v.view_id).collect();
        assert!(ds.test.iter().all(|v| !train_ids.contains(&v.view_id)));
    }

    #[test]
    fn make_dataset_rejects_unsupported_view_counts() {
        let scene = default_scene();
        let spec = SceneRenderSpec {
            image_size: 16,
            oracle_samples: 64,
            ..SceneRenderSpec::default()
        };
        assert!(make_dataset(&scene, &spec, 7, 3).is_err());
    }

    #[test]
    fn dataset_generation_is_deterministic() {
        let scene = default_scene();
        let spec = SceneRenderSpec {
            image_size: 16,
            oracle_samples: 64,
            ..SceneRenderSpec::default()
        };
        let a = make_dataset(&scene, &spec, 3, 2).unwrap();
        let b = make_dataset(&scene, &spec, 3, 2).unwrap();
        for (va, vb) in a.train.iter().zip(&b.train) {
            assert_eq!(va.image, vb.image);
        }
    }

    #[test]
    fn floater_mass_zero_for_empty_field() {
        let scene = default_scene();
        let m = floater_mass_of(&scene, 12, &|_| 0.0);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn floater_mass_zero_when_field_matches_oracle() {
        let scene = default_scene();
        let eval = |p: Vec3| scene.eval(p).1;
        let m = floater_mass_of(&scene, 12, &eval);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn floater_mass_grid_self_consistency() {
        // a smooth spurious blob outside the primitives
        let scene = default_scene();
        let blob = |p: Vec3| {
            let d = (p - Vec3::new(1.2, 1.2, 1.2)).norm();
            (-d * d * 4.0).exp()
        };
        let coarse = floater_mass_of(&scene, 16, &blob);
        let fine = floater_mass_of(&scene, 32, &blob);
        assert!(coarse > 0.0);
        assert!(
            (coarse - fine).abs() / fine < 0.1,
            "coarse={coarse} fine={fine}"
        );
    }

    #[test]
    fn scene_config_toml_round_trip() {
        let cfg = SceneConfig::builtin_default();
        let text = cfg.to_toml().unwrap();
        let back = SceneConfig::from_toml(&text).unwrap();
        assert_eq!(back.scene.primitives.len(), 3);
        assert_eq!(back.render.image_size, cfg.render.image_size);
    }
}
