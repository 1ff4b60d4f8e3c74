//! Synthetic capture: pinhole camera and projector, parametric surfaces, and
//! frame rendering with blur, noise and quantization.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::image::{dequantize, gaussian_blur, quantize, Grid, RgbImage};
use crate::io::{read_pnm, BitDepth, Config, FormatError};
use crate::pattern::{Frame, Pattern, StripeSequence, TwoShotPatternPair};
use crate::radiometry::{image_irradiance, one_shot_color, Rgb, ShadingContext, SurfaceReflectance};

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("invalid rig: {0}")]
    InvalidRig(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid noise parameters: {0}")]
    InvalidNoise(String),
    #[error("no camera pixel sees the scene geometry")]
    NoVisibility,
    #[error("{stripes} stripes of width {stripe_width} exceed the pattern width {width}")]
    PatternOverflow { stripes: usize, stripe_width: usize, width: usize },
    #[error("pattern image is {found:?}, projector expects {expected:?}")]
    PatternSize { expected: (usize, usize), found: (usize, usize) },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Pinhole intrinsics. Pixel `(u, v)` covers `[u, u+1) x [v, v+1)`; its center is at `u + 0.5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pinhole {
    pub focal_px: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Pinhole {
    pub fn new(focal_px: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self, SceneError> {
        if !(focal_px.is_finite() && focal_px > 0.0) {
            return Err(SceneError::InvalidRig(format!("focal length must be positive, got {focal_px}")));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(SceneError::InvalidRig("principal point must be finite".into()));
        }
        if width == 0 || height == 0 {
            return Err(SceneError::InvalidRig("image size must be nonzero".into()));
        }
        Ok(Self { focal_px, cx, cy, width, height })
    }

    /// Ray direction through image coordinates `(x, y)`, with unit z.
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.focal_px, (y - self.cy) / self.focal_px, 1.0)
    }

    pub fn pixel_ray(&self, u: usize, v: usize) -> Vector3<f64> {
        self.ray(u as f64 + 0.5, v as f64 + 0.5)
    }

    /// Image coordinates of a point in this device's frame, if in front of it.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.focal_px * p.x / p.z + self.cx, self.focal_px * p.y / p.z + self.cy))
    }

    fn from_config(cfg: &Config, prefix: &str) -> Result<Self, SceneError> {
        let size = |key: &str| -> Result<usize, SceneError> {
            let k = format!("{prefix}.{key}");
            let v = cfg.require_int(&k)?;
            usize::try_from(v).ok().filter(|&v| v > 0).ok_or_else(|| cfg.invalid(&k, "must be positive").into())
        };
        Self::new(
            cfg.require_f64(&format!("{prefix}.focal_px"))?,
            cfg.require_f64(&format!("{prefix}.cx"))?,
            cfg.require_f64(&format!("{prefix}.cy"))?,
            size("width")?,
            size("height")?,
        )
    }
}

/// Camera and projector intrinsics plus the projector-to-camera transform
/// `X_cam = R * X_proj + t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigCalibration {
    camera: Pinhole,
    projector: Pinhole,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigCalibration {
    pub fn new(
        camera: Pinhole,
        projector: Pinhole,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self, SceneError> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(ortho <= 1e-9 && (rotation.determinant() - 1.0).abs() <= 1e-9) {
            return Err(SceneError::InvalidRig("rotation is not a proper orthonormal matrix".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) || translation.norm() == 0.0 {
            return Err(SceneError::InvalidRig("baseline translation must be nonzero".into()));
        }
        Ok(Self { camera, projector, rotation, translation })
    }

    /// Reads `camera.*`, `projector.*` and `baseline.*`. Rotation is axis-angle
    /// `(rx, ry, rz)` in radians, defaulting to zero.
    pub fn from_config(cfg: &Config) -> Result<Self, SceneError> {
        let camera = Pinhole::from_config(cfg, "camera")?;
        let projector = Pinhole::from_config(cfg, "projector")?;
        let t = Vector3::new(
            cfg.require_f64("baseline.tx")?,
            cfg.require_f64("baseline.ty")?,
            cfg.require_f64("baseline.tz")?,
        );
        let r = |k: &str| cfg.f64(k).unwrap_or(0.0);
        let axis_angle = Vector3::new(r("baseline.rx"), r("baseline.ry"), r("baseline.rz"));
        let rotation = Rotation3::new(axis_angle).into_inner();
        Self::new(camera, projector, rotation, t)
    }

    pub fn camera(&self) -> &Pinhole {
        &self.camera
    }

    pub fn projector(&self) -> &Pinhole {
        &self.projector
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    /// Projector center in the camera frame.
    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn camera_to_projector(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Same rig with the baseline translation multiplied by `c`.
    pub fn with_baseline_scale(&self, c: f64) -> Result<Self, SceneError> {
        Self::new(self.camera, self.projector, self.rotation, self.translation * c)
    }
}

/// Surface hit along `origin + t * dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    /// Unit normal, orientation unspecified.
    pub normal: Vector3<f64>,
}

/// Depth grid `Z = h(X, Y)` in camera coordinates, sampled at
/// `(origin.0 + i * cell, origin.1 + j * cell)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightfield {
    origin: (f64, f64),
    cell: f64,
    nx: usize,
    ny: usize,
    depths: Vec<f64>,
}

impl Heightfield {
    pub fn new(origin: (f64, f64), cell: f64, nx: usize, ny: usize, depths: Vec<f64>) -> Result<Self, SceneError> {
        if nx < 2 || ny < 2 || depths.len() != nx * ny {
            return Err(SceneError::InvalidScene("heightfield needs at least 2x2 samples".into()));
        }
        if !(cell.is_finite() && cell > 0.0) {
            return Err(SceneError::InvalidScene("heightfield cell size must be positive".into()));
        }
        if depths.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(SceneError::InvalidScene("heightfield depths must be positive".into()));
        }
        Ok(Self { origin, cell, nx, ny, depths })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.depths[j * self.nx + i]
    }

    /// Cell index and fractional offsets of `(x, y)`, if inside the grid.
    fn locate(&self, x: f64, y: f64) -> Option<(usize, usize, f64, f64)> {
        let gx = (x - self.origin.0) / self.cell;
        let gy = (y - self.origin.1) / self.cell;
        let (mx, my) = ((self.nx - 1) as f64, (self.ny - 1) as f64);
        if !(0.0..=mx).contains(&gx) || !(0.0..=my).contains(&gy) {
            return None;
        }
        let i = (gx.floor() as usize).min(self.nx - 2);
        let j = (gy.floor() as usize).min(self.ny - 2);
        Some((i, j, gx - i as f64, gy - j as f64))
    }

    /// Bilinearly interpolated depth.
    pub fn depth_at(&self, x: f64, y: f64) -> Option<f64> {
        let (i, j, fx, fy) = self.locate(x, y)?;
        let top = self.at(i, j) * (1.0 - fx) + self.at(i + 1, j) * fx;
        let bottom = self.at(i, j + 1) * (1.0 - fx) + self.at(i + 1, j + 1) * fx;
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Normal of the cell containing `(x, y)` from central differences across the cell.
    pub fn cell_normal(&self, x: f64, y: f64) -> Option<Vector3<f64>> {
        let (i, j, _, _) = self.locate(x, y)?;
        let (a, b, c, d) = (self.at(i, j), self.at(i + 1, j), self.at(i, j + 1), self.at(i + 1, j + 1));
        let dx = ((b + d) - (a + c)) / (2.0 * self.cell);
        let dy = ((c + d) - (a + b)) / (2.0 * self.cell);
        Some(Vector3::new(-dx, -dy, 1.0).normalize())
    }

    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let x1 = self.origin.0 + (self.nx - 1) as f64 * self.cell;
        let y1 = self.origin.1 + (self.ny - 1) as f64 * self.cell;
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for (o, d, lo, hi) in [(origin.x, dir.x, self.origin.0, x1), (origin.y, dir.y, self.origin.1, y1)] {
            if d.abs() < 1e-15 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if !(t1.is_finite() && t0 < t1) {
            return None;
        }
        // Shrink slightly so samples stay inside the grid.
        let span = t1 - t0;
        let (t0, t1) = (t0 + span * 1e-12, t1 - span * 1e-12);
        let f = |t: f64| -> Option<f64> {
            let p = origin + dir * t;
            self.depth_at(p.x, p.y).map(|h| p.z - h)
        };
        let xy_len = (dir.x.hypot(dir.y)) * (t1 - t0);
        let steps = ((xy_len / (0.25 * self.cell)).ceil() as usize).clamp(16, 1 << 20);
        let mut prev_t = t0;
        let mut prev_f = f(t0)?;
        for s in 1..=steps {
            let t = t0 + (t1 - t0) * s as f64 / steps as f64;
            let ft = f(t)?;
            if prev_f < 0.0 && ft >= 0.0 {
                let (mut lo, mut hi) = (prev_t, t);
                for _ in 0..64 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid)? < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let point = origin + dir * hi;
                let normal = self.cell_normal(point.x, point.y)?;
                return Some(Hit { t: hi, point, normal });
            }
            prev_t = t;
            prev_f = ft;
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Surface {
    Plane { point: Vector3<f64>, normal: Vector3<f64> },
    /// Infinite cylinder around the line `point + s * axis`.
    Cylinder { point: Vector3<f64>, axis: Vector3<f64>, radius: f64 },
    Heightfield(Heightfield),
}

impl Surface {
    pub fn plane(point: Vector3<f64>, normal: Vector3<f64>) -> Result<Self, SceneError> {
        let n = normal.try_normalize(1e-12).ok_or_else(|| SceneError::InvalidScene("zero plane normal".into()))?;
        Ok(Surface::Plane { point, normal: n })
    }

    pub fn cylinder(point: Vector3<f64>, axis: Vector3<f64>, radius: f64) -> Result<Self, SceneError> {
        let a = axis.try_normalize(1e-12).ok_or_else(|| SceneError::InvalidScene("zero cylinder axis".into()))?;
        if !(radius.is_finite() && radius > 0.0) {
            return Err(SceneError::InvalidScene("cylinder radius must be positive".into()));
        }
        Ok(Surface::Cylinder { point, axis: a, radius })
    }

    /// Nearest hit with `t > 0` along the (not necessarily unit) direction `dir`.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        const T_MIN: f64 = 1e-9;
        match self {
            Surface::Plane { point, normal } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-15 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > T_MIN).then(|| Hit { t, point: origin + dir * t, normal: *normal })
            }
            Surface::Cylinder { point, axis, radius } => {
                let w = origin - point;
                let d_perp = dir - axis * axis.dot(dir);
                let w_perp = w - axis * axis.dot(&w);
                let a = d_perp.norm_squared();
                if a < 1e-18 {
                    return None;
                }
                let b = w_perp.dot(&d_perp);
                let c = w_perp.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t = [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > T_MIN)?;
                let p = origin + dir * t;
                let radial = (p - point) - axis * axis.dot(&(p - point));
                Some(Hit { t, point: p, normal: radial / *radius })
            }
            Surface::Heightfield(h) => h.intersect(origin, dir).filter(|hit| hit.t > T_MIN),
        }
    }
}

/// Axis-aligned rectangle in camera-frame X/Y (meters) of the hit point, with
/// material overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    /// `[x0, y0, x1, y1]`.
    pub rect: [f64; 4],
    pub reflectance: Option<SurfaceReflectance>,
    pub ambient: Option<Rgb>,
    /// Extra multiplier on the geometric shading factor.
    pub shading: Option<f64>,
}

impl Region {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        let [x0, y0, x1, y1] = self.rect;
        p.x >= x0.min(x1) && p.x <= x0.max(x1) && p.y >= y0.min(y1) && p.y <= y0.max(y1)
    }
}

/// Material at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material {
    pub reflectance: SurfaceReflectance,
    pub ambient: Rgb,
    pub shading: f64,
    pub region: Option<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub surface: Surface,
    pub reflectance: SurfaceReflectance,
    pub ambient: Rgb,
    /// Global multiplier on the geometric shading factor.
    pub shading: f64,
    /// Later regions take precedence where they overlap.
    pub regions: Vec<Region>,
}

impl SceneSpec {
    pub fn new(surface: Surface) -> Self {
        Self {
            surface,
            reflectance: SurfaceReflectance::neutral(1.0),
            ambient: Rgb::BLACK,
            shading: 1.0,
            regions: Vec::new(),
        }
    }

    /// Material lookup by region membership.
    pub fn material_at(&self, p: &Vector3<f64>) -> Material {
        let mut m = Material { reflectance: self.reflectance, ambient: self.ambient, shading: self.shading, region: None };
        if let Some((i, r)) = self.regions.iter().enumerate().rev().find(|(_, r)| r.contains(p)) {
            m.reflectance = r.reflectance.unwrap_or(m.reflectance);
            m.ambient = r.ambient.unwrap_or(m.ambient);
            m.shading *= r.shading.unwrap_or(1.0);
            m.region = Some(i as u16);
        }
        m
    }

    /// Reads `scene.*` and `ambient.*`. A relative heightfield path resolves against `base_dir`.
    pub fn from_config(cfg: &Config, base_dir: &Path) -> Result<Self, SceneError> {
        let vec3 = |key: &str| -> Result<Vector3<f64>, SceneError> {
            let v = cfg.require_floats(key)?;
            Ok(Vector3::new(v[0], v[1], v[2]))
        };
        let kind = cfg.require_text("scene.type")?;
        let surface = match kind {
            "plane" => Surface::plane(vec3("scene.plane.point")?, vec3("scene.plane.normal")?)?,
            "cylinder" => Surface::cylinder(
                vec3("scene.cylinder.point")?,
                vec3("scene.cylinder.axis")?,
                cfg.require_f64("scene.cylinder.radius")?,
            )?,
            "heightfield" => {
                let path = base_dir.join(cfg.require_text("scene.heightfield.path")?);
                let origin = cfg.require_floats("scene.heightfield.origin")?;
                let cell = cfg.require_f64("scene.heightfield.cell")?;
                let scale = cfg.require_f64("scene.heightfield.depth_scale")?;
                let img = read_pnm(&path)?;
                if img.channels() != 1 {
                    return Err(SceneError::InvalidScene("heightfield must be a grayscale image".into()));
                }
                let depths = img.samples().iter().map(|&s| s as f64 * scale).collect();
                Surface::Heightfield(Heightfield::new((origin[0], origin[1]), cell, img.width(), img.height(), depths)?)
            }
            other => return Err(cfg.invalid("scene.type", format!("unknown scene type {other:?}")).into()),
        };
        let reflectance = |key: &str| -> Result<Option<SurfaceReflectance>, SceneError> {
            match cfg.floats(key) {
                None => Ok(None),
                Some(v) => SurfaceReflectance::new(v[0], v[1], v[2])
                    .map(Some)
                    .ok_or_else(|| cfg.invalid(key, "reflectance must lie in [0, 1]").into()),
            }
        };
        let mut scene = SceneSpec::new(surface);
        if let Some(s) = reflectance("scene.reflectance")? {
            scene.reflectance = s;
        }
        let amb = |k: &str| cfg.f64(k).unwrap_or(0.0);
        scene.ambient = Rgb::new(amb("ambient.r"), amb("ambient.g"), amb("ambient.b"));
        if scene.ambient.min_component() < 0.0 {
            return Err(cfg.invalid("ambient.r", "ambient must be nonnegative").into());
        }
        scene.shading = cfg.f64("scene.shading").unwrap_or(1.0);
        if scene.shading < 0.0 {
            return Err(cfg.invalid("scene.shading", "must be nonnegative").into());
        }
        for i in cfg.region_indices() {
            let key = |f: &str| format!("scene.region.{i}.{f}");
            let rect = cfg.require_floats(&key("rect"))?;
            let ambient = cfg.floats(&key("ambient")).map(|v| Rgb::new(v[0], v[1], v[2]));
            if ambient.is_some_and(|a| a.min_component() < 0.0) {
                return Err(cfg.invalid(&key("ambient"), "ambient must be nonnegative").into());
            }
            let shading = cfg.f64(&key("shading"));
            if shading.is_some_and(|s| s < 0.0) {
                return Err(cfg.invalid(&key("shading"), "must be nonnegative").into());
            }
            scene.regions.push(Region {
                rect: [rect[0], rect[1], rect[2], rect[3]],
                reflectance: reflectance(&key("reflectance"))?,
                ambient,
                shading,
            });
        }
        Ok(scene)
    }
}

/// Sensor degradation applied after the ideal image is formed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    /// `None` keeps full floating-point precision.
    pub bit_depth: Option<BitDepth>,
    pub clip: bool,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self { blur_sigma: 0.0, noise_sigma: 0.0, bit_depth: Some(BitDepth::Eight), clip: true }
    }
}

impl NoiseParams {
    /// No blur, noise, clipping or quantization.
    pub fn ideal() -> Self {
        Self { blur_sigma: 0.0, noise_sigma: 0.0, bit_depth: None, clip: false }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return Err(SceneError::InvalidNoise("blur sigma must be nonnegative".into()));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SceneError::InvalidNoise("noise sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// Reads `noise.*` keys over the defaults.
    pub fn from_config(cfg: &Config) -> Result<Self, SceneError> {
        let mut n = Self::default();
        n.blur_sigma = cfg.f64("noise.blur_sigma").unwrap_or(n.blur_sigma);
        n.noise_sigma = cfg.f64("noise.sigma").unwrap_or(n.noise_sigma);
        n.clip = cfg.bool("noise.clip").unwrap_or(n.clip);
        if let Some(bits) = cfg.int("noise.bit_depth") {
            let depth = u32::try_from(bits).ok().and_then(BitDepth::from_bits);
            n.bit_depth = Some(depth.ok_or_else(|| cfg.invalid("noise.bit_depth", "must be 8 or 16"))?);
        }
        n.validate()?;
        Ok(n)
    }
}

/// A projector image together with the stripe layout it encodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorImage {
    pub image: RgbImage,
    pub stripe_width: usize,
    pub stripes: usize,
}

impl ProjectorImage {
    /// All-black image, used for the ambient-only frame.
    pub fn black(width: usize, height: usize) -> Self {
        Self { image: Grid::new(width, height, Rgb::BLACK), stripe_width: 1, stripes: 0 }
    }

    /// Stripe covering projector column coordinate `x`.
    pub fn stripe_at(&self, x: f64) -> Option<usize> {
        if x < 0.0 {
            return None;
        }
        let s = (x / self.stripe_width as f64).floor() as usize;
        (s < self.stripes).then_some(s)
    }

    /// Bilinear sample with texel centers at integer + 0.5; black outside the image.
    pub fn sample(&self, x: f64, y: f64) -> Rgb {
        let (w, h) = (self.image.width(), self.image.height());
        if !(x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64) {
            return Rgb::BLACK;
        }
        let (sx, sy) = (x - 0.5, y - 0.5);
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n - 1);
        let (xa, xb) = (clamp(x0, w), clamp(x0 + 1.0, w));
        let (ya, yb) = (clamp(y0, h), clamp(y0 + 1.0, h));
        let img = &self.image;
        let top = *img.get(xa, ya) * (1.0 - fx) + *img.get(xb, ya) * fx;
        let bottom = *img.get(xa, yb) * (1.0 - fx) + *img.get(xb, yb) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

fn stripe_image(
    seq: &StripeSequence,
    stripe_width: usize,
    size: (usize, usize),
    color: impl Fn(usize) -> Result<Rgb, SceneError>,
) -> Result<ProjectorImage, SceneError> {
    let (width, height) = size;
    if stripe_width == 0 {
        return Err(SceneError::InvalidScene("stripe width must be at least 1".into()));
    }
    if seq.len().saturating_mul(stripe_width) > width {
        return Err(SceneError::PatternOverflow { stripes: seq.len(), stripe_width, width });
    }
    let colors = (0..seq.len()).map(color).collect::<Result<Vec<_>, _>>()?;
    let image = Grid::from_fn(width, height, |x, _| colors.get(x / stripe_width).copied().unwrap_or(Rgb::BLACK));
    Ok(ProjectorImage { image, stripe_width, stripes: seq.len() })
}

/// Projector image(s) for `pattern`: one for one-shot, two (first, second frame)
/// for two-shot. Columns past the last stripe are black.
pub fn render_pattern_image(
    pattern: &Pattern,
    stripe_width: usize,
    size: (usize, usize),
) -> Result<Vec<ProjectorImage>, SceneError> {
    match pattern {
        Pattern::OneShot(seq) => Ok(vec![stripe_image(seq, stripe_width, size, |i| {
            one_shot_color(seq.codes()[i])
                .ok_or_else(|| SceneError::InvalidScene(format!("no projector color for code {}", seq.codes()[i])))
        })?]),
        Pattern::TwoShot(pair) => [Frame::First, Frame::Second]
            .into_iter()
            .map(|f| stripe_image(pair.sequence(), stripe_width, size, |i| Ok(Rgb::from_array(pair.stripe_levels(i, f)))))
            .collect(),
    }
}

/// Captured frame with ground truth from the pre-blur hit data.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub image: RgbImage,
    /// Stripe index where the hit point is lit by a stripe.
    pub gt_stripe_id: Grid<Option<u32>>,
    /// Camera-frame depth wherever the ray hits the surface.
    pub gt_depth: Grid<Option<f64>>,
    /// Index of the material region at the hit point.
    pub gt_region: Grid<Option<u16>>,
    /// Projector column coordinate where the hit point is lit.
    pub gt_projector_x: Grid<Option<f64>>,
}

/// Per-pixel geometry, independent of the projected image.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PixelGeometry {
    depth: f64,
    g_theta: f64,
    material: Material,
    /// Projector image coordinates when the point is unshadowed and in front of the projector.
    projector: Option<(f64, f64)>,
}

/// Ray-cast result shared by every frame of a capture.
#[derive(Debug, Clone)]
pub struct GeometryPass {
    pixels: Grid<Option<PixelGeometry>>,
}

impl GeometryPass {
    pub fn new(scene: &SceneSpec, rig: &RigCalibration) -> Result<Self, SceneError> {
        let cam = rig.camera();
        let center = *rig.translation();
        let rows: Vec<Vec<Option<PixelGeometry>>> = (0..cam.height)
            .into_par_iter()
            .map(|v| (0..cam.width).map(|u| pixel_geometry(scene, rig, &center, u, v)).collect())
            .collect();
        let pixels = Grid::from_vec(cam.width, cam.height, rows.into_iter().flatten().collect());
        if pixels.as_slice().iter().all(Option::is_none) {
            return Err(SceneError::NoVisibility);
        }
        Ok(Self { pixels })
    }

    /// Noise-free image, ground truth included.
    fn illuminate(&self, pattern: &ProjectorImage) -> RenderedFrame {
        let (w, h) = (self.pixels.width(), self.pixels.height());
        let mut frame = RenderedFrame {
            image: Grid::new(w, h, Rgb::BLACK),
            gt_stripe_id: Grid::new(w, h, None),
            gt_depth: Grid::new(w, h, None),
            gt_region: Grid::new(w, h, None),
            gt_projector_x: Grid::new(w, h, None),
        };
        for y in 0..h {
            for x in 0..w {
                let Some(px) = self.pixels.get(x, y) else { continue };
                let lit = px.projector.filter(|&(sx, sy)| {
                    sx >= 0.0 && sy >= 0.0 && sx < pattern.image.width() as f64 && sy < pattern.image.height() as f64
                });
                let illum = lit.map_or(Rgb::BLACK, |(sx, sy)| pattern.sample(sx, sy));
                let ctx = ShadingContext { g_theta: px.g_theta, ambient: px.material.ambient };
                frame.image.set(x, y, image_irradiance(&ctx, px.material.reflectance, illum));
                frame.gt_depth.set(x, y, Some(px.depth));
                frame.gt_region.set(x, y, px.material.region);
                if let Some((sx, _)) = lit {
                    frame.gt_projector_x.set(x, y, Some(sx));
                    frame.gt_stripe_id.set(x, y, pattern.stripe_at(sx).map(|s| s as u32));
                }
            }
        }
        frame
    }

    /// Render one frame: illuminate, blur, add noise, clip, quantize.
    pub fn render(&self, pattern: &ProjectorImage, noise: &NoiseParams, seed: u64) -> Result<RenderedFrame, SceneError> {
        noise.validate()?;
        let mut frame = self.illuminate(pattern);
        frame.image = degrade(&frame.image, noise, seed);
        Ok(frame)
    }
}

fn pixel_geometry(
    scene: &SceneSpec,
    rig: &RigCalibration,
    proj_center: &Vector3<f64>,
    u: usize,
    v: usize,
) -> Option<PixelGeometry> {
    let dir = rig.camera().pixel_ray(u, v);
    let hit = scene.surface.intersect(&Vector3::zeros(), &dir)?;
    let p = hit.point;
    let n = if hit.normal.dot(&dir) > 0.0 { -hit.normal } else { hit.normal };
    let to_proj = proj_center - p;
    let l = to_proj.normalize();
    let material = scene.material_at(&p);
    let g_theta = n.dot(&l).max(0.0) * material.shading;

    // Lit only if the segment from the projector reaches p unobstructed.
    let shadowed = scene
        .surface
        .intersect(proj_center, &(p - proj_center))
        .is_some_and(|h| h.t < 1.0 - 1e-7);
    let projector = if shadowed || n.dot(&l) <= 0.0 {
        None
    } else {
        rig.projector().project(&rig.camera_to_projector(&p))
    };
    Some(PixelGeometry { depth: p.z, g_theta, material, projector })
}

/// Blur, additive Gaussian noise (one ChaCha stream per row), clip and quantize.
pub fn degrade(img: &RgbImage, noise: &NoiseParams, seed: u64) -> RgbImage {
    let mut out = gaussian_blur(img, noise.blur_sigma);
    let w = out.width();
    let normal = (noise.noise_sigma > 0.0).then(|| Normal::new(0.0, noise.noise_sigma).expect("sigma validated"));
    out.as_mut_slice().par_chunks_mut(w.max(1)).enumerate().for_each(|(row, pixels)| {
        let mut rng = normal.map(|_| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(row as u64);
            r
        });
        for p in pixels.iter_mut() {
            if let (Some(dist), Some(rng)) = (normal.as_ref(), rng.as_mut()) {
                *p = Rgb::new(p.r + dist.sample(rng), p.g + dist.sample(rng), p.b + dist.sample(rng));
            }
            if noise.clip {
                *p = p.map(|c| c.clamp(0.0, 1.0));
            }
            if let Some(depth) = noise.bit_depth {
                *p = p.map(|c| dequantize(quantize(c, depth), depth));
            }
        }
    });
    out
}

/// Per-frame seed derived from a capture seed (splitmix64 finalizer).
pub fn frame_seed(seed: u64, frame: u64) -> u64 {
    let mut z = seed.wrapping_add(frame.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_pattern_size(rig: &RigCalibration, pattern: &ProjectorImage) -> Result<(), SceneError> {
    let expected = (rig.projector().width, rig.projector().height);
    let found = (pattern.image.width(), pattern.image.height());
    if expected != found {
        return Err(SceneError::PatternSize { expected, found });
    }
    Ok(())
}

pub fn render_frame(
    scene: &SceneSpec,
    rig: &RigCalibration,
    pattern: &ProjectorImage,
    noise: &NoiseParams,
    seed: u64,
) -> Result<RenderedFrame, SceneError> {
    check_pattern_size(rig, pattern)?;
    GeometryPass::new(scene, rig)?.render(pattern, noise, seed)
}

/// Both frames of a two-shot capture, sharing geometry and drawing independent noise.
pub fn render_two_shot(
    scene: &SceneSpec,
    rig: &RigCalibration,
    pair: &TwoShotPatternPair,
    stripe_width: usize,
    noise: &NoiseParams,
    seed: u64,
) -> Result<(RenderedFrame, RenderedFrame), SceneError> {
    let size = (rig.projector().width, rig.projector().height);
    let images = render_pattern_image(&Pattern::TwoShot(pair.clone()), stripe_width, size)?;
    let pass = GeometryPass::new(scene, rig)?;
    Ok((
        pass.render(&images[0], noise, frame_seed(seed, 0))?,
        pass.render(&images[1], noise, frame_seed(seed, 1))?,
    ))
}

/// Ambient-only frame (projector dark).
pub fn render_ambient_frame(
    scene: &SceneSpec,
    rig: &RigCalibration,
    noise: &NoiseParams,
    seed: u64,
) -> Result<RenderedFrame, SceneError> {
    let black = ProjectorImage::black(rig.projector().width, rig.projector().height);
    GeometryPass::new(scene, rig)?.render(&black, noise, frame_seed(seed, 2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{CodeAlphabet, ChannelSet, Levels};
    use crate::radiometry::hue_saturation;

    fn rig(tx: f64, ry: f64) -> RigCalibration {
        let cam = Pinhole::new(800.0, 320.0, 240.0, 640, 480).unwrap();
        let proj = Pinhole::new(400.0, 192.0, 150.0, 384, 300).unwrap();
        RigCalibration::new(cam, proj, Rotation3::new(Vector3::new(0.0, ry, 0.0)).into_inner(), Vector3::new(tx, 0.0, 0.0))
            .unwrap()
    }

    fn plane_scene(depth: f64) -> SceneSpec {
        SceneSpec::new(Surface::plane(Vector3::new(0.0, 0.0, depth), Vector3::new(0.0, 0.0, -1.0)).unwrap())
    }

    fn one_shot(codes: Vec<u8>, k: usize) -> StripeSequence {
        StripeSequence::new(CodeAlphabet::one_shot(3).unwrap(), codes, k, 2).unwrap()
    }

    #[test]
    fn rig_rejects_bad_rotation_and_zero_baseline() {
        let cam = Pinhole::new(800.0, 320.0, 240.0, 640, 480).unwrap();
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.001;
        assert!(RigCalibration::new(cam, cam, r, Vector3::new(0.1, 0.0, 0.0)).is_err());
        assert!(RigCalibration::new(cam, cam, Matrix3::identity(), Vector3::zeros()).is_err());
        let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        assert!(RigCalibration::new(cam, cam, mirror, Vector3::new(0.1, 0.0, 0.0)).is_err());
        assert!(Pinhole::new(0.0, 0.0, 0.0, 1, 1).is_err());
    }

    #[test]
    fn pattern_image_columns() {
        let seq = one_shot(vec![0, 1, 2], 1);
        let imgs = render_pattern_image(&Pattern::OneShot(seq), 1, (3, 2)).unwrap();
        assert_eq!(imgs.len(), 1);
        assert_eq!(*imgs[0].image.get(0, 1), Rgb::new(1.0, 0.0, 0.0));
        assert_eq!(*imgs[0].image.get(1, 0), Rgb::new(0.0, 1.0, 0.0));
        assert_eq!(*imgs[0].image.get(2, 0), Rgb::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn pattern_overflow() {
        let seq = one_shot(vec![0, 1, 2], 1);
        let err = render_pattern_image(&Pattern::OneShot(seq), 2, (5, 1)).unwrap_err();
        assert!(matches!(err, SceneError::PatternOverflow { stripes: 3, stripe_width: 2, width: 5 }));
    }

    #[test]
    fn two_shot_images_swap_levels() {
        let seq = StripeSequence::new(CodeAlphabet::two_shot(ChannelSet::gb()), vec![0, 1, 3, 2], 1, 1).unwrap();
        let pair = TwoShotPatternPair::new(seq, Levels { min: 0.2, max: 0.9 }).unwrap();
        let imgs = render_pattern_image(&Pattern::TwoShot(pair), 2, (10, 1)).unwrap();
        for x in 0..8 {
            let (a, b) = (imgs[0].image.get(x, 0), imgs[1].image.get(x, 0));
            assert_eq!((a.r, b.r), (0.0, 0.0));
            assert!((a.g + b.g - 1.1).abs() < 1e-12 && a.g != b.g);
            assert!((a.b + b.b - 1.1).abs() < 1e-12 && a.b != b.b);
        }
        assert_eq!(*imgs[0].image.get(9, 0), Rgb::BLACK);
    }

    #[test]
    fn column_to_stripe_round_trip() {
        let seq = one_shot(vec![0, 1, 2, 0, 2, 1, 0], 1);
        let img = &render_pattern_image(&Pattern::OneShot(seq.clone()), 3, (25, 1)).unwrap()[0];
        let recovered: Vec<u8> = (0..seq.len())
            .map(|s| {
                let x = s * 3 + 1;
                assert_eq!(img.stripe_at(x as f64 + 0.5), Some(s));
                (0..3u8).find(|&k| one_shot_color(k) == Some(*img.image.get(x, 0))).unwrap()
            })
            .collect();
        assert_eq!(img.stripe_at(21.5), None);
        assert_eq!(recovered, seq.codes());
    }

    #[test]
    fn solid_red_is_uniform_on_fronto_plane() {
        let rig = rig(0.3, 0.0);
        let red = ProjectorImage { image: Grid::new(384, 300, Rgb::new(1.0, 0.0, 0.0)), stripe_width: 1, stripes: 384 };
        let f = render_frame(&plane_scene(1.0), &rig, &red, &NoiseParams::ideal(), 0).unwrap();
        let mut count = 0;
        for y in (0..480).step_by(7) {
            for x in 0..640 {
                if !f.gt_projector_x.get(x, y).is_some_and(|px| px > 1.0 && px < 383.0) {
                    continue;
                }
                let ray = rig.camera().pixel_ray(x, y);
                let p = ray * (1.0 / ray.z);
                let cos = (rig.translation() - p).normalize().dot(&Vector3::new(0.0, 0.0, -1.0));
                let px = f.image.get(x, y);
                assert_eq!((px.g, px.b), (0.0, 0.0));
                assert!((px.r - cos).abs() < 1e-12);
                count += 1;
            }
        }
        assert!(count > 10_000);
    }

    #[test]
    fn gt_depth_matches_ray_plane_oracle() {
        let rig = rig(0.3, -0.2915);
        let normal = Vector3::new(0.2, -0.1, -1.0).normalize();
        let point = Vector3::new(0.0, 0.0, 1.2);
        let scene = SceneSpec::new(Surface::plane(point, normal).unwrap());
        let f = render_frame(&scene, &rig, &ProjectorImage::black(384, 300), &NoiseParams::ideal(), 0).unwrap();
        for (x, y) in [(0usize, 0usize), (320, 240), (639, 479), (17, 400)] {
            let ray = rig.camera().pixel_ray(x, y);
            let z = normal.dot(&point) / normal.dot(&ray) * ray.z;
            let got = f.gt_depth.get(x, y).unwrap();
            assert!((got - z).abs() <= 1e-9 * z);
        }
    }

    #[test]
    fn boundary_pixels_mix_hues() {
        let rig = rig(0.3, -0.2915);
        let codes: Vec<u8> = (0..384).map(|i| [0u8, 1][i % 2]).collect();
        let seq = one_shot(codes, 1);
        let img = &render_pattern_image(&Pattern::OneShot(seq), 1, (384, 300)).unwrap()[0];
        let noise = NoiseParams { blur_sigma: 0.7, ..NoiseParams::ideal() };
        let f = render_frame(&plane_scene(1.0), &rig, img, &noise, 0).unwrap();
        let y = 240;
        let mut mixed = 0;
        for x in 1..639 {
            let (a, b) = (f.gt_stripe_id.get(x, y), f.gt_stripe_id.get(x + 1, y));
            if let (Some(a), Some(b)) = (a, b) {
                if a != b {
                    let (hue, _) = hue_saturation(*f.image.get(x, y));
                    let (hue2, _) = hue_saturation(*f.image.get(x + 1, y));
                    assert!(hue > 0.0 && hue < 120.0 || hue2 > 0.0 && hue2 < 120.0, "x={x}");
                    mixed += 1;
                }
            }
        }
        assert!(mixed > 100);
    }

    #[test]
    fn ambient_only_frame_is_g_s_a() {
        let rig = rig(0.3, -0.2915);
        let mut scene = plane_scene(1.0);
        scene.ambient = Rgb::new(0.1, 0.2, 0.3);
        scene.reflectance = SurfaceReflectance::new(0.5, 0.6, 0.7).unwrap();
        let pass = GeometryPass::new(&scene, &rig).unwrap();
        let f = pass.render(&ProjectorImage::black(384, 300), &NoiseParams::ideal(), 0).unwrap();
        for y in (0..480).step_by(37) {
            for x in (0..640).step_by(41) {
                let g = pass.pixels.get(x, y).unwrap().g_theta;
                let p = f.image.get(x, y);
                assert!((p.r - g * 0.05).abs() < 1e-15 && (p.g - g * 0.12).abs() < 1e-15);
                assert!((p.b - g * 0.21).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rendering_is_deterministic_and_clipped() {
        let rig = rig(0.3, -0.2915);
        let mut scene = plane_scene(1.0);
        scene.ambient = Rgb::splat(0.5);
        let img = ProjectorImage { image: Grid::new(384, 300, Rgb::splat(0.8)), stripe_width: 1, stripes: 384 };
        let noise = NoiseParams { blur_sigma: 0.5, noise_sigma: 0.05, bit_depth: Some(BitDepth::Eight), clip: true };
        let a = render_frame(&scene, &rig, &img, &noise, 9).unwrap();
        let b = render_frame(&scene, &rig, &img, &noise, 9).unwrap();
        let c = render_frame(&scene, &rig, &img, &noise, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.image, c.image);
        assert!(a.image.as_slice().iter().all(|p| p.min_component() >= 0.0 && p.max_component() <= 1.0));
    }

    #[test]
    fn no_visibility_error() {
        let rig = rig(0.3, 0.0);
        let behind = SceneSpec::new(Surface::plane(Vector3::new(0.0, 0.0, -1.0), Vector3::z()).unwrap());
        let err = render_frame(&behind, &rig, &ProjectorImage::black(384, 300), &NoiseParams::ideal(), 0);
        assert!(matches!(err, Err(SceneError::NoVisibility)));
    }

    #[test]
    fn cylinder_self_shadows_and_hits_front() {
        let rig = rig(0.3, -0.2915);
        let scene = SceneSpec::new(
            Surface::cylinder(Vector3::new(0.0, 0.0, 1.2), Vector3::y(), 0.4).unwrap(),
        );
        let f = render_frame(&scene, &rig, &ProjectorImage::black(384, 300), &NoiseParams::ideal(), 0).unwrap();
        let z = f.gt_depth.get(319, 239).unwrap();
        assert!((z - 0.8).abs() < 1e-3);
        let hit = scene.surface.intersect(&Vector3::zeros(), &rig.camera().pixel_ray(100, 240)).unwrap();
        let radial = hit.point - Vector3::new(0.0, hit.point.y, 1.2);
        assert!((radial.norm() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn heightfield_intersection_matches_plane() {
        // A tilted planar heightfield must agree with the analytic plane.
        let (nx, ny, cell) = (41, 31, 0.05);
        let origin = (-1.0, -0.75);
        let depth = |x: f64, y: f64| 1.0 + 0.2 * x - 0.1 * y;
        let depths = (0..ny)
            .flat_map(|j| (0..nx).map(move |i| depth(origin.0 + i as f64 * cell, origin.1 + j as f64 * cell)))
            .collect();
        let hf = Surface::Heightfield(Heightfield::new(origin, cell, nx, ny, depths).unwrap());
        let plane = Surface::plane(Vector3::new(0.0, 0.0, 1.0), Vector3::new(0.2, -0.1, -1.0)).unwrap();
        let cam = Pinhole::new(800.0, 320.0, 240.0, 640, 480).unwrap();
        for (u, v) in [(0, 0), (320, 240), (600, 50), (10, 470)] {
            let d = cam.pixel_ray(u, v);
            let a = hf.intersect(&Vector3::zeros(), &d).unwrap();
            let b = plane.intersect(&Vector3::zeros(), &d).unwrap();
            assert!((a.point - b.point).norm() < 1e-9);
            let Surface::Plane { normal, .. } = plane else { unreachable!() };
            assert!(a.normal.dot(&normal).abs() > 1.0 - 1e-9);
        }
    }

    #[test]
    fn regions_override_material() {
        let mut scene = plane_scene(1.0);
        scene.regions.push(Region {
            rect: [-0.1, -0.1, 0.1, 0.1],
            reflectance: SurfaceReflectance::new(1.0, 0.05, 0.05),
            ambient: None,
            shading: Some(0.5),
        });
        let m = scene.material_at(&Vector3::new(0.0, 0.0, 1.0));
        assert_eq!(m.region, Some(0));
        assert_eq!(m.shading, 0.5);
        assert_eq!(scene.material_at(&Vector3::new(0.5, 0.0, 1.0)).region, None);
    }
}
