//! Ray-plane triangulation of decoded stripe IDs.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;

use crate::decode::StripeIdMap;
use crate::image::Grid;
use crate::io::{encode_ply, write_pnm, BitDepth, FormatError, ImageBuffer, Report};
use crate::pattern::StripeSequence;
use crate::scene::RigCalibration;

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("stripe {id} is outside the sequence of {len} stripes")]
    StripeOutOfRange { id: usize, len: usize },
    #[error("stripe width must be at least 1")]
    ZeroStripeWidth,
    #[error("ID map is {found:?}, camera is {expected:?}")]
    SizeMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("depth scale must be positive")]
    BadDepthScale,
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Plane `normal . X = offset` in camera coordinates, `normal` of unit length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LightPlane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl LightPlane {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Plane through the projector center and the vertical projector line at the
/// stripe's center column `(id + 0.5) * stripe_width`.
pub fn stripe_plane(
    rig: &RigCalibration,
    stripe_id: usize,
    seq: &StripeSequence,
    stripe_width: usize,
) -> Result<LightPlane, GeometryError> {
    if stripe_width == 0 {
        return Err(GeometryError::ZeroStripeWidth);
    }
    if stripe_id >= seq.len() {
        return Err(GeometryError::StripeOutOfRange { id: stripe_id, len: seq.len() });
    }
    let proj = rig.projector();
    let column = (stripe_id as f64 + 0.5) * stripe_width as f64;
    // Spanned by the vertical direction and the ray through (column, cy).
    let n_proj = Vector3::new(1.0, 0.0, -(column - proj.cx) / proj.focal_px).normalize();
    let normal = rig.rotation() * n_proj;
    Ok(LightPlane { normal, offset: normal.dot(rig.translation()) })
}

/// Depth of the intersection of the ray through image point `(x, y)` with `plane`;
/// `None` for near-parallel rays or hits behind the camera.
pub fn triangulate_pixel(rig: &RigCalibration, pixel: (f64, f64), plane: &LightPlane) -> Option<f64> {
    let ray = rig.camera().ray(pixel.0, pixel.1);
    let denom = plane.normal.dot(&ray);
    if denom.abs() < 1e-8 {
        return None;
    }
    let depth = plane.offset / denom;
    (depth.is_finite() && depth > 0.0).then_some(depth)
}

/// Per-pixel camera-frame depth (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct RangeImage {
    pub depth: Grid<Option<f64>>,
    focal_px: f64,
    cx: f64,
    cy: f64,
}

impl RangeImage {
    pub fn new(rig: &RigCalibration, depth: Grid<Option<f64>>) -> Self {
        let cam = rig.camera();
        Self { depth, focal_px: cam.focal_px, cx: cam.cx, cy: cam.cy }
    }

    pub fn valid_count(&self) -> usize {
        self.depth.as_slice().iter().flatten().count()
    }

    /// Camera-frame point for pixel `(x, y)` if its depth is valid.
    pub fn point(&self, x: usize, y: usize) -> Option<Vector3<f64>> {
        let z = (*self.depth.get(x, y))?;
        let ray = Vector3::new(
            (x as f64 + 0.5 - self.cx) / self.focal_px,
            (y as f64 + 0.5 - self.cy) / self.focal_px,
            1.0,
        );
        Some(ray * z)
    }

    /// Valid points in row-major pixel order.
    pub fn points(&self) -> Vec<Vector3<f64>> {
        (0..self.depth.height())
            .flat_map(|y| (0..self.depth.width()).map(move |x| (x, y)))
            .filter_map(|(x, y)| self.point(x, y))
            .collect()
    }
}

/// Triangulate every identified pixel through its stripe's light plane.
pub fn reconstruct(
    ids: &StripeIdMap,
    rig: &RigCalibration,
    seq: &StripeSequence,
    stripe_width: usize,
) -> Result<RangeImage, GeometryError> {
    let cam = rig.camera();
    if (ids.width(), ids.height()) != (cam.width, cam.height) {
        return Err(GeometryError::SizeMismatch {
            expected: (cam.width, cam.height),
            found: (ids.width(), ids.height()),
        });
    }
    let planes = (0..seq.len())
        .map(|id| stripe_plane(rig, id, seq, stripe_width))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<Option<f64>>> = (0..ids.height())
        .into_par_iter()
        .map(|y| {
            (0..ids.width())
                .map(|x| {
                    let id = (*ids.get(x, y))? as usize;
                    let plane = planes.get(id)?;
                    triangulate_pixel(rig, (x as f64 + 0.5, y as f64 + 0.5), plane)
                })
                .collect()
        })
        .collect();
    let depth = Grid::from_vec(ids.width(), ids.height(), rows.into_iter().flatten().collect());
    Ok(RangeImage::new(rig, depth))
}

/// ASCII PLY of the valid points, camera frame, meters.
pub fn export_ply(range: &RangeImage, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    let points: Vec<[f64; 3]> = range.points().iter().map(|p| [p.x, p.y, p.z]).collect();
    std::fs::write(path, encode_ply(&points)).map_err(FormatError::Io)?;
    Ok(())
}

/// 16-bit depth image in units of `depth_scale` meters; 0 marks invalid pixels.
/// Depths beyond the representable range are clamped to 65535.
pub fn depth_buffer(depth: &Grid<Option<f64>>, depth_scale: f64) -> Result<ImageBuffer, GeometryError> {
    if !(depth_scale.is_finite() && depth_scale > 0.0) {
        return Err(GeometryError::BadDepthScale);
    }
    let samples = depth
        .as_slice()
        .iter()
        .map(|d| d.map_or(0, |z| (z / depth_scale).round().clamp(1.0, u16::MAX as f64) as u16))
        .collect();
    Ok(ImageBuffer::new(depth.width(), depth.height(), 1, BitDepth::Sixteen, samples)?)
}

/// Writes the depth PGM and a `<path>.meta` sidecar with `depth_scale` and `invalid`.
pub fn export_depth_pgm(range: &RangeImage, path: impl AsRef<Path>, depth_scale: f64) -> Result<(), GeometryError> {
    let path = path.as_ref();
    write_pnm(&depth_buffer(&range.depth, depth_scale)?, path)?;
    let mut meta = Report::new();
    meta.push("depth_scale", depth_scale);
    meta.push("invalid", 0);
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".meta");
    std::fs::write(sidecar, meta.encode()).map_err(FormatError::Io)?;
    Ok(())
}

/// Depth grid from a depth PGM and its scale; 0 becomes `None`.
pub fn depth_from_buffer(buf: &ImageBuffer, depth_scale: f64) -> Result<Grid<Option<f64>>, GeometryError> {
    if buf.channels() != 1 {
        return Err(FormatError::MalformedHeader("depth map must be grayscale".into()).into());
    }
    let data = buf.samples().iter().map(|&s| (s != 0).then_some(s as f64 * depth_scale)).collect();
    Ok(Grid::from_vec(buf.width(), buf.height(), data))
}
