//! Scoring decoded IDs and reconstructions against simulator ground truth,
//! and an end-to-end runner used for method comparisons.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::decode::{decode, Capture, DecodeError, DecodeParams, DecodeStats, Decoded, Method, StripeIdMap};
use crate::geometry::{depth_buffer, depth_from_buffer, reconstruct, GeometryError, RangeImage};
use crate::image::{buffer_to_labels, labels_to_buffer, Grid};
use crate::io::{read_pnm, write_pnm, FormatError, Report};
use crate::pattern::Pattern;
use crate::scene::{
    frame_seed, render_pattern_image, GeometryPass, NoiseParams, ProjectorImage, RenderedFrame, RigCalibration,
    SceneError, SceneSpec,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Ground-truth depth files store this many meters per unit.
pub const GT_DEPTH_SCALE: f64 = 1e-4;

/// Simulator ground truth for one capture.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub stripe_id: Grid<Option<u32>>,
    pub depth: Grid<Option<f64>>,
    pub region: Grid<Option<u16>>,
}

impl From<&RenderedFrame> for GroundTruth {
    fn from(f: &RenderedFrame) -> Self {
        Self { stripe_id: f.gt_stripe_id.clone(), depth: f.gt_depth.clone(), region: f.gt_region.clone() }
    }
}

impl GroundTruth {
    /// Writes `<prefix>_id.pgm`, `<prefix>_depth.pgm` and `<prefix>_region.pgm`.
    pub fn write(&self, dir: &Path, prefix: &str) -> Result<(), PipelineError> {
        write_pnm(&labels_to_buffer(&self.stripe_id)?, dir.join(format!("{prefix}_id.pgm")))?;
        write_pnm(&depth_buffer(&self.depth, GT_DEPTH_SCALE)?, dir.join(format!("{prefix}_depth.pgm")))?;
        let region = self.region.map(|r| r.map(u32::from));
        write_pnm(&labels_to_buffer(&region)?, dir.join(format!("{prefix}_region.pgm")))?;
        Ok(())
    }

    pub fn read(dir: &Path, prefix: &str) -> Result<Self, PipelineError> {
        let stripe_id = buffer_to_labels(&read_pnm(dir.join(format!("{prefix}_id.pgm")))?)?;
        let depth = depth_from_buffer(&read_pnm(dir.join(format!("{prefix}_depth.pgm")))?, GT_DEPTH_SCALE)?;
        let region = buffer_to_labels(&read_pnm(dir.join(format!("{prefix}_region.pgm")))?)?
            .map(|r| r.map(|v| v as u16));
        if !stripe_id.same_size(&depth) || !stripe_id.same_size(&region) {
            return Err(FormatError::MalformedHeader("ground-truth layers differ in size".into()).into());
        }
        Ok(Self { stripe_id, depth, region })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvaluationReport {
    pub method: Option<Method>,
    pub stats: Option<DecodeStats>,
    /// Pixels with a ground-truth stripe inside the evaluation mask.
    pub gt_pixels: usize,
    /// Ground-truth pixels given their true ID.
    pub correct_id_pct: f64,
    /// Ground-truth pixels left without an ID.
    pub abstained_pct: f64,
    /// Ground-truth pixels given a wrong ID.
    pub wrong_id_pct: f64,
    pub depth_pixels: usize,
    pub depth_rms_m: Option<f64>,
    pub depth_rms_pct: Option<f64>,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

/// Score `ids` (and optionally reconstructed `depth`) against `gt`, restricted to `mask` when given.
pub fn evaluate(
    ids: &StripeIdMap,
    gt: &GroundTruth,
    mask: Option<&Grid<bool>>,
    depth: Option<&Grid<Option<f64>>>,
) -> EvaluationReport {
    let inside = |x: usize, y: usize| mask.is_none_or(|m| *m.get(x, y));
    let (mut gt_px, mut correct, mut unknown, mut wrong) = (0, 0, 0, 0);
    let (mut sq, mut depth_sum, mut depth_px) = (0.0, 0.0, 0usize);
    for y in 0..ids.height() {
        for x in 0..ids.width() {
            if !inside(x, y) {
                continue;
            }
            if let Some(truth) = *gt.stripe_id.get(x, y) {
                gt_px += 1;
                let ok = *ids.get(x, y) == Some(truth);
                correct += ok as usize;
                match ids.get(x, y) {
                    None => unknown += 1,
                    Some(_) if !ok => wrong += 1,
                    _ => {}
                }
            }
            if let (Some(r), Some(z)) = (depth, *gt.depth.get(x, y)) {
                if let Some(d) = *r.get(x, y) {
                    sq += (d - z).powi(2);
                    depth_sum += z;
                    depth_px += 1;
                }
            }
        }
    }
    let rms = (depth_px > 0).then(|| (sq / depth_px as f64).sqrt());
    EvaluationReport {
        method: None,
        stats: None,
        gt_pixels: gt_px,
        correct_id_pct: pct(correct, gt_px),
        abstained_pct: pct(unknown, gt_px),
        wrong_id_pct: pct(wrong, gt_px),
        depth_pixels: depth_px,
        depth_rms_m: rms,
        depth_rms_pct: rms.map(|r| 100.0 * r / (depth_sum / depth_px as f64)),
    }
}

/// Mask selecting pixels whose ground-truth region is `region`.
pub fn region_mask(gt: &GroundTruth, region: u16) -> Grid<bool> {
    gt.region.map(|r| *r == Some(region))
}

impl EvaluationReport {
    pub fn with_decode(mut self, decoded: &Decoded) -> Self {
        self.method = Some(decoded.method);
        self.stats = Some(decoded.stats);
        self
    }

    /// Keys under `<prefix>.`.
    pub fn to_report(&self, prefix: &str) -> Report {
        let mut r = Report::new();
        let key = |k: &str| format!("{prefix}.{k}");
        if let Some(m) = self.method {
            r.push(key("method"), m.name());
        }
        if let Some(s) = &self.stats {
            r.push(key("labeled_pct"), format!("{:.4}", s.labeled_pct()));
            r.push(key("run_count"), s.run_count);
            r.push(key("matched_pct"), format!("{:.4}", s.matched_pct()));
            r.push(key("disambiguation_count"), s.disambiguated);
            r.push(key("monotonic_violations"), s.monotonic_violations);
        }
        r.push(key("gt_pixels"), self.gt_pixels);
        r.push(key("correct_id_pct"), format!("{:.4}", self.correct_id_pct));
        r.push(key("abstained_pct"), format!("{:.4}", self.abstained_pct));
        r.push(key("wrong_id_pct"), format!("{:.4}", self.wrong_id_pct));
        if let (Some(m), Some(p)) = (self.depth_rms_m, self.depth_rms_pct) {
            r.push(key("depth_rms_m"), format!("{m:.6e}"));
            r.push(key("depth_rms_pct"), format!("{p:.4}"));
        }
        r
    }
}

/// Side-by-side table of reports, one column per entry.
pub fn comparison_table(columns: &[(String, EvaluationReport)]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<22}", "metric");
    for (name, _) in columns {
        let _ = write!(out, "{name:>14}");
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.3}"));
    type Row = (&'static str, fn(&EvaluationReport) -> Option<f64>);
    let rows: [Row; 8] = [
        ("labeled_pct", |r| r.stats.map(|s| s.labeled_pct())),
        ("run_count", |r| r.stats.map(|s| s.run_count as f64)),
        ("matched_pct", |r| r.stats.map(|s| s.matched_pct())),
        ("correct_id_pct", |r| Some(r.correct_id_pct)),
        ("abstained_pct", |r| Some(r.abstained_pct)),
        ("wrong_id_pct", |r| Some(r.wrong_id_pct)),
        ("depth_rms_pct", |r| r.depth_rms_pct),
        ("disambiguation_count", |r| r.stats.map(|s| s.disambiguated as f64)),
    ];
    for (name, f) in rows {
        let _ = write!(out, "{name:<22}");
        for (_, r) in columns {
            let _ = write!(out, "{:>14}", opt(f(r)));
        }
        out.push('\n');
    }
    out
}

/// Least-squares plane through `points`: unit normal, offset, and RMS of the
/// orthogonal residuals. `None` for fewer than 3 points.
pub fn fit_plane(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, f64, f64)> {
    if points.len() < 3 {
        return None;
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (i, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal = eig.eigenvectors.column(i).normalize();
    let offset = normal.dot(&centroid);
    let rms = (points.iter().map(|p| (normal.dot(p) - offset).powi(2)).sum::<f64>() / n).sqrt();
    Some((normal, offset, rms))
}

/// Scene, rig and sensor settings shared by every method in a comparison.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub scene: SceneSpec,
    pub rig: RigCalibration,
    pub stripe_width: usize,
    pub noise: NoiseParams,
    pub params: DecodeParams,
    pub seed: u64,
}

/// Frames rendered for one pattern.
#[derive(Debug, Clone)]
pub struct Captured {
    /// One frame for one-shot; first, second and ambient-only for two-shot.
    pub frames: Vec<RenderedFrame>,
    pub gt: GroundTruth,
}

impl Experiment {
    pub fn capture(&self, pattern: &Pattern) -> Result<Captured, PipelineError> {
        let size = (self.rig.projector().width, self.rig.projector().height);
        let images = render_pattern_image(pattern, self.stripe_width, size)?;
        let pass = GeometryPass::new(&self.scene, &self.rig)?;
        let mut frames = images
            .iter()
            .enumerate()
            .map(|(i, img)| pass.render(img, &self.noise, frame_seed(self.seed, i as u64)))
            .collect::<Result<Vec<_>, _>>()?;
        if pattern.is_two_shot() {
            frames.push(pass.render(&ProjectorImage::black(size.0, size.1), &self.noise, frame_seed(self.seed, 2))?);
        }
        let gt = GroundTruth::from(&frames[0]);
        Ok(Captured { frames, gt })
    }

    /// Decode `captured` with `method`, reconstruct and score.
    pub fn run(&self, pattern: &Pattern, captured: &Captured, method: Method) -> Result<MethodRun, PipelineError> {
        let f = &captured.frames;
        let capture = match method {
            Method::Hue => Capture::OneShot(&f[0].image),
            Method::Sign => Capture::TwoShot(&f[0].image, &f[1].image),
            Method::Ratio => Capture::Ratio(&f[0].image, &f[1].image, &f[2].image),
        };
        let decoded = decode(pattern, capture, &self.params)?;
        let range = reconstruct(&decoded.ids, &self.rig, pattern.sequence(), self.stripe_width)?;
        let report = evaluate(&decoded.ids, &captured.gt, None, Some(&range.depth)).with_decode(&decoded);
        Ok(MethodRun { decoded, range, report })
    }
}

#[derive(Debug, Clone)]
pub struct MethodRun {
    pub decoded: Decoded,
    pub range: RangeImage,
    pub report: EvaluationReport,
}
