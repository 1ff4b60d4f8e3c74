//! Stripe identification: per-pixel labeling, scanline run segmentation,
//! window matching and repeated-window disambiguation.

use std::path::Path;

use rayon::prelude::*;

use crate::image::{buffer_to_labels, labels_to_buffer, Grid, RgbImage};
use crate::io::{read_pnm, write_pnm, Config, FormatError, Report};
use crate::pattern::{build_window_index, ChannelSet, Levels, Pattern, StripeSequence, WindowIndex};
use crate::radiometry::{
    channel_differences, channel_ratios, hue_classify, hue_distance, hue_saturation, ratio_code, sign_code,
    HueThresholds, Rgb, DEFAULT_DEAD_ZONE, DEFAULT_RATIO_EPSILON,
};

#[derive(Debug, thiserror::Error)]
pub enum DecodeError {
    #[error("frame sizes differ: {0:?} vs {1:?}")]
    SizeMismatch((usize, usize), (usize, usize)),
    #[error("{0}")]
    ModeMismatch(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Per-pixel code or abstention.
pub type LabelMap = Grid<Option<u8>>;

/// Per-pixel global stripe index or unknown.
pub type StripeIdMap = Grid<Option<u32>>;

/// Per-pixel classifier over one capture.
pub trait PixelLabeler: Sync {
    fn size(&self) -> (usize, usize);
    fn label(&self, x: usize, y: usize) -> Option<u8>;
    /// Nonnegative weight for run centroids.
    fn weight(&self, x: usize, y: usize) -> f64;
    /// How well `code` explains the pixel; larger is better.
    fn affinity(&self, x: usize, y: usize, code: u8) -> f64;
}

/// Hue classification of a one-shot frame.
pub struct HueLabeler<'a> {
    frame: &'a RgbImage,
    thresholds: HueThresholds,
}

impl<'a> HueLabeler<'a> {
    pub fn new(frame: &'a RgbImage, thresholds: HueThresholds) -> Self {
        Self { frame, thresholds }
    }
}

impl PixelLabeler for HueLabeler<'_> {
    fn size(&self) -> (usize, usize) {
        (self.frame.width(), self.frame.height())
    }

    fn label(&self, x: usize, y: usize) -> Option<u8> {
        hue_classify(*self.frame.get(x, y), &self.thresholds)
    }

    fn weight(&self, x: usize, y: usize) -> f64 {
        self.frame.get(x, y).sum()
    }

    fn affinity(&self, x: usize, y: usize, code: u8) -> f64 {
        let (hue, _) = hue_saturation(*self.frame.get(x, y));
        self.thresholds.centers.get(code as usize).map_or(f64::NEG_INFINITY, |&c| -hue_distance(hue, c))
    }
}

fn same_size(a: &RgbImage, b: &RgbImage) -> Result<(), DecodeError> {
    if !a.same_size(b) {
        return Err(DecodeError::SizeMismatch((a.width(), a.height()), (b.width(), b.height())));
    }
    Ok(())
}

/// Signs of per-channel differences between two frames.
pub struct SignLabeler<'a> {
    first: &'a RgbImage,
    second: &'a RgbImage,
    channels: ChannelSet,
    dead_zone: f64,
}

impl<'a> SignLabeler<'a> {
    pub fn new(first: &'a RgbImage, second: &'a RgbImage, channels: ChannelSet, dead_zone: f64) -> Result<Self, DecodeError> {
        same_size(first, second)?;
        Ok(Self { first, second, channels, dead_zone })
    }

    fn delta(&self, x: usize, y: usize) -> Rgb {
        channel_differences(*self.first.get(x, y), *self.second.get(x, y))
    }
}

impl PixelLabeler for SignLabeler<'_> {
    fn size(&self) -> (usize, usize) {
        (self.first.width(), self.first.height())
    }

    fn label(&self, x: usize, y: usize) -> Option<u8> {
        sign_code(self.delta(x, y), &self.channels, self.dead_zone)
    }

    fn weight(&self, x: usize, y: usize) -> f64 {
        let d = self.delta(x, y);
        self.channels.channels().iter().map(|&c| d.channel(c).abs()).sum()
    }

    fn affinity(&self, x: usize, y: usize, code: u8) -> f64 {
        let d = self.delta(x, y);
        self.channels
            .channels()
            .iter()
            .enumerate()
            .map(|(j, &c)| if code >> j & 1 == 1 { d.channel(c) } else { -d.channel(c) })
            .sum()
    }
}

/// Nearest expected per-channel ratio after ambient subtraction.
pub struct RatioLabeler<'a> {
    first: &'a RgbImage,
    second: &'a RgbImage,
    ambient: &'a RgbImage,
    channels: ChannelSet,
    levels: Levels,
    epsilon: f64,
}

impl<'a> RatioLabeler<'a> {
    pub fn new(
        first: &'a RgbImage,
        second: &'a RgbImage,
        ambient: &'a RgbImage,
        channels: ChannelSet,
        levels: Levels,
        epsilon: f64,
    ) -> Result<Self, DecodeError> {
        same_size(first, second)?;
        same_size(first, ambient)?;
        if levels.min <= 0.0 {
            return Err(DecodeError::ModeMismatch("ratio decoding needs a nonzero minimum pattern level".into()));
        }
        Ok(Self { first, second, ambient, channels, levels, epsilon })
    }
}

impl PixelLabeler for RatioLabeler<'_> {
    fn size(&self) -> (usize, usize) {
        (self.first.width(), self.first.height())
    }

    fn label(&self, x: usize, y: usize) -> Option<u8> {
        let (i1, i2, ia) = (*self.first.get(x, y), *self.second.get(x, y), *self.ambient.get(x, y));
        ratio_code(i1, i2, ia, &self.channels, self.levels, self.epsilon)
    }

    fn weight(&self, x: usize, y: usize) -> f64 {
        let d = *self.first.get(x, y) - *self.ambient.get(x, y);
        self.channels.channels().iter().map(|&c| d.channel(c).abs()).sum()
    }

    fn affinity(&self, x: usize, y: usize, code: u8) -> f64 {
        let (i1, i2, ia) = (*self.first.get(x, y), *self.second.get(x, y), *self.ambient.get(x, y));
        let ratios = channel_ratios(i1, i2, ia, self.epsilon);
        let up = self.levels.max / self.levels.min;
        self.channels
            .channels()
            .iter()
            .enumerate()
            .filter_map(|(j, &c)| {
                let r = ratios[c.index()]?;
                let expected = if code >> j & 1 == 1 { up } else { 1.0 / up };
                Some(-(r - expected).abs())
            })
            .sum()
    }
}

pub fn label_map(labeler: &dyn PixelLabeler) -> LabelMap {
    let (w, h) = labeler.size();
    let rows: Vec<Vec<Option<u8>>> =
        (0..h).into_par_iter().map(|y| (0..w).map(|x| labeler.label(x, y)).collect()).collect();
    Grid::from_vec(w, h, rows.into_iter().flatten().collect())
}

fn weight_map(labeler: &dyn PixelLabeler) -> Grid<f64> {
    let (w, h) = labeler.size();
    let rows: Vec<Vec<f64>> =
        (0..h).into_par_iter().map(|y| (0..w).map(|x| labeler.weight(x, y)).collect()).collect();
    Grid::from_vec(w, h, rows.into_iter().flatten().collect())
}

pub fn label_one_shot(frame: &RgbImage, thresholds: &HueThresholds) -> LabelMap {
    label_map(&HueLabeler::new(frame, thresholds.clone()))
}

pub fn label_two_shot(
    first: &RgbImage,
    second: &RgbImage,
    channels: &ChannelSet,
    dead_zone: f64,
) -> Result<LabelMap, DecodeError> {
    Ok(label_map(&SignLabeler::new(first, second, channels.clone(), dead_zone)?))
}

pub fn label_ratio(
    first: &RgbImage,
    second: &RgbImage,
    ambient: &RgbImage,
    channels: &ChannelSet,
    levels: Levels,
    epsilon: f64,
) -> Result<LabelMap, DecodeError> {
    Ok(label_map(&RatioLabeler::new(first, second, ambient, channels.clone(), levels, epsilon)?))
}

/// Maximal same-label span on one scanline; `end` is exclusive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StripeRun {
    pub row: usize,
    pub start: usize,
    pub end: usize,
    /// Weighted centroid column.
    pub center: f64,
    pub label: u8,
}

impl StripeRun {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

fn row_runs(labels: &[Option<u8>], weights: Option<&[f64]>, row: usize, min_run_px: usize) -> Vec<StripeRun> {
    let mut runs = Vec::new();
    let mut x = 0;
    while x < labels.len() {
        let Some(label) = labels[x] else {
            x += 1;
            continue;
        };
        let start = x;
        while x < labels.len() && labels[x] == Some(label) {
            x += 1;
        }
        if x - start < min_run_px.max(1) {
            continue;
        }
        let (mut sw, mut sxw) = (0.0, 0.0);
        for c in start..x {
            let w = weights.map_or(1.0, |w| w[c].max(0.0));
            sw += w;
            sxw += w * c as f64;
        }
        let center = if sw > 0.0 { sxw / sw } else { (start + x - 1) as f64 / 2.0 };
        runs.push(StripeRun { row, start, end: x, center, label });
    }
    runs
}

/// Runs per scanline. Abstentions split runs; runs shorter than `min_run_px` are dropped.
pub fn segment_runs(labels: &LabelMap, weights: Option<&Grid<f64>>, min_run_px: usize) -> Vec<Vec<StripeRun>> {
    (0..labels.height())
        .into_par_iter()
        .map(|y| row_runs(labels.row(y), weights.map(|w| w.row(y)), y, min_run_px))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchParams {
    /// Largest abstained gap (pixels) between runs still treated as adjacent.
    pub max_gap_px: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { max_gap_px: 1 }
    }
}

/// Window lookup for one run: first run of the window and the run's candidate IDs.
struct WindowHit {
    lo: usize,
    ids: Vec<usize>,
}

/// Stripe IDs for the runs of one scanline, plus the number of repeated-window
/// hits that were resolved.
///
/// A run is looked up by the window centered on it. When that window runs off
/// the row or across a gap, the nearest complete window containing the run is
/// used instead. A repeated window is resolved by unique runs whose matched
/// window covers the run, else by image half, so every decision depends only
/// on runs within `k - 1` of it.
pub fn match_row(
    runs: &[StripeRun],
    index: &WindowIndex,
    image_width: usize,
    params: &MatchParams,
) -> (Vec<Option<u32>>, usize) {
    let n = runs.len();
    let k = index.k();
    let off = index.center_offset();
    let mut ids = vec![None; n];
    if n < k {
        return (ids, 0);
    }
    let linked: Vec<bool> = runs.windows(2).map(|p| p[1].start - p[0].end <= params.max_gap_px).collect();
    let complete = |lo: usize| linked[lo..lo + k - 1].iter().all(|&l| l);
    let mut positions: Vec<usize> = (0..k).collect();
    positions.sort_by_key(|&p| (p.abs_diff(off), p));
    let hits: Vec<Option<WindowHit>> = (0..n)
        .map(|r| {
            let lo = positions.iter().filter(|&&p| p <= r && r - p + k <= n).map(|&p| r - p).find(|&lo| complete(lo))?;
            let window: Vec<u8> = runs[lo..lo + k].iter().map(|run| run.label).collect();
            let p = r - lo;
            let ids: Vec<usize> = index.lookup(&window).iter().map(|&c| c - off + p).collect();
            (!ids.is_empty()).then_some(WindowHit { lo, ids })
        })
        .collect();
    for (r, hit) in hits.iter().enumerate() {
        if let Some(h) = hit.as_ref().filter(|h| h.ids.len() == 1) {
            ids[r] = Some(h.ids[0] as u32);
        }
    }
    let mut resolved = 0;
    for r in 0..n {
        let Some(hit) = hits[r].as_ref().filter(|h| h.ids.len() > 1) else { continue };
        let lo = r.saturating_sub(k - 1);
        let hi = (r + k - 1).min(n - 1);
        let mut predictions: Vec<i64> = (lo..=hi)
            .filter(|&q| q != r)
            .filter_map(|q| {
                let h = hits[q].as_ref().filter(|h| h.ids.len() == 1 && (h.lo..h.lo + k).contains(&r))?;
                Some(h.ids[0] as i64 + r as i64 - q as i64)
            })
            .collect();
        let consensus = (!predictions.is_empty()).then(|| {
            predictions.sort_unstable();
            let median = predictions[(predictions.len() - 1) / 2];
            hit.ids.iter().copied().min_by_key(|&id| (id as i64 - median).abs()).filter(|&id| (id as i64 - median).abs() <= k as i64)
        });
        // Without consensus the left half of the image maps to the first copy.
        let id = consensus.flatten().unwrap_or_else(|| {
            if runs[r].center < image_width as f64 / 2.0 {
                hit.ids[0]
            } else {
                hit.ids[hit.ids.len() - 1]
            }
        });
        ids[r] = Some(id as u32);
        resolved += 1;
    }
    (ids, resolved)
}

/// Outcome of window matching over a whole frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchOutcome {
    pub ids: StripeIdMap,
    pub run_ids: Vec<Vec<Option<u32>>>,
    pub disambiguated: usize,
}

/// Match k-windows of consecutive runs against `index` and paint IDs onto run pixels.
pub fn match_windows(
    runs: &[Vec<StripeRun>],
    index: &WindowIndex,
    size: (usize, usize),
    params: &MatchParams,
) -> MatchOutcome {
    let per_row: Vec<(Vec<Option<u32>>, usize)> =
        runs.par_iter().map(|row| match_row(row, index, size.0, params)).collect();
    let mut ids = Grid::new(size.0, size.1, None);
    let mut disambiguated = 0;
    let mut run_ids = Vec::with_capacity(runs.len());
    for (row, (row_ids, d)) in runs.iter().zip(per_row) {
        disambiguated += d;
        for (run, id) in row.iter().zip(&row_ids) {
            for x in run.start..run.end {
                ids.set(x, run.row, *id);
            }
        }
        run_ids.push(row_ids);
    }
    MatchOutcome { ids, run_ids, disambiguated }
}

/// Assign unlabeled pixels between two runs carrying consecutive IDs to whichever
/// of the two stripe codes fits better. Returns the number of pixels filled.
pub fn fill_gaps(
    outcome: &mut MatchOutcome,
    runs: &[Vec<StripeRun>],
    labeler: &dyn PixelLabeler,
    max_gap_px: usize,
) -> usize {
    let mut filled = 0;
    for (row, row_ids) in runs.iter().zip(&outcome.run_ids) {
        for r in 1..row.len() {
            let (a, b) = (&row[r - 1], &row[r]);
            let (Some(ia), Some(ib)) = (row_ids[r - 1], row_ids[r]) else { continue };
            let gap = b.start - a.end;
            if ib != ia + 1 || gap == 0 || gap > max_gap_px {
                continue;
            }
            let y = a.row;
            let lean = |x: usize| labeler.affinity(x, y, b.label) - labeler.affinity(x, y, a.label);
            let split = boundary_estimate(a.end - 1, b.start, &lean);
            for x in a.end..b.start {
                let toward_b = match split {
                    Some(t) => x as f64 >= t,
                    None => lean(x) > 0.0,
                };
                outcome.ids.set(x, y, Some(if toward_b { ib } else { ia }));
                filled += 1;
            }
        }
    }
    filled
}

/// Zero crossing of a least-squares line through `lean` over `lo..=hi`, when
/// the line rises from the left code toward the right one.
fn boundary_estimate(lo: usize, hi: usize, lean: &dyn Fn(usize) -> f64) -> Option<f64> {
    let xs: Vec<f64> = (lo..=hi).map(|x| x as f64).collect();
    let ys: Vec<f64> = (lo..=hi).map(lean).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope > 0.0).then(|| mx - my / slope)
}

/// Count of adjacent decoded runs per scanline whose IDs fail to increase.
pub fn monotonic_violations(run_ids: &[Vec<Option<u32>>]) -> usize {
    run_ids
        .iter()
        .map(|row| {
            let known: Vec<u32> = row.iter().flatten().copied().collect();
            known.windows(2).filter(|p| p[1] <= p[0]).count()
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hue,
    Sign,
    Ratio,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hue => "hue",
            Method::Sign => "sign",
            Method::Ratio => "ratio",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "hue" => Ok(Method::Hue),
            "sign" => Ok(Method::Sign),
            "ratio" => Ok(Method::Ratio),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

/// Frames handed to the decoder.
#[derive(Debug, Clone, Copy)]
pub enum Capture<'a> {
    OneShot(&'a RgbImage),
    TwoShot(&'a RgbImage, &'a RgbImage),
    /// First frame, second frame, ambient-only frame.
    Ratio(&'a RgbImage, &'a RgbImage, &'a RgbImage),
}

impl Capture<'_> {
    pub fn method(&self) -> Method {
        match self {
            Capture::OneShot(_) => Method::Hue,
            Capture::TwoShot(..) => Method::Sign,
            Capture::Ratio(..) => Method::Ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeParams {
    pub hue_half_width: f64,
    pub hue_min_saturation: f64,
    pub hue_min_intensity: f64,
    pub dead_zone: f64,
    pub ratio_epsilon: f64,
    pub min_run_px: usize,
    pub matching: MatchParams,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            hue_half_width: 40.0,
            hue_min_saturation: 0.25,
            hue_min_intensity: 0.1,
            dead_zone: DEFAULT_DEAD_ZONE,
            ratio_epsilon: DEFAULT_RATIO_EPSILON,
            min_run_px: 1,
            matching: MatchParams::default(),
        }
    }
}

impl DecodeParams {
    /// Defaults overridden by `hue.*` and `decode.*` keys.
    pub fn from_config(cfg: &Config) -> Result<Self, FormatError> {
        let mut p = Self::default();
        let nonneg = |key: &str, default: f64| -> Result<f64, FormatError> {
            match cfg.f64(key) {
                None => Ok(default),
                Some(v) if v >= 0.0 => Ok(v),
                Some(_) => Err(cfg.invalid(key, "must be nonnegative")),
            }
        };
        let count = |key: &str, default: usize| -> Result<usize, FormatError> {
            match cfg.int(key) {
                None => Ok(default),
                Some(v) => usize::try_from(v).map_err(|_| cfg.invalid(key, "must be nonnegative")),
            }
        };
        p.hue_half_width = nonneg("hue.half_width", p.hue_half_width)?;
        p.hue_min_saturation = nonneg("hue.min_saturation", p.hue_min_saturation)?;
        p.hue_min_intensity = nonneg("hue.min_intensity", p.hue_min_intensity)?;
        p.dead_zone = nonneg("decode.dead_zone", p.dead_zone)?;
        p.ratio_epsilon = nonneg("decode.ratio_epsilon", p.ratio_epsilon)?;
        p.min_run_px = count("decode.min_run_px", p.min_run_px)?.max(1);
        p.matching.max_gap_px = count("decode.max_gap_px", p.matching.max_gap_px)?;
        Ok(p)
    }

    /// Hue thresholds for a one-shot alphabet with these overrides applied.
    pub fn hue_thresholds(&self, pattern: &Pattern) -> Result<HueThresholds, DecodeError> {
        let mut t = HueThresholds::for_alphabet(pattern.sequence().alphabet()).ok_or_else(|| {
            DecodeError::ModeMismatch("hue decoding needs a one-shot pattern with at most 6 colors".into())
        })?;
        t.half_width = self.hue_half_width;
        t.min_saturation = self.hue_min_saturation;
        t.min_intensity = self.hue_min_intensity;
        Ok(t)
    }
}

/// Per-stage counts from one decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DecodeStats {
    pub pixels: usize,
    pub labeled_px: usize,
    pub run_count: usize,
    pub matched_runs: usize,
    pub identified_px: usize,
    pub disambiguated: usize,
    pub gap_filled_px: usize,
    pub monotonic_violations: usize,
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

impl DecodeStats {
    pub fn labeled_pct(&self) -> f64 {
        pct(self.labeled_px, self.pixels)
    }

    /// Share of runs that received a stripe ID.
    pub fn matched_pct(&self) -> f64 {
        pct(self.matched_runs, self.run_count)
    }

    pub fn to_report(&self, method: Method) -> Report {
        let mut r = Report::new();
        r.push("decode.method", method.name());
        r.push("decode.labeled_pct", format!("{:.4}", self.labeled_pct()));
        r.push("decode.run_count", self.run_count);
        r.push("decode.matched_pct", format!("{:.4}", self.matched_pct()));
        r.push("decode.identified_px", self.identified_px);
        r.push("decode.disambiguation_count", self.disambiguated);
        r.push("decode.gap_filled_px", self.gap_filled_px);
        r.push("decode.monotonic_violations", self.monotonic_violations);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub method: Method,
    pub ids: StripeIdMap,
    pub labels: LabelMap,
    pub runs: Vec<Vec<StripeRun>>,
    pub run_ids: Vec<Vec<Option<u32>>>,
    pub stats: DecodeStats,
}

/// Label, segment, match and gap-fill.
pub fn decode(pattern: &Pattern, capture: Capture<'_>, params: &DecodeParams) -> Result<Decoded, DecodeError> {
    let labeler: Box<dyn PixelLabeler + '_> = match (capture, pattern) {
        (Capture::OneShot(frame), Pattern::OneShot(_)) => Box::new(HueLabeler::new(frame, params.hue_thresholds(pattern)?)),
        (Capture::TwoShot(a, b), Pattern::TwoShot(pair)) => {
            Box::new(SignLabeler::new(a, b, pair.channels().clone(), params.dead_zone)?)
        }
        (Capture::Ratio(a, b, amb), Pattern::TwoShot(pair)) => Box::new(RatioLabeler::new(
            a,
            b,
            amb,
            pair.channels().clone(),
            pair.levels(),
            params.ratio_epsilon,
        )?),
        (c, _) => {
            return Err(DecodeError::ModeMismatch(format!(
                "{} decoding does not apply to a {} pattern",
                c.method().name(),
                if pattern.is_two_shot() { "two-shot" } else { "one-shot" }
            )))
        }
    };
    decode_with(labeler.as_ref(), capture.method(), pattern.sequence(), params)
}

/// Pipeline over an arbitrary labeler.
pub fn decode_with(
    labeler: &dyn PixelLabeler,
    method: Method,
    seq: &StripeSequence,
    params: &DecodeParams,
) -> Result<Decoded, DecodeError> {
    let size = labeler.size();
    let labels = label_map(labeler);
    let weights = weight_map(labeler);
    let runs = segment_runs(&labels, Some(&weights), params.min_run_px);
    let index = build_window_index(seq);
    let mut outcome = match_windows(&runs, &index, size, &params.matching);
    let gap_filled = fill_gaps(&mut outcome, &runs, labeler, params.matching.max_gap_px);
    let stats = DecodeStats {
        pixels: size.0 * size.1,
        labeled_px: labels.as_slice().iter().flatten().count(),
        run_count: runs.iter().map(Vec::len).sum(),
        matched_runs: outcome.run_ids.iter().flatten().flatten().count(),
        identified_px: outcome.ids.as_slice().iter().flatten().count(),
        disambiguated: outcome.disambiguated,
        gap_filled_px: gap_filled,
        monotonic_violations: monotonic_violations(&outcome.run_ids),
    };
    Ok(Decoded { method, ids: outcome.ids, labels, runs, run_ids: outcome.run_ids, stats })
}

/// 16-bit PGM, 65535 marking unknown.
pub fn write_id_map(ids: &StripeIdMap, path: impl AsRef<Path>) -> Result<(), FormatError> {
    write_pnm(&labels_to_buffer(ids)?, path)
}

pub fn read_id_map(path: impl AsRef<Path>) -> Result<StripeIdMap, FormatError> {
    buffer_to_labels(&read_pnm(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{synthesize_one_shot, CodeAlphabet};
    use proptest::prelude::*;

    fn runs_from_codes(codes: &[u8], width: usize) -> Vec<StripeRun> {
        codes
            .iter()
            .enumerate()
            .map(|(i, &label)| StripeRun {
                row: 0,
                start: i * width,
                end: (i + 1) * width,
                center: i as f64 * width as f64 + (width as f64 - 1.0) / 2.0,
                label,
            })
            .collect()
    }

    #[test]
    fn segments_simple_scanline() {
        let labels = Grid::from_vec(6, 1, vec![Some(0), Some(0), Some(1), Some(1), Some(2), Some(2)]);
        let runs = segment_runs(&labels, None, 1);
        let got: Vec<(u8, f64)> = runs[0].iter().map(|r| (r.label, r.center)).collect();
        assert_eq!(got, vec![(0, 0.5), (1, 2.5), (2, 4.5)]);
    }

    #[test]
    fn abstention_splits_runs() {
        let labels = Grid::from_vec(5, 1, vec![Some(1), Some(1), None, Some(1), Some(1)]);
        let runs = segment_runs(&labels, None, 1);
        assert_eq!(runs[0].len(), 2);
        assert_eq!((runs[0][0].start, runs[0][0].end, runs[0][1].start), (0, 2, 3));
        assert_eq!(segment_runs(&labels, None, 3)[0].len(), 0);
    }

    #[test]
    fn centroid_is_weighted() {
        let labels = Grid::from_vec(3, 1, vec![Some(0); 3]);
        let weights = Grid::from_vec(3, 1, vec![1.0, 1.0, 2.0]);
        let runs = segment_runs(&labels, Some(&weights), 1);
        assert!((runs[0][0].center - 1.25).abs() < 1e-12);
    }

    #[test]
    fn exact_runs_decode_to_ground_truth() {
        let seq = synthesize_one_shot(3, 5, 48, 1, 4).unwrap();
        let index = build_window_index(&seq);
        let runs = runs_from_codes(seq.codes(), 2);
        let (ids, resolved) = match_row(&runs, &index, 96, &MatchParams::default());
        assert_eq!(resolved, 0);
        for (i, id) in ids.iter().enumerate() {
            assert_eq!(*id, Some(i as u32));
        }
    }

    #[test]
    fn repeated_windows_resolve_by_covering_unique_windows() {
        let seq = synthesize_one_shot(3, 7, 384, 2, 1).unwrap();
        let index = build_window_index(&seq);
        let runs = runs_from_codes(seq.codes(), 2);
        let first_unique = (0..seq.len()).find(|&i| index.lookup(seq.window_centered_at(i).unwrap_or(&[])).len() == 1).unwrap();
        // Put the image midline three runs left of the first unique window so the
        // half rule alone would pick the second copy for those runs.
        let width = 4 * (first_unique - 3);
        let (ids, resolved) = match_row(&runs, &index, width, &MatchParams::default());
        assert!(resolved > 0);
        for (i, id) in ids.iter().enumerate().take(seq.len() - 3) {
            if i >= first_unique - 6 || 2 * i + 1 < width / 2 {
                assert_eq!(*id, Some(i as u32), "run {i}");
            }
        }
    }

    #[test]
    fn half_rule_without_neighbors() {
        let seq = synthesize_one_shot(3, 7, 384, 2, 1).unwrap();
        let index = build_window_index(&seq);
        let (window, centers) = index.iter().find(|(_, c)| c.len() == 2).unwrap();
        let runs = runs_from_codes(window, 2);
        let (left, _) = match_row(&runs, &index, 1000, &MatchParams::default());
        assert_eq!(left[3], Some(centers[0] as u32));
        let (right, _) = match_row(&runs, &index, 10, &MatchParams::default());
        assert_eq!(right[3], Some(centers[1] as u32));
    }

    #[test]
    fn short_run_list_is_unknown() {
        let seq = synthesize_one_shot(3, 7, 100, 1, 2).unwrap();
        let index = build_window_index(&seq);
        let runs = runs_from_codes(&seq.codes()[..6], 2);
        let (ids, _) = match_row(&runs, &index, 100, &MatchParams::default());
        assert!(ids.iter().all(Option::is_none));
    }

    #[test]
    fn wide_gap_splits_windows() {
        let seq = synthesize_one_shot(3, 5, 40, 1, 3).unwrap();
        let index = build_window_index(&seq);
        let mut runs = runs_from_codes(seq.codes(), 2);
        for r in runs.iter_mut().skip(20) {
            r.start += 3;
            r.end += 3;
        }
        let (ids, _) = match_row(&runs, &index, 100, &MatchParams::default());
        for (r, id) in ids.iter().enumerate() {
            assert_eq!(*id, Some(r as u32), "run {r}");
        }
        // Four runs on each side of the gap never form a five-run window.
        let mut short: Vec<StripeRun> = runs[16..24].to_vec();
        let (ids, _) = match_row(&short, &index, 100, &MatchParams::default());
        assert!(ids.iter().all(Option::is_none));
        for r in short.iter_mut().skip(4) {
            r.start -= 3;
            r.end -= 3;
        }
        let (ids, _) = match_row(&short, &index, 100, &MatchParams::default());
        assert!(ids.iter().all(Option::is_some));
    }

    #[test]
    fn solid_and_black_frames() {
        let red = Grid::new(4, 2, Rgb::new(0.8, 0.0, 0.0));
        let t = HueThresholds::for_alphabet(&CodeAlphabet::one_shot(3).unwrap()).unwrap();
        assert!(label_one_shot(&red, &t).as_slice().iter().all(|l| *l == Some(0)));
        let black = Grid::new(4, 2, Rgb::BLACK);
        assert!(label_one_shot(&black, &t).as_slice().iter().all(Option::is_none));
    }

    #[test]
    fn two_shot_labels_negate_when_swapped() {
        let a = Grid::from_vec(3, 1, vec![Rgb::new(0.1, 0.2, 0.9), Rgb::new(0.0, 0.8, 0.1), Rgb::splat(0.5)]);
        let b = Grid::from_vec(3, 1, vec![Rgb::new(0.1, 0.9, 0.2), Rgb::new(0.0, 0.1, 0.7), Rgb::splat(0.5)]);
        let gb = ChannelSet::gb();
        let ab = label_two_shot(&a, &b, &gb, DEFAULT_DEAD_ZONE).unwrap();
        let ba = label_two_shot(&b, &a, &gb, DEFAULT_DEAD_ZONE).unwrap();
        assert_eq!(ab.as_slice(), &[Some(0b01), Some(0b10), None]);
        for (x, y) in ab.as_slice().iter().zip(ba.as_slice()) {
            assert_eq!(x.map(|c| c ^ 0b11), *y);
        }
        assert!(label_two_shot(&a, &a, &gb, 0.0).unwrap().as_slice().iter().all(Option::is_none));
        let small = Grid::new(2, 1, Rgb::BLACK);
        assert!(matches!(label_two_shot(&a, &small, &gb, 0.0), Err(DecodeError::SizeMismatch(..))));
    }

    #[test]
    fn monotonicity_count() {
        let rows = vec![vec![Some(1), None, Some(2), Some(2), Some(5), Some(3)], vec![Some(0)]];
        assert_eq!(monotonic_violations(&rows), 2);
    }

    /// Replace the label of run `victim` with a different code.
    fn corrupt(runs: &mut [StripeRun], victim: usize, shift: u8, colors: u8) {
        let old = runs[victim].label;
        runs[victim].label = (old + shift) % colors;
    }

    proptest! {
        #[test]
        fn one_corruption_changes_at_most_2k_minus_1_runs(seed in 0u64..200, victim in 0usize..384, shift in 1u8..3) {
            let seq = synthesize_one_shot(3, 7, 384, 2, seed).unwrap();
            let index = build_window_index(&seq);
            let clean = runs_from_codes(seq.codes(), 2);
            let mut dirty = clean.clone();
            corrupt(&mut dirty, victim, shift, 3);
            let p = MatchParams::default();
            let (a, _) = match_row(&clean, &index, 768, &p);
            let (b, _) = match_row(&dirty, &index, 768, &p);
            let changed = a.iter().zip(&b).filter(|(x, y)| x != y).count();
            prop_assert!(changed < 2 * seq.k(), "changed {}", changed);
        }

        #[test]
        fn decoded_ids_agree_with_window_content(seed in 0u64..50, noise in proptest::collection::vec((0usize..190, 0u8..3), 0..20)) {
            let seq = synthesize_one_shot(3, 7, 190, 1, seed).unwrap();
            let index = build_window_index(&seq);
            let mut runs = runs_from_codes(seq.codes(), 2);
            for (i, c) in noise {
                runs[i].label = c;
            }
            let (ids, _) = match_row(&runs, &index, 380, &MatchParams::default());
            for (r, id) in ids.iter().enumerate() {
                if let Some(id) = id {
                    // The observed window, clipped at the row ends, matches the sequence.
                    for j in r.saturating_sub(3)..=(r + 3).min(runs.len() - 1) {
                        let s = (*id as usize + j).checked_sub(r);
                        prop_assert_eq!(s.and_then(|s| seq.codes().get(s)).copied(), Some(runs[j].label));
                    }
                }
            }
        }
    }
}
