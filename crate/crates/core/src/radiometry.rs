//! Per-channel image formation and the per-pixel decoding primitives.
//!
//! Wavelength dependence is collapsed to three decoupled channels. A camera
//! pixel observes `I = g * S * (E + A)` per channel, where `g` is the
//! geometric shading factor, `S` the surface reflectance, `E` the projector
//! illumination and `A` the ambient light.

use std::ops::{Add, Mul, Sub};

use crate::pattern::{Channel, ChannelSet, CodeAlphabet, Levels};

/// Sign-code dead zone in normalized units, just above 8-bit quantization noise.
pub const DEFAULT_DEAD_ZONE: f64 = 2.0 / 255.0;
/// Minimum `|I1 - I_A|` for a channel ratio to count as valid.
pub const DEFAULT_RATIO_EPSILON: f64 = 5.0 / 255.0;

/// Linear RGB intensities. Physical radiances are nonnegative; differences
/// reuse the type with signed components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub const BLACK: Rgb = Rgb { r: 0.0, g: 0.0, b: 0.0 };

    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub const fn splat(v: f64) -> Self {
        Self { r: v, g: v, b: v }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn channel(self, c: Channel) -> f64 {
        self.to_array()[c.index()]
    }

    pub fn sum(self) -> f64 {
        self.r + self.g + self.b
    }

    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    pub fn min_component(self) -> f64 {
        self.r.min(self.g).min(self.b)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.r), f(self.g), f(self.b))
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }
}

impl Add for Rgb {
    type Output = Rgb;
    fn add(self, o: Rgb) -> Rgb {
        Rgb::new(self.r + o.r, self.g + o.g, self.b + o.b)
    }
}

impl Sub for Rgb {
    type Output = Rgb;
    fn sub(self, o: Rgb) -> Rgb {
        Rgb::new(self.r - o.r, self.g - o.g, self.b - o.b)
    }
}

impl Mul<f64> for Rgb {
    type Output = Rgb;
    fn mul(self, s: f64) -> Rgb {
        Rgb::new(self.r * s, self.g * s, self.b * s)
    }
}

/// Component-wise product.
impl Mul for Rgb {
    type Output = Rgb;
    fn mul(self, o: Rgb) -> Rgb {
        Rgb::new(self.r * o.r, self.g * o.g, self.b * o.b)
    }
}

/// Per-channel albedo in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceReflectance(Rgb);

impl SurfaceReflectance {
    pub fn new(r: f64, g: f64, b: f64) -> Option<Self> {
        let ok = [r, g, b].iter().all(|v| (0.0..=1.0).contains(v));
        ok.then_some(Self(Rgb::new(r, g, b)))
    }

    pub fn neutral(albedo: f64) -> Self {
        Self(Rgb::splat(albedo.clamp(0.0, 1.0)))
    }

    pub fn rgb(self) -> Rgb {
        self.0
    }
}

/// Geometric shading factor and ambient light at a surface point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShadingContext {
    pub g_theta: f64,
    pub ambient: Rgb,
}

/// `g * S * (E + A)` per channel; no clipping.
pub fn image_irradiance(ctx: &ShadingContext, reflectance: SurfaceReflectance, illum: Rgb) -> Rgb {
    reflectance.rgb() * (illum + ctx.ambient) * ctx.g_theta
}

/// Per-channel `(I2 - I_A) / (I1 - I_A)`; `None` where `|I1 - I_A| < epsilon`.
pub fn channel_ratios(i1: Rgb, i2: Rgb, i_ambient: Rgb, epsilon: f64) -> [Option<f64>; 3] {
    let num = (i2 - i_ambient).to_array();
    let den = (i1 - i_ambient).to_array();
    std::array::from_fn(|c| (den[c].abs() >= epsilon).then(|| num[c] / den[c]))
}

/// `I2 - I1` per channel.
pub fn channel_differences(i1: Rgb, i2: Rgb) -> Rgb {
    i2 - i1
}

/// Sign code over `channels`: bit `j` set when channel `j` rose by more than
/// `dead_zone`. Any channel inside the dead zone makes the pixel abstain.
pub fn sign_code(delta: Rgb, channels: &ChannelSet, dead_zone: f64) -> Option<u8> {
    let mut code = 0u8;
    for (j, &ch) in channels.channels().iter().enumerate() {
        let d = delta.channel(ch);
        if d > dead_zone {
            code |= 1 << j;
        } else if d >= -dead_zone || d.is_nan() {
            return None;
        }
    }
    Some(code)
}

/// Nearest-expected-ratio code (three-frame ratio baseline).
///
/// Each channel's ratio is compared, by absolute difference, with `max/min`
/// (a `+` stripe) and `min/max` (a `-` stripe). With `min = 0` a `+` stripe
/// has a zero denominator and always abstains.
pub fn ratio_code(
    i1: Rgb,
    i2: Rgb,
    i_ambient: Rgb,
    channels: &ChannelSet,
    levels: Levels,
    epsilon: f64,
) -> Option<u8> {
    let ratios = channel_ratios(i1, i2, i_ambient, epsilon);
    let plus = levels.max / levels.min;
    let minus = levels.min / levels.max;
    let mut code = 0u8;
    for (j, &ch) in channels.channels().iter().enumerate() {
        let r = ratios[ch.index()]?;
        if (r - plus).abs() < (r - minus).abs() {
            code |= 1 << j;
        }
    }
    Some(code)
}

/// HSV-style hue in degrees `[0, 360)`, saturation `(max - min) / max`.
pub fn hue_saturation(p: Rgb) -> (f64, f64) {
    let max = p.max_component();
    let min = p.min_component();
    let chroma = max - min;
    if max <= 0.0 || chroma <= 0.0 {
        return (0.0, 0.0);
    }
    let h = if max == p.r {
        60.0 * ((p.g - p.b) / chroma)
    } else if max == p.g {
        60.0 * ((p.b - p.r) / chroma + 2.0)
    } else {
        60.0 * ((p.r - p.g) / chroma + 4.0)
    };
    (h.rem_euclid(360.0), chroma / max)
}

/// Smallest angle between two hues, in degrees.
pub fn hue_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Projector color of one-shot code `code`: R, G, B, then C, M, Y.
pub fn one_shot_color(code: u8) -> Option<Rgb> {
    const PALETTE: [Rgb; 6] = [
        Rgb::new(1.0, 0.0, 0.0),
        Rgb::new(0.0, 1.0, 0.0),
        Rgb::new(0.0, 0.0, 1.0),
        Rgb::new(0.0, 1.0, 1.0),
        Rgb::new(1.0, 0.0, 1.0),
        Rgb::new(1.0, 1.0, 0.0),
    ];
    PALETTE.get(code as usize).copied()
}

/// Hue classification thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct HueThresholds {
    /// Hue center per color class, degrees.
    pub centers: Vec<f64>,
    pub half_width: f64,
    pub min_saturation: f64,
    /// Minimum `r + g + b`.
    pub min_intensity: f64,
}

impl HueThresholds {
    /// Defaults for a one-shot alphabet: palette hues, 40 degree half-width,
    /// saturation 0.25 and intensity 0.1. `None` for two-shot alphabets or
    /// alphabets larger than the palette.
    pub fn for_alphabet(alphabet: &CodeAlphabet) -> Option<Self> {
        let CodeAlphabet::OneShot { colors } = alphabet else {
            return None;
        };
        let centers = (0..*colors)
            .map(|c| one_shot_color(c).map(|rgb| hue_saturation(rgb).0))
            .collect::<Option<Vec<_>>>()?;
        Some(Self { centers, half_width: 40.0, min_saturation: 0.25, min_intensity: 0.1 })
    }
}

/// Color class of `pixel`, or `None` when dark, unsaturated, or outside every hue band.
pub fn hue_classify(pixel: Rgb, t: &HueThresholds) -> Option<u8> {
    if pixel.sum() < t.min_intensity {
        return None;
    }
    let (hue, sat) = hue_saturation(pixel);
    if sat < t.min_saturation {
        return None;
    }
    t.centers
        .iter()
        .enumerate()
        .filter(|(_, &c)| hue_distance(hue, c) <= t.half_width)
        .min_by(|a, b| hue_distance(hue, *a.1).total_cmp(&hue_distance(hue, *b.1)))
        .map(|(i, _)| i as u8)
}

/// Normalized rg-chromaticity plus hue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chromaticity {
    pub cr: f64,
    pub cg: f64,
    pub hue: f64,
}

/// `None` when the channel sum is zero.
pub fn chromaticity_of(pixel: Rgb) -> Option<Chromaticity> {
    let s = pixel.sum();
    if s == 0.0 || !s.is_finite() {
        return None;
    }
    Some(Chromaticity { cr: pixel.r / s, cg: pixel.g / s, hue: hue_saturation(pixel).0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn refl(r: f64, g: f64, b: f64) -> SurfaceReflectance {
        SurfaceReflectance::new(r, g, b).unwrap()
    }

    #[test]
    fn irradiance_examples() {
        let ctx = ShadingContext { g_theta: 1.0, ambient: Rgb::BLACK };
        assert_eq!(image_irradiance(&ctx, refl(1.0, 1.0, 1.0), Rgb::new(1.0, 0.0, 0.0)), Rgb::new(1.0, 0.0, 0.0));

        let ctx = ShadingContext { g_theta: 0.5, ambient: Rgb::splat(0.1) };
        let got = image_irradiance(&ctx, refl(0.8, 0.4, 0.2), Rgb::new(1.0, 0.0, 0.0));
        // Scalar evaluation per channel.
        let expect = [0.5 * 0.8 * 1.1, 0.5 * 0.4 * 0.1, 0.5 * 0.2 * 0.1];
        assert_relative_eq!(got.r, expect[0], epsilon = 1e-12);
        assert_relative_eq!(got.g, expect[1], epsilon = 1e-12);
        assert_relative_eq!(got.b, expect[2], epsilon = 1e-12);
        assert_relative_eq!(got.r, 0.44, epsilon = 1e-12);
        assert_relative_eq!(got.g, 0.02, epsilon = 1e-12);
        assert_relative_eq!(got.b, 0.01, epsilon = 1e-12);

        let dark = ShadingContext { g_theta: 0.0, ambient: Rgb::splat(0.7) };
        assert_eq!(image_irradiance(&dark, refl(0.3, 0.9, 0.5), Rgb::splat(1.0)), Rgb::BLACK);
    }

    #[test]
    fn ratio_examples() {
        for (g, s) in [(1.0, refl(1.0, 1.0, 1.0)), (0.3, refl(0.2, 0.5, 0.9))] {
            let ctx = ShadingContext { g_theta: g, ambient: Rgb::BLACK };
            let i1 = image_irradiance(&ctx, s, Rgb::new(1.0, 0.0, 0.0));
            let i2 = image_irradiance(&ctx, s, Rgb::new(0.5, 0.0, 0.0));
            let r = channel_ratios(i1, i2, Rgb::BLACK, 1e-6);
            assert_relative_eq!(r[0].unwrap(), 0.5, epsilon = 1e-12);
            assert!(r[1].is_none() && r[2].is_none());
        }
        let ia = Rgb::new(0.2, 0.3, 0.4);
        let r = channel_ratios(Rgb::new(0.2, 0.5, 0.4), Rgb::new(0.1, 0.6, 0.9), ia, DEFAULT_RATIO_EPSILON);
        assert!(r[0].is_none() && r[2].is_none());
        assert_relative_eq!(r[1].unwrap(), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn clipping_distorts_ratio() {
        // E1 = 1, E2 = 0.5, ambient 0.3, unit shading and albedo.
        let ctx = ShadingContext { g_theta: 1.0, ambient: Rgb::splat(0.3) };
        let s = refl(1.0, 1.0, 1.0);
        let clip = |p: Rgb| p.map(|v| v.clamp(0.0, 1.0));
        let i1 = clip(image_irradiance(&ctx, s, Rgb::splat(1.0)));
        let i2 = clip(image_irradiance(&ctx, s, Rgb::splat(0.5)));
        let ia = clip(image_irradiance(&ctx, s, Rgb::BLACK));
        let r = channel_ratios(i1, i2, ia, DEFAULT_RATIO_EPSILON)[0].unwrap();
        // I1 = 1.3 clips to 1.0, so the ratio becomes 0.5 / 0.7 instead of 0.5.
        assert_relative_eq!(r, 0.5 / 0.7, epsilon = 1e-12);
        assert!((r - 0.5).abs() > 0.2);
        // The difference keeps its sign.
        assert!(channel_differences(i1, i2).r < 0.0);
    }

    #[test]
    fn difference_examples() {
        let d = channel_differences(Rgb::new(0.2, 0.7, 0.1), Rgb::new(0.5, 0.3, 0.1));
        assert_relative_eq!(d.r, 0.3, epsilon = 1e-12);
        assert_relative_eq!(d.g, -0.4, epsilon = 1e-12);
        assert_eq!(d.b, 0.0);
        let p = Rgb::new(0.3, 0.4, 0.5);
        assert_eq!(channel_differences(p, p), Rgb::BLACK);
    }

    #[test]
    fn sign_code_examples() {
        let gb = ChannelSet::gb();
        let delta = Rgb::new(0.9, 0.3, -0.2);
        assert_eq!(sign_code(delta, &gb, 0.05), Some(0b01));
        assert_eq!(sign_code(delta * 7.5, &gb, 0.05), Some(0b01));
        assert_eq!(sign_code(Rgb::new(0.0, 0.01, -0.4), &gb, 0.05), None);
        assert_eq!(sign_code(Rgb::new(0.0, -0.3, 0.4), &gb, 0.05), Some(0b10));
    }

    #[test]
    fn ratio_code_picks_nearest() {
        let gb = ChannelSet::gb();
        let levels = Levels { min: 0.2, max: 1.0 };
        let ia = Rgb::splat(0.1);
        // G rises 0.2 -> 1.0, B falls 1.0 -> 0.2.
        let i1 = ia + Rgb::new(0.0, 0.2, 1.0);
        let i2 = ia + Rgb::new(0.0, 1.0, 0.2);
        assert_eq!(ratio_code(i1, i2, ia, &gb, levels, DEFAULT_RATIO_EPSILON), Some(0b01));
        assert_eq!(ratio_code(i2, i1, ia, &gb, levels, DEFAULT_RATIO_EPSILON), Some(0b10));
        // Zero minimum: the rising channel has no denominator.
        let zero = Levels { min: 0.0, max: 1.0 };
        let i1 = ia + Rgb::new(0.0, 0.0, 1.0);
        let i2 = ia + Rgb::new(0.0, 1.0, 0.0);
        assert_eq!(ratio_code(i1, i2, ia, &gb, zero, DEFAULT_RATIO_EPSILON), None);
    }

    #[test]
    fn hue_examples() {
        let t = HueThresholds::for_alphabet(&CodeAlphabet::one_shot(3).unwrap()).unwrap();
        assert_eq!(t.centers, vec![0.0, 120.0, 240.0]);
        assert_eq!(hue_classify(Rgb::new(0.9, 0.05, 0.05), &t), Some(0));
        let boundary = Rgb::new(0.5, 0.5, 0.02);
        assert_relative_eq!(hue_saturation(boundary).0, 60.0, epsilon = 1e-9);
        assert_eq!(hue_classify(boundary, &t), None);
        let dark = HueThresholds { min_intensity: 0.2, ..t.clone() };
        assert_eq!(hue_classify(Rgb::splat(0.05), &dark), None);
        assert_eq!(hue_classify(Rgb::new(0.05, 0.1, 0.8), &t), Some(2));
        assert_eq!(hue_classify(Rgb::splat(0.6), &t), None);
        assert!(HueThresholds::for_alphabet(&CodeAlphabet::two_shot(ChannelSet::gb())).is_none());
    }

    #[test]
    fn chromaticity_examples() {
        let c = chromaticity_of(Rgb::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((c.cr, c.cg, c.hue), (1.0, 0.0, 0.0));
        let c = chromaticity_of(Rgb::splat(1.0)).unwrap();
        assert_relative_eq!(c.cr, 1.0 / 3.0);
        assert_relative_eq!(c.cg, 1.0 / 3.0);
        let c = chromaticity_of(Rgb::new(0.44, 0.02, 0.01)).unwrap();
        assert_relative_eq!(c.cr, 0.44 / 0.47, epsilon = 1e-12);
        assert!((c.cr - 0.936).abs() < 5e-4 && (c.cg - 0.043).abs() < 5e-4);
        assert!(chromaticity_of(Rgb::BLACK).is_none());
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.0f64..=1.0
    }

    fn rgb_unit() -> impl Strategy<Value = Rgb> {
        (unit(), unit(), unit()).prop_map(|(r, g, b)| Rgb::new(r, g, b))
    }

    proptest! {
        #[test]
        fn irradiance_is_linear(g in unit(), c in 0.0f64..4.0, s in rgb_unit(), e in rgb_unit(), a in rgb_unit()) {
            let s_ = SurfaceReflectance::new(s.r, s.g, s.b).unwrap();
            let base = image_irradiance(&ShadingContext { g_theta: g, ambient: a }, s_, e);
            let scaled_g = image_irradiance(&ShadingContext { g_theta: g * c, ambient: a }, s_, e);
            let scaled_ea = image_irradiance(&ShadingContext { g_theta: g, ambient: a * c }, s_, e * c);
            for (x, y) in [(base * c, scaled_g), (base * c, scaled_ea)] {
                prop_assert!((x.r - y.r).abs() < 1e-12 && (x.g - y.g).abs() < 1e-12 && (x.b - y.b).abs() < 1e-12);
            }
        }

        #[test]
        fn differences_cancel_ambient(g in unit(), s in rgb_unit(), e1 in rgb_unit(), e2 in rgb_unit(), a in rgb_unit()) {
            let s_ = SurfaceReflectance::new(s.r, s.g, s.b).unwrap();
            let lit = ShadingContext { g_theta: g, ambient: a };
            let d = channel_differences(image_irradiance(&lit, s_, e1), image_irradiance(&lit, s_, e2));
            // Closed form g * S * dE.
            let expect = s * (e2 - e1) * g;
            prop_assert!((d.r - expect.r).abs() < 1e-12);
            prop_assert!((d.g - expect.g).abs() < 1e-12);
            prop_assert!((d.b - expect.b).abs() < 1e-12);
        }

        #[test]
        fn sign_depends_only_on_delta_e(g in 0.01f64..=1.0, s in (0.01f64..=1.0, 0.01f64..=1.0, 0.01f64..=1.0),
                                        code in 0u8..8, a in rgb_unit()) {
            let rgb = ChannelSet::rgb();
            let s_ = SurfaceReflectance::new(s.0, s.1, s.2).unwrap();
            let e1 = Rgb::from_array(std::array::from_fn(|j| if code & (1 << j) != 0 { 0.0 } else { 1.0 }));
            let e2 = Rgb::splat(1.0) - e1;
            let lit = ShadingContext { g_theta: g, ambient: a };
            let d = channel_differences(image_irradiance(&lit, s_, e1), image_irradiance(&lit, s_, e2));
            prop_assert_eq!(sign_code(d, &rgb, 0.0), Some(code));
        }

        #[test]
        fn ratios_are_exact_in_linear_regime(g in 0.05f64..=1.0, s in (0.05f64..=1.0, 0.05f64..=1.0, 0.05f64..=1.0),
                                            e1 in (0.1f64..=1.0, 0.1f64..=1.0, 0.1f64..=1.0), e2 in rgb_unit(), a in rgb_unit()) {
            let s_ = SurfaceReflectance::new(s.0, s.1, s.2).unwrap();
            let e1 = Rgb::new(e1.0, e1.1, e1.2);
            let lit = ShadingContext { g_theta: g, ambient: a };
            let ia = image_irradiance(&lit, s_, Rgb::BLACK);
            let r = channel_ratios(image_irradiance(&lit, s_, e1), image_irradiance(&lit, s_, e2), ia, 1e-9);
            for c in 0..3 {
                let expect = e2.to_array()[c] / e1.to_array()[c];
                let got = r[c].unwrap();
                prop_assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1e-12) + 1e-12);
            }
        }

        #[test]
        fn hue_is_scale_invariant(p in rgb_unit(), c in 0.05f64..20.0) {
            let t = HueThresholds::for_alphabet(&CodeAlphabet::one_shot(3).unwrap()).unwrap();
            let q = p * c;
            if p.sum() >= t.min_intensity && q.sum() >= t.min_intensity {
                prop_assert_eq!(hue_classify(p, &t), hue_classify(q, &t));
            }
        }
    }
}
