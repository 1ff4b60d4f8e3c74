//! Bit-exact readers and writers: binary PPM/PGM, the `SLPAT 1` pattern
//! format, key=value configs and reports, and ASCII PLY point clouds.
//!
//! Every parser rejects input it cannot interpret exactly; nothing is
//! silently repaired.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::pattern::{
    ChannelSet, CodeAlphabet, Levels, Pattern, PatternError, StripeSequence, TwoShotPatternPair,
};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("unsupported maxval {0} (expected 255 or 65535)")]
    UnsupportedMaxval(u32),
    #[error("{found} trailing bytes after image data")]
    TrailingData { found: usize },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: String },
    #[error("inconsistent length: header declares {declared} stripes, file has {found}")]
    InconsistentLength { declared: usize, found: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { key: String, line: usize },
    #[error("missing required key {0:?}")]
    MissingKey(String),
    #[error("line {line}: duplicated key {key:?}")]
    DuplicateKey { key: String, line: usize },
    #[error("line {line}: invalid value for {key:?}: {reason}")]
    InvalidValue { key: String, line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: code out of alphabet: {text:?}")]
    CodeOutOfAlphabet { line: usize, text: String },
    #[error(transparent)]
    Pattern(#[from] PatternError),
}

/// Sample bit depth of an image buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        match bits {
            8 => Some(BitDepth::Eight),
            16 => Some(BitDepth::Sixteen),
            _ => None,
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }
}

/// Row-major integer samples with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    depth: BitDepth,
    samples: Vec<u16>,
}

impl ImageBuffer {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        depth: BitDepth,
        samples: Vec<u16>,
    ) -> Result<Self, FormatError> {
        if width == 0 || height == 0 {
            return Err(FormatError::MalformedHeader(format!("zero-sized image {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(FormatError::MalformedHeader(format!("unsupported channel count {channels}")));
        }
        let expected = width * height * channels;
        if samples.len() != expected {
            return Err(FormatError::TruncatedData { expected, found: samples.len() });
        }
        if let Some(&s) = samples.iter().find(|&&s| s > depth.maxval()) {
            return Err(FormatError::MalformedHeader(format!(
                "sample {s} exceeds maxval {}",
                depth.maxval()
            )));
        }
        Ok(Self { width, height, channels, depth, samples })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn depth(&self) -> BitDepth {
        self.depth
    }

    pub fn samples(&self) -> &[u16] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<u16> {
        self.samples
    }
}

/// Encode as binary P5 (gray) or P6 (RGB).
pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n{}\n", img.width, img.height, img.depth.maxval()).into_bytes();
    match img.depth {
        BitDepth::Eight => out.extend(img.samples.iter().map(|&s| s as u8)),
        BitDepth::Sixteen => {
            for &s in &img.samples {
                out.extend_from_slice(&s.to_be_bytes());
            }
        }
    }
    out
}

/// Decode a binary P5/P6 file. Comments are accepted between header tokens.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer, FormatError> {
    if bytes.len() < 2 {
        return Err(FormatError::MalformedHeader("file too short for magic".into()));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(FormatError::MalformedHeader(format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // Each token must be preceded by whitespace (and optional comments).
        let mut saw_ws = false;
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => {
                    saw_ws = true;
                    pos += 1;
                }
                Some(b'#') if saw_ws => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(FormatError::MalformedHeader("header ended early".into())),
            }
        }
        if !saw_ws {
            return Err(FormatError::MalformedHeader("missing whitespace in header".into()));
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let token = std::str::from_utf8(&bytes[start..pos]).unwrap_or_default();
        let name = ["width", "height", "maxval"][i];
        *field = token
            .parse()
            .map_err(|_| FormatError::MalformedHeader(format!("invalid {name} {token:?}")))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(FormatError::MalformedHeader("no whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    let depth = match maxval {
        255 => BitDepth::Eight,
        65535 => BitDepth::Sixteen,
        other => return Err(FormatError::UnsupportedMaxval(other)),
    };
    if width == 0 || height == 0 {
        return Err(FormatError::MalformedHeader(format!("zero-sized image {width}x{height}")));
    }
    let count = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| FormatError::MalformedHeader("image dimensions overflow".into()))?;
    let bytes_per = if depth == BitDepth::Eight { 1 } else { 2 };
    let expected = count * bytes_per;
    let data = &bytes[pos..];
    if data.len() < expected {
        return Err(FormatError::TruncatedData { expected, found: data.len() });
    }
    if data.len() > expected {
        return Err(FormatError::TrailingData { found: data.len() - expected });
    }
    let samples = match depth {
        BitDepth::Eight => data.iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
    };
    ImageBuffer::new(width as usize, height as usize, channels, depth, samples)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImageBuffer, FormatError> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_pnm(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<(), FormatError> {
    std::fs::write(path, encode_pnm(img))?;
    Ok(())
}

pub const PATTERN_MAGIC: &str = "SLPAT 1";

/// Serialize a pattern in the line-oriented `SLPAT 1` format.
pub fn encode_pattern(pattern: &Pattern) -> String {
    let seq = pattern.sequence();
    let (mode, n, channels, levels) = match pattern {
        Pattern::OneShot(s) => {
            let CodeAlphabet::OneShot { colors } = s.alphabet() else { unreachable!() };
            ("one-shot", *colors as usize, None, Levels::default())
        }
        Pattern::TwoShot(p) => ("two-shot", 0, Some(p.channels()), p.levels()),
    };
    let mut out = String::new();
    let _ = writeln!(out, "{PATTERN_MAGIC}");
    let _ = writeln!(
        out,
        "mode={mode} N={n} m={} k={} M={} max_repeats={} channels={} min={} max={}",
        channels.map_or(0, ChannelSet::len),
        seq.k(),
        seq.len(),
        seq.max_repeats(),
        channels.map_or_else(|| "-".to_string(), ChannelSet::to_string),
        levels.min,
        levels.max,
    );
    for &code in seq.codes() {
        match seq.alphabet().sign_string(code) {
            Some(signs) => out.push_str(&signs),
            None => {
                let _ = write!(out, "{code}");
            }
        }
        out.push('\n');
    }
    out
}

/// Parse an `SLPAT 1` file.
pub fn decode_pattern(text: &str) -> Result<Pattern, FormatError> {
    let mut lines = text.split_terminator('\n');
    let magic = lines.next().unwrap_or("");
    if magic != PATTERN_MAGIC {
        return Err(FormatError::BadMagic { expected: PATTERN_MAGIC, found: magic.to_string() });
    }
    let header = lines
        .next()
        .ok_or_else(|| FormatError::Syntax { line: 2, reason: "missing parameter line".into() })?;

    const KEYS: [&str; 9] = ["mode", "N", "m", "k", "M", "max_repeats", "channels", "min", "max"];
    let mut values: BTreeMap<&str, &str> = BTreeMap::new();
    for token in header.split(' ') {
        let (key, value) = token.split_once('=').ok_or_else(|| FormatError::Syntax {
            line: 2,
            reason: format!("expected key=value, found {token:?}"),
        })?;
        if !KEYS.contains(&key) {
            return Err(FormatError::UnknownKey { key: key.into(), line: 2 });
        }
        if values.insert(key, value).is_some() {
            return Err(FormatError::DuplicateKey { key: key.into(), line: 2 });
        }
    }
    let get = |key: &str| values.get(key).copied().ok_or_else(|| FormatError::MissingKey(key.into()));
    fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, FormatError> {
        v.parse().map_err(|_| FormatError::InvalidValue {
            key: key.into(),
            line: 2,
            reason: format!("cannot parse {v:?}"),
        })
    }
    let invalid = |key: &str, reason: String| FormatError::InvalidValue { key: key.into(), line: 2, reason };

    let mode = get("mode")?;
    let n: usize = num("N", get("N")?)?;
    let m: usize = num("m", get("m")?)?;
    let k: usize = num("k", get("k")?)?;
    let declared: usize = num("M", get("M")?)?;
    let max_repeats: usize = num("max_repeats", get("max_repeats")?)?;
    let channels_text = get("channels")?;
    let min: f64 = num("min", get("min")?)?;
    let max: f64 = num("max", get("max")?)?;

    let alphabet = match mode {
        "one-shot" => {
            if m != 0 || channels_text != "-" || min != 0.0 || max != 1.0 {
                return Err(invalid(
                    "mode",
                    "one-shot files must have m=0 channels=- min=0 max=1".into(),
                ));
            }
            let colors = u8::try_from(n).map_err(|_| invalid("N", format!("{n} colors is too many")))?;
            CodeAlphabet::one_shot(colors).map_err(|e| invalid("N", e.to_string()))?
        }
        "two-shot" => {
            let channels: ChannelSet =
                channels_text.parse().map_err(|e: PatternError| invalid("channels", e.to_string()))?;
            if n != 0 {
                return Err(invalid("N", "two-shot files must have N=0".into()));
            }
            if channels.len() != m {
                return Err(invalid("m", format!("m={m} but channels={channels_text}")));
            }
            CodeAlphabet::two_shot(channels)
        }
        other => return Err(invalid("mode", format!("unknown mode {other:?}"))),
    };

    let mut codes = Vec::with_capacity(declared.min(1 << 20));
    for (i, line) in lines.enumerate() {
        let lineno = i + 3;
        let bad = || FormatError::CodeOutOfAlphabet { line: lineno, text: line.to_string() };
        let code = match &alphabet {
            CodeAlphabet::OneShot { .. } => {
                // Canonical decimal only: no sign, no leading zeros.
                if line.is_empty() || !line.bytes().all(|b| b.is_ascii_digit()) || (line.len() > 1 && line.starts_with('0')) {
                    return Err(bad());
                }
                line.parse::<u8>().map_err(|_| bad())?
            }
            CodeAlphabet::TwoShot { channels } => {
                if line.len() != channels.len() {
                    return Err(bad());
                }
                let mut code = 0u8;
                for (j, ch) in line.chars().enumerate() {
                    match ch {
                        '+' => code |= 1 << j,
                        '-' => {}
                        _ => return Err(bad()),
                    }
                }
                code
            }
        };
        if !alphabet.contains(code) {
            return Err(bad());
        }
        codes.push(code);
    }
    if codes.len() != declared {
        return Err(FormatError::InconsistentLength { declared, found: codes.len() });
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(FormatError::Syntax { line: codes.len() + 2, reason: "missing final newline".into() });
    }
    let seq = StripeSequence::new(alphabet, codes, k, max_repeats)?;
    Ok(if seq.alphabet().is_two_shot() {
        Pattern::TwoShot(TwoShotPatternPair::new(seq, Levels { min, max })?)
    } else {
        Pattern::OneShot(seq)
    })
}

pub fn read_pattern(path: impl AsRef<Path>) -> Result<Pattern, FormatError> {
    decode_pattern(&std::fs::read_to_string(path)?)
}

pub fn write_pattern(pattern: &Pattern, path: impl AsRef<Path>) -> Result<(), FormatError> {
    std::fs::write(path, encode_pattern(pattern))?;
    Ok(())
}

/// Value type of a config key.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueKind {
    Float,
    Int,
    Bool,
    Text,
    /// Comma-separated floats of fixed arity.
    Floats(usize),
}

const REGION_KEYS: [(&str, ValueKind); 4] = [
    ("rect", ValueKind::Floats(4)),
    ("reflectance", ValueKind::Floats(3)),
    ("ambient", ValueKind::Floats(3)),
    ("shading", ValueKind::Float),
];

const SCHEMA: &[(&str, ValueKind)] = &[
    ("camera.focal_px", ValueKind::Float),
    ("camera.cx", ValueKind::Float),
    ("camera.cy", ValueKind::Float),
    ("camera.width", ValueKind::Int),
    ("camera.height", ValueKind::Int),
    ("projector.focal_px", ValueKind::Float),
    ("projector.cx", ValueKind::Float),
    ("projector.cy", ValueKind::Float),
    ("projector.width", ValueKind::Int),
    ("projector.height", ValueKind::Int),
    ("baseline.tx", ValueKind::Float),
    ("baseline.ty", ValueKind::Float),
    ("baseline.tz", ValueKind::Float),
    ("baseline.rx", ValueKind::Float),
    ("baseline.ry", ValueKind::Float),
    ("baseline.rz", ValueKind::Float),
    ("scene.type", ValueKind::Text),
    ("scene.plane.point", ValueKind::Floats(3)),
    ("scene.plane.normal", ValueKind::Floats(3)),
    ("scene.cylinder.point", ValueKind::Floats(3)),
    ("scene.cylinder.axis", ValueKind::Floats(3)),
    ("scene.cylinder.radius", ValueKind::Float),
    ("scene.heightfield.path", ValueKind::Text),
    ("scene.heightfield.origin", ValueKind::Floats(2)),
    ("scene.heightfield.cell", ValueKind::Float),
    ("scene.heightfield.depth_scale", ValueKind::Float),
    ("scene.reflectance", ValueKind::Floats(3)),
    ("scene.shading", ValueKind::Float),
    ("ambient.r", ValueKind::Float),
    ("ambient.g", ValueKind::Float),
    ("ambient.b", ValueKind::Float),
    ("noise.blur_sigma", ValueKind::Float),
    ("noise.sigma", ValueKind::Float),
    ("noise.bit_depth", ValueKind::Int),
    ("noise.clip", ValueKind::Bool),
    ("pattern.stripe_width", ValueKind::Int),
    ("hue.half_width", ValueKind::Float),
    ("hue.min_saturation", ValueKind::Float),
    ("hue.min_intensity", ValueKind::Float),
    ("decode.dead_zone", ValueKind::Float),
    ("decode.ratio_epsilon", ValueKind::Float),
    ("decode.min_run_px", ValueKind::Int),
    ("decode.max_gap_px", ValueKind::Int),
];

fn kind_of(key: &str) -> Option<ValueKind> {
    if let Some(&(_, kind)) = SCHEMA.iter().find(|(k, _)| *k == key) {
        return Some(kind);
    }
    let rest = key.strip_prefix("scene.region.")?;
    let (index, field) = rest.split_once('.')?;
    if index.is_empty() || !index.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    REGION_KEYS.iter().find(|(f, _)| *f == field).map(|&(_, kind)| kind)
}

#[derive(Debug, Clone, PartialEq)]
struct ConfigEntry {
    value: String,
    line: usize,
}

/// Schema-validated key=value configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    entries: BTreeMap<String, ConfigEntry>,
}

impl Config {
    /// Parse config text. Blank lines and `#` comments are skipped; every
    /// other line must be `key=value` with a known key and a well-typed value.
    pub fn parse(text: &str) -> Result<Self, FormatError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed.split_once('=').ok_or_else(|| FormatError::Syntax {
                line,
                reason: format!("expected key=value, found {trimmed:?}"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let kind = kind_of(key).ok_or_else(|| FormatError::UnknownKey { key: key.into(), line })?;
            check_kind(key, value, kind, line)?;
            if entries.contains_key(key) {
                return Err(FormatError::DuplicateKey { key: key.into(), line });
            }
            entries.insert(key.to_string(), ConfigEntry { value: value.to_string(), line });
        }
        Ok(Self { entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, FormatError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Overlay `other` on top of `self`; keys in `other` win.
    pub fn merged(mut self, other: &Config) -> Self {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
        self
    }

    /// Set a key programmatically (value validated against the schema).
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), FormatError> {
        let kind = kind_of(key).ok_or_else(|| FormatError::UnknownKey { key: key.into(), line: 0 })?;
        check_kind(key, value, kind, 0)?;
        self.entries.insert(key.into(), ConfigEntry { value: value.into(), line: 0 });
        Ok(())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    pub fn line_of(&self, key: &str) -> Option<usize> {
        self.entries.get(key).map(|e| e.line)
    }

    pub fn f64(&self, key: &str) -> Option<f64> {
        self.text(key).map(|v| v.parse().expect("validated at parse time"))
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        self.text(key).map(|v| v.parse().expect("validated at parse time"))
    }

    pub fn bool(&self, key: &str) -> Option<bool> {
        self.text(key).map(|v| v == "true")
    }

    pub fn floats(&self, key: &str) -> Option<Vec<f64>> {
        self.text(key)
            .map(|v| v.split(',').map(|x| x.trim().parse().expect("validated at parse time")).collect())
    }

    pub fn require_f64(&self, key: &str) -> Result<f64, FormatError> {
        self.f64(key).ok_or_else(|| FormatError::MissingKey(key.into()))
    }

    pub fn require_int(&self, key: &str) -> Result<i64, FormatError> {
        self.int(key).ok_or_else(|| FormatError::MissingKey(key.into()))
    }

    pub fn require_text(&self, key: &str) -> Result<&str, FormatError> {
        self.text(key).ok_or_else(|| FormatError::MissingKey(key.into()))
    }

    pub fn require_floats(&self, key: &str) -> Result<Vec<f64>, FormatError> {
        self.floats(key).ok_or_else(|| FormatError::MissingKey(key.into()))
    }

    /// Build an `InvalidValue` error for `key` pointing at its line.
    pub fn invalid(&self, key: &str, reason: impl Into<String>) -> FormatError {
        FormatError::InvalidValue {
            key: key.into(),
            line: self.line_of(key).unwrap_or(0),
            reason: reason.into(),
        }
    }

    /// Indices `i` for which some `scene.region.<i>.*` key is present, ascending.
    pub fn region_indices(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .keys()
            .filter_map(|k| k.strip_prefix("scene.region."))
            .filter_map(|r| r.split_once('.').and_then(|(i, _)| i.parse().ok()))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn check_kind(key: &str, value: &str, kind: ValueKind, line: usize) -> Result<(), FormatError> {
    let invalid = |reason: String| FormatError::InvalidValue { key: key.into(), line, reason };
    let finite = |v: &str| v.trim().parse::<f64>().ok().filter(|x| x.is_finite());
    match kind {
        ValueKind::Float => {
            finite(value).ok_or_else(|| invalid(format!("expected a number, found {value:?}")))?;
        }
        ValueKind::Int => {
            value.parse::<i64>().map_err(|_| invalid(format!("expected an integer, found {value:?}")))?;
        }
        ValueKind::Bool => {
            if value != "true" && value != "false" {
                return Err(invalid(format!("expected true or false, found {value:?}")));
            }
        }
        ValueKind::Text => {
            if value.is_empty() {
                return Err(invalid("empty value".into()));
            }
        }
        ValueKind::Floats(n) => {
            let parts: Vec<&str> = value.split(',').collect();
            if parts.len() != n || parts.iter().any(|p| finite(p).is_none()) {
                return Err(invalid(format!("expected {n} comma-separated numbers, found {value:?}")));
            }
        }
    }
    Ok(())
}

/// Ordered `key=value` report, keys namespaced per stage (e.g. `decode.matched_pct`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, other: Report) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn encode(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn decode(text: &str) -> Result<Self, FormatError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (k, v) = line.split_once('=').ok_or_else(|| FormatError::Syntax {
                line: i + 1,
                reason: format!("expected key=value, found {line:?}"),
            })?;
            if k.is_empty() {
                return Err(FormatError::Syntax { line: i + 1, reason: "empty key".into() });
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Self { entries })
    }
}

/// ASCII PLY with one `double x y z` vertex per point.
pub fn encode_ply(points: &[[f64; 3]]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }
    out
}

/// Parse the vertex list of a PLY written by [`encode_ply`].
pub fn decode_ply(text: &str) -> Result<Vec<[f64; 3]>, FormatError> {
    fn expect_line<'a>(
        lines: &mut impl Iterator<Item = (usize, &'a str)>,
        want: &str,
    ) -> Result<(), FormatError> {
        match lines.next() {
            Some((_, l)) if l == want => Ok(()),
            Some((i, l)) => Err(FormatError::Syntax { line: i + 1, reason: format!("expected {want:?}, found {l:?}") }),
            None => Err(FormatError::MalformedHeader(format!("missing {want:?}"))),
        }
    }
    let mut lines = text.lines().enumerate();
    expect_line(&mut lines, "ply")?;
    expect_line(&mut lines, "format ascii 1.0")?;
    let (i, line) = lines.next().ok_or_else(|| FormatError::MalformedHeader("missing vertex count".into()))?;
    let count: usize = line
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| FormatError::Syntax { line: i + 1, reason: format!("bad element line {line:?}") })?;
    for h in ["property double x", "property double y", "property double z", "end_header"] {
        expect_line(&mut lines, h)?;
    }
    let mut points = Vec::with_capacity(count.min(1 << 20));
    for (i, line) in lines {
        let coords: Vec<f64> = line
            .split(' ')
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| FormatError::Syntax { line: i + 1, reason: format!("bad vertex {line:?}") })?;
        if coords.len() != 3 {
            return Err(FormatError::Syntax { line: i + 1, reason: format!("expected 3 coordinates in {line:?}") });
        }
        points.push([coords[0], coords[1], coords[2]]);
    }
    if points.len() != count {
        return Err(FormatError::InconsistentLength { declared: count, found: points.len() });
    }
    Ok(points)
}
