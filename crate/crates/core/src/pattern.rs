//! Windowed-unique stripe sequences for one-shot (color) and two-shot
//! (sign-of-difference) imaging.
//!
//! A stripe is identified by the k-window of codes centered on it. One-shot
//! sequences draw codes from `N` projector colors with adjacent stripes
//! differing; two-shot sequences draw `m`-bit sign codes where adjacent
//! stripes differ in exactly one channel.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Errors raised while building or synthesizing stripe sequences.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PatternError {
    #[error("infeasible parameters: {windows} windows requested but only {capacity} are available")]
    Infeasible { windows: usize, capacity: u128 },
    #[error("synthesis failed: deepest prefix reached {deepest} of {target} stripes")]
    SynthesisFailed { deepest: usize, target: usize },
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("code {code} at stripe {index} is outside the alphabet")]
    CodeOutOfAlphabet { index: usize, code: u8 },
}

/// A camera/projector color channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    /// Position in an RGB triple.
    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }

    pub fn letter(self) -> char {
        match self {
            Channel::R => 'R',
            Channel::G => 'G',
            Channel::B => 'B',
        }
    }
}

/// Ordered, nonempty subset of {R, G, B}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ChannelSet(Vec<Channel>);

impl ChannelSet {
    pub fn new(channels: Vec<Channel>) -> Result<Self, PatternError> {
        if channels.is_empty() {
            return Err(PatternError::InvalidAlphabet("channel set is empty".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(PatternError::InvalidAlphabet(format!(
                    "channel {} listed twice",
                    c.letter()
                )));
            }
        }
        Ok(Self(channels))
    }

    /// The G and B pair, which has less crosstalk than R/G on typical rigs.
    pub fn gb() -> Self {
        Self(vec![Channel::G, Channel::B])
    }

    pub fn rgb() -> Self {
        Self(Channel::ALL.to_vec())
    }

    pub fn channels(&self) -> &[Channel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for ChannelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{}", c.letter())?;
        }
        Ok(())
    }
}

impl FromStr for ChannelSet {
    type Err = PatternError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let channels = s
            .chars()
            .map(|ch| match ch.to_ascii_uppercase() {
                'R' => Ok(Channel::R),
                'G' => Ok(Channel::G),
                'B' => Ok(Channel::B),
                other => Err(PatternError::InvalidAlphabet(format!(
                    "unknown channel letter {other:?}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(channels)
    }
}

/// The code space a stripe sequence draws from.
///
/// Two-shot codes are bit masks: bit `j` set means channel `channels[j]` is
/// brighter in the second frame than in the first (sign `+`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CodeAlphabet {
    OneShot { colors: u8 },
    TwoShot { channels: ChannelSet },
}

impl CodeAlphabet {
    pub fn one_shot(colors: u8) -> Result<Self, PatternError> {
        if colors < 2 {
            return Err(PatternError::InvalidAlphabet(format!(
                "one-shot alphabet needs at least 2 colors, got {colors}"
            )));
        }
        Ok(Self::OneShot { colors })
    }

    pub fn two_shot(channels: ChannelSet) -> Self {
        Self::TwoShot { channels }
    }

    pub fn is_two_shot(&self) -> bool {
        matches!(self, Self::TwoShot { .. })
    }

    /// Number of distinct codes: `N` for one-shot, `2^m` for two-shot.
    pub fn code_count(&self) -> usize {
        match self {
            Self::OneShot { colors } => *colors as usize,
            Self::TwoShot { channels } => 1 << channels.len(),
        }
    }

    pub fn contains(&self, code: u8) -> bool {
        (code as usize) < self.code_count()
    }

    /// Whether `b` may follow `a` in a valid sequence.
    pub fn is_transition(&self, a: u8, b: u8) -> bool {
        match self {
            Self::OneShot { .. } => a != b,
            Self::TwoShot { .. } => (a ^ b).count_ones() == 1,
        }
    }

    /// Codes allowed to follow `code`, in ascending order.
    pub fn successors(&self, code: u8) -> Vec<u8> {
        match self {
            Self::OneShot { colors } => (0..*colors).filter(|&c| c != code).collect(),
            Self::TwoShot { channels } => {
                let mut next: Vec<u8> = (0..channels.len()).map(|j| code ^ (1 << j)).collect();
                next.sort_unstable();
                next
            }
        }
    }

    /// Number of distinct valid k-windows over this alphabet.
    pub fn window_capacity(&self, k: usize) -> u128 {
        match self {
            Self::OneShot { colors } => count_one_shot_subpatterns(*colors as u64, k as u64),
            Self::TwoShot { channels } => {
                count_two_shot_subpatterns(channels.len() as u64, k as u64)
            }
        }
    }

    /// Sign string for a two-shot code, e.g. `"+-"`; `None` for one-shot.
    pub fn sign_string(&self, code: u8) -> Option<String> {
        match self {
            Self::OneShot { .. } => None,
            Self::TwoShot { channels } => Some(
                (0..channels.len())
                    .map(|j| if code & (1 << j) != 0 { '+' } else { '-' })
                    .collect(),
            ),
        }
    }
}

/// Number of adjacent-distinct k-windows over `colors` symbols: `N (N-1)^(k-1)`.
///
/// Saturates at `u128::MAX` for astronomically large inputs.
pub fn count_one_shot_subpatterns(colors: u64, k: u64) -> u128 {
    if k == 0 {
        return 0;
    }
    let n = colors as u128;
    let exp = u32::try_from(k - 1).unwrap_or(u32::MAX);
    n.saturating_mul(n.saturating_sub(1).saturating_pow(exp))
}

/// Number of k-windows of `m`-channel sign codes with single-channel
/// transitions: `2^m m^(k-1)`.
pub fn count_two_shot_subpatterns(channels: u64, k: u64) -> u128 {
    if k == 0 || channels == 0 {
        return 0;
    }
    let m = channels as u128;
    let exp = u32::try_from(k - 1).unwrap_or(u32::MAX);
    let codes = 2u128.saturating_pow(u32::try_from(channels).unwrap_or(u32::MAX));
    codes.saturating_mul(m.saturating_pow(exp))
}

/// An ordered stripe code sequence with its identification window length.
///
/// Construction only checks structure (alphabet membership, `k`, repeat
/// budget); pattern constraints are checked by [`verify_sequence`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripeSequence {
    alphabet: CodeAlphabet,
    codes: Vec<u8>,
    k: usize,
    max_repeats: usize,
}

impl StripeSequence {
    pub fn new(
        alphabet: CodeAlphabet,
        codes: Vec<u8>,
        k: usize,
        max_repeats: usize,
    ) -> Result<Self, PatternError> {
        if k == 0 {
            return Err(PatternError::InvalidParameter("window length k must be >= 1".into()));
        }
        if !(1..=2).contains(&max_repeats) {
            return Err(PatternError::InvalidParameter(format!(
                "max_repeats must be 1 or 2, got {max_repeats}"
            )));
        }
        if let Some((index, &code)) = codes.iter().enumerate().find(|(_, &c)| !alphabet.contains(c)) {
            return Err(PatternError::CodeOutOfAlphabet { index, code });
        }
        Ok(Self { alphabet, codes, k, max_repeats })
    }

    pub fn alphabet(&self) -> &CodeAlphabet {
        &self.alphabet
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Window length.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn max_repeats(&self) -> usize {
        self.max_repeats
    }

    /// Stripe count `M`.
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Offset of the center stripe inside a window: `(k - 1) / 2`.
    pub fn center_offset(&self) -> usize {
        (self.k - 1) / 2
    }

    /// Minimum distance between the two occurrences of a repeated window.
    pub fn min_repeat_separation(&self) -> usize {
        self.codes.len().div_ceil(4)
    }

    /// The window centered on stripe `center`, if it lies fully inside.
    pub fn window_centered_at(&self, center: usize) -> Option<&[u8]> {
        let start = center.checked_sub(self.center_offset())?;
        self.codes.get(start..start + self.k)
    }

    /// Whether stripe `id` is the center of some complete window.
    pub fn is_interior(&self, id: usize) -> bool {
        self.window_centered_at(id).is_some()
    }
}

/// Programmable projector intensity bounds for two-shot frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Levels {
    pub min: f64,
    pub max: f64,
}

impl Default for Levels {
    fn default() -> Self {
        Self { min: 0.0, max: 1.0 }
    }
}

/// Which of the two alternating projector frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    First,
    Second,
}

/// A two-shot sequence together with the intensity levels of both frames.
///
/// For a `+` channel the first frame projects `min` and the second `max`;
/// `-` is the reverse. Channels outside the alphabet stay dark in both.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoShotPatternPair {
    sequence: StripeSequence,
    levels: Levels,
}

impl TwoShotPatternPair {
    pub fn new(sequence: StripeSequence, levels: Levels) -> Result<Self, PatternError> {
        if !sequence.alphabet().is_two_shot() {
            return Err(PatternError::InvalidAlphabet(
                "a two-shot pair needs a two-shot alphabet".into(),
            ));
        }
        let ok = levels.min.is_finite()
            && levels.max.is_finite()
            && 0.0 <= levels.min
            && levels.min < levels.max
            && levels.max <= 1.0;
        if !ok {
            return Err(PatternError::InvalidParameter(format!(
                "levels must satisfy 0 <= min < max <= 1, got min={} max={}",
                levels.min, levels.max
            )));
        }
        Ok(Self { sequence, levels })
    }

    pub fn sequence(&self) -> &StripeSequence {
        &self.sequence
    }

    pub fn levels(&self) -> Levels {
        self.levels
    }

    pub fn channels(&self) -> &ChannelSet {
        match self.sequence.alphabet() {
            CodeAlphabet::TwoShot { channels } => channels,
            CodeAlphabet::OneShot { .. } => unreachable!("checked in new"),
        }
    }

    /// RGB projector levels of stripe `stripe` in `frame`.
    pub fn stripe_levels(&self, stripe: usize, frame: Frame) -> [f64; 3] {
        let code = self.sequence.codes()[stripe];
        let mut rgb = [0.0; 3];
        for (j, ch) in self.channels().channels().iter().enumerate() {
            let positive = code & (1 << j) != 0;
            let first_is_max = !positive;
            let is_max = match frame {
                Frame::First => first_is_max,
                Frame::Second => !first_is_max,
            };
            rgb[ch.index()] = if is_max { self.levels.max } else { self.levels.min };
        }
        rgb
    }

    pub fn frame_levels(&self, frame: Frame) -> Vec<[f64; 3]> {
        (0..self.sequence.len()).map(|i| self.stripe_levels(i, frame)).collect()
    }

    /// Per-channel `E2 - E1` of stripe `stripe`.
    pub fn delta_e(&self, stripe: usize) -> [f64; 3] {
        let e1 = self.stripe_levels(stripe, Frame::First);
        let e2 = self.stripe_levels(stripe, Frame::Second);
        [e2[0] - e1[0], e2[1] - e1[1], e2[2] - e1[2]]
    }
}

/// A complete projector pattern: one color sequence or a two-frame pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Pattern {
    OneShot(StripeSequence),
    TwoShot(TwoShotPatternPair),
}

impl Pattern {
    pub fn sequence(&self) -> &StripeSequence {
        match self {
            Pattern::OneShot(s) => s,
            Pattern::TwoShot(p) => p.sequence(),
        }
    }

    pub fn is_two_shot(&self) -> bool {
        matches!(self, Pattern::TwoShot(_))
    }
}

/// Maps each k-window to the centers of the stripes it identifies.
#[derive(Debug, Clone)]
pub struct WindowIndex {
    k: usize,
    center_offset: usize,
    entries: HashMap<Vec<u8>, Vec<usize>>,
}

impl WindowIndex {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn center_offset(&self) -> usize {
        self.center_offset
    }

    /// Center positions of `window`, in ascending order; empty if absent.
    pub fn lookup(&self, window: &[u8]) -> &[usize] {
        self.entries.get(window).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &[usize])> {
        self.entries.iter().map(|(w, p)| (w.as_slice(), p.as_slice()))
    }
}

pub fn build_window_index(seq: &StripeSequence) -> WindowIndex {
    let k = seq.k();
    let off = seq.center_offset();
    let mut entries: HashMap<Vec<u8>, Vec<usize>> = HashMap::new();
    for (start, w) in seq.codes().windows(k).enumerate() {
        entries.entry(w.to_vec()).or_default().push(start + off);
    }
    WindowIndex { k, center_offset: off, entries }
}

/// A single broken pattern constraint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// `codes[index] == codes[index + 1]`.
    Adjacent { index: usize },
    /// Two-shot: stripes `index` and `index + 1` differ in more than one channel.
    MultiChannelTransition { index: usize },
    /// The window occurs more often than the repeat budget allows.
    WindowRepeat { window: Vec<u8>, centers: Vec<usize> },
    /// Two occurrences of a window sit closer than `ceil(M/4)` stripes.
    RepeatTooClose { window: Vec<u8>, centers: Vec<usize>, min_separation: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Adjacent { index } => write!(f, "adjacent stripes {index} and {} share a code", index + 1),
            Self::MultiChannelTransition { index } => write!(
                f,
                "stripes {index} and {} differ in more than one channel",
                index + 1
            ),
            Self::WindowRepeat { window, centers } => {
                write!(f, "window {window:?} occurs {} times at centers {centers:?}", centers.len())
            }
            Self::RepeatTooClose { window, centers, min_separation } => write!(
                f,
                "window {window:?} repeats at centers {centers:?}, closer than {min_separation}"
            ),
        }
    }
}

/// Outcome of [`verify_sequence`]; empty iff every constraint holds.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerificationReport {
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_sequence(seq: &StripeSequence) -> VerificationReport {
    let mut violations = Vec::new();
    let codes = seq.codes();
    for (i, pair) in codes.windows(2).enumerate() {
        if pair[0] == pair[1] {
            violations.push(Violation::Adjacent { index: i });
        } else if !seq.alphabet().is_transition(pair[0], pair[1]) {
            violations.push(Violation::MultiChannelTransition { index: i });
        }
    }

    let index = build_window_index(seq);
    let min_sep = seq.min_repeat_separation();
    let mut repeated: Vec<(&[u8], &[usize])> = index.iter().filter(|(_, c)| c.len() > 1).collect();
    repeated.sort();
    for (window, centers) in repeated {
        if centers.len() > seq.max_repeats() {
            violations.push(Violation::WindowRepeat { window: window.to_vec(), centers: centers.to_vec() });
        }
        if centers.windows(2).any(|p| p[1] - p[0] < min_sep) {
            violations.push(Violation::RepeatTooClose {
                window: window.to_vec(),
                centers: centers.to_vec(),
                min_separation: min_sep,
            });
        }
    }
    VerificationReport { violations }
}

/// Synthesize a one-shot color sequence of `stripes` stripes over `colors` colors.
pub fn synthesize_one_shot(
    colors: u8,
    k: usize,
    stripes: usize,
    max_repeats: usize,
    seed: u64,
) -> Result<StripeSequence, PatternError> {
    synthesize(&CodeAlphabet::one_shot(colors)?, k, stripes, max_repeats, seed)
}

/// Synthesize a two-shot pair over `channels` with frame intensities `levels`.
pub fn synthesize_two_shot(
    channels: ChannelSet,
    k: usize,
    stripes: usize,
    max_repeats: usize,
    levels: Levels,
    seed: u64,
) -> Result<TwoShotPatternPair, PatternError> {
    // Validate levels before spending time on synthesis.
    let probe = StripeSequence::new(CodeAlphabet::two_shot(channels.clone()), vec![], 1, 1)?;
    TwoShotPatternPair::new(probe, levels)?;
    let seq = synthesize(&CodeAlphabet::two_shot(channels), k, stripes, max_repeats, seed)?;
    TwoShotPatternPair::new(seq, levels)
}

/// Synthesize a sequence over any alphabet.
///
/// For `k >= 2` the windows form a balanced, strongly connected graph on
/// (k-1)-windows, so a seeded random Eulerian circuit gives a cyclic
/// sequence of period `n` containing every k-window exactly once. Reading
/// `M` stripes from a random rotation of that cycle places any repeated
/// window exactly `n` stripes apart. When that spacing is too tight (or
/// `k = 1`) a randomized depth-first extension with backtracking is used.
pub fn synthesize(
    alphabet: &CodeAlphabet,
    k: usize,
    stripes: usize,
    max_repeats: usize,
    seed: u64,
) -> Result<StripeSequence, PatternError> {
    if k == 0 {
        return Err(PatternError::InvalidParameter("window length k must be >= 1".into()));
    }
    if !(1..=2).contains(&max_repeats) {
        return Err(PatternError::InvalidParameter(format!(
            "max_repeats must be 1 or 2, got {max_repeats}"
        )));
    }
    if stripes < k {
        return Err(PatternError::InvalidParameter(format!(
            "stripe count {stripes} is shorter than the window length {k}"
        )));
    }
    let windows = stripes - k + 1;
    let capacity = alphabet.window_capacity(k);
    if windows as u128 > capacity.saturating_mul(max_repeats as u128) {
        return Err(PatternError::Infeasible {
            windows,
            capacity: capacity.saturating_mul(max_repeats as u128),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_sep = stripes.div_ceil(4);
    if k >= 2 {
        let cycle = eulerian_cycle(alphabet, k, &mut rng);
        let period = cycle.len();
        if windows <= period || (max_repeats == 2 && period >= min_sep) {
            let offset = rng.random_range(0..period);
            let codes = (0..stripes).map(|i| cycle[(offset + i) % period]).collect();
            let seq = StripeSequence::new(alphabet.clone(), codes, k, max_repeats)?;
            debug_assert!(verify_sequence(&seq).is_ok());
            return Ok(seq);
        }
    }
    let codes = backtracking_search(alphabet, k, stripes, max_repeats, min_sep, &mut rng)?;
    StripeSequence::new(alphabet.clone(), codes, k, max_repeats)
}

/// Random Eulerian circuit over the (k-1)-window graph, returned as the
/// cyclic code sequence (one code per edge). Requires `k >= 2`.
fn eulerian_cycle(alphabet: &CodeAlphabet, k: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    // Random start node: a random valid walk of k-1 codes.
    let mut start = Vec::with_capacity(k - 1);
    start.push(rng.random_range(0..alphabet.code_count()) as u8);
    while start.len() < k - 1 {
        let succ = alphabet.successors(*start.last().unwrap());
        start.push(*succ.choose(rng).unwrap());
    }

    let mut unused: HashMap<Vec<u8>, Vec<u8>> = HashMap::new();
    let mut out_edges = |node: &[u8], rng: &mut ChaCha8Rng| -> Option<u8> {
        let list = unused.entry(node.to_vec()).or_insert_with(|| {
            let mut s = alphabet.successors(*node.last().unwrap());
            s.shuffle(rng);
            s
        });
        list.pop()
    };

    // Iterative Hierholzer; each stack entry is (node, code used to reach it).
    let mut stack: Vec<(Vec<u8>, Option<u8>)> = vec![(start, None)];
    let mut circuit = Vec::new();
    while let Some((node, _)) = stack.last() {
        match out_edges(node, rng) {
            Some(code) => {
                let mut next = node[1..].to_vec();
                next.push(code);
                stack.push((next, Some(code)));
            }
            None => {
                let (_, via) = stack.pop().unwrap();
                if let Some(code) = via {
                    circuit.push(code);
                }
            }
        }
    }
    circuit.reverse();
    circuit
}

const SEARCH_BUDGET: usize = 2_000_000;

fn backtracking_search(
    alphabet: &CodeAlphabet,
    k: usize,
    stripes: usize,
    max_repeats: usize,
    min_sep: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<u8>, PatternError> {
    let mut codes: Vec<u8> = Vec::with_capacity(stripes);
    // Window start positions, keyed by window content.
    let mut seen: HashMap<Vec<u8>, Vec<usize>> = HashMap::new();
    // Candidate codes still to try at each depth.
    let mut frontier: Vec<Vec<u8>> = Vec::with_capacity(stripes);
    let mut first: Vec<u8> = (0..alphabet.code_count() as u8).collect();
    first.shuffle(rng);
    frontier.push(first);
    let mut deepest = 0;
    let mut steps = 0;

    while let Some(candidates) = frontier.last_mut() {
        steps += 1;
        if steps > SEARCH_BUDGET {
            break;
        }
        let Some(code) = candidates.pop() else {
            frontier.pop();
            let len = codes.len();
            if len >= k {
                let start = len - k;
                if let Some(list) = seen.get_mut(&codes[start..]) {
                    list.retain(|&p| p != start);
                }
            }
            codes.pop();
            continue;
        };
        codes.push(code);
        let len = codes.len();
        let mut ok = true;
        if len >= k {
            let start = len - k;
            let w = &codes[start..];
            let prior = seen.get(w).map(Vec::as_slice).unwrap_or(&[]);
            ok = prior.len() < max_repeats && prior.iter().all(|&p| start - p >= min_sep);
            if ok {
                seen.entry(w.to_vec()).or_default().push(start);
            }
        }
        if !ok {
            codes.pop();
            continue;
        }
        deepest = deepest.max(len);
        if len == stripes {
            return Ok(codes);
        }
        let mut next = alphabet.successors(code);
        next.shuffle(rng);
        frontier.push(next);
    }
    Err(PatternError::SynthesisFailed { deepest, target: stripes })
}
