use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stripelight::decode::{decode, read_id_map, write_id_map, Capture, DecodeError, DecodeParams, Method};
use stripelight::eval::{comparison_table, evaluate, region_mask, Experiment, GroundTruth, PipelineError, GT_DEPTH_SCALE};
use stripelight::geometry::{depth_from_buffer, export_depth_pgm, export_ply, reconstruct};
use stripelight::image::{buffer_to_rgb, rgb_to_buffer, Grid, RgbImage};
use stripelight::io::{read_pattern, read_pnm, write_pattern, BitDepth, Config, FormatError, Report};
use stripelight::pattern::{synthesize_one_shot, synthesize_two_shot, ChannelSet, Levels, Pattern, PatternError};
use stripelight::presets::{experiment_from_config, preset_config, RIG};

#[derive(Parser)]
#[command(name = "stripelight", version, about = "Color-stripe structured light: generate, simulate, decode, reconstruct, evaluate")]
struct Cli {
    /// Progress and timings on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a stripe pattern and write it as an SLPAT file.
    Gen(GenArgs),
    /// Render camera frames and ground truth for a pattern on a scene.
    Simulate(SimulateArgs),
    /// Decode captured frames into a stripe ID map.
    Decode(DecodeArgs),
    /// Triangulate an ID map into a depth image and point cloud.
    Reconstruct(ReconstructArgs),
    /// Score an ID map against ground truth, or compare methods on one scene.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    OneShot,
    TwoShot,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "one-shot")]
    mode: Mode,
    /// Number of colors (one-shot).
    #[arg(long = "N", default_value_t = 3)]
    colors: u8,
    /// Sign channels (two-shot).
    #[arg(long, default_value = "GB")]
    channels: String,
    /// Window length.
    #[arg(long = "k", default_value_t = 7)]
    k: usize,
    /// Number of stripes.
    #[arg(long = "M")]
    stripes: usize,
    /// Occurrences allowed per window (1 or 2).
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Two-shot projector levels as MIN,MAX.
    #[arg(long, default_value = "0,1")]
    levels: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SceneArgs {
    /// Scene preset: plane, cylinder, panel, clipdark or heightfield:<pgm>.
    #[arg(long, default_value = "plane")]
    scene: String,
    /// Config file overlaid on the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Additive noise sigma (overrides noise.sigma).
    #[arg(long)]
    noise: Option<f64>,
    /// Blur sigma in pixels (overrides noise.blur_sigma).
    #[arg(long)]
    blur: Option<f64>,
    /// Projector columns per stripe (overrides pattern.stripe_width).
    #[arg(long)]
    stripe_width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    pattern: PathBuf,
    #[command(flatten)]
    scene: SceneArgs,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    pattern: PathBuf,
    /// One frame for hue, two for sign and ratio.
    #[arg(long, num_args = 1..=2, required = true)]
    frames: Vec<PathBuf>,
    /// Projector-dark frame, required by the ratio method.
    #[arg(long)]
    ambient_frame: Option<PathBuf>,
    /// Defaults to hue for one-shot and sign for two-shot patterns.
    #[arg(long)]
    method: Option<Method>,
    /// Config supplying hue.* and decode.* overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Accepted for interface uniformity; decoding is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ID map PGM; stats go to stdout and to <out>.stats.
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    ids: PathBuf,
    #[arg(long)]
    pattern: PathBuf,
    /// Config with the rig and pattern.stripe_width; defaults to the built-in rig.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    stripe_width: Option<usize>,
    /// Meters per depth unit in the output PGM.
    #[arg(long, default_value_t = GT_DEPTH_SCALE)]
    depth_scale: f64,
    /// Point cloud output.
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Accepted for interface uniformity; reconstruction is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Depth PGM (a .meta sidecar is written next to it).
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run hue, sign and ratio on the same simulated scene and print a table.
    #[arg(long)]
    compare: bool,
    /// ID map to score.
    #[arg(long, required_unless_present = "compare")]
    ids: Option<PathBuf>,
    /// Directory holding gt_id.pgm, gt_depth.pgm and gt_region.pgm.
    #[arg(long, required_unless_present = "compare")]
    gt: Option<PathBuf>,
    /// Reconstructed depth PGM; scale read from its .meta sidecar.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Score only pixels of these scene regions.
    #[arg(long)]
    region: Vec<u16>,
    /// One-shot pattern for --compare (default: 3 colors, k=7, 384 stripes, 2 repeats).
    #[arg(long)]
    one_shot: Option<PathBuf>,
    /// Two-shot pattern for --compare (default: GB, k=7, 256 stripes, levels 0.2,1).
    #[arg(long)]
    two_shot: Option<PathBuf>,
    #[command(flatten)]
    scene: SceneArgs,
    /// Report file (key=value).
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Bad flag combinations detected after parsing.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;

fn pattern_exit(p: &PatternError) -> u8 {
    match p {
        PatternError::Infeasible { .. } | PatternError::SynthesisFailed { .. } => EXIT_INFEASIBLE,
        PatternError::InvalidAlphabet(_) | PatternError::InvalidParameter(_) => EXIT_USAGE,
        PatternError::CodeOutOfAlphabet { .. } => EXIT_DATA,
    }
}

fn format_exit(f: &FormatError) -> u8 {
    match f {
        FormatError::Pattern(p) => pattern_exit(p),
        _ => EXIT_DATA,
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(p) = cause.downcast_ref::<PatternError>() {
            return pattern_exit(p);
        }
        if let Some(f) = cause.downcast_ref::<FormatError>() {
            return format_exit(f);
        }
        if let Some(d) = cause.downcast_ref::<DecodeError>() {
            return match d {
                DecodeError::ModeMismatch(_) => EXIT_USAGE,
                DecodeError::Format(f) => format_exit(f),
                DecodeError::SizeMismatch(..) => EXIT_DATA,
            };
        }
        if let Some(PipelineError::Format(f)) = cause.downcast_ref::<PipelineError>() {
            return format_exit(f);
        }
    }
    EXIT_DATA
}

struct Log {
    verbose: bool,
    start: Instant,
}

impl Log {
    fn say(&self, msg: impl fmt::Display) {
        if self.verbose {
            eprintln!("[{:7.3}s] {msg}", self.start.elapsed().as_secs_f64());
        }
    }
}

fn parse_levels(text: &str) -> Result<Levels> {
    let parts: Vec<&str> = text.split(',').collect();
    let [min, max] = parts.as_slice() else {
        return Err(usage(format!("--levels expects MIN,MAX, found {text:?}")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| usage(format!("--levels: {s:?} is not a number")));
    Ok(Levels { min: num(min)?, max: num(max)? })
}

fn cmd_gen(a: &GenArgs, log: &Log) -> Result<()> {
    let pattern = match a.mode {
        Mode::OneShot => Pattern::OneShot(synthesize_one_shot(a.colors, a.k, a.stripes, a.repeats, a.seed)?),
        Mode::TwoShot => {
            let channels: ChannelSet = a.channels.parse()?;
            let levels = parse_levels(&a.levels)?;
            Pattern::TwoShot(synthesize_two_shot(channels, a.k, a.stripes, a.repeats, levels, a.seed)?)
        }
    };
    write_pattern(&pattern, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    log.say(format_args!("wrote {} stripes to {}", pattern.sequence().len(), a.out.display()));
    Ok(())
}

/// Preset overlaid with the config file and flag overrides.
fn scene_config(s: &SceneArgs) -> Result<(Config, PathBuf)> {
    let mut cfg = preset_config(&s.scene).map_err(|e| match e {
        FormatError::InvalidValue { reason, .. } => usage(reason),
        other => anyhow::Error::from(other).context(format!("loading scene {}", s.scene)),
    })?;
    let mut base = PathBuf::from(".");
    if let Some(path) = &s.config {
        let overlay = Config::read(path).with_context(|| format!("reading {}", path.display()))?;
        cfg = cfg.merged(&overlay);
        base = path.parent().map(Path::to_path_buf).unwrap_or(base);
    }
    if let Some(sigma) = s.noise {
        cfg.set("noise.sigma", &sigma.to_string()).map_err(|e| usage(format!("--noise: {e}")))?;
    }
    if let Some(blur) = s.blur {
        cfg.set("noise.blur_sigma", &blur.to_string()).map_err(|e| usage(format!("--blur: {e}")))?;
    }
    if let Some(w) = s.stripe_width {
        cfg.set("pattern.stripe_width", &w.to_string()).map_err(|e| usage(format!("--stripe-width: {e}")))?;
    }
    Ok((cfg, base))
}

fn experiment(s: &SceneArgs) -> Result<(Config, Experiment)> {
    let (cfg, base) = scene_config(s)?;
    let e = experiment_from_config(&cfg, &base, s.seed)?;
    Ok((cfg, e))
}

fn encode_config(cfg: &Config) -> String {
    cfg.keys().map(|k| format!("{k}={}\n", cfg.text(k).unwrap_or_default())).collect()
}

fn write_frame(img: &RgbImage, depth: BitDepth, path: &Path) -> Result<()> {
    stripelight::io::write_pnm(&rgb_to_buffer(img, depth), path).with_context(|| format!("writing {}", path.display()))
}

fn cmd_simulate(a: &SimulateArgs, log: &Log) -> Result<()> {
    let pattern = read_pattern(&a.pattern).with_context(|| format!("reading {}", a.pattern.display()))?;
    let (cfg, e) = experiment(&a.scene)?;
    log.say(format_args!("rendering {} on {}", a.pattern.display(), a.scene.scene));
    let captured = e.capture(&pattern)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let depth = e.noise.bit_depth.unwrap_or(BitDepth::Sixteen);
    let names: &[&str] = if pattern.is_two_shot() { &["frame1.ppm", "frame2.ppm", "ambient.ppm"] } else { &["frame.ppm"] };
    for (frame, name) in captured.frames.iter().zip(names) {
        write_frame(&frame.image, depth, &a.out.join(name))?;
    }
    captured.gt.write(&a.out, "gt")?;
    std::fs::write(a.out.join("simulate.cfg"), encode_config(&cfg))?;
    let mut r = Report::new();
    r.push("simulate.scene", &a.scene.scene);
    r.push("simulate.frames", names.join(","));
    r.push("simulate.gt_pixels", captured.gt.stripe_id.as_slice().iter().flatten().count());
    r.push("simulate.seed", a.scene.seed);
    print!("{}", r.encode());
    log.say(format_args!("wrote {}", a.out.display()));
    Ok(())
}

fn read_frame(path: &Path) -> Result<RgbImage> {
    let buf = read_pnm(path).with_context(|| format!("reading {}", path.display()))?;
    buffer_to_rgb(&buf).with_context(|| format!("reading {}", path.display()))
}

fn decode_params(config: Option<&Path>) -> Result<DecodeParams> {
    match config {
        None => Ok(DecodeParams::default()),
        Some(p) => {
            let cfg = Config::read(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(DecodeParams::from_config(&cfg)?)
        }
    }
}

fn cmd_decode(a: &DecodeArgs, log: &Log) -> Result<()> {
    let pattern = read_pattern(&a.pattern).with_context(|| format!("reading {}", a.pattern.display()))?;
    let method = a.method.unwrap_or(if pattern.is_two_shot() { Method::Sign } else { Method::Hue });
    let needed = if method == Method::Hue { 1 } else { 2 };
    if a.frames.len() != needed {
        return Err(usage(format!("{} decoding takes {needed} frame(s), got {}", method.name(), a.frames.len())));
    }
    if (method == Method::Ratio) != a.ambient_frame.is_some() {
        return Err(usage("--ambient-frame is required by, and only accepted with, --method ratio"));
    }
    let params = decode_params(a.config.as_deref())?;
    let frames = a.frames.iter().map(|p| read_frame(p)).collect::<Result<Vec<_>>>()?;
    let ambient = a.ambient_frame.as_deref().map(read_frame).transpose()?;
    let capture = match (&frames[..], &ambient) {
        ([f], None) => Capture::OneShot(f),
        ([f1, f2], None) => Capture::TwoShot(f1, f2),
        ([f1, f2], Some(amb)) => Capture::Ratio(f1, f2, amb),
        _ => unreachable!("frame count validated above"),
    };
    log.say(format_args!("decoding with {}", method.name()));
    let decoded = decode(&pattern, capture, &params)?;
    write_id_map(&decoded.ids, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let report = decoded.stats.to_report(method);
    std::fs::write(sidecar(&a.out, "stats"), report.encode())?;
    print!("{}", report.encode());
    Ok(())
}

fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn cmd_reconstruct(a: &ReconstructArgs, log: &Log) -> Result<()> {
    let pattern = read_pattern(&a.pattern).with_context(|| format!("reading {}", a.pattern.display()))?;
    let ids = read_id_map(&a.ids).with_context(|| format!("reading {}", a.ids.display()))?;
    let mut cfg = Config::parse(RIG)?;
    if let Some(path) = &a.config {
        cfg = cfg.merged(&Config::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    if let Some(w) = a.stripe_width {
        cfg.set("pattern.stripe_width", &w.to_string()).map_err(|e| usage(format!("--stripe-width: {e}")))?;
    }
    let rig = stripelight::scene::RigCalibration::from_config(&cfg)?;
    let stripe_width = match cfg.int("pattern.stripe_width").unwrap_or(1) {
        w if w >= 1 => w as usize,
        _ => return Err(usage("pattern.stripe_width must be at least 1")),
    };
    if !(a.depth_scale.is_finite() && a.depth_scale > 0.0) {
        return Err(usage("--depth-scale must be positive"));
    }
    let range = reconstruct(&ids, &rig, pattern.sequence(), stripe_width)?;
    export_depth_pgm(&range, &a.out, a.depth_scale)?;
    if let Some(ply) = &a.ply {
        export_ply(&range, ply)?;
    }
    let mut r = Report::new();
    r.push("reconstruct.valid_pixels", range.valid_count());
    r.push("reconstruct.stripe_width", stripe_width);
    print!("{}", r.encode());
    log.say(format_args!("triangulated {} pixels", range.valid_count()));
    Ok(())
}

fn read_depth(path: &Path) -> Result<Grid<Option<f64>>> {
    let meta_path = sidecar(path, "meta");
    let scale = match std::fs::read_to_string(&meta_path) {
        Ok(text) => {
            let meta = Report::decode(&text)?;
            let raw = meta.get("depth_scale").context("depth sidecar lacks depth_scale")?;
            raw.parse::<f64>().map_err(|_| FormatError::MalformedHeader(format!("bad depth_scale {raw:?}")))?
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => GT_DEPTH_SCALE,
        Err(e) => return Err(e).with_context(|| format!("reading {}", meta_path.display())),
    };
    let buf = read_pnm(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(depth_from_buffer(&buf, scale)?)
}

fn region_filter(gt: &GroundTruth, regions: &[u16]) -> Option<Grid<bool>> {
    if regions.is_empty() {
        return None;
    }
    let masks: Vec<Grid<bool>> = regions.iter().map(|&r| region_mask(gt, r)).collect();
    Some(Grid::from_fn(gt.region.width(), gt.region.height(), |x, y| masks.iter().any(|m| *m.get(x, y))))
}

fn emit(report: &Report, out: Option<&Path>) -> Result<()> {
    print!("{}", report.encode());
    if let Some(path) = out {
        std::fs::write(path, report.encode()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs, log: &Log) -> Result<()> {
    if a.compare {
        return compare(a, log);
    }
    let (Some(ids_path), Some(gt_dir)) = (&a.ids, &a.gt) else {
        return Err(usage("--ids and --gt are required without --compare"));
    };
    let ids = read_id_map(ids_path).with_context(|| format!("reading {}", ids_path.display()))?;
    let gt = GroundTruth::read(gt_dir, "gt").with_context(|| format!("reading ground truth in {}", gt_dir.display()))?;
    if !ids.same_size(&gt.stripe_id) {
        bail!(FormatError::MalformedHeader("ID map and ground truth differ in size".into()));
    }
    let depth = a.depth.as_deref().map(read_depth).transpose()?;
    if depth.as_ref().is_some_and(|d| !d.same_size(&gt.depth)) {
        bail!(FormatError::MalformedHeader("depth map and ground truth differ in size".into()));
    }
    let mask = region_filter(&gt, &a.region);
    let report = evaluate(&ids, &gt, mask.as_ref(), depth.as_ref());
    emit(&report.to_report("evaluate"), a.out.as_deref())
}

fn compare(a: &EvaluateArgs, log: &Log) -> Result<()> {
    let (_, e) = experiment(&a.scene)?;
    let load = |path: &Option<PathBuf>, default: &dyn Fn() -> Result<Pattern, PatternError>| -> Result<Pattern> {
        match path {
            Some(p) => read_pattern(p).with_context(|| format!("reading {}", p.display())),
            None => Ok(default()?),
        }
    };
    let seed = a.scene.seed;
    let one = load(&a.one_shot, &|| synthesize_one_shot(3, 7, 384, 2, seed).map(Pattern::OneShot))?;
    let two = load(&a.two_shot, &|| {
        synthesize_two_shot(ChannelSet::gb(), 7, 256, 1, Levels { min: 0.2, max: 1.0 }, seed).map(Pattern::TwoShot)
    })?;
    if one.is_two_shot() || !two.is_two_shot() {
        return Err(usage("--one-shot and --two-shot must name patterns of those kinds"));
    }
    log.say("capturing one-shot frame");
    let one_cap = e.capture(&one)?;
    log.say("capturing two-shot frames");
    let two_cap = e.capture(&two)?;
    let mut columns = Vec::new();
    let mut report = Report::new();
    for (method, pattern, cap) in [(Method::Hue, &one, &one_cap), (Method::Sign, &two, &two_cap), (Method::Ratio, &two, &two_cap)] {
        log.say(format_args!("running {}", method.name()));
        let run = match e.run(pattern, cap, method) {
            Ok(run) => run,
            Err(PipelineError::Decode(DecodeError::ModeMismatch(msg))) => {
                log.say(format_args!("skipping {}: {msg}", method.name()));
                continue;
            }
            Err(other) => return Err(other.into()),
        };
        let mask = region_filter(&cap.gt, &a.region);
        let scored = evaluate(&run.decoded.ids, &cap.gt, mask.as_ref(), Some(&run.range.depth)).with_decode(&run.decoded);
        report.extend(scored.to_report(method.name()));
        columns.push((method.name().to_string(), scored));
    }
    print!("{}", comparison_table(&columns));
    if let Some(path) = &a.out {
        std::fs::write(path, report.encode()).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let log = Log { verbose: cli.verbose, start: Instant::now() };
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a, &log),
        Command::Simulate(a) => cmd_simulate(a, &log),
        Command::Decode(a) => cmd_decode(a, &log),
        Command::Reconstruct(a) => cmd_reconstruct(a, &log),
        Command::Evaluate(a) => cmd_evaluate(a, &log),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
