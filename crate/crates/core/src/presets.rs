//! Built-in rig and scene configurations.

use std::path::Path;

use crate::decode::DecodeParams;
use crate::eval::{Experiment, PipelineError};
use crate::io::{read_pnm, Config, FormatError};
use crate::scene::{NoiseParams, RigCalibration, SceneSpec};

pub const RIG: &str = include_str!("../presets/rig.cfg");

const SCENES: [(&str, &str); 4] = [
    ("plane", include_str!("../presets/plane.cfg")),
    ("cylinder", include_str!("../presets/cylinder.cfg")),
    ("panel", include_str!("../presets/panel.cfg")),
    ("clipdark", include_str!("../presets/clipdark.cfg")),
];

/// Width in meters covered by a `heightfield:<path>` preset grid.
pub const HEIGHTFIELD_SPAN_M: f64 = 0.9;

/// Meters per sample unit for `heightfield:<path>` presets.
pub const HEIGHTFIELD_DEPTH_SCALE: f64 = 1e-4;

pub fn scene_names() -> impl Iterator<Item = &'static str> {
    SCENES.iter().map(|(n, _)| *n)
}

/// Rig config overlaid with the named scene. `heightfield:<path>` loads a
/// 16-bit depth PGM centered on the optical axis.
pub fn preset_config(name: &str) -> Result<Config, FormatError> {
    let rig = Config::parse(RIG)?;
    if let Some(path) = name.strip_prefix("heightfield:") {
        let img = read_pnm(path)?;
        let cell = HEIGHTFIELD_SPAN_M / (img.width().max(2) - 1) as f64;
        let origin_x = -cell * (img.width() as f64 - 1.0) / 2.0;
        let origin_y = -cell * (img.height() as f64 - 1.0) / 2.0;
        let abs = std::path::absolute(path)?;
        let mut cfg = Config::parse(SCENES[0].1)?;
        cfg.set("scene.type", "heightfield")?;
        cfg.set("scene.heightfield.path", &abs.to_string_lossy())?;
        cfg.set("scene.heightfield.origin", &format!("{origin_x},{origin_y}"))?;
        cfg.set("scene.heightfield.cell", &cell.to_string())?;
        cfg.set("scene.heightfield.depth_scale", &HEIGHTFIELD_DEPTH_SCALE.to_string())?;
        let mut scene = Config::default();
        for key in cfg.keys().filter(|k| !k.starts_with("scene.plane.")) {
            scene.set(key, cfg.text(key).expect("key listed"))?;
        }
        return Ok(rig.merged(&scene));
    }
    let (_, text) = SCENES.iter().find(|(n, _)| *n == name).ok_or_else(|| FormatError::InvalidValue {
        key: "scene".into(),
        line: 0,
        reason: format!("unknown preset {name:?}; expected one of {:?} or heightfield:<path>", scene_names().collect::<Vec<_>>()),
    })?;
    Ok(rig.merged(&Config::parse(text)?))
}

/// Experiment described by a full config. Relative heightfield paths resolve against `base_dir`.
pub fn experiment_from_config(cfg: &Config, base_dir: &Path, seed: u64) -> Result<Experiment, PipelineError> {
    let stripe_width = match cfg.int("pattern.stripe_width") {
        None => 1,
        Some(w) if w >= 1 => w as usize,
        Some(_) => return Err(cfg.invalid("pattern.stripe_width", "must be at least 1").into()),
    };
    Ok(Experiment {
        scene: SceneSpec::from_config(cfg, base_dir)?,
        rig: RigCalibration::from_config(cfg)?,
        stripe_width,
        noise: NoiseParams::from_config(cfg)?,
        params: DecodeParams::from_config(cfg)?,
        seed,
    })
}

/// Experiment for a named preset.
pub fn preset_experiment(name: &str, seed: u64) -> Result<Experiment, PipelineError> {
    experiment_from_config(&preset_config(name)?, Path::new("."), seed)
}
