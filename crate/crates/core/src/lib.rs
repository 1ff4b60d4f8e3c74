//! Color-stripe structured light: pattern synthesis, simulation, decoding and triangulation.

pub mod image;
pub mod io;
pub mod pattern;
pub mod radiometry;
pub mod scene;
pub mod decode;
pub mod geometry;
pub mod eval;
pub mod presets;
