//! Row-major pixel grids and conversions to integer image buffers.

use crate::io::{BitDepth, FormatError, ImageBuffer};
use crate::radiometry::Rgb;

/// A `width x height` row-major grid of `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

pub type RgbImage = Grid<Rgb>;

impl<T: Clone> Grid<T> {
    pub fn new(width: usize, height: usize, fill: T) -> Self {
        Self { width, height, data: vec![fill; width * height] }
    }
}

impl<T> Grid<T> {
    /// Panics if `data.len() != width * height`.
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "grid data length mismatch");
        Self { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn same_size<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[T] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid { width: self.width, height: self.height, data: self.data.iter().map(f).collect() }
    }
}

/// Round to the nearest code of `depth` after clamping to `[0, 1]`.
pub fn quantize(v: f64, depth: BitDepth) -> u16 {
    let max = depth.maxval() as f64;
    (v.clamp(0.0, 1.0) * max).round() as u16
}

pub fn dequantize(s: u16, depth: BitDepth) -> f64 {
    s as f64 / depth.maxval() as f64
}

/// Quantize an RGB image to a 3-channel buffer.
pub fn rgb_to_buffer(img: &RgbImage, depth: BitDepth) -> ImageBuffer {
    let samples = img
        .as_slice()
        .iter()
        .flat_map(|p| p.to_array().map(|v| quantize(v, depth)))
        .collect();
    ImageBuffer::new(img.width(), img.height(), 3, depth, samples).expect("dimensions are consistent")
}

pub fn buffer_to_rgb(buf: &ImageBuffer) -> Result<RgbImage, FormatError> {
    if buf.channels() != 3 {
        return Err(FormatError::MalformedHeader(format!(
            "expected an RGB image, found {} channel(s)",
            buf.channels()
        )));
    }
    let d = buf.depth();
    let data = buf
        .samples()
        .chunks_exact(3)
        .map(|c| Rgb::new(dequantize(c[0], d), dequantize(c[1], d), dequantize(c[2], d)))
        .collect();
    Ok(Grid::from_vec(buf.width(), buf.height(), data))
}

/// Encode optional integer labels as a 16-bit gray buffer, `65535` marking `None`.
pub fn labels_to_buffer(grid: &Grid<Option<u32>>) -> Result<ImageBuffer, FormatError> {
    let mut samples = Vec::with_capacity(grid.as_slice().len());
    for v in grid.as_slice() {
        samples.push(match v {
            None => u16::MAX,
            Some(id) if *id < u16::MAX as u32 => *id as u16,
            Some(id) => {
                return Err(FormatError::MalformedHeader(format!("label {id} does not fit in 16 bits")))
            }
        });
    }
    ImageBuffer::new(grid.width(), grid.height(), 1, BitDepth::Sixteen, samples)
}

pub fn buffer_to_labels(buf: &ImageBuffer) -> Result<Grid<Option<u32>>, FormatError> {
    if buf.channels() != 1 || buf.depth() != BitDepth::Sixteen {
        return Err(FormatError::MalformedHeader("expected a 16-bit gray label image".into()));
    }
    let data = buf.samples().iter().map(|&s| (s != u16::MAX).then_some(s as u32)).collect();
    Ok(Grid::from_vec(buf.width(), buf.height(), data))
}

/// Separable Gaussian blur with clamp-to-edge borders. `sigma <= 0` copies.
pub fn gaussian_blur(img: &RgbImage, sigma: f64) -> RgbImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &RgbImage, horizontal: bool| -> RgbImage {
        Grid::from_fn(src.width(), src.height(), |x, y| {
            let mut acc = Rgb::BLACK;
            for (j, &kv) in kernel.iter().enumerate() {
                let o = j as isize - radius;
                let (sx, sy) = if horizontal {
                    ((x as isize + o).clamp(0, w - 1), y as isize)
                } else {
                    (x as isize, (y as isize + o).clamp(0, h - 1))
                };
                acc = acc + *src.get(sx as usize, sy as usize) * kv;
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}
