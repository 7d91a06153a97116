use std::path::Path;

use super::render::Frame;
use super::{ObsConfig, ObsError};

/// Single-channel 8-bit image, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ObsError> {
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::L8,
        )?;
        Ok(())
    }
}

/// Weighted sum of the RGB channels, unrounded.
pub fn grayscale(frame: &Frame, weights: [f64; 3]) -> Vec<f32> {
    frame
        .pixels
        .chunks_exact(3)
        .map(|p| (weights[0] * p[0] as f64 + weights[1] * p[1] as f64 + weights[2] * p[2] as f64) as f32)
        .collect()
}

/// For each output index, the source indices it covers and their overlap
/// weights (summing to one).
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let first = start.floor() as usize;
            let last = (end.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (end.min(i as f64 + 1.0) - start.max(i as f64)) / scale;
                    (overlap > 1e-12).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-average resize: each output pixel is the mean of the source area it
/// covers, with fractional coverage at the edges.
pub fn area_resample(src: &[f32], width: usize, height: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    assert_eq!(src.len(), width * height);
    let wx = axis_weights(width, out_w);
    let wy = axis_weights(height, out_h);
    let mut rows = vec![0f64; height * out_w];
    for y in 0..height {
        let line = &src[y * width..(y + 1) * width];
        for (ox, taps) in wx.iter().enumerate() {
            rows[y * out_w + ox] = taps.iter().map(|&(i, w)| line[i] as f64 * w).sum();
        }
    }
    let mut out = vec![0f32; out_w * out_h];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..out_w {
            let v: f64 = taps.iter().map(|&(y, w)| rows[y * out_w + ox] * w).sum();
            out[oy * out_w + ox] = v as f32;
        }
    }
    out
}

pub(crate) fn to_u8(values: &[f32]) -> Vec<u8> {
    values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}

/// Grayscale then area-downscale to `cfg.net_size`.
pub fn preprocess(frame: &Frame, cfg: &ObsConfig) -> Result<GrayImage, ObsError> {
    if (frame.width, frame.height) != cfg.native_size {
        return Err(ObsError::DimensionMismatch {
            expected: cfg.native_size,
            actual: (frame.width, frame.height),
        });
    }
    let gray = grayscale(frame, cfg.gray_weights);
    let (w, h) = cfg.net_size;
    let small = area_resample(&gray, frame.width, frame.height, w, h);
    Ok(GrayImage {
        width: w,
        height: h,
        pixels: to_u8(&small),
    })
}
