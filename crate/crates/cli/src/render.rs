//! PNG rendering of spectrogram-like matrices and labelled scatter plots.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use dtts::Tensor;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

/// `T × F` matrix as a grayscale image: time left to right, the first
/// column at the bottom, min–max normalized, each cell `scale` pixels.
pub fn heatmap(path: &Path, m: &Tensor<f64>, scale: usize) -> Result<()> {
    let (t, f) = m.shape();
    let lo = m.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = m.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = ((t * scale).max(1), (f * scale).max(1));
    let mut data = vec![0u8; w * h];
    for y in 0..f * scale {
        let bin = f - 1 - y / scale;
        for x in 0..t * scale {
            data[y * w + x] = (255.0 * (m.get(x / scale, bin) - lo) / span).round() as u8;
        }
    }
    write_png(path, w, h, png::ColorType::Grayscale, &data)
}

/// 2-D points coloured by label on a white square canvas.
pub fn scatter(path: &Path, points: &[(f64, f64)], labels: &[usize], size: usize) -> Result<()> {
    let mut data = vec![255u8; size * size * 3];
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, if hi > lo { hi - lo } else { 1.0 })
    };
    let ((x0, xs_span), (y0, ys_span)) = (range(&xs), range(&ys));
    let margin = 8.0;
    let usable = size as f64 - 2.0 * margin;
    for (&(x, y), &label) in points.iter().zip(labels) {
        let px = (margin + usable * (x - x0) / xs_span).round() as isize;
        let py = (margin + usable * (1.0 - (y - y0) / ys_span)).round() as isize;
        let color = PALETTE[label % PALETTE.len()];
        for dy in -2..=2 {
            for dx in -2..=2 {
                let (cx, cy) = (px + dx, py + dy);
                if cx >= 0 && cy >= 0 && (cx as usize) < size && (cy as usize) < size {
                    let i = (cy as usize * size + cx as usize) * 3;
                    data[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    write_png(path, size, size, png::ColorType::Rgb, &data)
}
