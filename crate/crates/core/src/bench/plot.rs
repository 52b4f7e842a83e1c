//! Binary PPM (P6) images: attention heatmaps and a small line plot.

use std::path::Path;

use crate::error::Result;
use crate::io;

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// RGB bytes, row-major.
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        Image { width, height, pixels: fill.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.pixels[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, &self.encode_ppm())
    }
}

/// Parses the header of a P6 file: `(width, height, maxval, header length)`.
pub fn parse_ppm_header(bytes: &[u8]) -> Option<(usize, usize, usize, usize)> {
    let mut fields = Vec::new();
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..i]).ok()?.to_string());
    }
    if fields[0] != "P6" {
        return None;
    }
    Some((fields[1].parse().ok()?, fields[2].parse().ok()?, fields[3].parse().ok()?, i + 1))
}

fn heat_color(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    let r = (255.0 * (1.5 * v).min(1.0)) as u8;
    let g = (255.0 * (2.0 * v - 0.5).clamp(0.0, 1.0)) as u8;
    let b = (255.0 * (4.0 * v - 3.0).clamp(0.0, 1.0)) as u8;
    [r, g, b]
}

/// `grid × grid` map scaled to its maximum and drawn with `scale`-pixel cells.
pub fn heatmap(values: &[f64], grid: usize, scale: usize) -> Image {
    let max = values.iter().copied().fold(0.0f64, f64::max);
    let mut img = Image::new(grid * scale, grid * scale, [0, 0, 0]);
    for (i, &v) in values.iter().enumerate() {
        let c = heat_color(if max > 0.0 { v / max } else { 0.0 });
        let (r, col) = (i / grid, i % grid);
        for y in 0..scale {
            for x in 0..scale {
                img.set(col * scale + x, r * scale + y, c);
            }
        }
    }
    img
}

fn line(img: &mut Image, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for s in 0..=steps {
        let x = x0 + (x1 - x0) * s / steps;
        let y = y0 + (y1 - y0) * s / steps;
        if x >= 0 && y >= 0 {
            img.set(x as usize, y as usize, rgb);
        }
    }
}

/// Line plot of `(x, y)` points with y in [0, 1]; axes in grey, series in blue.
pub fn line_plot(points: &[(f64, f64)], width: usize, height: usize) -> Image {
    let mut img = Image::new(width, height, [255, 255, 255]);
    let m = 20i64;
    let (w, h) = (width as i64, height as i64);
    line(&mut img, (m, h - m), (w - m, h - m), [120, 120, 120]);
    line(&mut img, (m, m), (m, h - m), [120, 120, 120]);
    if points.is_empty() {
        return img;
    }
    let xmin = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let xmax = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let span = if xmax > xmin { xmax - xmin } else { 1.0 };
    let to_px = |(x, y): (f64, f64)| {
        let px = m + (((x - xmin) / span) * (w - 2 * m) as f64) as i64;
        let py = h - m - ((y.clamp(0.0, 1.0)) * (h - 2 * m) as f64) as i64;
        (px, py)
    };
    for pair in points.windows(2) {
        line(&mut img, to_px(pair[0]), to_px(pair[1]), [30, 60, 200]);
    }
    for &p in points {
        let (x, y) = to_px(p);
        for dy in -2..=2 {
            for dx in -2..=2 {
                line(&mut img, (x + dx, y + dy), (x + dx, y + dy), [200, 30, 30]);
            }
        }
    }
    img
}
