//! Minimal line plots as binary PPM (P6) images: white background,
//! black frame, one colored polyline per series.

use std::path::Path;

use anyhow::Result;

pub const PLOT_W: usize = 480;
pub const PLOT_H: usize = 320;
const MARGIN: usize = 24;

pub struct Series<'a> {
    pub values: &'a [f64],
    pub rgb: [u8; 3],
}

struct Canvas {
    px: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        Self { px: vec![255; PLOT_W * PLOT_H * 3] }
    }

    fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x < 0 || y < 0 || x >= PLOT_W as i64 || y >= PLOT_H as i64 {
            return;
        }
        let i = (y as usize * PLOT_W + x as usize) * 3;
        self.px[i..i + 3].copy_from_slice(&rgb);
    }

    fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, rgb: [u8; 3]) {
        // Bresenham.
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }
}

/// All series share the x axis (index) and a common y range.
pub fn write_line_plot(path: &Path, series: &[Series<'_>]) -> Result<()> {
    let mut canvas = Canvas::new();
    let (x0, x1) = (MARGIN as i64, (PLOT_W - MARGIN) as i64);
    let (y0, y1) = (MARGIN as i64, (PLOT_H - MARGIN) as i64);
    canvas.line(x0, y0, x1, y0, [0, 0, 0]);
    canvas.line(x0, y1, x1, y1, [0, 0, 0]);
    canvas.line(x0, y0, x0, y1, [0, 0, 0]);
    canvas.line(x1, y0, x1, y1, [0, 0, 0]);

    let all: Vec<f64> = series.iter().flat_map(|s| s.values.iter().copied()).collect();
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if (hi - lo).abs() < 1e-12 { 1.0 } else { hi - lo };
    let max_n = series.iter().map(|s| s.values.len()).max().unwrap_or(0).max(2);
    for s in series {
        let mut prev: Option<(i64, i64)> = None;
        for (i, &v) in s.values.iter().enumerate() {
            let fx = i as f64 / (max_n - 1) as f64;
            let fy = (v - lo) / span;
            let x = x0 + (fx * (x1 - x0) as f64).round() as i64;
            let y = y1 - (fy * (y1 - y0) as f64).round() as i64;
            if let Some((px, py)) = prev {
                canvas.line(px, py, x, y, s.rgb);
            }
            prev = Some((x, y));
        }
    }

    let mut out = format!("P6\n{PLOT_W} {PLOT_H}\n255\n").into_bytes();
    out.extend_from_slice(&canvas.px);
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_valid_ppm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ppm");
        let vals = [1.0, 3.0, 2.0, 5.0];
        write_line_plot(&path, &[Series { values: &vals, rgb: [200, 30, 30] }]).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = format!("P6\n{PLOT_W} {PLOT_H}\n255\n");
        assert!(bytes.starts_with(header.as_bytes()));
        assert_eq!(bytes.len(), header.len() + PLOT_W * PLOT_H * 3);
    }

    #[test]
    fn constant_series_does_not_panic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let vals = [2.0; 8];
        write_line_plot(&path, &[Series { values: &vals, rgb: [0, 0, 255] }]).unwrap();
        assert!(path.exists());
    }
}
