//! Minimal raster plotter for report quick-looks (polylines and paired
//! histograms on a fixed-size canvas, PNG output).

use std::path::Path;

pub const RED: [u8; 3] = [200, 40, 40];
pub const BLUE: [u8; 3] = [40, 70, 200];
pub const GRAY: [u8; 3] = [120, 120, 120];

pub struct Raster {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>, // rgb
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Raster {
        Raster { width, height, data: vec![255; width * height * 3] }
    }

    pub fn set(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return;
        }
        let i = (y as usize * self.width + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&color);
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        // Bresenham
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        let (mut x, mut y) = (x0, y0);
        loop {
            self.set(x, y, color);
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

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.data.clone())
            .expect("raster buffer consistent");
        img.save(path).map_err(std::io::Error::other)
    }
}

fn series_bounds(series: &[(&[f64], [u8; 3])]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (s, _) in series {
        for &v in *s {
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    if !lo.is_finite() || lo == hi {
        (0.0, 1.0)
    } else {
        (lo, hi)
    }
}

/// Plot one or more same-length series as polylines.
pub fn plot_series(path: &Path, series: &[(&[f64], [u8; 3])]) -> std::io::Result<()> {
    let (w, h) = (640usize, 360usize);
    let mut r = Raster::new(w, h);
    let (lo, hi) = series_bounds(series);
    let margin = 10.0;
    for (s, color) in series {
        if s.len() < 2 {
            continue;
        }
        let n = s.len();
        let to_px = |i: usize, v: f64| -> (i64, i64) {
            let x = margin + (w as f64 - 2.0 * margin) * i as f64 / (n - 1) as f64;
            let y = (h as f64 - margin) - (h as f64 - 2.0 * margin) * (v - lo) / (hi - lo);
            (x as i64, y as i64)
        };
        for i in 1..n {
            let (x0, y0) = to_px(i - 1, s[i - 1]);
            let (x1, y1) = to_px(i, s[i]);
            r.line(x0, y0, x1, y1, *color);
        }
    }
    r.line(9, h as i64 - 10, w as i64 - 10, h as i64 - 10, GRAY);
    r.save(path)
}

/// Overlayed step-histogram pair (masses must be same-length).
pub fn plot_histogram_pair(path: &Path, a: &[f64], b: &[f64]) -> std::io::Result<()> {
    plot_series(path, &[(a, BLUE), (b, RED)])
}
