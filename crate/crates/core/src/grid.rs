//! Dense 2D float grid shared by the surface and scattering modules.

use serde::{Deserialize, Serialize};

/// Row-major 2D grid of f64 samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid2 { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Grid2 { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "grid data length mismatch");
        Grid2 { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Sample with wrap-around (periodic) indexing in both axes.
    #[inline]
    pub fn at_periodic(&self, r: i64, c: i64) -> f64 {
        let r = r.rem_euclid(self.rows as i64) as usize;
        let c = c.rem_euclid(self.cols as i64) as usize;
        self.at(r, c)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn variance(&self) -> f64 {
        if self.data.len() < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64
    }

    /// Circular shift: output(r, c) = input(r - dr, c - dc) with wrap.
    pub fn circ_shift(&self, dr: i64, dc: i64) -> Grid2 {
        Grid2::from_fn(self.rows, self.cols, |r, c| {
            self.at_periodic(r as i64 - dr, c as i64 - dc)
        })
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
