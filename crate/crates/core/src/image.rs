//! Dense 2D scalar field on a centered grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

/// Row-major image: `data[j * width + i]` with `i` indexing x and `j`
/// indexing y, both mapped to world millimetres by the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub grid: ImageGrid,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(grid: ImageGrid) -> Self {
        Self {
            data: vec![0.0; grid.n_pixels()],
            grid,
        }
    }

    pub fn from_data(grid: ImageGrid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.n_pixels() {
            return Err(Error::ShapeMismatch {
                expected: grid.n_pixels(),
                got: data.len(),
                context: "image payload".into(),
            });
        }
        Ok(Self { grid, data })
    }

    /// Evaluate `f(x_mm, y_mm)` at every pixel center.
    pub fn from_fn(grid: ImageGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.n_pixels());
        for j in 0..grid.height_px {
            for i in 0..grid.width_px {
                let (x, y) = grid.world_of_pixel(i, j);
                data.push(f(x, y));
            }
        }
        Self { grid, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.grid.width_px + i]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[j * self.grid.width_px + i]
    }

    /// Bilinear interpolation at a world point; zero outside the pixel-center
    /// hull of the grid.
    #[inline]
    pub fn sample_bilinear(&self, x_mm: f64, y_mm: f64) -> f64 {
        let w = self.grid.width_px;
        let h = self.grid.height_px;
        let fx = x_mm / self.grid.spacing_mm + (w as f64 - 1.0) / 2.0;
        let fy = y_mm / self.grid.spacing_mm + (h as f64 - 1.0) / 2.0;
        // interior fast path: all four taps in bounds
        if fx >= 0.0 && fy >= 0.0 && fx < (w - 1) as f64 && fy < (h - 1) as f64 {
            let i0 = fx as usize;
            let j0 = fy as usize;
            let dx = fx - i0 as f64;
            let dy = fy - j0 as f64;
            let base = j0 * w + i0;
            let d = &self.data;
            let top = d[base] + dx * (d[base + 1] - d[base]);
            let bot = d[base + w] + dx * (d[base + w + 1] - d[base + w]);
            return top + dy * (bot - top);
        }
        if fx <= -1.0 || fy <= -1.0 || fx >= w as f64 || fy >= h as f64 {
            return 0.0;
        }
        let i0 = fx.floor();
        let j0 = fy.floor();
        let dx = fx - i0;
        let dy = fy - j0;
        let i0 = i0 as isize;
        let j0 = j0 as isize;

        let mut acc = 0.0;
        let mut tap = |ii: isize, jj: isize, wgt: f64| {
            if wgt != 0.0 && ii >= 0 && jj >= 0 && (ii as usize) < w && (jj as usize) < h {
                acc += wgt * self.data[jj as usize * w + ii as usize];
            }
        };
        tap(i0, j0, (1.0 - dx) * (1.0 - dy));
        tap(i0 + 1, j0, dx * (1.0 - dy));
        tap(i0, j0 + 1, (1.0 - dx) * dy);
        tap(i0 + 1, j0 + 1, dx * dy);
        acc
    }

    /// Accumulate bilinear weights at a world point; the adjoint of
    /// [`Self::sample_bilinear`].
    #[inline]
    pub fn splat_bilinear(&mut self, x_mm: f64, y_mm: f64, value: f64) {
        let w = self.grid.width_px;
        let h = self.grid.height_px;
        let fx = x_mm / self.grid.spacing_mm + (w as f64 - 1.0) / 2.0;
        let fy = y_mm / self.grid.spacing_mm + (h as f64 - 1.0) / 2.0;
        if fx <= -1.0 || fy <= -1.0 || fx >= w as f64 || fy >= h as f64 {
            return;
        }
        let i0 = fx.floor();
        let j0 = fy.floor();
        let dx = fx - i0;
        let dy = fy - j0;
        let i0 = i0 as isize;
        let j0 = j0 as isize;

        let mut tap = |ii: isize, jj: isize, wgt: f64| {
            if wgt != 0.0 && ii >= 0 && jj >= 0 && (ii as usize) < w && (jj as usize) < h {
                self.data[jj as usize * w + ii as usize] += wgt * value;
            }
        };
        tap(i0, j0, (1.0 - dx) * (1.0 - dy));
        tap(i0 + 1, j0, dx * (1.0 - dy));
        tap(i0, j0 + 1, (1.0 - dx) * dy);
        tap(i0 + 1, j0 + 1, dx * dy);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_reproduces_pixel_centers() {
        let grid = ImageGrid::square(4, 2.0).unwrap();
        let img = Image::from_fn(grid, |x, y| 3.0 * x - y + 1.0);
        for j in 0..4 {
            for i in 0..4 {
                let (x, y) = grid.world_of_pixel(i, j);
                assert_eq!(img.sample_bilinear(x, y), img.get(i, j));
            }
        }
    }

    #[test]
    fn bilinear_is_linear_between_centers() {
        let grid = ImageGrid::square(4, 1.0).unwrap();
        // a plane is reproduced exactly inside the pixel-center hull
        let img = Image::from_fn(grid, |x, y| 2.0 * x + 0.5 * y);
        let v = img.sample_bilinear(0.25, -0.3);
        assert!((v - (2.0 * 0.25 + 0.5 * -0.3)).abs() < 1e-12);
    }

    #[test]
    fn bilinear_zero_outside() {
        let grid = ImageGrid::square(4, 1.0).unwrap();
        let img = Image::from_fn(grid, |_, _| 5.0);
        assert_eq!(img.sample_bilinear(100.0, 0.0), 0.0);
        assert_eq!(img.sample_bilinear(0.0, -100.0), 0.0);
    }

    #[test]
    fn splat_is_adjoint_of_sample() {
        let grid = ImageGrid::square(5, 1.0).unwrap();
        let img = Image::from_fn(grid, |x, y| x * y + 2.0);
        let pts = [(0.3, -0.7), (1.9, 1.2), (-2.4, 0.1)];
        for &(x, y) in &pts {
            let mut adj = Image::zeros(grid);
            adj.splat_bilinear(x, y, 1.0);
            let via_adj: f64 = adj
                .data
                .iter()
                .zip(img.data.iter())
                .map(|(a, b)| a * b)
                .sum();
            assert!((via_adj - img.sample_bilinear(x, y)).abs() < 1e-12);
        }
    }
}
