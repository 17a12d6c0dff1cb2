//! Discrete projection operators.
//!
//! Forward projectors are ray-driven line integrals: equidistant midpoint
//! sampling along the ray with bilinear image interpolation, step equal to
//! the image spacing, scaled by the step length. Back-projectors are
//! pixel-driven with linear detector interpolation and a local ray-density
//! weight, which makes them useful approximate adjoints of the ray-driven
//! forward operators without being their exact transposes (an unmatched
//! pair). For gradient verification at small scale, [`DenseOperator`]
//! assembles the explicit matrix of a forward operator so its transpose can
//! serve as the exact adjoint.
//!
//! Rays that miss the image contribute zero. No 1/r^2 or cosine weighting is
//! applied in the fan operators; they are plain line integrals.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, ImageGrid, ParallelGeometry};
use crate::image::Image;

/// Stack of parallel projections, one detector row per angle
/// (`data[a * detector_px + k]`, line-integral values in intensity * mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelSinogram {
    pub geometry: ParallelGeometry,
    pub data: Vec<f64>,
}

impl ParallelSinogram {
    pub fn new(geometry: ParallelGeometry, data: Vec<f64>) -> Result<Self> {
        let expected = geometry.n_angles() * geometry.detector_px;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: data.len(),
                context: "sinogram payload".into(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "sinogram contains non-finite values".into(),
            ));
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: ParallelGeometry) -> Self {
        let n = geometry.n_angles() * geometry.detector_px;
        Self {
            geometry,
            data: vec![0.0; n],
        }
    }

    pub fn n_angles(&self) -> usize {
        self.geometry.n_angles()
    }

    pub fn row(&self, a: usize) -> &[f64] {
        let n = self.geometry.detector_px;
        &self.data[a * n..(a + 1) * n]
    }
}

/// One fan-beam detector row at source angle `beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanProjection {
    pub geometry: FanGeometry,
    pub data: Vec<f64>,
}

impl FanProjection {
    pub fn new(geometry: FanGeometry, data: Vec<f64>) -> Result<Self> {
        if data.len() != geometry.detector_px {
            return Err(Error::ShapeMismatch {
                expected: geometry.detector_px,
                got: data.len(),
                context: "fan projection payload".into(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(
                "fan projection contains non-finite values".into(),
            ));
        }
        Ok(Self { geometry, data })
    }
}

/// Linear interpolation on a centered detector row; zero outside the
/// pixel-center hull.
#[inline]
pub(crate) fn detector_interp(row: &[f64], spacing: f64, s: f64) -> f64 {
    let n = row.len();
    let fk = s / spacing + (n as f64 - 1.0) / 2.0;
    // interior fast path
    if fk >= 0.0 && fk < (n - 1) as f64 {
        let k0 = fk as usize;
        let d = fk - k0 as f64;
        return row[k0] + d * (row[k0 + 1] - row[k0]);
    }
    if fk <= -1.0 || fk >= n as f64 {
        return 0.0;
    }
    let k0 = fk.floor();
    let d = fk - k0;
    let k0 = k0 as isize;
    let mut acc = 0.0;
    if k0 >= 0 && (k0 as usize) < n {
        acc += (1.0 - d) * row[k0 as usize];
    }
    let k1 = k0 + 1;
    if k1 >= 0 && (k1 as usize) < n {
        acc += d * row[k1 as usize];
    }
    acc
}

/// Midpoint line integral of the image along `origin + t * dir`, with step
/// equal to the image spacing and `t` clipped to the interpolation hull.
#[inline]
fn integrate_ray(x: &Image, ox: f64, oy: f64, ux: f64, uy: f64, t_min: f64, t_max: f64) -> f64 {
    let h = x.grid.spacing_mm;
    let bx = (x.grid.width_px as f64 + 1.0) * 0.5 * h;
    let by = (x.grid.height_px as f64 + 1.0) * 0.5 * h;
    let mut t0 = t_min;
    let mut t1 = t_max;
    let mut clip = |origin: f64, dir: f64, bound: f64| -> bool {
        if dir.abs() > 1e-12 {
            let ta = (-bound - origin) / dir;
            let tb = (bound - origin) / dir;
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            true
        } else {
            origin.abs() < bound
        }
    };
    if !clip(ox, ux, bx) || !clip(oy, uy, by) || t1 <= t0 {
        return 0.0;
    }
    let n = ((t1 - t0) / h).ceil() as usize;
    let mut px = ox + (t0 + 0.5 * h) * ux;
    let mut py = oy + (t0 + 0.5 * h) * uy;
    let (sx, sy) = (h * ux, h * uy);
    let mut acc = 0.0;
    for _ in 0..n {
        acc += x.sample_bilinear(px, py);
        px += sx;
        py += sy;
    }
    acc * h
}

/// `A_p x`: ray-driven parallel projection of an image.
pub fn parallel_forward(x: &Image, geom: &ParallelGeometry) -> ParallelSinogram {
    let t_max = x.grid.half_diagonal_mm() + x.grid.spacing_mm;
    let nd = geom.detector_px;
    let mut data = vec![0.0; geom.n_angles() * nd];
    data.par_chunks_mut(nd)
        .zip(geom.angles_rad.par_iter())
        .for_each(|(row, &theta)| {
            let (ct, st) = (theta.cos(), theta.sin());
            for (k, out) in row.iter_mut().enumerate() {
                let s = (k as f64 - (nd as f64 - 1.0) / 2.0) * geom.detector_spacing_mm;
                *out = integrate_ray(x, s * ct, s * st, -st, ct, -t_max, t_max);
            }
        });
    ParallelSinogram {
        geometry: geom.clone(),
        data,
    }
}

/// Pixel-driven back-projection, the unmatched counterpart of
/// [`parallel_forward`]. Each pixel sums the linearly interpolated sinogram
/// values of the rays through it; a `spacing^2 / detector_spacing` weight
/// compensates the ray sampling density so the result approximates
/// `A_p^T p`.
pub fn parallel_backproject(p: &ParallelSinogram, grid: ImageGrid) -> Image {
    let g = &p.geometry;
    let nd = g.detector_px;
    let dsp = g.detector_spacing_mm;
    let scale = grid.spacing_mm * grid.spacing_mm / dsp;
    let trig: Vec<(f64, f64)> = g.angles_rad.iter().map(|t| (t.cos(), t.sin())).collect();
    let w = grid.width_px;
    let x0 = -(w as f64 - 1.0) / 2.0 * grid.spacing_mm;
    let mut img = Image::zeros(grid);
    img.data.par_chunks_mut(w).enumerate().for_each(|(j, out)| {
        let y = (j as f64 - (grid.height_px as f64 - 1.0) / 2.0) * grid.spacing_mm;
        for (a, &(ct, st)) in trig.iter().enumerate() {
            let row = &p.data[a * nd..(a + 1) * nd];
            let mut s = x0 * ct + y * st;
            let ds = grid.spacing_mm * ct;
            for pix in out.iter_mut() {
                *pix += detector_interp(row, dsp, s);
                s += ds;
            }
        }
        for pix in out.iter_mut() {
            *pix *= scale;
        }
    });
    img
}

/// `A_f x`: ray-driven fan-beam projection. Fails if the source sits inside
/// the image support.
pub fn fan_forward(x: &Image, geom: &FanGeometry) -> Result<FanProjection> {
    let half_diag = x.grid.half_diagonal_mm();
    if geom.sid_mm <= half_diag {
        return Err(Error::InvalidGeometry(format!(
            "fan source at sid={} mm lies inside the image support (half diagonal {:.3} mm)",
            geom.sid_mm, half_diag
        )));
    }
    let t_half = half_diag + x.grid.spacing_mm;
    let (px, py) = geom.source();
    let mut data = vec![0.0; geom.detector_px];
    data.par_iter_mut().enumerate().for_each(|(k, out)| {
        let (dx, dy) = geom.detector_pixel(k);
        let (vx, vy) = (dx - px, dy - py);
        let norm = vx.hypot(vy);
        let (ux, uy) = (vx / norm, vy / norm);
        // closest approach to the isocenter along the ray
        let t_c = -(px * ux + py * uy);
        *out = integrate_ray(x, px, py, ux, uy, t_c - t_half, t_c + t_half);
    });
    Ok(FanProjection {
        geometry: *geom,
        data,
    })
}

/// Pixel-driven fan back-projection, the unmatched counterpart of
/// [`fan_forward`]. Each pixel reads the detector at the coordinate its ray
/// hits, weighted by the local ray density `sdd * r / (detector_spacing *
/// (sid - b)^2)` (with `r` the source distance and `b` the pixel coordinate
/// along the central ray), so the result approximates `A_f^T p`.
pub fn fan_backproject(p: &FanProjection, grid: ImageGrid) -> Image {
    let g = &p.geometry;
    let (cb, sb) = (g.beta_rad.cos(), g.beta_rad.sin());
    let dsp = g.detector_spacing_mm;
    let scale = grid.spacing_mm * grid.spacing_mm * g.sdd_mm / dsp;
    let w = grid.width_px;
    let x0 = -(w as f64 - 1.0) / 2.0 * grid.spacing_mm;
    let mut img = Image::zeros(grid);
    img.data.par_chunks_mut(w).enumerate().for_each(|(j, out)| {
        let y = (j as f64 - (grid.height_px as f64 - 1.0) / 2.0) * grid.spacing_mm;
        // pixel coordinates in the rotated frame: a along the detector axis,
        // b along the central ray (source at b = sid)
        let mut a = x0 * cb + y * sb;
        let mut b = -x0 * sb + y * cb;
        let (da, db) = (grid.spacing_mm * cb, -grid.spacing_mm * sb);
        for pix in out.iter_mut() {
            let d = g.sid_mm - b;
            let u = g.sdd_mm * a / d;
            let r = (a * a + d * d).sqrt();
            *pix = detector_interp(&p.data, dsp, u) * scale * r / (d * d);
            a += da;
            b += db;
        }
    });
    img
}

/// Explicitly assembled matrix of a forward operator. The transpose of this
/// matrix is the exact adjoint of the operator it was assembled from; this is
/// the "matched" mode used for gradient verification at desk scale.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub rows: usize,
    pub cols: usize,
    entries: Vec<f64>, // row-major
}

impl DenseOperator {
    /// Assemble `A_p` by probing [`parallel_forward`] with basis images.
    pub fn from_parallel(grid: ImageGrid, geom: &ParallelGeometry) -> Self {
        let cols = grid.n_pixels();
        let rows = geom.n_angles() * geom.detector_px;
        let mut entries = vec![0.0; rows * cols];
        let mut basis = Image::zeros(grid);
        for c in 0..cols {
            basis.data[c] = 1.0;
            let p = parallel_forward(&basis, geom);
            for (r, &v) in p.data.iter().enumerate() {
                entries[r * cols + c] = v;
            }
            basis.data[c] = 0.0;
        }
        Self { rows, cols, entries }
    }

    /// Assemble `A_f` by probing [`fan_forward`] with basis images.
    pub fn from_fan(grid: ImageGrid, geom: &FanGeometry) -> Result<Self> {
        let cols = grid.n_pixels();
        let rows = geom.detector_px;
        let mut entries = vec![0.0; rows * cols];
        let mut basis = Image::zeros(grid);
        for c in 0..cols {
            basis.data[c] = 1.0;
            let p = fan_forward(&basis, geom)?;
            for (r, &v) in p.data.iter().enumerate() {
                entries[r * cols + c] = v;
            }
            basis.data[c] = 0.0;
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                self.entries[r * self.cols..(r + 1) * self.cols]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (r, &yv) in y.iter().enumerate() {
            if yv == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(&self.entries[r * self.cols..(r + 1) * self.cols]) {
                *o += a * yv;
            }
        }
        out
    }
}
