//! Row-wise discrete Fourier transforms of sinograms and the real-valued
//! diagonal frequency filter applied between them.
//!
//! The forward DFT is unnormalized; the inverse carries the `1/N` factor.
//! Frequency bins use standard DFT order (DC first). Filters are real; after
//! the inverse transform the imaginary residue is discarded. A filter is
//! either projection-independent (one weight row shared by every sinogram
//! row) or projection-dependent (one weight row per parallel projection in
//! the wedge, shared across source angles and phantoms).

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ParallelGeometry;
use crate::projectors::ParallelSinogram;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    ProjectionIndependent,
    ProjectionDependent,
}

/// Real frequency-domain weights, `weights[row * detector_px + k]` with `k`
/// in DFT bin order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralFilter {
    pub mode: FilterMode,
    pub detector_px: usize,
    n_rows: usize,
    weights: Vec<f64>,
}

impl SpectralFilter {
    pub fn new(mode: FilterMode, detector_px: usize, n_rows: usize, weights: Vec<f64>) -> Result<Self> {
        if mode == FilterMode::ProjectionIndependent && n_rows != 1 {
            return Err(Error::InvalidArgument(format!(
                "projection-independent filter must have one row, got {n_rows}"
            )));
        }
        if n_rows == 0 || detector_px == 0 {
            return Err(Error::InvalidArgument("empty filter".into()));
        }
        if weights.len() != n_rows * detector_px {
            return Err(Error::ShapeMismatch {
                expected: n_rows * detector_px,
                got: weights.len(),
                context: "filter weights".into(),
            });
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::InvalidArgument("filter weights must be finite".into()));
        }
        Ok(Self {
            mode,
            detector_px,
            n_rows,
            weights,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.detector_px..(r + 1) * self.detector_px]
    }

    /// Weight row used for sinogram row `r` under this filter's mode.
    pub fn row_for(&self, r: usize) -> &[f64] {
        match self.mode {
            FilterMode::ProjectionIndependent => self.row(0),
            FilterMode::ProjectionDependent => self.row(r),
        }
    }
}

/// Complex row spectra of a sinogram.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSinogram {
    pub geometry: ParallelGeometry,
    pub data: Vec<Complex64>,
}

impl SpectralSinogram {
    pub fn n_rows(&self) -> usize {
        self.geometry.n_angles()
    }

    pub fn row(&self, r: usize) -> &[Complex64] {
        let n = self.geometry.detector_px;
        &self.data[r * n..(r + 1) * n]
    }
}

/// Unnormalized forward DFT of every detector row.
pub fn dft_rows(p: &ParallelSinogram) -> SpectralSinogram {
    let n = p.geometry.detector_px;
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut data: Vec<Complex64> = p.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for row in data.chunks_mut(n) {
        fft.process(row);
    }
    SpectralSinogram {
        geometry: p.geometry.clone(),
        data,
    }
}

/// Inverse DFT (with the `1/N` factor) of every row; the imaginary residue
/// is discarded.
pub fn idft_rows(s: &SpectralSinogram) -> ParallelSinogram {
    let n = s.geometry.detector_px;
    let fft = FftPlanner::new().plan_fft_inverse(n);
    let mut buf = s.data.clone();
    let scale = 1.0 / n as f64;
    let mut out = Vec::with_capacity(buf.len());
    for row in buf.chunks_mut(n) {
        fft.process(row);
        out.extend(row.iter().map(|c| c.re * scale));
    }
    ParallelSinogram {
        geometry: s.geometry.clone(),
        data: out,
    }
}

/// Element-wise multiplication of each spectrum row with its filter row.
pub fn apply_filter(s: &SpectralSinogram, k: &SpectralFilter) -> Result<SpectralSinogram> {
    let n = s.geometry.detector_px;
    if k.detector_px != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: k.detector_px,
            context: "filter detector width".into(),
        });
    }
    if k.mode == FilterMode::ProjectionDependent && k.n_rows != s.n_rows() {
        return Err(Error::ShapeMismatch {
            expected: s.n_rows(),
            got: k.n_rows,
            context: "projection-dependent filter rows".into(),
        });
    }
    let mut data = s.data.clone();
    for (r, row) in data.chunks_mut(n).enumerate() {
        for (c, &w) in row.iter_mut().zip(k.row_for(r)) {
            *c *= w;
        }
    }
    Ok(SpectralSinogram {
        geometry: s.geometry.clone(),
        data,
    })
}

/// Discrete Ram-Lak convolution kernel wrapped onto a circular grid of
/// length `n`: `h(0) = 1/4`, `h(m) = -1/(pi^2 m^2)` for odd circular
/// distance `m`, zero otherwise.
pub fn ramlak_kernel(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n];
    h[0] = 0.25;
    for (i, v) in h.iter_mut().enumerate().skip(1) {
        let m = i.min(n - i);
        if m % 2 == 1 {
            let mf = m as f64;
            *v = -1.0 / (std::f64::consts::PI * std::f64::consts::PI * mf * mf);
        }
    }
    h
}

/// Frequency response of the circular Ram-Lak kernel, replicated to
/// `n_rows` weight rows. The kernel is real and even, so the weights are
/// real and even in frequency.
pub fn ramlak_init(detector_px: usize, mode: FilterMode, n_rows: usize) -> Result<SpectralFilter> {
    if detector_px < 2 {
        return Err(Error::InvalidArgument(format!(
            "filter needs at least 2 frequency bins, got {detector_px}"
        )));
    }
    let kernel = ramlak_kernel(detector_px);
    let fft = FftPlanner::new().plan_fft_forward(detector_px);
    let mut spectrum: Vec<Complex64> = kernel.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut spectrum);
    let row: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let weights = row
        .iter()
        .cycle()
        .take(n_rows * detector_px)
        .cloned()
        .collect();
    SpectralFilter::new(mode, detector_px, n_rows, weights)
}

/// Circular convolution of each weight row with a normalized Gaussian
/// truncated at `±4 sigma`. `sigma_bins == 0` returns the filter unchanged.
pub fn gaussian_smooth(k: &SpectralFilter, sigma_bins: f64) -> SpectralFilter {
    assert!(sigma_bins >= 0.0, "smoothing sigma must be non-negative");
    if sigma_bins == 0.0 {
        return k.clone();
    }
    let n = k.detector_px as isize;
    let radius = (4.0 * sigma_bins).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma_bins * sigma_bins)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();

    let mut out = k.clone();
    for r in 0..k.n_rows {
        let src = k.row(r).to_vec();
        let dst = &mut out.weights[r * k.detector_px..(r + 1) * k.detector_px];
        for (i, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (t, &g) in taps.iter().enumerate() {
                let idx = (i as isize + t as isize - radius).rem_euclid(n) as usize;
                acc += g * src[idx];
            }
            *d = acc / norm;
        }
    }
    out
}
