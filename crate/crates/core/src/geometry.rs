//! Imaging geometry: grids, detectors, the fan wedge and the coordinate maps
//! between fan detector pixels and parallel projections.
//!
//! Conventions used throughout the crate:
//!
//! * World coordinates are in millimetres, centered on the isocenter. Pixel
//!   `(i, j)` of a grid sits at `((i - (w-1)/2) * s, (j - (h-1)/2) * s)`.
//! * Detectors use the pixel-center convention with the detector center on
//!   the central ray: pixel `k` of `n` sits at `u_k = (k - (n-1)/2) * spacing`,
//!   so even pixel counts straddle the central ray at `±spacing/2`.
//! * A parallel projection at angle `theta` integrates along rays with
//!   direction `(-sin theta, cos theta)`; the detector axis is
//!   `(cos theta, sin theta)` and `s` is the signed detector coordinate.
//! * The fan source at angle `beta` sits at `sid * (-sin beta, cos beta)`,
//!   the flat detector is perpendicular to the central ray at distance `sdd`
//!   from the source, with detector axis `(cos beta, sin beta)`.
//!
//! Under these conventions the fan ray through detector coordinate `u`
//! coincides with the parallel ray at `theta = beta + atan(u/sdd)` and
//! `s = sid * sin(gamma)`, which is the map [`rebin_coordinates`] implements.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2D pixel grid centered on the isocenter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub width_px: usize,
    pub height_px: usize,
    pub spacing_mm: f64,
}

impl ImageGrid {
    pub fn new(width_px: usize, height_px: usize, spacing_mm: f64) -> Result<Self> {
        if width_px == 0 || height_px == 0 {
            return Err(Error::InvalidArgument(
                "grid dimensions must be positive".into(),
            ));
        }
        if !(spacing_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive, got {spacing_mm}"
            )));
        }
        Ok(Self {
            width_px,
            height_px,
            spacing_mm,
        })
    }

    /// Square grid, the common case.
    pub fn square(size_px: usize, spacing_mm: f64) -> Result<Self> {
        Self::new(size_px, size_px, spacing_mm)
    }

    pub fn n_pixels(&self) -> usize {
        self.width_px * self.height_px
    }

    /// World coordinate of the center of pixel `(i, j)`.
    pub fn world_of_pixel(&self, i: usize, j: usize) -> (f64, f64) {
        (
            (i as f64 - (self.width_px as f64 - 1.0) / 2.0) * self.spacing_mm,
            (j as f64 - (self.height_px as f64 - 1.0) / 2.0) * self.spacing_mm,
        )
    }

    /// Half of the grid diagonal; every ray sample beyond this radius is
    /// outside the grid.
    pub fn half_diagonal_mm(&self) -> f64 {
        0.5 * self.spacing_mm * (self.width_px as f64).hypot(self.height_px as f64)
    }

    /// Half extent along x and y (edge-to-edge, not center-to-center).
    pub fn half_extent_mm(&self) -> (f64, f64) {
        (
            0.5 * self.width_px as f64 * self.spacing_mm,
            0.5 * self.height_px as f64 * self.spacing_mm,
        )
    }
}

/// Parallel-beam acquisition geometry: a 1D detector and a list of
/// projection angles, one sinogram row per angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelGeometry {
    pub detector_px: usize,
    pub detector_spacing_mm: f64,
    pub angles_rad: Vec<f64>,
}

impl ParallelGeometry {
    pub fn new(detector_px: usize, detector_spacing_mm: f64, angles_rad: Vec<f64>) -> Result<Self> {
        if detector_px == 0 {
            return Err(Error::InvalidArgument("detector_px must be positive".into()));
        }
        if !(detector_spacing_mm > 0.0) {
            return Err(Error::InvalidArgument(
                "detector spacing must be positive".into(),
            ));
        }
        if angles_rad.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "projection angles must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            detector_px,
            detector_spacing_mm,
            angles_rad,
        })
    }

    pub fn n_angles(&self) -> usize {
        self.angles_rad.len()
    }

    /// Signed detector coordinate of pixel center `k`.
    pub fn detector_coord(&self, k: usize) -> f64 {
        (k as f64 - (self.detector_px as f64 - 1.0) / 2.0) * self.detector_spacing_mm
    }
}

/// Fan-beam acquisition geometry: point source at distance `sid` from the
/// isocenter, flat detector at distance `sdd` from the source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanGeometry {
    pub sdd_mm: f64,
    pub sid_mm: f64,
    pub detector_px: usize,
    pub detector_spacing_mm: f64,
    pub beta_rad: f64,
}

impl FanGeometry {
    pub fn new(
        sdd_mm: f64,
        sid_mm: f64,
        detector_px: usize,
        detector_spacing_mm: f64,
        beta_rad: f64,
    ) -> Result<Self> {
        if !(sdd_mm > sid_mm && sid_mm > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "need sdd > sid > 0, got sdd={sdd_mm} sid={sid_mm}"
            )));
        }
        if detector_px == 0 {
            return Err(Error::InvalidArgument("detector_px must be positive".into()));
        }
        if !(detector_spacing_mm > 0.0) {
            return Err(Error::InvalidArgument(
                "detector spacing must be positive".into(),
            ));
        }
        Ok(Self {
            sdd_mm,
            sid_mm,
            detector_px,
            detector_spacing_mm,
            beta_rad,
        })
    }

    /// Same geometry rotated to source angle `beta`.
    pub fn at_beta(&self, beta_rad: f64) -> Self {
        Self { beta_rad, ..*self }
    }

    /// Signed detector coordinate of pixel center `k`.
    pub fn detector_coord(&self, k: usize) -> f64 {
        (k as f64 - (self.detector_px as f64 - 1.0) / 2.0) * self.detector_spacing_mm
    }

    /// Half fan angle, measured to the detector edge.
    pub fn gamma_max(&self) -> f64 {
        (0.5 * self.detector_px as f64 * self.detector_spacing_mm / self.sdd_mm).atan()
    }

    /// Source position in world coordinates.
    pub fn source(&self) -> (f64, f64) {
        (-self.sid_mm * self.beta_rad.sin(), self.sid_mm * self.beta_rad.cos())
    }

    /// World position of detector pixel center `k`. The detector center lies
    /// on the central ray at distance `sdd` from the source.
    pub fn detector_pixel(&self, k: usize) -> (f64, f64) {
        let u = self.detector_coord(k);
        let (cb, sb) = (self.beta_rad.cos(), self.beta_rad.sin());
        let center = (
            -(self.sid_mm - self.sdd_mm) * sb,
            (self.sid_mm - self.sdd_mm) * cb,
        );
        (center.0 + u * cb, center.1 + u * sb)
    }
}

/// The parallel angles that carry the information for one fan projection at
/// source angle `beta`: all lie inside `[beta - gamma_max, beta + gamma_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WedgeSelection {
    pub beta_rad: f64,
    pub n_projections: usize,
    pub angles_rad: Vec<f64>,
}

/// How the wedge angles are chosen for a given fan geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WedgeRule {
    /// One parallel projection per fan detector pixel.
    Full,
    /// `n` angles equally spaced over the wedge, endpoints included.
    Count(usize),
}

impl WedgeRule {
    pub fn wedge_for(&self, fan: &FanGeometry) -> Result<WedgeSelection> {
        match *self {
            WedgeRule::Full => Ok(full_sampling_angles(fan)),
            WedgeRule::Count(n) => subsampled_angles(fan, n),
        }
    }

    pub fn n_projections(&self, fan: &FanGeometry) -> usize {
        match *self {
            WedgeRule::Full => fan.detector_px,
            WedgeRule::Count(n) => n,
        }
    }
}

/// Fan angle of the ray through detector coordinate `u` (flat detector).
/// Odd in `u`.
pub fn gamma_of_pixel(u: f64, fan: &FanGeometry) -> f64 {
    (u / fan.sdd_mm).atan()
}

/// Full sampling: one parallel angle per fan detector pixel center,
/// `theta_k = beta + gamma(u_k)`. Strictly increasing.
pub fn full_sampling_angles(fan: &FanGeometry) -> WedgeSelection {
    let angles: Vec<f64> = (0..fan.detector_px)
        .map(|k| fan.beta_rad + gamma_of_pixel(fan.detector_coord(k), fan))
        .collect();
    WedgeSelection {
        beta_rad: fan.beta_rad,
        n_projections: angles.len(),
        angles_rad: angles,
    }
}

/// `n` angles equally spaced over `[beta - gamma_max, beta + gamma_max]`,
/// endpoints included. For odd `n` the middle angle is exactly `beta`.
pub fn subsampled_angles(fan: &FanGeometry, n: usize) -> Result<WedgeSelection> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "sub-sampling needs at least 2 projections, got {n}"
        )));
    }
    let gamma_max = fan.gamma_max();
    let denom = (n - 1) as f64;
    let angles: Vec<f64> = (0..n)
        .map(|i| fan.beta_rad + gamma_max * (2.0 * i as f64 - denom) / denom)
        .collect();
    Ok(WedgeSelection {
        beta_rad: fan.beta_rad,
        n_projections: n,
        angles_rad: angles,
    })
}

/// Maps a fan detector coordinate to the parallel projection coordinates of
/// the same ray: `theta = beta + gamma`, `s = sid * sin(gamma)`.
pub fn rebin_coordinates(u: f64, fan: &FanGeometry) -> (f64, f64) {
    let gamma = gamma_of_pixel(u, fan);
    (fan.beta_rad + gamma, fan.sid_mm * gamma.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn paper_fan(beta: f64) -> FanGeometry {
        FanGeometry::new(1200.0, 900.0, 512, 1.0, beta).unwrap()
    }

    #[test]
    fn gamma_central_ray_is_zero() {
        let fan = paper_fan(0.0);
        assert_eq!(gamma_of_pixel(0.0, &fan), 0.0);
    }

    #[test]
    fn gamma_at_u_equal_sdd_is_quarter_pi() {
        let fan = paper_fan(0.0);
        assert_relative_eq!(gamma_of_pixel(1200.0, &fan), FRAC_PI_4, max_relative = 1e-15);
    }

    #[test]
    fn gamma_matches_arctangent_oracle() {
        let fan = paper_fan(0.0);
        // oracle: atan(300/1200) = atan(0.25)
        let expected = 0.25f64.atan();
        assert_relative_eq!(gamma_of_pixel(300.0, &fan), expected, max_relative = 1e-15);
        assert_relative_eq!(expected, 0.244979, max_relative = 1e-5);
    }

    #[test]
    fn full_sampling_gives_one_angle_per_detector_pixel() {
        let fan = paper_fan(0.0);
        let wedge = full_sampling_angles(&fan);
        assert_eq!(wedge.n_projections, 512);
        assert_eq!(wedge.angles_rad.len(), 512);
    }

    #[test]
    fn full_sampling_symmetric_about_beta_zero() {
        let fan = paper_fan(0.0);
        let wedge = full_sampling_angles(&fan);
        let n = wedge.angles_rad.len();
        for k in 0..n {
            assert_relative_eq!(
                wedge.angles_rad[k],
                -wedge.angles_rad[n - 1 - k],
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn full_sampling_last_angle_matches_oracle() {
        // beta = 90 deg, 512 px spacing 1: last pixel center at u = +255.5
        let fan = paper_fan(FRAC_PI_2);
        let wedge = full_sampling_angles(&fan);
        let expected = FRAC_PI_2 + (255.5f64 / 1200.0).atan();
        assert_relative_eq!(wedge.angles_rad[511], expected, max_relative = 1e-15);
    }

    #[test]
    fn full_sampling_strictly_increasing() {
        let fan = paper_fan(0.4);
        let wedge = full_sampling_angles(&fan);
        assert!(wedge.angles_rad.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsampled_three_hits_endpoints_and_center() {
        let fan = paper_fan(0.0);
        let wedge = subsampled_angles(&fan, 3).unwrap();
        let g = fan.gamma_max();
        assert_eq!(wedge.angles_rad.len(), 3);
        assert_relative_eq!(wedge.angles_rad[0], -g, epsilon = 1e-15);
        assert_eq!(wedge.angles_rad[1], 0.0);
        assert_relative_eq!(wedge.angles_rad[2], g, epsilon = 1e-15);
    }

    #[test]
    fn subsampled_odd_count_middle_is_exactly_beta() {
        let beta = 25.0f64.to_radians();
        let fan = paper_fan(beta);
        let wedge = subsampled_angles(&fan, 5).unwrap();
        assert_eq!(wedge.angles_rad[2], beta);
    }

    #[test]
    fn subsampled_fifteen_matches_arctangent_oracle() {
        let fan = paper_fan(0.0);
        let wedge = subsampled_angles(&fan, 15).unwrap();
        let gamma_max = (256.0f64 / 1200.0).atan();
        assert_relative_eq!(fan.gamma_max(), gamma_max, max_relative = 1e-15);
        let step = 2.0 * gamma_max / 14.0;
        for (i, &a) in wedge.angles_rad.iter().enumerate() {
            assert_relative_eq!(a, -gamma_max + i as f64 * step, epsilon = 1e-12);
        }
    }

    #[test]
    fn subsampled_rejects_fewer_than_two() {
        let fan = paper_fan(0.0);
        assert!(matches!(
            subsampled_angles(&fan, 1),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rebin_central_ray_maps_to_itself() {
        let fan = paper_fan(0.7);
        let (theta, s) = rebin_coordinates(0.0, &fan);
        assert_eq!(theta, 0.7);
        assert_eq!(s, 0.0);
    }

    #[test]
    fn rebin_at_u_equal_sdd() {
        let fan = paper_fan(0.2);
        let (theta, s) = rebin_coordinates(1200.0, &fan);
        assert_relative_eq!(theta, 0.2 + FRAC_PI_4, max_relative = 1e-15);
        assert_relative_eq!(s, 900.0 * 0.5f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn rebin_matches_trigonometric_oracle() {
        let fan = paper_fan(0.0);
        let (theta, s) = rebin_coordinates(300.0, &fan);
        let gamma = 0.25f64.atan();
        assert_relative_eq!(theta, gamma, max_relative = 1e-15);
        assert_relative_eq!(s, 900.0 * gamma.sin(), max_relative = 1e-15);
        assert_relative_eq!(s, 218.3, max_relative = 1e-3);
    }

    #[test]
    fn rebin_s_bounded_by_wedge_extent() {
        let fan = paper_fan(0.3);
        let bound = fan.sid_mm * fan.gamma_max().sin() + 1e-12;
        for k in 0..fan.detector_px {
            let (_, s) = rebin_coordinates(fan.detector_coord(k), &fan);
            assert!(s.abs() <= bound);
        }
    }

    // Full sampling and uniform sub-sampling with the same count agree at the
    // wedge anchors but nowhere else: gamma is nonlinear in u.
    #[test]
    fn full_vs_uniform_agree_only_at_anchors() {
        // odd pixel count so both lists contain beta exactly
        let fan = FanGeometry::new(1200.0, 900.0, 25, 8.0, 0.0).unwrap();
        let full = full_sampling_angles(&fan);
        let uniform = subsampled_angles(&fan, 25).unwrap();
        // middle angle: both exactly beta
        assert_eq!(full.angles_rad[12], 0.0);
        assert_eq!(uniform.angles_rad[12], 0.0);
        // endpoints: differ only by the half-pixel between pixel center and
        // detector edge
        let edge_gap = fan.gamma_max() - (fan.detector_coord(24) / fan.sdd_mm).atan();
        assert!(edge_gap > 0.0);
        assert!((uniform.angles_rad[24] - full.angles_rad[24]).abs() <= edge_gap + 1e-15);
        // quarter position: visibly different (tan-spacing vs uniform)
        let d = (uniform.angles_rad[6] - full.angles_rad[6]).abs();
        assert!(d > 1e-5, "expected nonlinearity gap, got {d}");
    }

    #[test]
    fn wedge_angles_inside_wedge() {
        let fan = paper_fan(1.1);
        let g = fan.gamma_max();
        for wedge in [
            full_sampling_angles(&fan),
            subsampled_angles(&fan, 7).unwrap(),
        ] {
            assert_eq!(wedge.n_projections, wedge.angles_rad.len());
            for &a in &wedge.angles_rad {
                assert!(a >= 1.1 - g - 1e-12 && a <= 1.1 + g + 1e-12);
            }
        }
    }

    #[test]
    fn grid_world_coordinates_centered() {
        let grid = ImageGrid::square(256, 1.0).unwrap();
        let (x, y) = grid.world_of_pixel(0, 0);
        assert_eq!((x, y), (-127.5, -127.5));
        let (x, y) = grid.world_of_pixel(255, 255);
        assert_eq!((x, y), (127.5, 127.5));
    }

    #[test]
    fn fan_geometry_rejects_bad_distances() {
        assert!(FanGeometry::new(900.0, 1200.0, 512, 1.0, 0.0).is_err());
        assert!(FanGeometry::new(1200.0, 0.0, 512, 1.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn gamma_is_odd(u in -2000.0f64..2000.0) {
            let fan = paper_fan(0.0);
            prop_assert_eq!(gamma_of_pixel(-u, &fan), -gamma_of_pixel(u, &fan));
        }

        #[test]
        fn fan_ray_passes_through_rebinned_parallel_ray(
            u in -255.5f64..255.5,
            beta in -3.0f64..3.0,
        ) {
            // the line source -> detector pixel must coincide with the
            // parallel ray (theta, s): check the source's signed distance
            let fan = paper_fan(beta);
            let (theta, s) = rebin_coordinates(u, &fan);
            let (sx, sy) = fan.source();
            // signed detector coordinate of the source w.r.t. angle theta
            let s_of_source = sx * theta.cos() + sy * theta.sin();
            prop_assert!((s_of_source - s).abs() < 1e-9);
        }
    }
}
