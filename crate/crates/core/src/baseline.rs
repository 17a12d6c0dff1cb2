//! Classical geometric parallel-to-fan rebinning: every fan detector pixel
//! is resampled from the parallel stack with two steps of interpolation in
//! the spatial domain, first between the two bracketing projection angles,
//! then between the two bracketing detector positions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rebin_coordinates, FanGeometry, ParallelGeometry};
use crate::projectors::{FanProjection, ParallelSinogram};

/// Interpolation target for one fan detector pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebinTarget {
    pub theta: f64,
    pub s: f64,
    pub angle_idx: (usize, usize),
    pub angle_weights: (f64, f64),
    pub det_idx: (usize, usize),
    pub det_weights: (f64, f64),
    /// False when `s` falls beyond the parallel detector; such targets
    /// contribute zero.
    pub s_in_range: bool,
}

/// Precomputed resampling table, one target per fan detector pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct RebinTable {
    pub targets: Vec<RebinTarget>,
}

/// Bracketing indices and linear weights of `x` within a sorted list.
/// Values outside the list clamp to the nearest entry.
fn bracket(sorted: &[f64], x: f64) -> (usize, usize, f64, f64) {
    let n = sorted.len();
    if x <= sorted[0] {
        return (0, 0, 1.0, 0.0);
    }
    if x >= sorted[n - 1] {
        return (n - 1, n - 1, 1.0, 0.0);
    }
    // first index with sorted[i] > x; the bracket is [i-1, i]
    let hi = sorted.partition_point(|&a| a <= x);
    let lo = hi - 1;
    if sorted[lo] == x {
        return (lo, lo, 1.0, 0.0);
    }
    let w_hi = (x - sorted[lo]) / (sorted[hi] - sorted[lo]);
    (lo, hi, 1.0 - w_hi, w_hi)
}

/// Builds the resampling table for one fan geometry. Fails when the parallel
/// angle list does not cover the angular range spanned by the fan detector
/// pixel centers.
pub fn build_rebin_table(p_geom: &ParallelGeometry, fan: &FanGeometry) -> Result<RebinTable> {
    if p_geom.n_angles() == 0 {
        return Err(Error::InvalidArgument("empty parallel angle list".into()));
    }
    let (theta_first, _) = rebin_coordinates(fan.detector_coord(0), fan);
    let (theta_last, _) = rebin_coordinates(fan.detector_coord(fan.detector_px - 1), fan);
    let tol = 1e-9;
    let first = *p_geom.angles_rad.first().unwrap();
    let last = *p_geom.angles_rad.last().unwrap();
    if first > theta_first + tol || last < theta_last - tol {
        let mut missing = Vec::new();
        if first > theta_first + tol {
            missing.push(format!("[{theta_first:.6}, {first:.6})"));
        }
        if last < theta_last - tol {
            missing.push(format!("({last:.6}, {theta_last:.6}]"));
        }
        return Err(Error::Coverage {
            missing: missing.join(" and "),
        });
    }

    let nd = p_geom.detector_px as f64;
    let mut targets = Vec::with_capacity(fan.detector_px);
    let mut clipped = 0usize;
    for k in 0..fan.detector_px {
        let (theta, s) = rebin_coordinates(fan.detector_coord(k), fan);
        let (a0, a1, aw0, aw1) = bracket(&p_geom.angles_rad, theta);
        let fk = s / p_geom.detector_spacing_mm + (nd - 1.0) / 2.0;
        let s_in_range = (0.0..=nd - 1.0).contains(&fk);
        let (d0, d1, dw0, dw1) = if s_in_range {
            let k0 = fk.floor().min(nd - 1.0);
            let frac = fk - k0;
            let k0 = k0 as usize;
            let k1 = (k0 + 1).min(p_geom.detector_px - 1);
            (k0, k1, 1.0 - frac, frac)
        } else {
            clipped += 1;
            (0, 0, 0.0, 0.0)
        };
        targets.push(RebinTarget {
            theta,
            s,
            angle_idx: (a0, a1),
            angle_weights: (aw0, aw1),
            det_idx: (d0, d1),
            det_weights: (dw0, dw1),
            s_in_range,
        });
    }
    if clipped > 0 {
        log::warn!(
            "{clipped} fan detector pixel(s) map beyond the parallel detector and will read zero"
        );
    }
    Ok(RebinTable { targets })
}

/// Applies the table: angle interpolation first, then detector interpolation.
pub fn apply_rebin_table(
    table: &RebinTable,
    p_p: &ParallelSinogram,
    fan: &FanGeometry,
) -> Result<FanProjection> {
    if table.targets.len() != fan.detector_px {
        return Err(Error::ShapeMismatch {
            expected: fan.detector_px,
            got: table.targets.len(),
            context: "rebin table".into(),
        });
    }
    let nd = p_p.geometry.detector_px;
    let data = table
        .targets
        .iter()
        .map(|t| {
            if !t.s_in_range {
                return 0.0;
            }
            let row0 = &p_p.data[t.angle_idx.0 * nd..(t.angle_idx.0 + 1) * nd];
            let row1 = &p_p.data[t.angle_idx.1 * nd..(t.angle_idx.1 + 1) * nd];
            // between projections first ...
            let at_d0 = t.angle_weights.0 * row0[t.det_idx.0] + t.angle_weights.1 * row1[t.det_idx.0];
            let at_d1 = t.angle_weights.0 * row0[t.det_idx.1] + t.angle_weights.1 * row1[t.det_idx.1];
            // ... then between detector pixels
            t.det_weights.0 * at_d0 + t.det_weights.1 * at_d1
        })
        .collect();
    Ok(FanProjection {
        geometry: *fan,
        data,
    })
}

/// Geometric rebinning of a parallel sinogram into one fan projection.
pub fn geometric_rebin(p_p: &ParallelSinogram, fan: &FanGeometry) -> Result<FanProjection> {
    let table = build_rebin_table(&p_p.geometry, fan)?;
    apply_rebin_table(&table, p_p, fan)
}
