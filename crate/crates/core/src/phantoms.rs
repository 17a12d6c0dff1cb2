//! Analytic training phantoms and the Shepp-Logan validation phantom.
//!
//! All phantoms are compositions of ellipses rasterized with a pixel-center
//! membership test (no anti-aliasing), which keeps rasterization exactly
//! linear in the spec list. The canonical training set consists of 65
//! phantoms: a field-of-view filling ellipse, a circle, eight ellipse-bar
//! phantoms with 1..=8 bars, five bar phantoms with 1..=5 bars, and fifty
//! pixelwise standard-normal noise images drawn from a seeded ChaCha8 stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::ImageGrid;
use crate::image::Image;

/// One additive ellipse: a pixel inside the ellipse gains `intensity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseSpec {
    pub center_mm: (f64, f64),
    pub semi_axes_mm: (f64, f64),
    pub rotation_rad: f64,
    pub intensity: f64,
}

impl EllipseSpec {
    /// Pixel-center membership test, boundary included.
    #[inline]
    pub fn contains(&self, x_mm: f64, y_mm: f64) -> bool {
        let (a, b) = self.semi_axes_mm;
        if a <= 0.0 || b <= 0.0 {
            return false;
        }
        let dx = x_mm - self.center_mm.0;
        let dy = y_mm - self.center_mm.1;
        let (c, s) = (self.rotation_rad.cos(), self.rotation_rad.sin());
        // rotate into the ellipse frame
        let xr = dx * c + dy * s;
        let yr = -dx * s + dy * c;
        (xr / a).powi(2) + (yr / b).powi(2) <= 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomClass {
    Ellipse,
    Circle,
    EllipseBar,
    Bar,
    Noise,
}

/// A named phantom: the rasterized image plus, for analytic phantoms, the
/// ellipse specs it was built from (empty for noise phantoms).
#[derive(Debug, Clone)]
pub struct Phantom {
    pub name: String,
    pub class: PhantomClass,
    pub specs: Vec<EllipseSpec>,
    pub image: Image,
}

/// The canonical 65-phantom training set.
#[derive(Debug, Clone)]
pub struct PhantomSet {
    pub phantoms: Vec<Phantom>,
    pub seed: u64,
}

/// Name of the generator that produces the noise phantoms; recorded in
/// manifests so a training set can be regenerated from `(seed, rng)`.
pub const NOISE_RNG: &str = "chacha8";

/// Additive composition of ellipses, sampled at pixel centers.
pub fn rasterize_ellipses(specs: &[EllipseSpec], grid: ImageGrid) -> Image {
    Image::from_fn(grid, |x, y| {
        specs
            .iter()
            .filter(|e| e.contains(x, y))
            .map(|e| e.intensity)
            .sum()
    })
}

/// Bars are thin vertical ellipses (axis ratio 18:1), evenly spaced across
/// the middle of the field of view.
fn bar_specs(grid: ImageGrid, n_bars: usize) -> Vec<EllipseSpec> {
    let (hx, hy) = grid.half_extent_mm();
    (0..n_bars)
        .map(|i| EllipseSpec {
            center_mm: (
                ((i + 1) as f64 / (n_bars + 1) as f64 - 0.5) * 1.5 * hx,
                0.0,
            ),
            semi_axes_mm: (0.025 * hx, 0.45 * hy),
            rotation_rad: 0.0,
            intensity: 1.0,
        })
        .collect()
}

fn surrounding_ellipse(grid: ImageGrid) -> EllipseSpec {
    let (hx, hy) = grid.half_extent_mm();
    EllipseSpec {
        center_mm: (0.0, 0.0),
        semi_axes_mm: (0.9 * hx, 0.65 * hy),
        rotation_rad: 0.0,
        intensity: 1.0,
    }
}

/// Builds the canonical 65-phantom set. Deterministic in `(grid, seed)`.
pub fn canonical_training_set(grid: ImageGrid, seed: u64) -> PhantomSet {
    let (hx, hy) = grid.half_extent_mm();
    let mut phantoms = Vec::with_capacity(65);

    let analytic = |name: String, class: PhantomClass, specs: Vec<EllipseSpec>| Phantom {
        image: rasterize_ellipses(&specs, grid),
        name,
        class,
        specs,
    };

    phantoms.push(analytic(
        "ellipse".into(),
        PhantomClass::Ellipse,
        vec![surrounding_ellipse(grid)],
    ));
    let r = 0.8 * hx.min(hy);
    phantoms.push(analytic(
        "circle".into(),
        PhantomClass::Circle,
        vec![EllipseSpec {
            center_mm: (0.0, 0.0),
            semi_axes_mm: (r, r),
            rotation_rad: 0.0,
            intensity: 1.0,
        }],
    ));
    for k in 1..=8 {
        let mut specs = vec![surrounding_ellipse(grid)];
        specs.extend(bar_specs(grid, k));
        phantoms.push(analytic(
            format!("ellipse_bar_{k}"),
            PhantomClass::EllipseBar,
            specs,
        ));
    }
    for k in 1..=5 {
        phantoms.push(analytic(
            format!("bar_{k}"),
            PhantomClass::Bar,
            bar_specs(grid, k),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..50 {
        let data: Vec<f64> = (0..grid.n_pixels())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        phantoms.push(Phantom {
            name: format!("noise_{k:02}"),
            class: PhantomClass::Noise,
            specs: Vec::new(),
            image: Image { grid, data },
        });
    }

    PhantomSet { phantoms, seed }
}

/// The ten-ellipse Shepp-Logan head phantom with the original intensities,
/// scaled so its unit square fills the grid extent.
pub fn shepp_logan(grid: ImageGrid) -> Image {
    rasterize_ellipses(&shepp_logan_specs(grid), grid)
}

/// The Shepp-Logan parameter table mapped to the grid. Columns of the
/// classic table: intensity, x/y semi-axes, center, rotation (degrees, ccw).
pub fn shepp_logan_specs(grid: ImageGrid) -> Vec<EllipseSpec> {
    const TABLE: [(f64, f64, f64, f64, f64, f64); 10] = [
        (2.00, 0.6900, 0.9200, 0.00, 0.0000, 0.0),
        (-0.98, 0.6624, 0.8740, 0.00, -0.0184, 0.0),
        (-0.02, 0.1100, 0.3100, 0.22, 0.0000, -18.0),
        (-0.02, 0.1600, 0.4100, -0.22, 0.0000, 18.0),
        (0.01, 0.2100, 0.2500, 0.00, 0.3500, 0.0),
        (0.01, 0.0460, 0.0460, 0.00, 0.1000, 0.0),
        (0.01, 0.0460, 0.0460, 0.00, -0.1000, 0.0),
        (0.01, 0.0460, 0.0230, -0.08, -0.6050, 0.0),
        (0.01, 0.0230, 0.0230, 0.00, -0.6050, 0.0),
        (0.01, 0.0230, 0.0460, 0.06, -0.6050, 0.0),
    ];
    let (hx, hy) = grid.half_extent_mm();
    TABLE
        .iter()
        .map(|&(intensity, a, b, x0, y0, phi_deg)| EllipseSpec {
            center_mm: (x0 * hx, y0 * hy),
            semi_axes_mm: (a * hx, b * hy),
            rotation_rad: phi_deg.to_radians(),
            intensity,
        })
        .collect()
}
