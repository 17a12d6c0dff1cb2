//! Dataset construction and the two-phase training schedule.
//!
//! Phase 1 trains the scale `S` with the filter frozen; since the loss is
//! quadratic in `S` with constant curvature `a = sum ||q_i||^2` (the
//! pre-scale outputs `q_i` do not change while `K` is fixed), the constant
//! step size is expressed relative to that curvature: `step = lr_scale / a`.
//! Phase 2 freezes `S` and trains the filter by gradient descent with the
//! step `lr_filter / L`, where `L` is a power-iteration estimate of the
//! largest curvature of the (also quadratic) filter objective, followed by
//! Gaussian smoothing of the weights after every epoch.
//!
//! Training is full-batch by default and bitwise deterministic: per-sample
//! work is parallelized over fixed-size chunks and the partial results are
//! merged in a fixed order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, ParallelGeometry, WedgeRule};
use crate::image::Image;
use crate::phantoms::PhantomSet;
use crate::projectors::{fan_forward, parallel_forward};
use crate::rebin::{RebinModel, TrainingSample};
use crate::spectral::{gaussian_smooth, FilterMode, SpectralFilter};

/// Default source trajectory in degrees.
pub const DEFAULT_TRAJECTORY_DEG: [f64; 5] = [0.0, 25.0, 45.0, 65.0, 90.0];

/// Relative loss change over [`CONVERGENCE_WINDOW`] epochs below which
/// phase 1 stops.
pub const PHASE1_CONVERGENCE: f64 = 1e-6;
const CONVERGENCE_WINDOW: usize = 5;

/// Fixed chunk size for deterministic parallel gradient accumulation.
const GRAD_CHUNK: usize = 8;

/// Power-iteration steps for the phase-2 curvature estimate.
const CURVATURE_ITERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub subsampling: WedgeRule,
    pub filter_mode: FilterMode,
    /// Phase-1 step size relative to the phase-1 curvature; values in (0, 2)
    /// descend monotonically.
    pub lr_scale: f64,
    /// Phase-2 step size relative to the estimated largest curvature.
    pub lr_filter: f64,
    pub epochs_scale: usize,
    pub epochs_filter: usize,
    pub smoothing_sigma_bins: f64,
    /// Heavy-ball momentum for the phase-2 filter updates; 0 is plain
    /// gradient descent. The filter objective is quadratic and can be very
    /// ill-conditioned at fine sub-sampling, where momentum converges in
    /// far fewer epochs.
    pub momentum: f64,
    pub seed: u64,
    pub trajectory_deg: Vec<f64>,
    /// `None` processes the full batch per update; `Some(b)` uses seeded
    /// shuffling into mini-batches of size `b`.
    pub batch_size: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            subsampling: WedgeRule::Full,
            filter_mode: FilterMode::ProjectionDependent,
            lr_scale: 0.5,
            lr_filter: 0.9,
            epochs_scale: 200,
            epochs_filter: 30,
            smoothing_sigma_bins: 1.5,
            momentum: 0.0,
            seed: 0,
            trajectory_deg: DEFAULT_TRAJECTORY_DEG.to_vec(),
            batch_size: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_scale > 0.0) || !(self.lr_filter > 0.0) {
            return Err(Error::InvalidArgument(
                "learning rates must be positive".into(),
            ));
        }
        if self.trajectory_deg.is_empty() {
            return Err(Error::InvalidArgument("empty trajectory".into()));
        }
        if !(self.smoothing_sigma_bins >= 0.0) {
            return Err(Error::InvalidArgument(
                "smoothing sigma must be non-negative".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if let WedgeRule::Count(n) = self.subsampling {
            if n < 2 {
                return Err(Error::InvalidArgument(
                    "sub-sampling needs at least 2 projections".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub phase: u8,
    pub loss: f64,
}

/// Outcome of a training run. Wall-clock time is kept out of the serialized
/// form so that reports are bitwise reproducible.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_curve: Vec<EpochLoss>,
    pub final_scale: f64,
    pub final_filter: SpectralFilter,
    pub dataset_digest: String,
    pub effective_lr_scale: f64,
    pub effective_lr_filter: f64,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub phase1_converged: bool,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

/// Projects every phantom over the trajectory: one sample per
/// `(phantom, beta)` pair, with the wedge sinogram as input and the fan
/// projection as label.
pub fn build_dataset(
    phantoms: &PhantomSet,
    config: &TrainConfig,
    fan_template: &FanGeometry,
) -> Result<Vec<TrainingSample>> {
    config.validate()?;
    let mut jobs = Vec::new();
    for phantom in &phantoms.phantoms {
        for &beta_deg in &config.trajectory_deg {
            jobs.push((phantom, beta_deg));
        }
    }
    jobs.par_iter()
        .map(|&(phantom, beta_deg)| {
            let fan = fan_template.at_beta(beta_deg.to_radians());
            let wedge = config.subsampling.wedge_for(&fan)?;
            let geom = ParallelGeometry::new(
                fan.detector_px,
                fan.detector_spacing_mm,
                wedge.angles_rad,
            )?;
            let p_p = parallel_forward(&phantom.image, &geom);
            let p_f = fan_forward(&phantom.image, &fan)?;
            TrainingSample::new(p_p, p_f, phantom.name.clone())
        })
        .collect()
}

/// Content digest of a dataset: SHA-256 over every sample's payload bytes in
/// order.
pub fn dataset_digest(data: &[TrainingSample]) -> String {
    let mut hasher = Sha256::new();
    for s in data {
        for v in &s.p_p.data {
            hasher.update(v.to_le_bytes());
        }
        for v in &s.p_f.data {
            hasher.update(v.to_le_bytes());
        }
        hasher.update(s.beta_rad.to_le_bytes());
        hasher.update(s.phantom_name.as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Observer events emitted during training.
pub enum TrainEvent<'a> {
    /// Fired after every phase-2 update: the filter before and after the
    /// per-epoch Gaussian smoothing.
    Phase2Smoothed {
        epoch: usize,
        before: &'a SpectralFilter,
        after: &'a SpectralFilter,
    },
}

/// Two-phase training. Expects `model` initialized with the Ram-Lak filter
/// and `S = 1`; on a divergence error the model keeps its last finite state.
pub fn train_two_phase(
    model: &mut RebinModel,
    data: &[TrainingSample],
    config: &TrainConfig,
) -> Result<TrainReport> {
    train_two_phase_observed(model, data, config, &mut |_| {})
}

pub fn train_two_phase_observed(
    model: &mut RebinModel,
    data: &[TrainingSample],
    config: &TrainConfig,
    observer: &mut dyn FnMut(TrainEvent<'_>),
) -> Result<TrainReport> {
    config.validate()?;
    let started = std::time::Instant::now();
    let digest = dataset_digest(data);
    let mut loss_curve = Vec::new();

    // ----- phase 1: train S, K fixed --------------------------------------
    // cache per-sample curvature/correlation; q_i is independent of S
    let per_sample: Vec<(f64, f64, f64)> = par_chunked_map(data, |s| {
        let q = model.forward_prescale(&s.p_p, s.beta_rad)?;
        let qq: f64 = q.data.iter().map(|v| v * v).sum();
        let qp: f64 = q.data.iter().zip(&s.p_f.data).map(|(a, b)| a * b).sum();
        let pp: f64 = s.p_f.data.iter().map(|v| v * v).sum();
        Ok((qq, qp, pp))
    })?;
    let a_total: f64 = per_sample.iter().map(|t| t.0).sum();
    let b_total: f64 = per_sample.iter().map(|t| t.1).sum();
    let c_total: f64 = per_sample.iter().map(|t| t.2).sum();
    let effective_lr_scale = if a_total > 0.0 {
        config.lr_scale / a_total
    } else {
        0.0
    };

    let mut phase1_converged = false;
    let mut phase1_epochs = 0;
    let order = BatchOrder::new(data.len(), config.batch_size, config.seed);
    for epoch in 0..config.epochs_scale {
        let s = model.scale;
        let loss = 0.5 * (s * s * a_total - 2.0 * s * b_total + c_total);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch, phase: 1 });
        }
        loss_curve.push(EpochLoss {
            epoch,
            phase: 1,
            loss,
        });
        phase1_epochs = epoch + 1;
        if epoch >= CONVERGENCE_WINDOW {
            let prev = loss_curve[loss_curve.len() - 1 - CONVERGENCE_WINDOW].loss;
            if (loss - prev).abs() <= PHASE1_CONVERGENCE * prev.abs().max(f64::MIN_POSITIVE) {
                phase1_converged = true;
                break;
            }
        }
        for batch in order.batches(epoch) {
            let (a_b, b_b): (f64, f64) = batch
                .iter()
                .map(|&i| (per_sample[i].0, per_sample[i].1))
                .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
            let next = model.scale - effective_lr_scale * (model.scale * a_b - b_b);
            if !next.is_finite() {
                return Err(Error::TrainingDiverged { epoch, phase: 1 });
            }
            model.scale = next;
        }
    }

    // ----- phase 2: train K, S fixed ---------------------------------------
    let mut effective_lr_filter = 0.0;
    let mut phase2_epochs = 0;
    if config.epochs_filter > 0 {
        let curvature = estimate_filter_curvature(model, data)?;
        effective_lr_filter = if curvature > 0.0 {
            config.lr_filter / curvature
        } else {
            0.0
        };
        let mut velocity = vec![0.0; model.filter.weights().len()];
        for epoch in 0..config.epochs_filter {
            let mut epoch_loss = 0.0;
            for batch in order.batches(epoch) {
                let samples: Vec<&TrainingSample> = batch.iter().map(|&i| &data[i]).collect();
                let (grad, batch_loss) = batch_filter_gradient(model, &samples)?;
                epoch_loss += batch_loss;
                if !batch_loss.is_finite() {
                    return Err(Error::TrainingDiverged { epoch, phase: 2 });
                }
                let weights = model.filter.weights_mut();
                for ((w, v), g) in weights.iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = config.momentum * *v - effective_lr_filter * g;
                    *w += *v;
                }
                if !model.filter.weights().iter().all(|w| w.is_finite()) {
                    return Err(Error::TrainingDiverged { epoch, phase: 2 });
                }
            }
            loss_curve.push(EpochLoss {
                epoch,
                phase: 2,
                loss: epoch_loss,
            });
            phase2_epochs = epoch + 1;
            let before = model.filter.clone();
            model.filter = gaussian_smooth(&model.filter, config.smoothing_sigma_bins);
            observer(TrainEvent::Phase2Smoothed {
                epoch,
                before: &before,
                after: &model.filter,
            });
        }
    }

    Ok(TrainReport {
        loss_curve,
        final_scale: model.scale,
        final_filter: model.filter.clone(),
        dataset_digest: digest,
        effective_lr_scale,
        effective_lr_filter,
        phase1_epochs,
        phase2_epochs,
        phase1_converged,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Full-batch filter gradient plus the summed loss, accumulated over fixed
/// chunks in a fixed order.
fn batch_filter_gradient(
    model: &RebinModel,
    samples: &[&TrainingSample],
) -> Result<(Vec<f64>, f64)> {
    let width = model.filter.weights().len();
    let partials: Vec<Result<(Vec<f64>, f64)>> = samples
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; width];
            let mut loss = 0.0;
            for s in chunk {
                let g = model.grad_both(s)?;
                for (a, b) in grad.iter_mut().zip(&g.filter) {
                    *a += b;
                }
                loss += g.loss;
            }
            Ok((grad, loss))
        })
        .collect();
    let mut grad = vec![0.0; width];
    let mut loss = 0.0;
    for p in partials {
        let (g, l) = p?;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        loss += l;
    }
    Ok((grad, loss))
}

/// Largest curvature of the quadratic filter objective, estimated by power
/// iteration on `v -> grad(K0 + v) - grad(K0)` with a deterministic start.
fn estimate_filter_curvature(model: &RebinModel, data: &[TrainingSample]) -> Result<f64> {
    let width = model.filter.weights().len();
    let samples: Vec<&TrainingSample> = data.iter().collect();
    let (g0, _) = batch_filter_gradient(model, &samples)?;
    let mut v = vec![1.0 / (width as f64).sqrt(); width];
    let mut lambda = 0.0;
    for _ in 0..CURVATURE_ITERS {
        let mut probe = model.clone();
        for (w, dv) in probe.filter.weights_mut().iter_mut().zip(&v) {
            *w += dv;
        }
        let (g1, _) = batch_filter_gradient(&probe, &samples)?;
        let hv: Vec<f64> = g1.iter().zip(&g0).map(|(a, b)| a - b).collect();
        lambda = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if lambda == 0.0 {
            return Ok(0.0);
        }
        for (vi, hvi) in v.iter_mut().zip(&hv) {
            *vi = hvi / lambda;
        }
    }
    Ok(lambda)
}

/// Sample ordering: full batch, or seeded shuffling into mini-batches.
struct BatchOrder {
    n: usize,
    batch_size: Option<usize>,
    seed: u64,
}

impl BatchOrder {
    fn new(n: usize, batch_size: Option<usize>, seed: u64) -> Self {
        Self { n, batch_size, seed }
    }

    fn batches(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut indices: Vec<usize> = (0..self.n).collect();
        match self.batch_size {
            None => vec![indices],
            Some(b) => {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                    self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                indices.shuffle(&mut rng);
                indices.chunks(b).map(|c| c.to_vec()).collect()
            }
        }
    }
}

/// Order-preserving parallel map with fixed chunking; errors propagate.
fn par_chunked_map<T: Sync, U: Send>(
    items: &[T],
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    let chunks: Vec<Result<Vec<U>>> = items
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| chunk.iter().map(&f).collect())
        .collect();
    let mut out = Vec::with_capacity(items.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Per-angle validation of a model against the fan forward projection of a
/// phantom: the ground-truth reference, the model profile and their
/// difference, with error metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaValidation {
    pub beta_deg: f64,
    pub rel_l2: f64,
    pub max_abs: f64,
    pub correlation: f64,
    pub reference: Vec<f64>,
    pub profile: Vec<f64>,
    pub difference: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub per_beta: Vec<BetaValidation>,
    pub mean_rel_l2: f64,
}

/// Runs the model on wedge projections of `phantom` for every trajectory
/// angle and compares against the fan-beam ground truth.
pub fn validate(
    model: &RebinModel,
    phantom: &Image,
    fan_template: &FanGeometry,
    trajectory_deg: &[f64],
) -> Result<ValidationReport> {
    let per_beta: Vec<BetaValidation> = trajectory_deg
        .iter()
        .map(|&beta_deg| {
            let fan = fan_template.at_beta(beta_deg.to_radians());
            let wedge = model.wedge.wedge_for(&fan)?;
            let geom =
                ParallelGeometry::new(fan.detector_px, fan.detector_spacing_mm, wedge.angles_rad)?;
            let p_p = parallel_forward(phantom, &geom);
            let profile = model.forward(&p_p, fan.beta_rad)?;
            let reference = fan_forward(phantom, &fan)?;
            let difference: Vec<f64> = profile
                .data
                .iter()
                .zip(&reference.data)
                .map(|(a, b)| a - b)
                .collect();
            let rel_l2 = relative_l2(&profile.data, &reference.data);
            let max_abs = difference.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let correlation = pearson_correlation(&profile.data, &reference.data);
            Ok(BetaValidation {
                beta_deg,
                rel_l2,
                max_abs,
                correlation,
                reference: reference.data,
                profile: profile.data,
                difference,
            })
        })
        .collect::<Result<_>>()?;
    let mean_rel_l2 = per_beta.iter().map(|b| b.rel_l2).sum::<f64>() / per_beta.len() as f64;
    Ok(ValidationReport {
        per_beta,
        mean_rel_l2,
    })
}

/// `||a - b|| / ||b||`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Pearson correlation coefficient of two equally long profiles.
pub fn pearson_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}
