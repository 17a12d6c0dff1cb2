//! Batch pipeline: dataset generation, training, evaluation and the
//! geometric-rebinning baseline, all driven by an [`ExperimentConfig`].
//! Every artifact is reproducible byte-for-byte from `(config, seed,
//! version)`; wall-clock timing goes to a separate file so the canonical
//! outputs stay deterministic.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, GeometryConfig};
use crate::error::{Error, Result};
use crate::geometry::ParallelGeometry;
use crate::image::Image;
use crate::io;
use crate::phantoms::{canonical_training_set, shepp_logan, EllipseSpec, PhantomClass, NOISE_RNG};
use crate::projectors::fan_forward;
use crate::projectors::parallel_forward;
use crate::rebin::{RebinModel, TrainingSample};
use crate::training::{
    self, build_dataset, pearson_correlation, relative_l2, train_two_phase, TrainReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomEntry {
    pub name: String,
    pub class: PhantomClass,
    pub specs: Vec<EllipseSpec>,
    pub file: FileDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub phantom: String,
    pub beta_deg: f64,
    pub sinogram: FileDigest,
    pub label: FileDigest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub creator_version: String,
    pub config_digest: String,
    pub geometry: GeometryConfig,
    pub phantom_seed: u64,
    pub noise_rng: String,
    pub phantoms: Vec<PhantomEntry>,
    pub samples: Vec<SampleEntry>,
    pub dataset_digest: String,
}

fn beta_label(beta_deg: f64) -> String {
    format!("{beta_deg}").replace('-', "m")
}

/// Generates phantoms, wedge sinograms and fan-beam labels under `out_dir`
/// and writes a manifest with content digests.
pub fn run_generate(config: &ExperimentConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    let grid = config.grid()?;
    let fan = config.fan_template()?;
    let train_config = config.train_config();

    let set = canonical_training_set(grid, config.phantom_seed);
    let mut phantom_entries = Vec::with_capacity(set.phantoms.len());
    for p in &set.phantoms {
        let rel = format!("phantoms/{}", p.name);
        let stem = out_dir.join(&rel);
        let seed = (p.class == PhantomClass::Noise).then_some(set.seed);
        io::write_image(&stem, &p.image, seed)?;
        phantom_entries.push(PhantomEntry {
            name: p.name.clone(),
            class: p.class,
            specs: p.specs.clone(),
            file: FileDigest {
                path: format!("{rel}.bin"),
                sha256: io::tensor_digest(&p.image.data, io::Dtype::F64le),
            },
        });
    }

    let samples = build_dataset(&set, &train_config, &fan)?;
    let mut sample_entries = Vec::with_capacity(samples.len());
    let n_traj = train_config.trajectory_deg.len();
    for (i, sample) in samples.iter().enumerate() {
        let beta_deg = train_config.trajectory_deg[i % n_traj];
        let label = beta_label(beta_deg);
        let sino_rel = format!("samples/{}__b{}_sino", sample.phantom_name, label);
        let fan_rel = format!("samples/{}__b{}_label", sample.phantom_name, label);
        io::write_sinogram(&out_dir.join(&sino_rel), &sample.p_p)?;
        io::write_fan_projection(&out_dir.join(&fan_rel), &sample.p_f)?;
        sample_entries.push(SampleEntry {
            phantom: sample.phantom_name.clone(),
            beta_deg,
            sinogram: FileDigest {
                path: format!("{sino_rel}.bin"),
                sha256: io::tensor_digest(&sample.p_p.data, io::Dtype::F64le),
            },
            label: FileDigest {
                path: format!("{fan_rel}.bin"),
                sha256: io::tensor_digest(&sample.p_f.data, io::Dtype::F64le),
            },
        });
    }

    let manifest = DatasetManifest {
        creator_version: crate::CREATOR_VERSION.into(),
        config_digest: config.digest(),
        geometry: config.geometry.clone(),
        phantom_seed: config.phantom_seed,
        noise_rng: NOISE_RNG.into(),
        phantoms: phantom_entries,
        samples: sample_entries,
        dataset_digest: training::dataset_digest(&samples),
    };
    io::atomic_write(
        &out_dir.join("manifest.json"),
        &serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub fn read_manifest(dataset_dir: &Path) -> Result<DatasetManifest> {
    let path = dataset_dir.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

/// Loads the training samples listed in a manifest, in manifest order.
pub fn load_dataset(dataset_dir: &Path, manifest: &DatasetManifest) -> Result<Vec<TrainingSample>> {
    manifest
        .samples
        .iter()
        .map(|entry| {
            let strip = |p: &str| p.trim_end_matches(".bin").to_string();
            let p_p = io::read_sinogram(&dataset_dir.join(strip(&entry.sinogram.path)))?;
            let p_f = io::read_fan_projection(&dataset_dir.join(strip(&entry.label.path)))?;
            TrainingSample::new(p_p, p_f, entry.phantom.clone())
        })
        .collect()
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub checkpoint_stem: PathBuf,
}

#[derive(Serialize)]
struct Timing {
    wall_clock_seconds: f64,
}

/// Trains on a generated dataset and writes `checkpoint.{json,bin}`,
/// `report.json`, `loss.csv` and `timing.json` under `out_dir`. On
/// divergence the last finite model state is still written before the error
/// propagates.
pub fn run_train(
    config: &ExperimentConfig,
    dataset_dir: &Path,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    config.validate()?;
    let manifest = read_manifest(dataset_dir)?;
    if manifest.geometry != config.geometry || manifest.phantom_seed != config.phantom_seed {
        return Err(Error::InvalidArgument(format!(
            "dataset at {} was generated for a different geometry or seed",
            dataset_dir.display()
        )));
    }
    let data = load_dataset(dataset_dir, &manifest)?;
    let train_config = config.train_config();
    let mut model = RebinModel::ramlak_initialized(
        config.fan_template()?,
        config.wedge_rule(),
        config.grid()?,
        config.filter_mode,
    )?;
    let checkpoint_stem = out_dir.join("checkpoint");
    let result = train_two_phase(&mut model, &data, &train_config);
    match result {
        Ok(report) => {
            io::save_checkpoint(&checkpoint_stem, &model)?;
            // echo the resolved config so runs are self-describing and
            // addressable by digest
            io::atomic_write(
                &out_dir.join("config.json"),
                &serde_json::to_vec_pretty(&serde_json::json!({
                    "config": config,
                    "config_digest": config.digest(),
                }))?,
            )?;
            io::atomic_write(
                &out_dir.join("report.json"),
                &serde_json::to_vec_pretty(&report)?,
            )?;
            io::write_loss_csv(&out_dir.join("loss.csv"), &report.loss_curve)?;
            io::atomic_write(
                &out_dir.join("timing.json"),
                &serde_json::to_vec_pretty(&Timing {
                    wall_clock_seconds: report.wall_clock_seconds,
                })?,
            )?;
            Ok(TrainOutcome {
                report,
                checkpoint_stem,
            })
        }
        Err(e) => {
            // preserve the last finite state for post-mortems
            let _ = io::save_checkpoint(&checkpoint_stem, &model);
            Err(e)
        }
    }
}

/// Which phantom to evaluate against.
#[derive(Debug, Clone)]
pub enum PhantomSource {
    SheppLogan,
    File(PathBuf),
}

impl PhantomSource {
    fn realize(&self, config: &ExperimentConfig) -> Result<Image> {
        match self {
            PhantomSource::SheppLogan => Ok(shepp_logan(config.grid()?)),
            PhantomSource::File(path) => {
                let stem = path.with_extension("");
                let img = io::read_image(&stem)?;
                if img.grid != config.grid()? {
                    return Err(Error::InvalidArgument(format!(
                        "phantom grid {:?} does not match the configured grid",
                        img.grid
                    )));
                }
                Ok(img)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaMetrics {
    pub beta_deg: f64,
    pub rel_l2: f64,
    pub max_abs: f64,
    pub correlation: f64,
    pub baseline_rel_l2: f64,
    pub baseline_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationMetrics {
    pub per_beta: Vec<BetaMetrics>,
    pub mean_rel_l2: f64,
    pub baseline_mean_rel_l2: f64,
}

/// Evaluates a checkpoint against the fan-beam ground truth of a phantom and
/// against the geometric-rebinning baseline at the same sub-sampling; writes
/// one profile CSV per trajectory angle plus `metrics.json`.
pub fn run_evaluate(
    config: &ExperimentConfig,
    checkpoint_stem: &Path,
    phantom: &PhantomSource,
    out_dir: &Path,
) -> Result<EvaluationMetrics> {
    config.validate()?;
    let model = io::load_checkpoint(checkpoint_stem)?;
    if model.fan_template != config.fan_template()?
        || model.grid != config.grid()?
        || model.wedge != config.wedge_rule()
        || model.filter.mode != config.filter_mode
    {
        return Err(Error::InvalidArgument(
            "checkpoint geometry does not match the configuration".into(),
        ));
    }
    let image = phantom.realize(config)?;
    let fan = config.fan_template()?;
    let validation = training::validate(
        &model,
        &image,
        &fan,
        &config.geometry.trajectory_deg,
    )?;

    let mut per_beta = Vec::with_capacity(validation.per_beta.len());
    for v in &validation.per_beta {
        let fan_b = fan.at_beta(v.beta_deg.to_radians());
        let wedge = model.wedge.wedge_for(&fan_b)?;
        let geom = ParallelGeometry::new(fan_b.detector_px, fan_b.detector_spacing_mm, wedge.angles_rad)?;
        let p_p = parallel_forward(&image, &geom);
        let rebinned = crate::baseline::geometric_rebin(&p_p, &fan_b)?;
        per_beta.push(BetaMetrics {
            beta_deg: v.beta_deg,
            rel_l2: v.rel_l2,
            max_abs: v.max_abs,
            correlation: v.correlation,
            baseline_rel_l2: relative_l2(&rebinned.data, &v.reference),
            baseline_correlation: pearson_correlation(&rebinned.data, &v.reference),
        });
        io::write_profile_csv(
            &out_dir.join(format!("profile_b{}.csv", beta_label(v.beta_deg))),
            &v.reference,
            &v.profile,
            &v.difference,
        )?;
    }
    let n = per_beta.len() as f64;
    let metrics = EvaluationMetrics {
        mean_rel_l2: per_beta.iter().map(|b| b.rel_l2).sum::<f64>() / n,
        baseline_mean_rel_l2: per_beta.iter().map(|b| b.baseline_rel_l2).sum::<f64>() / n,
        per_beta,
    };
    io::atomic_write(
        &out_dir.join("metrics.json"),
        &serde_json::to_vec_pretty(&metrics)?,
    )?;
    Ok(metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineBetaMetrics {
    pub beta_deg: f64,
    pub rel_l2: f64,
    pub max_abs: f64,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineMetrics {
    pub per_beta: Vec<BaselineBetaMetrics>,
    pub mean_rel_l2: f64,
}

/// Runs the classical geometric rebinning against the fan-beam ground truth
/// at the configured sub-sampling; writes per-angle profile CSVs and
/// `baseline_metrics.json`.
pub fn run_rebin_baseline(
    config: &ExperimentConfig,
    phantom: &PhantomSource,
    out_dir: &Path,
) -> Result<BaselineMetrics> {
    config.validate()?;
    let image = phantom.realize(config)?;
    let fan = config.fan_template()?;
    let rule = config.wedge_rule();
    let mut per_beta = Vec::new();
    for &beta_deg in &config.geometry.trajectory_deg {
        let fan_b = fan.at_beta(beta_deg.to_radians());
        let wedge = rule.wedge_for(&fan_b)?;
        let geom =
            ParallelGeometry::new(fan_b.detector_px, fan_b.detector_spacing_mm, wedge.angles_rad)?;
        let p_p = parallel_forward(&image, &geom);
        let rebinned = crate::baseline::geometric_rebin(&p_p, &fan_b)?;
        let reference = fan_forward(&image, &fan_b)?;
        let difference: Vec<f64> = rebinned
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| a - b)
            .collect();
        io::write_profile_csv(
            &out_dir.join(format!("baseline_b{}.csv", beta_label(beta_deg))),
            &reference.data,
            &rebinned.data,
            &difference,
        )?;
        per_beta.push(BaselineBetaMetrics {
            beta_deg,
            rel_l2: relative_l2(&rebinned.data, &reference.data),
            max_abs: difference.iter().fold(0.0f64, |m, d| m.max(d.abs())),
            correlation: pearson_correlation(&rebinned.data, &reference.data),
        });
    }
    let metrics = BaselineMetrics {
        mean_rel_l2: per_beta.iter().map(|b| b.rel_l2).sum::<f64>() / per_beta.len() as f64,
        per_beta,
    };
    io::atomic_write(
        &out_dir.join("baseline_metrics.json"),
        &serde_json::to_vec_pretty(&metrics)?,
    )?;
    Ok(metrics)
}

/// Exports a checkpoint's filter as CSV, one row per filter row.
pub fn export_filter(checkpoint_stem: &Path, out_path: &Path) -> Result<()> {
    let model = io::load_checkpoint(checkpoint_stem)?;
    io::write_filter_csv(out_path, &model.filter)
}
