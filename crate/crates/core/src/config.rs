//! Experiment configuration: a single JSON document describing geometry,
//! training hyperparameters and outputs. Unknown keys are rejected; every
//! field has a default, so `{}` is the canonical full-sampling experiment.
//! The published schema for this document lives in
//! `docs/experiment_config.schema.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, ImageGrid, WedgeRule};
use crate::io::sha256_hex;
use crate::spectral::FilterMode;
use crate::training::{TrainConfig, DEFAULT_TRAJECTORY_DEG};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    pub sdd_mm: f64,
    pub sid_mm: f64,
    pub detector_px: usize,
    pub detector_spacing_mm: f64,
    pub image_px: usize,
    pub image_spacing_mm: f64,
    pub trajectory_deg: Vec<f64>,
    /// Parallel projections per fan angle; `null` means full sampling (one
    /// projection per detector pixel).
    pub n_projections: Option<usize>,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            sdd_mm: 1200.0,
            sid_mm: 900.0,
            detector_px: 512,
            detector_spacing_mm: 1.0,
            image_px: 256,
            image_spacing_mm: 1.0,
            trajectory_deg: DEFAULT_TRAJECTORY_DEG.to_vec(),
            n_projections: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingParams {
    pub lr_scale: f64,
    pub lr_filter: f64,
    pub epochs_scale: usize,
    pub epochs_filter: usize,
    pub smoothing_sigma_bins: f64,
    pub momentum: f64,
    pub batch_size: Option<usize>,
}

impl Default for TrainingParams {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr_scale: t.lr_scale,
            lr_filter: t.lr_filter,
            epochs_scale: t.epochs_scale,
            epochs_filter: t.epochs_filter,
            smoothing_sigma_bins: t.smoothing_sigma_bins,
            momentum: t.momentum,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub training: TrainingParams,
    pub phantom_seed: u64,
    pub output_dir: String,
    pub filter_mode: FilterMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            geometry: GeometryConfig::default(),
            training: TrainingParams::default(),
            phantom_seed: 0,
            output_dir: "out".into(),
            filter_mode: FilterMode::ProjectionDependent,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Format {
            path: "<config>".into(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let config: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.fan_template()?;
        self.grid()?;
        self.train_config().validate()?;
        Ok(())
    }

    /// Fan geometry template at `beta = 0`.
    pub fn fan_template(&self) -> Result<FanGeometry> {
        FanGeometry::new(
            self.geometry.sdd_mm,
            self.geometry.sid_mm,
            self.geometry.detector_px,
            self.geometry.detector_spacing_mm,
            0.0,
        )
    }

    pub fn grid(&self) -> Result<ImageGrid> {
        ImageGrid::square(self.geometry.image_px, self.geometry.image_spacing_mm)
    }

    pub fn wedge_rule(&self) -> WedgeRule {
        match self.geometry.n_projections {
            None => WedgeRule::Full,
            Some(n) => WedgeRule::Count(n),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            subsampling: self.wedge_rule(),
            filter_mode: self.filter_mode,
            lr_scale: self.training.lr_scale,
            lr_filter: self.training.lr_filter,
            epochs_scale: self.training.epochs_scale,
            epochs_filter: self.training.epochs_filter,
            smoothing_sigma_bins: self.training.smoothing_sigma_bins,
            momentum: self.training.momentum,
            seed: self.phantom_seed,
            trajectory_deg: self.geometry.trajectory_deg.clone(),
            batch_size: self.training.batch_size,
        }
    }

    /// Content digest identifying this configuration; runs are addressed
    /// by it. The output directory is a storage location, not experiment
    /// content, so it does not participate.
    pub fn digest(&self) -> String {
        let mut canon = self.clone();
        canon.output_dir = String::new();
        sha256_hex(&serde_json::to_vec(&canon).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_the_canonical_geometry() {
        let c = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(c.geometry.sdd_mm, 1200.0);
        assert_eq!(c.geometry.sid_mm, 900.0);
        assert_eq!(c.geometry.detector_px, 512);
        assert_eq!(c.geometry.image_px, 256);
        assert_eq!(c.geometry.trajectory_deg, vec![0.0, 25.0, 45.0, 65.0, 90.0]);
        assert_eq!(c.wedge_rule(), WedgeRule::Full);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = r#"{ "geometry": { "trajectorry_deg": [0.0] } }"#;
        assert!(matches!(
            ExperimentConfig::from_json(bad),
            Err(Error::Format { .. })
        ));
        let bad_top = r#"{ "extra": 1 }"#;
        assert!(ExperimentConfig::from_json(bad_top).is_err());
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        let bad = r#"{ "geometry": { "sdd_mm": 100.0, "sid_mm": 900.0 } }"#;
        assert!(ExperimentConfig::from_json(bad).is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.digest(), b.digest());
        b.phantom_seed = 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn round_trip_preserves_config() {
        let mut c = ExperimentConfig::default();
        c.geometry.n_projections = Some(15);
        c.filter_mode = FilterMode::ProjectionIndependent;
        let text = serde_json::to_string_pretty(&c).unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
    }
}
