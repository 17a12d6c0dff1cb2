//! On-disk formats: raw tensors with JSON sidecars, model checkpoints and
//! CSV exports.
//!
//! A raw tensor is a pair of files sharing a stem: `<stem>.json` holds the
//! sidecar (dtype, shape, role, geometry, seed, creator version) and
//! `<stem>.bin` holds the payload in row-major order, little-endian. Readers
//! validate the payload length against the sidecar on every read; corrupt
//! pairs are rejected. All writes go through a write-temp-then-rename step.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{FanGeometry, ImageGrid, ParallelGeometry, WedgeRule};
use crate::image::Image;
use crate::projectors::{FanProjection, ParallelSinogram};
use crate::rebin::{AdjointMode, RebinModel};
use crate::spectral::{FilterMode, SpectralFilter};
use crate::training::EpochLoss;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32le,
    #[serde(rename = "f64le")]
    F64le,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32le => 4,
            Dtype::F64le => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorRole {
    Image,
    Sinogram,
    Fanprojection,
    Filter,
}

/// Geometry block embedded in a tensor sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryBlock {
    Image { grid: ImageGrid },
    Parallel { geometry: ParallelGeometry },
    Fan { geometry: FanGeometry },
    Filter { mode: FilterMode, n_rows: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSidecar {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub role: TensorRole,
    pub geometry: GeometryBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub creator_version: String,
}

fn sidecar_path(stem: &Path) -> PathBuf {
    stem.with_extension("json")
}

fn payload_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

/// Write bytes via a temp file in the same directory, then rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(tmp.display().to_string(), e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_payload(data: &[f64], dtype: Dtype) -> Vec<u8> {
    match dtype {
        Dtype::F64le => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
        Dtype::F32le => data.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect(),
    }
}

fn decode_payload(bytes: &[u8], dtype: Dtype) -> Vec<f64> {
    match dtype {
        Dtype::F64le => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32le => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    }
}

/// Writes `<stem>.json` and `<stem>.bin`. The sidecar shape must match the
/// payload length.
pub fn write_tensor(stem: &Path, sidecar: &TensorSidecar, data: &[f64]) -> Result<()> {
    let expected: usize = sidecar.shape.iter().product();
    if expected != data.len() {
        return Err(Error::ShapeMismatch {
            expected,
            got: data.len(),
            context: format!("tensor payload for {}", stem.display()),
        });
    }
    let json = serde_json::to_vec_pretty(sidecar)?;
    atomic_write(&sidecar_path(stem), &json)?;
    atomic_write(&payload_path(stem), &encode_payload(data, sidecar.dtype))
}

/// Reads and validates a sidecar/payload pair.
pub fn read_tensor(stem: &Path) -> Result<(TensorSidecar, Vec<f64>)> {
    let sjson = sidecar_path(stem);
    let bytes = fs::read(&sjson).map_err(|e| Error::io(sjson.display().to_string(), e))?;
    let sidecar: TensorSidecar = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: sjson.display().to_string(),
        reason: e.to_string(),
    })?;
    let pb = payload_path(stem);
    let payload = fs::read(&pb).map_err(|e| Error::io(pb.display().to_string(), e))?;
    let expected: usize = sidecar.shape.iter().product::<usize>() * sidecar.dtype.size();
    if payload.len() != expected {
        return Err(Error::Format {
            path: pb.display().to_string(),
            reason: format!(
                "payload is {} bytes but the sidecar shape {:?} requires {expected}",
                payload.len(),
                sidecar.shape
            ),
        });
    }
    let data = decode_payload(&payload, sidecar.dtype);
    Ok((sidecar, data))
}

/// Digest of the payload file that [`write_tensor`] would produce.
pub fn tensor_digest(data: &[f64], dtype: Dtype) -> String {
    sha256_hex(&encode_payload(data, dtype))
}

pub fn write_image(stem: &Path, image: &Image, seed: Option<u64>) -> Result<()> {
    let sidecar = TensorSidecar {
        dtype: Dtype::F64le,
        shape: vec![image.grid.height_px, image.grid.width_px],
        role: TensorRole::Image,
        geometry: GeometryBlock::Image { grid: image.grid },
        seed,
        creator_version: crate::CREATOR_VERSION.into(),
    };
    write_tensor(stem, &sidecar, &image.data)
}

pub fn read_image(stem: &Path) -> Result<Image> {
    let (sidecar, data) = read_tensor(stem)?;
    match sidecar.geometry {
        GeometryBlock::Image { grid } => Image::from_data(grid, data),
        _ => Err(Error::Format {
            path: stem.display().to_string(),
            reason: "expected an image geometry block".into(),
        }),
    }
}

pub fn write_sinogram(stem: &Path, sino: &ParallelSinogram) -> Result<()> {
    let sidecar = TensorSidecar {
        dtype: Dtype::F64le,
        shape: vec![sino.n_angles(), sino.geometry.detector_px],
        role: TensorRole::Sinogram,
        geometry: GeometryBlock::Parallel {
            geometry: sino.geometry.clone(),
        },
        seed: None,
        creator_version: crate::CREATOR_VERSION.into(),
    };
    write_tensor(stem, &sidecar, &sino.data)
}

pub fn read_sinogram(stem: &Path) -> Result<ParallelSinogram> {
    let (sidecar, data) = read_tensor(stem)?;
    match sidecar.geometry {
        GeometryBlock::Parallel { geometry } => ParallelSinogram::new(geometry, data),
        _ => Err(Error::Format {
            path: stem.display().to_string(),
            reason: "expected a parallel geometry block".into(),
        }),
    }
}

pub fn write_fan_projection(stem: &Path, proj: &FanProjection) -> Result<()> {
    let sidecar = TensorSidecar {
        dtype: Dtype::F64le,
        shape: vec![proj.geometry.detector_px],
        role: TensorRole::Fanprojection,
        geometry: GeometryBlock::Fan {
            geometry: proj.geometry,
        },
        seed: None,
        creator_version: crate::CREATOR_VERSION.into(),
    };
    write_tensor(stem, &sidecar, &proj.data)
}

pub fn read_fan_projection(stem: &Path) -> Result<FanProjection> {
    let (sidecar, data) = read_tensor(stem)?;
    match sidecar.geometry {
        GeometryBlock::Fan { geometry } => FanProjection::new(geometry, data),
        _ => Err(Error::Format {
            path: stem.display().to_string(),
            reason: "expected a fan geometry block".into(),
        }),
    }
}

/// Checkpoint header; the filter weights live in the companion `.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub filter_mode: FilterMode,
    pub n_rows: usize,
    pub detector_px: usize,
    pub scale: f64,
    pub fan: FanGeometry,
    pub wedge: WedgeRule,
    pub grid: ImageGrid,
    pub creator_version: String,
}

pub fn save_checkpoint(stem: &Path, model: &RebinModel) -> Result<()> {
    let header = CheckpointHeader {
        filter_mode: model.filter.mode,
        n_rows: model.filter.n_rows(),
        detector_px: model.filter.detector_px,
        scale: model.scale,
        fan: model.fan_template,
        wedge: model.wedge,
        grid: model.grid,
        creator_version: crate::CREATOR_VERSION.into(),
    };
    atomic_write(&sidecar_path(stem), &serde_json::to_vec_pretty(&header)?)?;
    atomic_write(
        &payload_path(stem),
        &encode_payload(model.filter.weights(), Dtype::F64le),
    )
}

pub fn load_checkpoint(stem: &Path) -> Result<RebinModel> {
    let hpath = sidecar_path(stem);
    let bytes = fs::read(&hpath).map_err(|e| Error::io(hpath.display().to_string(), e))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: hpath.display().to_string(),
        reason: e.to_string(),
    })?;
    let pb = payload_path(stem);
    let payload = fs::read(&pb).map_err(|e| Error::io(pb.display().to_string(), e))?;
    let expected = header.n_rows * header.detector_px * 8;
    if payload.len() != expected {
        return Err(Error::Format {
            path: pb.display().to_string(),
            reason: format!(
                "filter payload is {} bytes, header requires {expected}",
                payload.len()
            ),
        });
    }
    let weights = decode_payload(&payload, Dtype::F64le);
    let filter = SpectralFilter::new(
        header.filter_mode,
        header.detector_px,
        header.n_rows,
        weights,
    )?;
    Ok(RebinModel {
        filter,
        scale: header.scale,
        fan_template: header.fan,
        wedge: header.wedge,
        grid: header.grid,
        adjoint_mode: AdjointMode::Unmatched,
    })
}

pub fn read_checkpoint_header(stem: &Path) -> Result<CheckpointHeader> {
    let hpath = sidecar_path(stem);
    let bytes = fs::read(&hpath).map_err(|e| Error::io(hpath.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format {
        path: hpath.display().to_string(),
        reason: e.to_string(),
    })
}

/// One CSV line per filter row, weights in frequency (DFT bin) order.
pub fn write_filter_csv(path: &Path, filter: &SpectralFilter) -> Result<()> {
    let mut out = String::new();
    for r in 0..filter.n_rows() {
        let row: Vec<String> = filter.row(r).iter().map(|w| format!("{w}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Line-profile CSV with columns `pixel,reference,profile,difference`.
pub fn write_profile_csv(
    path: &Path,
    reference: &[f64],
    profile: &[f64],
    difference: &[f64],
) -> Result<()> {
    let mut out = String::from("pixel,reference,profile,difference\n");
    for k in 0..reference.len() {
        out.push_str(&format!(
            "{k},{},{},{}\n",
            reference[k], profile[k], difference[k]
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Parses a profile CSV back into `(reference, profile, difference)`.
pub fn read_profile_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reference = Vec::new();
    let mut profile = Vec::new();
    let mut difference = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("line {} has {} fields, expected 4", ln + 1, fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format {
                path: path.display().to_string(),
                reason: format!("bad float {s:?} on line {}", ln + 1),
            })
        };
        reference.push(parse(fields[1])?);
        profile.push(parse(fields[2])?);
        difference.push(parse(fields[3])?);
    }
    Ok((reference, profile, difference))
}

/// Loss curve CSV with columns `epoch,phase,loss`.
pub fn write_loss_csv(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut out = String::from("epoch,phase,loss\n");
    for e in curve {
        out.push_str(&format!("{},{},{}\n", e.epoch, e.phase, e.loss));
    }
    atomic_write(path, out.as_bytes())
}
