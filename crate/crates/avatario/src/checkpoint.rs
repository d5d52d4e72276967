//! Versioned binary checkpoints: an 8-byte magic, a length-prefixed JSON
//! header (rig, grid shape, schedule position, seed), then raw little-endian
//! f64 parameter payloads. Writes go to a temp file in the same directory
//! and are renamed into place, so a crash never leaves a torn checkpoint.
//! Save -> load -> save reproduces the file byte for byte.

use crate::formats::{FormatError, Rig, TemplateFile};
use avatar_core::fields::HashGridConfig;
use avatar_core::model::ModelError;
use avatar_core::{BoundSplatModel64, HashField64};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"AVCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a checkpoint (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated checkpoint")]
    Truncated { path: PathBuf },
    #[error("{path}: unsupported checkpoint version {version}")]
    Version { path: PathBuf, version: u32 },
    #[error("{path}: corrupt header: {source}")]
    Header {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: section '{section}' holds {got} values, model expects {expected}")]
    SectionMismatch {
        path: PathBuf,
        section: String,
        got: usize,
        expected: usize,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Trained state plus the metadata needed to resume rendering from it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub seed: u64,
    pub epoch: usize,
    pub model: BoundSplatModel64,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Header {
    version: u32,
    seed: u64,
    epoch: usize,
    grid: HashGridConfig<f64>,
    surface_epsilon: f64,
    /// Rig at save time; `joints` carry the optimized rest positions.
    template: TemplateFile,
    sections: Vec<(String, usize)>,
}

fn field_params_flat(field: &HashField64) -> Vec<f64> {
    field.param_chunks().concat()
}

fn write_field_params(
    field: &mut HashField64,
    flat: &[f64],
    path: &Path,
    section: &str,
) -> Result<(), CheckpointError> {
    if flat.len() != field.param_count() {
        return Err(CheckpointError::SectionMismatch {
            path: path.to_path_buf(),
            section: section.to_string(),
            got: flat.len(),
            expected: field.param_count(),
        });
    }
    let mut offset = 0;
    for chunk in field.param_chunks_mut() {
        chunk.copy_from_slice(&flat[offset..offset + chunk.len()]);
        offset += chunk.len();
    }
    Ok(())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let model = &ckpt.model;
    let rig = Rig {
        mesh: model.mesh().clone(),
        skeleton: model.skeleton().clone(),
        weights: model.skin_weights().clone(),
    };
    let log_scales: Vec<f64> = model.log_scales.iter().flat_map(|s| [s.x, s.y]).collect();
    let rot2d: Vec<f64> = model.rot2d.iter().flat_map(|r| [r.x, r.y]).collect();
    let displacement = field_params_flat(&model.displacement);
    let color = field_params_flat(&model.color);
    let header = Header {
        version: 1,
        seed: ckpt.seed,
        epoch: ckpt.epoch,
        grid: model.displacement.config().clone(),
        surface_epsilon: model.surface_epsilon,
        template: TemplateFile::from_rig(&rig),
        sections: vec![
            ("log_scales".to_string(), log_scales.len()),
            ("rot2d".to_string(), rot2d.len()),
            ("displacement".to_string(), displacement.len()),
            ("color".to_string(), color.len()),
        ],
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let payload_len = (log_scales.len() + rot2d.len() + displacement.len() + color.len()) * 8;
    let mut bytes = Vec::with_capacity(MAGIC.len() + 8 + header_json.len() + payload_len);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for section in [&log_scales, &rot2d, &displacement, &color] {
        for v in section.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(CheckpointError::Truncated {
            path: path.to_path_buf(),
        });
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let header_len =
        u64::from_le_bytes(bytes[MAGIC.len()..MAGIC.len() + 8].try_into().unwrap()) as usize;
    let header_start = MAGIC.len() + 8;
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(CheckpointError::Truncated {
            path: path.to_path_buf(),
        });
    }
    let header: Header =
        serde_json::from_slice(&bytes[header_start..payload_start]).map_err(|source| {
            CheckpointError::Header {
                path: path.to_path_buf(),
                source,
            }
        })?;
    if header.version != 1 {
        return Err(CheckpointError::Version {
            path: path.to_path_buf(),
            version: header.version,
        });
    }
    let total: usize = header.sections.iter().map(|(_, n)| n).sum();
    if bytes.len() != payload_start + total * 8 {
        return Err(CheckpointError::Truncated {
            path: path.to_path_buf(),
        });
    }
    let mut values = Vec::with_capacity(total);
    for i in 0..total {
        let off = payload_start + i * 8;
        values.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    let mut cursor = 0usize;
    let mut take = |name: &str| -> &[f64] {
        let n = header
            .sections
            .iter()
            .find(|(s, _)| s == name)
            .map(|(_, n)| *n)
            .unwrap_or(0);
        let out = &values[cursor..cursor + n];
        cursor += n;
        out
    };

    let rig = header.template.clone().into_rig(path)?;
    let mut model = BoundSplatModel64::new(
        rig.mesh,
        rig.skeleton,
        rig.weights,
        header.grid.clone(),
        header.seed,
    )?;
    model.surface_epsilon = header.surface_epsilon;

    let log_scales = take("log_scales");
    if log_scales.len() != 2 * model.face_count() {
        return Err(CheckpointError::SectionMismatch {
            path: path.to_path_buf(),
            section: "log_scales".into(),
            got: log_scales.len(),
            expected: 2 * model.face_count(),
        });
    }
    for (i, s) in model.log_scales.iter_mut().enumerate() {
        s.x = log_scales[2 * i];
        s.y = log_scales[2 * i + 1];
    }
    let rot2d = take("rot2d").to_vec();
    if rot2d.len() != 2 * model.face_count() {
        return Err(CheckpointError::SectionMismatch {
            path: path.to_path_buf(),
            section: "rot2d".into(),
            got: rot2d.len(),
            expected: 2 * model.face_count(),
        });
    }
    for (i, r) in model.rot2d.iter_mut().enumerate() {
        r.x = rot2d[2 * i];
        r.y = rot2d[2 * i + 1];
    }
    let displacement = take("displacement").to_vec();
    write_field_params(&mut model.displacement, &displacement, path, "displacement")?;
    let color = take("color").to_vec();
    write_field_params(&mut model.color, &color, path, "color")?;

    Ok(Checkpoint {
        seed: header.seed,
        epoch: header.epoch,
        model,
    })
}
