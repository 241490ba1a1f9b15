//! Model checkpoints: a little-endian container of named f64 matrices plus
//! the training config that produced them.
//!
//! ```text
//! magic      4 bytes  "TFCK"
//! version    u32      1
//! config_len u32, then config_len bytes of UTF-8 key = value text
//! sections   u32
//! per section:
//!   name_len u16, name bytes (UTF-8)
//!   rows u32, cols u32
//!   rows * cols f64, row-major
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::fcn::Parameterized;
use crate::ndops::Tensor;
use crate::trainer::{ConfigError, TrainConfig, TrainedModel};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Error, Debug)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    VersionMismatch(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("section '{0}' missing")]
    MissingSection(String),
    #[error("section '{name}' has shape {got:?}, model expects {want:?}")]
    ShapeMismatch {
        name: String,
        want: (usize, usize),
        got: (usize, usize),
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub sections: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_model(model: &TrainedModel) -> Self {
        Checkpoint {
            config: model.config.to_kv(),
            sections: model
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    pub fn section(&self, name: &str) -> Option<&Tensor> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model; every parameter the config implies must be present
    /// with the right shape.
    pub fn to_model(&self) -> Result<TrainedModel, CheckpointError> {
        let cfg = TrainConfig::from_kv(&self.config)?;
        let first = self
            .sections
            .first()
            .ok_or_else(|| CheckpointError::Malformed("no sections".into()))?;
        let mut model = TrainedModel::init(&cfg, first.1.rows(), 0);
        let names: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.into_iter().zip(model.params_mut()) {
            let t = self
                .section(&name)
                .ok_or_else(|| CheckpointError::MissingSection(name.clone()))?;
            if t.shape() != slot.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    want: slot.shape(),
                    got: t.shape(),
                });
            }
            *slot = t.clone();
        }
        Ok(model)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<(), CheckpointError> {
        let len_u32 = |n: usize, what: &str| {
            u32::try_from(n).map_err(|_| CheckpointError::Malformed(format!("{what} too large")))
        };
        w.write_all(&CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&len_u32(self.config.len(), "config")?.to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        w.write_all(&len_u32(self.sections.len(), "section count")?.to_le_bytes())?;
        for (name, t) in &self.sections {
            let nl = u16::try_from(name.len())
                .map_err(|_| CheckpointError::Malformed(format!("section name {name} too long")))?;
            w.write_all(&nl.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&len_u32(t.rows(), "rows")?.to_le_bytes())?;
            w.write_all(&len_u32(t.cols(), "cols")?.to_le_bytes())?;
            for x in t.data() {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::VersionMismatch(version));
        }
        let config_len = read_u32(r)? as usize;
        let config = read_string(r, config_len)?;
        let count = read_u32(r)?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let mut nl = [0u8; 2];
            r.read_exact(&mut nl)?;
            let name = read_string(r, u16::from_le_bytes(nl) as usize)?;
            let (rows, cols) = (read_u32(r)? as usize, read_u32(r)? as usize);
            let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 24));
            let mut b = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            let t = Tensor::from_vec(rows, cols, data)
                .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            sections.push((name, t));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        Ok(Checkpoint { config, sections })
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String, CheckpointError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| CheckpointError::Malformed("invalid UTF-8".into()))
}

pub fn save_checkpoint(model: &TrainedModel, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    Checkpoint::from_model(model).write(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TrainedModel, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    Checkpoint::read(&mut r)?.to_model()
}
