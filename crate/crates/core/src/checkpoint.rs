//! Binary model checkpoints.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! offset  size      field
//! 0       8         magic "ECGMCKPT"
//! 8       4         format version (u32, currently 1)
//! 12      4         config length C (u32)
//! 16      C         config as UTF-8 key=value lines (ModelConfig::to_kv)
//! ..      4         tensor count (u32)
//! per tensor:
//!         2         name length (u16)
//!         ..        name, UTF-8 (hierarchical, e.g. "blocks.3.fwd.ssm.a_log")
//!         1         rank (u8)
//!         4*rank    dims (u32 each)
//!         8*numel   values, f64 little-endian bits
//! end     32        SHA-256 over every preceding byte
//! ```
//!
//! Values round-trip bit-exactly: the f64 bit patterns are written and
//! restored verbatim. Loading verifies the magic, the version, and the
//! checksum before trusting anything else, then requires the tensor set
//! to match the config-derived parameter inventory exactly (no missing,
//! unknown, or reshaped entries).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{Model, ModelConfig, ModelError};
use crate::tensor::{Tensor, TensorError};

const MAGIC: &[u8; 8] = b"ECGMCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    BadVersion(u32),
    #[error("checksum mismatch: file is corrupt or truncated")]
    BadChecksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type CheckpointResult<T> = Result<T, CheckpointError>;

/// Forwards writes while folding every byte into a SHA-256 state.
struct HashingWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

/// Reads from the source while folding every byte into a SHA-256 state.
struct HashingReader<R: Read> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

/// Write `model` to `path` in the documented container format.
pub fn save(model: &Model, path: &Path) -> CheckpointResult<()> {
    let file = File::create(path)?;
    let mut w = HashingWriter {
        inner: BufWriter::new(file),
        hasher: Sha256::new(),
    };
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = model.config.to_kv();
    w.write_all(&u32::try_from(config.len()).unwrap().to_le_bytes())?;
    w.write_all(config.as_bytes())?;

    let mut count = 0u32;
    model.visit(&mut |_, _| count += 1);
    w.write_all(&count.to_le_bytes())?;

    let mut io_err: Option<std::io::Error> = None;
    model.visit(&mut |name, t| {
        if io_err.is_some() {
            return;
        }
        let mut emit = || -> std::io::Result<()> {
            let name_bytes = name.as_bytes();
            w.write_all(&u16::try_from(name_bytes.len()).unwrap().to_le_bytes())?;
            w.write_all(name_bytes)?;
            w.write_all(&[u8::try_from(t.shape().len()).unwrap()])?;
            for &dim in t.shape() {
                w.write_all(&u32::try_from(dim).unwrap().to_le_bytes())?;
            }
            for &v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        io_err = emit().err();
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }

    let digest = w.hasher.clone().finalize();
    w.inner.write_all(&digest)?;
    w.inner.flush()?;
    Ok(())
}

fn read_exact_or_malformed<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> CheckpointResult<()> {
    r.read_exact(buf)
        .map_err(|_| CheckpointError::Malformed(format!("unexpected end of file in {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> CheckpointResult<u32> {
    let mut b = [0u8; 4];
    read_exact_or_malformed(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Load a model from `path`, verifying the checksum and reconstructing
/// every parameter bit-exactly.
pub fn load(path: &Path) -> CheckpointResult<Model> {
    let file = File::open(path)?;
    let total = file.metadata()?.len();
    if total < (8 + 4 + 4 + 4 + 32) as u64 {
        return Err(CheckpointError::Malformed("file too short".into()));
    }
    let body_len = total - 32;
    let mut r = HashingReader {
        inner: BufReader::new(file).take(body_len),
        hasher: Sha256::new(),
    };

    let mut magic = [0u8; 8];
    read_exact_or_malformed(&mut r, &mut magic, "header")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r, "header")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let config_len = read_u32(&mut r, "header")? as usize;
    let mut config_bytes = vec![0u8; config_len];
    read_exact_or_malformed(&mut r, &mut config_bytes, "config")?;
    let config_text = String::from_utf8(config_bytes)
        .map_err(|_| CheckpointError::Malformed("config is not UTF-8".into()))?;
    let config = ModelConfig::from_kv(&config_text)?;

    let count = read_u32(&mut r, "tensor table")?;
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    for i in 0..count {
        let ctx = format!("tensor {i}");
        let mut len_b = [0u8; 2];
        read_exact_or_malformed(&mut r, &mut len_b, &ctx)?;
        let mut name_b = vec![0u8; u16::from_le_bytes(len_b) as usize];
        read_exact_or_malformed(&mut r, &mut name_b, &ctx)?;
        let name = String::from_utf8(name_b)
            .map_err(|_| CheckpointError::Malformed(format!("{ctx}: name is not UTF-8")))?;
        let mut rank_b = [0u8; 1];
        read_exact_or_malformed(&mut r, &mut rank_b, &ctx)?;
        let mut shape = Vec::with_capacity(rank_b[0] as usize);
        for _ in 0..rank_b[0] {
            shape.push(read_u32(&mut r, &ctx)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f64; numel];
        let mut chunk = [0u8; 8];
        for v in &mut data {
            read_exact_or_malformed(&mut r, &mut chunk, &ctx)?;
            *v = f64::from_le_bytes(chunk);
        }
        if tensors.insert(name.clone(), Tensor::from_vec(data, &shape)?).is_some() {
            return Err(CheckpointError::Malformed(format!("duplicate tensor {name:?}")));
        }
    }

    // The body must end exactly here, and the footer must match.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes before checksum".into()));
    }
    let digest = r.hasher.finalize();
    let mut footer = [0u8; 32];
    let mut tail = r.inner.into_inner();
    tail.read_exact(&mut footer)
        .map_err(|_| CheckpointError::Malformed("missing checksum footer".into()))?;
    if digest.as_slice() != footer {
        return Err(CheckpointError::BadChecksum);
    }

    // Rebuild: take the stored tensor for every parameter slot.
    let skeleton = Model::init(&config, 0)?;
    let mut missing = Vec::new();
    let mut shape_err: Option<CheckpointError> = None;
    let rebuilt = skeleton.map(&mut |name, t| match tensors.remove(&name) {
        Some(stored) => {
            if stored.shape() != t.shape() {
                shape_err.get_or_insert(CheckpointError::Malformed(format!(
                    "tensor {name:?} has shape {:?}, expected {:?}",
                    stored.shape(),
                    t.shape()
                )));
                t.clone()
            } else {
                stored
            }
        }
        None => {
            missing.push(name);
            t.clone()
        }
    });
    if let Some(e) = shape_err {
        return Err(e);
    }
    if !missing.is_empty() {
        return Err(CheckpointError::Malformed(format!(
            "missing tensors: {missing:?}"
        )));
    }
    if !tensors.is_empty() {
        let extra: Vec<_> = tensors.keys().collect();
        return Err(CheckpointError::Malformed(format!(
            "unknown tensors: {extra:?}"
        )));
    }
    Ok(rebuilt)
}
