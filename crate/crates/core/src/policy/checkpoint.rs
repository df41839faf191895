//! Binary checkpoint: `MAGIC`, a little-endian `u64` header length, a JSON
//! header (version, config, vocabulary, tensor manifest) and then every tensor
//! as little-endian `f32` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{PolicyConfig, PolicyError, PolicyParams};
use crate::autodiff::Matrix;
use crate::corpus::Vocab;

pub const MAGIC: &[u8; 7] = b"LEXSUM\x01";
const VERSION: u32 = 1;
/// Guards against allocating from a corrupt length field.
const MAX_HEADER_BYTES: u64 = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (expected {VERSION})")]
    UnsupportedVersion(u32),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset within the payload.
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    config: PolicyConfig,
    vocab: Vec<String>,
    tensors: Vec<TensorEntry>,
}

/// Parameters together with the vocabulary that produced their id space.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub vocab: Vocab,
}

pub fn write_checkpoint<W: Write>(params: &PolicyParams, vocab: &Vocab, mut writer: W) -> std::io::Result<()> {
    let mut offset = 0u64;
    let tensors = params
        .specs()
        .iter()
        .map(|spec| {
            let entry = TensorEntry { name: spec.name.clone(), shape: [spec.shape.0, spec.shape.1], offset };
            offset += (spec.shape.0 * spec.shape.1 * 4) as u64;
            entry
        })
        .collect();
    let header = Header {
        version: VERSION,
        config: params.config().clone(),
        vocab: vocab.entries().to_vec(),
        tensors,
    };
    let header = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    writer.write_all(MAGIC)?;
    writer.write_all(&(header.len() as u64).to_le_bytes())?;
    writer.write_all(&header)?;
    for tensor in params.tensors() {
        for &v in tensor.iter() {
            writer.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    writer.flush()
}

pub fn save_checkpoint(params: &PolicyParams, vocab: &Vocab, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let path = path.as_ref();
    let io = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let file = File::create(path).map_err(io)?;
    write_checkpoint(params, vocab, BufWriter::new(file)).map_err(io)
}

fn read_exact_or_eof<R: Read>(reader: &mut R, buf: &mut [u8]) -> Result<(), ReadFailure> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => return Err(ReadFailure::Eof),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(ReadFailure::Io(e)),
        }
    }
    Ok(())
}

enum ReadFailure {
    Eof,
    Io(std::io::Error),
}

pub fn read_checkpoint<R: Read>(mut reader: R) -> Result<Checkpoint, CheckpointError> {
    let io = |source| CheckpointError::Io { path: PathBuf::new(), source };
    let mut magic = [0u8; 7];
    match read_exact_or_eof(&mut reader, &mut magic) {
        Ok(()) if &magic == MAGIC => {}
        Ok(()) | Err(ReadFailure::Eof) => return Err(CheckpointError::BadMagic),
        Err(ReadFailure::Io(e)) => return Err(io(e)),
    }
    let header_failure = |f: ReadFailure| match f {
        ReadFailure::Eof => CheckpointError::Header("file ends inside the header".into()),
        ReadFailure::Io(e) => io(e),
    };
    let mut len = [0u8; 8];
    read_exact_or_eof(&mut reader, &mut len).map_err(header_failure)?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER_BYTES {
        return Err(CheckpointError::Header(format!("header length {len} is implausible")));
    }
    let mut header = vec![0u8; len as usize];
    read_exact_or_eof(&mut reader, &mut header).map_err(header_failure)?;

    let version = serde_json::from_slice::<serde_json::Value>(&header)
        .map_err(|e| CheckpointError::Header(e.to_string()))?
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CheckpointError::Header("missing version".into()))?;
    if version != VERSION as u64 {
        return Err(CheckpointError::UnsupportedVersion(version as u32));
    }
    let header: Header = serde_json::from_slice(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    header.config.validate()?;

    let (specs, _) = super::params::layout(&header.config);
    if specs.len() != header.tensors.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "config implies {} tensors, manifest lists {}",
            specs.len(),
            header.tensors.len()
        )));
    }
    let mut expected_offset = 0u64;
    for (spec, entry) in specs.iter().zip(&header.tensors) {
        if entry.name != spec.name || (entry.shape[0], entry.shape[1]) != spec.shape {
            return Err(CheckpointError::ShapeMismatch(format!(
                "manifest entry {} {:?} does not match {} {:?}",
                entry.name, entry.shape, spec.name, spec.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(CheckpointError::Header(format!("{}: offset {} should be {}", entry.name, entry.offset, expected_offset)));
        }
        expected_offset += (spec.shape.0 * spec.shape.1 * 4) as u64;
    }

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(io)?;
    if (payload.len() as u64) < expected_offset {
        return Err(CheckpointError::TruncatedPayload { expected: expected_offset, found: payload.len() as u64 });
    }
    if payload.len() as u64 > expected_offset {
        return Err(CheckpointError::Header(format!(
            "{} trailing bytes after the payload",
            payload.len() as u64 - expected_offset
        )));
    }
    let mut floats = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64);
    let tensors: Vec<Matrix> = specs
        .iter()
        .map(|spec| Matrix::from_shape_simple_fn(spec.shape, || floats.next().expect("length checked")))
        .collect();
    if let Some(bad) = specs.iter().zip(&tensors).find(|(_, t)| t.iter().any(|v| !v.is_finite())) {
        return Err(CheckpointError::Header(format!("tensor {} holds non-finite values", bad.0.name)));
    }
    let vocab = Vocab::from_tokens(header.vocab);
    if vocab.len() != header.config.vocab_size {
        return Err(CheckpointError::ShapeMismatch(format!(
            "vocabulary has {} entries, config expects {}",
            vocab.len(),
            header.config.vocab_size
        )));
    }
    let params = PolicyParams::from_tensors(&header.config, tensors)?;
    Ok(Checkpoint { params, vocab })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    read_checkpoint(BufReader::new(file)).map_err(|e| match e {
        CheckpointError::Io { source, .. } => CheckpointError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

/// Load into existing parameters, which must have the identical layout.
pub fn load_checkpoint_into(path: impl AsRef<Path>, params: &mut PolicyParams) -> Result<Vocab, CheckpointError> {
    let loaded = load_checkpoint(path)?;
    if loaded.params.config() != params.config() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "checkpoint config {:?} differs from target {:?}",
            loaded.params.config(),
            params.config()
        )));
    }
    *params = loaded.params;
    Ok(loaded.vocab)
}
