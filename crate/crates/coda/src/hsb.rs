//! The HSB hidden-state file format.
//!
//! Little-endian, no padding:
//!
//! ```text
//! magic    "HSB1"        4 bytes
//! version  u32 = 1
//! dtype    u8            0 = f32, 1 = f64
//! N        u64           rows
//! d        u64           columns
//! layer    i32           ≥ 0
//! tag_len  u16, tag      UTF-8
//! model_len u16, model   UTF-8
//! payload  N·d values, row-major
//! ```
//!
//! A file may hold several records back to back (adapter checkpoints do).

use std::io::{self, Read, Write};
use std::path::Path;

use coda_core::batch::{Dtype, HiddenStateBatch};
use coda_core::Matrix;

pub const MAGIC: [u8; 4] = *b"HSB1";
pub const VERSION: u32 = 1;
/// Bytes before the tag: magic, version, dtype, N, d, layer, tag_len.
pub const FIXED_HEADER_LEN: usize = 4 + 4 + 1 + 8 + 8 + 4 + 2;

#[derive(Debug, thiserror::Error)]
pub enum HsbError {
    #[error("not an HSB file")]
    NotHsb,
    #[error("unsupported version {0} (this reader supports version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("truncated header while reading {0}")]
    TruncatedHeader(&'static str),
    #[error("truncated payload: expected N·d·width = {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("invalid shape {n}x{d}")]
    BadShape { n: u64, d: u64 },
    #[error("negative layer index {0}")]
    NegativeLayer(i32),
    #[error("{0} is not valid UTF-8")]
    BadText(&'static str),
    #[error("{0} unexpected bytes after the last record")]
    TrailingBytes(usize),
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("{0}")]
    Invalid(coda_core::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<coda_core::Error> for HsbError {
    fn from(e: coda_core::Error) -> Self {
        match e {
            coda_core::Error::NonFinite { row, col } => HsbError::NonFinite { row, col },
            other => HsbError::Invalid(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, HsbError>;

/// Serializes one batch.
pub fn write_hsb<W: Write + ?Sized>(batch: &HiddenStateBatch, out: &mut W) -> Result<()> {
    if let Some((row, col)) = batch.values().first_non_finite() {
        return Err(HsbError::NonFinite { row, col });
    }
    out.write_all(&encode(batch))?;
    Ok(())
}

pub fn encode(batch: &HiddenStateBatch) -> Vec<u8> {
    let dtype = batch.dtype();
    let tag = batch.domain_tag().as_bytes();
    let model = batch.model_id().as_bytes();
    let mut buf = Vec::with_capacity(
        FIXED_HEADER_LEN + tag.len() + 2 + model.len() + batch.n() * batch.d() * dtype.width(),
    );
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(dtype.code());
    buf.extend_from_slice(&(batch.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(batch.d() as u64).to_le_bytes());
    // the batch constructor keeps the layer within i32
    buf.extend_from_slice(&(batch.layer_index() as i32).to_le_bytes());
    buf.extend_from_slice(&(tag.len() as u16).to_le_bytes());
    buf.extend_from_slice(tag);
    buf.extend_from_slice(&(model.len() as u16).to_le_bytes());
    buf.extend_from_slice(model);
    for &x in batch.values().as_slice() {
        match dtype {
            Dtype::F32 => buf.extend_from_slice(&(x as f32).to_le_bytes()),
            Dtype::F64 => buf.extend_from_slice(&x.to_le_bytes()),
        }
    }
    buf
}

fn read_array<const K: usize, R: Read + ?Sized>(src: &mut R, field: &'static str) -> Result<[u8; K]> {
    let mut b = [0u8; K];
    src.read_exact(&mut b).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => HsbError::TruncatedHeader(field),
        _ => HsbError::Io(e),
    })?;
    Ok(b)
}

fn read_text<R: Read + ?Sized>(src: &mut R, field: &'static str) -> Result<String> {
    let len = u16::from_le_bytes(read_array(src, field)?) as u64;
    let mut bytes = Vec::new();
    src.take(len).read_to_end(&mut bytes)?;
    if bytes.len() as u64 != len {
        return Err(HsbError::TruncatedHeader(field));
    }
    String::from_utf8(bytes).map_err(|_| HsbError::BadText(field))
}

/// Reads one record from `src`, leaving anything after it unread.
pub fn read_hsb<R: Read + ?Sized>(src: &mut R) -> Result<HiddenStateBatch> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match src.read(&mut magic[got..]) {
            Ok(0) => return Err(HsbError::NotHsb),
            Ok(k) => got += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    if magic != MAGIC {
        return Err(HsbError::NotHsb);
    }
    let version = u32::from_le_bytes(read_array(src, "version")?);
    if version != VERSION {
        return Err(HsbError::UnsupportedVersion(version));
    }
    let [code] = read_array::<1, _>(src, "dtype")?;
    let dtype = Dtype::from_code(code).ok_or(HsbError::UnknownDtype(code))?;
    let n = u64::from_le_bytes(read_array(src, "N")?);
    let d = u64::from_le_bytes(read_array(src, "d")?);
    let layer = i32::from_le_bytes(read_array(src, "layer index")?);
    let tag = read_text(src, "tag")?;
    let model = read_text(src, "model id")?;

    if n == 0 || d == 0 {
        return Err(HsbError::BadShape { n, d });
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(dtype.width() as u64))
        .filter(|&b| usize::try_from(b).is_ok())
        .ok_or(HsbError::BadShape { n, d })?;
    if layer < 0 {
        return Err(HsbError::NegativeLayer(layer));
    }

    let mut payload = Vec::new();
    src.take(expected).read_to_end(&mut payload)?;
    if payload.len() as u64 != expected {
        return Err(HsbError::TruncatedPayload {
            expected,
            found: payload.len() as u64,
        });
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let values = Matrix::from_vec(n as usize, d as usize, values)?;
    Ok(HiddenStateBatch::new(values, tag, layer as u32, model, dtype)?)
}

/// Decodes a buffer holding exactly one record.
pub fn decode(bytes: &[u8]) -> Result<HiddenStateBatch> {
    let mut records = decode_all(bytes)?;
    match records.len() {
        1 => Ok(records.pop().expect("one record")),
        _ => {
            // more than one record: report the bytes after the first
            let first = encode(&records[0]).len();
            Err(HsbError::TrailingBytes(bytes.len() - first))
        }
    }
}

/// Decodes a buffer holding one or more consecutive records.
pub fn decode_all(bytes: &[u8]) -> Result<Vec<HiddenStateBatch>> {
    let mut cursor = bytes;
    let mut out = Vec::new();
    loop {
        let before = cursor.len();
        match read_hsb(&mut cursor) {
            Ok(b) => out.push(b),
            // leftover bytes that do not even start a record
            Err(HsbError::NotHsb) if !out.is_empty() => return Err(HsbError::TrailingBytes(before)),
            Err(e) => return Err(e),
        }
        if cursor.is_empty() {
            return Ok(out);
        }
    }
}

pub fn read_file(path: impl AsRef<Path>) -> Result<HiddenStateBatch> {
    decode(&std::fs::read(path)?)
}

pub fn read_file_all(path: impl AsRef<Path>) -> Result<Vec<HiddenStateBatch>> {
    decode_all(&std::fs::read(path)?)
}

pub fn write_file(path: impl AsRef<Path>, batch: &HiddenStateBatch) -> Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    write_hsb(batch, &mut f)?;
    f.flush()?;
    Ok(())
}
