//! Flat binary tensor container used to move dense arrays between tools.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic   4 bytes  "HVT1"
//! ndim    u32
//! dims    ndim x u32
//! payload product(dims) x f32, row-major, last dimension fastest
//! ```
//!
//! The reader treats input as untrusted: the magic and rank are checked,
//! the element count is computed with overflow checks, the payload length
//! must match it exactly, and trailing bytes are an error.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"HVT1";

/// Tensors above this rank are rejected as malformed rather than allocated.
pub const MAX_NDIM: usize = 8;

/// Dense row-major f32 tensor with explicit dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Tensor> {
        let numel = checked_numel(&dims)?;
        if data.len() != numel {
            return Err(Error::shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Tensor> {
        let numel = checked_numel(&dims)?;
        Ok(Tensor {
            dims,
            data: vec![0.0; numel],
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Parses a complete in-memory file image. Trailing bytes are rejected.
    pub fn from_bytes(bytes: &[u8]) -> Result<Tensor> {
        let header_min = MAGIC.len() + 4;
        if bytes.len() < header_min {
            return Err(Error::parse("truncated header"));
        }
        if bytes[..4] != MAGIC {
            return Err(Error::parse("bad magic, expected HVT1"));
        }
        let ndim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::parse(format!(
                "rank {ndim} outside supported 1..={MAX_NDIM}"
            )));
        }
        let dims_end = header_min + 4 * ndim;
        if bytes.len() < dims_end {
            return Err(Error::parse("truncated dimension list"));
        }
        let dims: Vec<usize> = bytes[header_min..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let numel = checked_numel(&dims)?;
        let expected = numel
            .checked_mul(4)
            .and_then(|p| p.checked_add(dims_end))
            .ok_or_else(|| Error::parse("payload size overflows"))?;
        if bytes.len() != expected {
            return Err(Error::parse(format!(
                "payload length {} does not match dims {:?} ({} bytes expected)",
                bytes.len() - dims_end,
                dims,
                expected - dims_end
            )));
        }
        let data: Vec<f32> = bytes[dims_end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    /// Reads one tensor from a stream and requires EOF right after it.
    pub fn read_from(reader: &mut impl Read) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        reader
            .read_exact(&mut magic)
            .map_err(|_| Error::parse("truncated header"))?;
        if magic != MAGIC {
            return Err(Error::parse("bad magic, expected HVT1"));
        }
        let mut word = [0u8; 4];
        reader
            .read_exact(&mut word)
            .map_err(|_| Error::parse("truncated header"))?;
        let ndim = u32::from_le_bytes(word) as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::parse(format!(
                "rank {ndim} outside supported 1..={MAX_NDIM}"
            )));
        }
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            reader
                .read_exact(&mut word)
                .map_err(|_| Error::parse("truncated dimension list"))?;
            dims.push(u32::from_le_bytes(word) as usize);
        }
        let numel = checked_numel(&dims)?;
        let payload_len = numel
            .checked_mul(4)
            .ok_or_else(|| Error::parse("payload size overflows"))?;
        // Bounded by what the stream actually holds, so a lying header
        // cannot force a huge allocation.
        let mut payload = Vec::new();
        reader
            .by_ref()
            .take(payload_len as u64)
            .read_to_end(&mut payload)?;
        if payload.len() != payload_len {
            return Err(Error::parse(format!(
                "payload truncated: {} of {} bytes",
                payload.len(),
                payload_len
            )));
        }
        let mut probe = [0u8; 1];
        if reader.read(&mut probe)? != 0 {
            return Err(Error::parse("trailing bytes after payload"));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn write_to(&self, writer: &mut impl Write) -> Result<()> {
        writer.write_all(&MAGIC)?;
        writer.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &d in &self.dims {
            writer.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        self.write_to(&mut out).expect("vec write cannot fail");
        out
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Tensor> {
        let file = File::open(path)?;
        Tensor::read_from(&mut BufReader::new(file))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        let mut writer = BufWriter::new(file);
        self.write_to(&mut writer)?;
        writer.flush()?;
        Ok(())
    }
}

fn checked_numel(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_NDIM {
        return Err(Error::parse(format!(
            "rank {} outside supported 1..={MAX_NDIM}",
            dims.len()
        )));
    }
    let mut numel = 1usize;
    for &d in dims {
        if d == 0 {
            return Err(Error::parse("zero-length dimension"));
        }
        numel = numel
            .checked_mul(d)
            .ok_or_else(|| Error::parse("element count overflows"))?;
    }
    Ok(numel)
}
