//! MVB1: a minimal multi-tensor binary container for image and field data.
//!
//! A file is a concatenation of independent tensor records, each laid out as
//!
//! ```text
//! magic "MVB1" | u32 rank | rank x u32 extents | u8 dtype | payload
//! ```
//!
//! with all integers little-endian and the payload packed row-major. Dtype
//! tags: `0` = f32 (4 bytes/element, LE), `1` = u8. The reader consumes
//! records until clean EOF; a file that ends mid-record is malformed.
//!
//! This is the crate's bulk-pixel format: dataset view stacks are stored as
//! one u8 record of extents `[16, res, res, 4]` (RGB + mask), and triplane
//! snapshots as three f32 records. Checkpoints use the named TPF1 format
//! instead; MVB1 records are anonymous and positional.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVB1";
/// Ranks above this are rejected as corrupt rather than allocated.
const MAX_RANK: u32 = 8;

/// One anonymous dense tensor: extents plus a flat row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub enum MvbTensor {
    /// 32-bit float payload (dtype tag 0).
    F32 {
        /// Dimension sizes, outermost first.
        extents: Vec<u32>,
        /// Row-major elements; length equals the extent product.
        data: Vec<f32>,
    },
    /// Byte payload (dtype tag 1), used for quantized images and masks.
    U8 {
        /// Dimension sizes, outermost first.
        extents: Vec<u32>,
        /// Row-major elements; length equals the extent product.
        data: Vec<u8>,
    },
}

impl MvbTensor {
    /// Build an f32 record, panicking if `data` does not fill the extents.
    pub fn f32(extents: Vec<u32>, data: Vec<f32>) -> Self {
        assert_eq!(
            numel(&extents),
            data.len() as u64,
            "payload does not fill extents {extents:?}"
        );
        MvbTensor::F32 { extents, data }
    }

    /// Build a u8 record, panicking if `data` does not fill the extents.
    pub fn u8(extents: Vec<u32>, data: Vec<u8>) -> Self {
        assert_eq!(
            numel(&extents),
            data.len() as u64,
            "payload does not fill extents {extents:?}"
        );
        MvbTensor::U8 { extents, data }
    }

    /// Dimension sizes, outermost first.
    pub fn extents(&self) -> &[u32] {
        match self {
            MvbTensor::F32 { extents, .. } | MvbTensor::U8 { extents, .. } => extents,
        }
    }

    /// Total element count.
    pub fn numel(&self) -> u64 {
        numel(self.extents())
    }
}

fn numel(extents: &[u32]) -> u64 {
    extents.iter().map(|&e| e as u64).product()
}

/// Serialize records into `w` in order.
pub fn write_mvb(w: &mut impl Write, tensors: &[MvbTensor]) -> Result<()> {
    for t in tensors {
        w.write_all(MAGIC)?;
        let extents = t.extents();
        w.write_all(&(extents.len() as u32).to_le_bytes())?;
        for &e in extents {
            w.write_all(&e.to_le_bytes())?;
        }
        match t {
            MvbTensor::F32 { data, .. } => {
                w.write_all(&[0u8])?;
                for &v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            MvbTensor::U8 { data, .. } => {
                w.write_all(&[1u8])?;
                w.write_all(data)?;
            }
        }
    }
    Ok(())
}

/// Serialize records to a fresh byte buffer.
pub fn to_bytes(tensors: &[MvbTensor]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_mvb(&mut buf, tensors).expect("Vec<u8> writes cannot fail");
    buf
}

/// Parse every record from `r` until clean EOF.
pub fn read_mvb(r: &mut impl Read) -> Result<Vec<MvbTensor>> {
    let mut out = Vec::new();
    loop {
        // The magic is the only field allowed to hit EOF, and only at
        // offset zero of a record.
        let mut magic = [0u8; 4];
        match r.read(&mut magic)? {
            0 => return Ok(out),
            4 => {}
            n => {
                // Short read mid-magic: retry the remainder before giving up,
                // since Read::read may legally return fewer bytes.
                r.read_exact(&mut magic[n..])
                    .map_err(|_| Error::format("MVB1", "truncated magic"))?;
            }
        }
        if &magic != MAGIC {
            return Err(Error::format(
                "MVB1",
                format!("bad magic {magic:?}, expected {MAGIC:?}"),
            ));
        }
        let rank = read_u32(r)?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::format("MVB1", format!("unreasonable rank {rank}")));
        }
        let mut extents = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            extents.push(read_u32(r)?);
        }
        let n = numel(&extents);
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)
            .map_err(|_| Error::format("MVB1", "truncated dtype"))?;
        match dtype[0] {
            0 => {
                let mut raw = vec![0u8; (n * 4) as usize];
                r.read_exact(&mut raw)
                    .map_err(|_| Error::format("MVB1", "truncated f32 payload"))?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                out.push(MvbTensor::F32 { extents, data });
            }
            1 => {
                let mut data = vec![0u8; n as usize];
                r.read_exact(&mut data)
                    .map_err(|_| Error::format("MVB1", "truncated u8 payload"))?;
                out.push(MvbTensor::U8 { extents, data });
            }
            tag => {
                return Err(Error::format("MVB1", format!("unknown dtype tag {tag}")));
            }
        }
    }
}

/// Parse every record from a byte slice.
pub fn from_bytes(bytes: &[u8]) -> Result<Vec<MvbTensor>> {
    let mut cursor = bytes;
    read_mvb(&mut cursor)
}

/// Write records to a file, creating or truncating it.
pub fn save_mvb(path: impl AsRef<Path>, tensors: &[MvbTensor]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_mvb(&mut w, tensors)?;
    w.flush()?;
    Ok(())
}

/// Read every record from a file.
pub fn load_mvb(path: impl AsRef<Path>) -> Result<Vec<MvbTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    read_mvb(&mut r)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("MVB1", "truncated header field"))?;
    Ok(u32::from_le_bytes(b))
}
