//! TPF1 parameter checkpoints.
//!
//! One file holds a whole [`ParamSet`]. Layout, all integers little-endian:
//!
//! ```text
//! "TPF1"
//! repeat per parameter, in registration order:
//!   u32  name byte length
//!   ...  UTF-8 name
//!   u32  rank
//!   u32  extent, rank times
//!   f32  payload, row-major, product(extents) values
//! ```
//!
//! Payloads are always f32 — the training dtype — regardless of the in-memory
//! scalar type; saving an f64 model rounds. Loading re-widens exactly, checks
//! every entry against the destination set, and rejects unknown names, shape
//! mismatches, and sets left incomplete by the file.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{ParamSet, Real};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"TPF1";

/// Serialize a parameter set to TPF1 bytes.
pub fn to_bytes<T: Real>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    for p in params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let (r, c) = p.tensor.shape();
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
        for v in p.tensor.data().iter() {
            out.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    out
}

/// Write a parameter set to a TPF1 file.
pub fn save<T: Real>(path: impl AsRef<Path>, params: &ParamSet<T>) -> Result<()> {
    fs::write(path, to_bytes(params))?;
    Ok(())
}

/// One parsed checkpoint entry.
pub struct Entry {
    /// Parameter path as stored.
    pub name: String,
    /// Extents, outermost first.
    pub shape: Vec<usize>,
    /// Row-major f32 payload.
    pub values: Vec<f32>,
}

/// Parse TPF1 bytes into entries (format validation only, no model).
pub fn parse(bytes: &[u8]) -> Result<Vec<Entry>> {
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize| -> Result<&[u8]> {
        let end = at.checked_add(n).filter(|&e| e <= bytes.len());
        match end {
            Some(end) => {
                let s = &bytes[*at..end];
                *at = end;
                Ok(s)
            }
            None => Err(Error::format("TPF1", "unexpected end of file")),
        }
    };
    let take_u32 = |at: &mut usize| -> Result<u32> {
        let b = take(at, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    };

    if take(&mut at, 4)? != MAGIC {
        return Err(Error::format("TPF1", "bad magic bytes"));
    }
    let mut entries = Vec::new();
    while at < bytes.len() {
        let name_len = take_u32(&mut at)? as usize;
        let name = std::str::from_utf8(take(&mut at, name_len)?)
            .map_err(|_| Error::format("TPF1", "parameter name is not UTF-8"))?
            .to_string();
        let rank = take_u32(&mut at)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::format("TPF1", format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut count = 1usize;
        for _ in 0..rank {
            let e = take_u32(&mut at)? as usize;
            count = count
                .checked_mul(e)
                .ok_or_else(|| Error::format("TPF1", "extent overflow"))?;
            shape.push(e);
        }
        let payload = take(&mut at, count * 4)?;
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        entries.push(Entry {
            name,
            shape,
            values,
        });
    }
    Ok(entries)
}

/// Load a TPF1 file into an existing parameter set, in place.
///
/// Every entry must name a registered parameter with a matching shape, and
/// every registered parameter must appear in the file.
pub fn load<T: Real>(path: impl AsRef<Path>, params: &ParamSet<T>) -> Result<()> {
    let bytes = fs::read(path)?;
    load_bytes(&bytes, params)
}

/// [`load`] from an in-memory buffer.
pub fn load_bytes<T: Real>(bytes: &[u8], params: &ParamSet<T>) -> Result<()> {
    let entries = parse(bytes)?;
    let mut seen = vec![false; params.len()];
    for entry in &entries {
        let Some(pos) = params.iter().position(|p| p.name == entry.name) else {
            return Err(Error::Checkpoint {
                name: entry.name.clone(),
                detail: "not a parameter of this model".to_string(),
            });
        };
        let param = params.iter().nth(pos).expect("position just found");
        let (r, c) = param.tensor.shape();
        if entry.shape != [r, c] {
            return Err(Error::Checkpoint {
                name: entry.name.clone(),
                detail: format!("shape {:?} does not match model shape [{r}, {c}]", entry.shape),
            });
        }
        if seen[pos] {
            return Err(Error::Checkpoint {
                name: entry.name.clone(),
                detail: "appears twice in the checkpoint".to_string(),
            });
        }
        seen[pos] = true;
        let data: Vec<T> = entry.values.iter().map(|&v| T::from_f32(v)).collect();
        param
            .tensor
            .set_value(Array2::from_shape_vec((r, c), data).expect("shape checked"));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        let name = params.iter().nth(missing).expect("index in range").name.clone();
        return Err(Error::Checkpoint {
            name,
            detail: "missing from the checkpoint".to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamKind;
    use ndarray::array;

    fn sample_set() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.register("enc.w", ParamKind::Weight, array![[1.0, 2.0], [3.0, 4.0]]);
        ps.register("enc.b", ParamKind::Bias, array![[0.5, -0.5]]);
        ps
    }

    #[test]
    fn round_trip_preserves_values_bitwise() {
        let src = sample_set();
        let bytes = to_bytes(&src);

        let dst = sample_set();
        dst.get("enc.w").unwrap().tensor.set_value(array![[0.0, 0.0], [0.0, 0.0]]);
        load_bytes(&bytes, &dst).unwrap();
        assert_eq!(
            dst.get("enc.w").unwrap().tensor.value(),
            array![[1.0, 2.0], [3.0, 4.0]]
        );
        assert_eq!(
            dst.get("enc.b").unwrap().tensor.value(),
            array![[0.5, -0.5]]
        );
    }

    #[test]
    fn f64_set_round_trips_through_f32_payload() {
        let mut src = ParamSet::<f64>::new();
        src.register("w", ParamKind::Weight, array![[0.125, -7.5]]);
        let bytes = to_bytes(&src);
        let mut dst = ParamSet::<f64>::new();
        dst.register("w", ParamKind::Weight, array![[0.0, 0.0]]);
        load_bytes(&bytes, &dst).unwrap();
        // Values exactly representable in f32 survive unchanged.
        assert_eq!(dst.get("w").unwrap().tensor.value(), array![[0.125, -7.5]]);
    }

    #[test]
    fn rejects_unknown_parameter_name() {
        let bytes = to_bytes(&sample_set());
        let mut other = ParamSet::<f32>::new();
        other.register("different.w", ParamKind::Weight, array![[0.0, 0.0], [0.0, 0.0]]);
        let err = load_bytes(&bytes, &other).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { .. }), "{err}");
    }

    #[test]
    fn rejects_shape_mismatch() {
        let bytes = to_bytes(&sample_set());
        let mut other = ParamSet::<f32>::new();
        other.register("enc.w", ParamKind::Weight, array![[0.0, 0.0]]); // 1×2, not 2×2
        other.register("enc.b", ParamKind::Bias, array![[0.0, 0.0]]);
        let err = load_bytes(&bytes, &other).unwrap_err();
        match err {
            Error::Checkpoint { name, detail } => {
                assert_eq!(name, "enc.w");
                assert!(detail.contains("shape"), "{detail}");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_missing_parameter() {
        // Checkpoint holds only enc.w; the model also expects enc.b.
        let mut partial = ParamSet::<f32>::new();
        partial.register("enc.w", ParamKind::Weight, array![[1.0, 2.0], [3.0, 4.0]]);
        let bytes = to_bytes(&partial);
        let err = load_bytes(&bytes, &sample_set()).unwrap_err();
        match err {
            Error::Checkpoint { name, .. } => assert_eq!(name, "enc.b"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = to_bytes(&sample_set());
        assert!(matches!(
            load_bytes(&bytes[..bytes.len() - 2], &sample_set()).unwrap_err(),
            Error::Format { format: "TPF1", .. }
        ));
        bytes[0] = b'X';
        assert!(matches!(
            load_bytes(&bytes, &sample_set()).unwrap_err(),
            Error::Format { format: "TPF1", .. }
        ));
    }

    #[test]
    fn parse_reports_layout() {
        let entries = parse(&to_bytes(&sample_set())).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].name, "enc.w");
        assert_eq!(entries[0].shape, vec![2, 2]);
        assert_eq!(entries[1].values, vec![0.5, -0.5]);
    }
}
