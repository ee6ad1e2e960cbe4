//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "OPTN" | version u32
//! repeated until EOF:
//!   path_len u32 | path (utf-8) | dtype u8 (1 = f32, 2 = f64)
//!   rank u32 | dims (rank × u64) | payload (numel × dtype size)
//! ```
//!
//! Writers always emit rank 4 `(n, h, w, c)`. Readers accept ranks up to 4
//! and left-pad missing leading dimensions with 1. Batch-norm running
//! statistics are ordinary records.

use std::fs;
use std::path::Path;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{DType, Float, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"OPTN";
pub const VERSION: u32 = 1;

/// One decoded record; the payload is widened to `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub path: String,
    pub dtype: DType,
    pub shape: Shape,
    pub data: Vec<f64>,
}

fn header_bytes(path: &str) -> usize {
    4 + path.len() + 1 + 4 + 4 * 8
}

/// Exact size in bytes of the file [`save_store`] would write.
pub fn estimate_size<T: Float>(store: &ParamStore<T>) -> u64 {
    let body: usize = store
        .iter()
        .map(|(_, p, v)| header_bytes(p) + v.value.len() * T::DTYPE.size())
        .sum();
    (8 + body) as u64
}

pub fn encode<T: Float>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(estimate_size(store) as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (_, path, var) in store.iter() {
        out.extend_from_slice(&(path.len() as u32).to_le_bytes());
        out.extend_from_slice(path.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&4u32.to_le_bytes());
        for d in var.value.shape().dims() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in var.value.data() {
            x.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint(
            "not an OPTN checkpoint (bad magic)".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let len = r.u32("path length")? as usize;
        let path = std::str::from_utf8(r.take(len, "path")?)
            .map_err(|_| Error::Checkpoint("record path is not utf-8".into()))?
            .to_string();
        let tag = r.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| Error::Checkpoint(format!("`{path}`: unknown dtype {tag}")))?;
        let rank = r.u32("rank")? as usize;
        if rank > 4 {
            return Err(Error::Checkpoint(format!(
                "`{path}`: rank {rank} exceeds 4"
            )));
        }
        let dims = (0..rank)
            .map(|_| r.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let shape = Shape::from_dims(&dims)
            .ok_or_else(|| Error::Checkpoint(format!("`{path}`: bad dims {dims:?}")))?;
        let numel = shape.numel();
        let payload = r.take(
            numel
                .checked_mul(dtype.size())
                .ok_or_else(|| Error::Checkpoint(format!("`{path}`: payload overflows")))?,
            "payload",
        )?;
        let data = match dtype {
            DType::F32 => payload
                .chunks_exact(4)
                .map(|b| f32::read_le(b) as f64)
                .collect(),
            DType::F64 => payload.chunks_exact(8).map(f64::read_le).collect(),
        };
        records.push(Record {
            path,
            dtype,
            shape,
            data,
        });
    }
    Ok(records)
}

pub fn save_store<T: Float>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode(store))?;
    Ok(())
}

/// Overwrites every entry of `store` from `records`. Values of the other
/// dtype are converted. Any missing, extra or reshaped record is an error
/// naming the first offending path, and leaves `store` untouched.
pub fn apply_records<T: Float>(store: &mut ParamStore<T>, records: &[Record]) -> Result<()> {
    let mut by_path = std::collections::HashMap::with_capacity(records.len());
    for rec in records {
        if by_path.insert(rec.path.as_str(), rec).is_some() {
            return Err(Error::CheckpointMismatch {
                path: rec.path.clone(),
                reason: "duplicate record".into(),
            });
        }
    }
    let mut staged = Vec::with_capacity(store.len());
    for (id, path, var) in store.iter() {
        let rec = by_path.get(path).ok_or_else(|| Error::CheckpointMismatch {
            path: path.to_string(),
            reason: "missing from checkpoint".into(),
        })?;
        if rec.shape != var.value.shape() {
            return Err(Error::CheckpointMismatch {
                path: path.to_string(),
                reason: format!(
                    "checkpoint shape {} but model expects {}",
                    rec.shape,
                    var.value.shape()
                ),
            });
        }
        staged.push((
            id,
            Tensor::from_vec(rec.shape, rec.data.iter().map(|&x| T::of(x)).collect())?,
        ));
    }
    if let Some(extra) = records.iter().find(|r| store.id(&r.path).is_none()) {
        return Err(Error::CheckpointMismatch {
            path: extra.path.clone(),
            reason: "not a parameter of this model".into(),
        });
    }
    for (id, value) in staged {
        store.get_mut(id).value = value;
    }
    Ok(())
}

pub fn load_store<T: Float>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    apply_records(store, &decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add(
            "a/w",
            Tensor::from_vec(
                Shape::new(2, 1, 3, 4),
                (0..24).map(|i| i as f32 * 0.5).collect(),
            )
            .unwrap(),
            true,
        )
        .unwrap();
        s.add(
            "a/running_mean",
            Tensor::full(Shape::vector(4), -1.25),
            false,
        )
        .unwrap();
        s
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store();
        let bytes = encode(&s);
        assert_eq!(bytes.len() as u64, estimate_size(&s));
        let mut t = store();
        for (_, _, v) in t.iter_mut() {
            v.value.fill(0.0);
        }
        apply_records(&mut t, &decode(&bytes).unwrap()).unwrap();
        for ((_, _, a), (_, _, b)) in s.iter().zip(t.iter()) {
            assert_eq!(a.value.data(), b.value.data());
        }
    }

    #[test]
    fn low_rank_records_are_left_padded() {
        let mut bytes = Vec::from(&MAGIC[..]);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'v');
        bytes.push(2);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for x in [1.0f64, 2.0, 3.0] {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        let recs = decode(&bytes).unwrap();
        assert_eq!(recs[0].shape, Shape::new(1, 1, 1, 3));
        assert_eq!(recs[0].data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn mismatch_names_the_layer() {
        let mut recs = decode(&encode(&store())).unwrap();
        recs[0].shape = Shape::new(1, 1, 6, 4);
        let err = apply_records(&mut store(), &recs).unwrap_err();
        assert!(matches!(err, Error::CheckpointMismatch { ref path, .. } if path == "a/w"));
    }

    #[test]
    fn truncation_and_bad_magic_are_rejected() {
        let bytes = encode(&store());
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"NOPE\x01\x00\x00\x00").is_err());
    }
}
