//! Binary model checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! "SDMTL1"
//! T, T', joints, C, k, l_en, l_de, n, ablation bits
//! record count
//! per record: name length, name bytes, rank, dims[rank], f32 payload
//! CRC-32 of every preceding byte
//! ```
//!
//! Records are written in name order, so identical parameters always give
//! identical files.

use std::path::Path;

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::network::{Ablation, Model, ModelHyper};
use crate::scalar::Scalar;
use crate::tensor::Dims;

pub const MAGIC: &[u8; 6] = b"SDMTL1";
const HYPER_FIELDS: usize = 9;

fn hyper_words(h: &ModelHyper) -> [u32; HYPER_FIELDS] {
    [
        h.frames,
        h.horizon,
        h.joints,
        h.channels,
        h.kernel,
        h.enc_layers,
        h.dec_layers,
        h.stack_len,
        h.ablation.bits() as usize,
    ]
    .map(|v| v as u32)
}

pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let store = &model.params;
    let mut out = Vec::with_capacity(64 + 4 * store.element_count());
    out.extend_from_slice(MAGIC);
    let word = |out: &mut Vec<u8>, v: usize| out.extend_from_slice(&(v as u32).to_le_bytes());
    for w in hyper_words(&model.hyper) {
        word(&mut out, w as usize);
    }
    word(&mut out, store.len());
    for id in store.sorted_ids() {
        let name = store.name(id).as_bytes();
        word(&mut out, name.len());
        out.extend_from_slice(name);
        let t = store.get(id);
        word(&mut out, 4);
        for d in t.dims().0 {
            word(&mut out, d);
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_f32_lossy().to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn word(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Parses a checkpoint. With `expected`, the stored hyperparameters must
/// match it exactly.
pub fn decode<T: Scalar>(bytes: &[u8], expected: Option<&ModelHyper>) -> Result<Model<T>> {
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let mut w = [0usize; HYPER_FIELDS];
    for v in &mut w {
        *v = r.word()?;
    }
    let hyper = ModelHyper {
        frames: w[0],
        horizon: w[1],
        joints: w[2],
        channels: w[3],
        kernel: w[4],
        enc_layers: w[5],
        dec_layers: w[6],
        stack_len: w[7],
        ablation: Ablation::from_bits(w[8] as u32)?,
    };
    if let Some(want) = expected {
        if *want != hyper {
            return Err(Error::Hyper(format!(
                "checkpoint holds {hyper}, requested {want}"
            )));
        }
    }
    let mut model = Model::<T>::new(hyper, 0)?;
    let count = r.word()?;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} records, model has {} parameters",
            model.params.len()
        )));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let len = r.word()?;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let id = model
            .params
            .id(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name:?}")))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Checkpoint(format!("duplicate parameter {name:?}")));
        }
        let rank = r.word()?;
        if rank != 4 {
            return Err(Error::Checkpoint(format!(
                "{name}: unsupported rank {rank}"
            )));
        }
        let dims = Dims::new(r.word()?, r.word()?, r.word()?, r.word()?);
        let target = model.params.get_mut(id);
        if dims != target.dims() {
            return Err(Error::shape("checkpoint record", dims, target.dims()));
        }
        let payload = r.take(4 * dims.len())?;
        for (dst, b) in target.data_mut().iter_mut().zip(payload.chunks_exact(4)) {
            *dst = T::from_single(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            body.len() - r.pos
        )));
    }
    Ok(model)
}

pub fn save<T: Scalar>(path: &Path, model: &Model<T>) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load<T: Scalar>(path: &Path, expected: Option<&ModelHyper>) -> Result<Model<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelHyper {
        ModelHyper {
            frames: 4,
            horizon: 2,
            joints: 5,
            channels: 4,
            ..ModelHyper::default()
        }
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let m = Model::<f32>::new(tiny(), 7).unwrap();
        let a = encode(&m);
        let back: Model<f32> = decode(&a, Some(&tiny())).unwrap();
        assert_eq!(encode(&back), a);
        for id in m.params.ids() {
            assert_eq!(m.params.get(id).data(), back.params.get(id).data());
        }
    }

    #[test]
    fn every_single_byte_flip_is_caught() {
        let m = Model::<f32>::new(tiny(), 1).unwrap();
        let a = encode(&m);
        for pos in (0..a.len()).step_by(97).chain([a.len() - 1]) {
            let mut b = a.clone();
            b[pos] ^= 0x10;
            assert!(decode::<f32>(&b, None).is_err(), "flip at {pos} accepted");
        }
    }

    #[test]
    fn horizon_mismatch_is_hyper_error() {
        let a = encode(&Model::<f32>::new(tiny(), 1).unwrap());
        let want = ModelHyper {
            horizon: 3,
            ..tiny()
        };
        assert!(matches!(
            decode::<f32>(&a, Some(&want)),
            Err(Error::Hyper(_))
        ));
    }

    #[test]
    fn truncation_rejected() {
        let a = encode(&Model::<f32>::new(tiny(), 1).unwrap());
        assert!(matches!(
            decode::<f32>(&a[..3], None),
            Err(Error::Checkpoint(_))
        ));
        assert!(decode::<f32>(&a[..a.len() - 9], None).is_err());
    }
}
