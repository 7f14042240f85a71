//! Binary model files.
//!
//! ```text
//! magic      8 bytes  "SIFTCNN\0"
//! version    u32 LE
//! variant    u32 LE length + UTF-8, e.g. "fashion-baseline(max)"
//! count      u32 LE number of parameters
//! per parameter:
//!   name     u32 LE length + UTF-8
//!   rank     u32 LE, then rank × u32 LE dims
//!   values   product(dims) × f32 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{Model, Param, Variant};

pub const MAGIC: &[u8; 8] = b"SIFTCNN\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit the artifact format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_model(model: &Model<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(64 + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_str(&mut out, &model.variant().to_string())?;
    put_u32(&mut out, model.params.len())?;
    for p in &model.params {
        put_str(&mut out, &p.name)?;
        put_u32(&mut out, p.shape.len())?;
        for &d in &p.shape {
            put_u32(&mut out, d)?;
        }
        for v in &p.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(format!("model file truncated at byte {}", self.at)))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("non-UTF-8 string in model file"))
    }
}

/// Decodes a model file, checking every parameter against the layout its
/// variant implies.
pub fn decode_model(bytes: &[u8]) -> Result<Model<f32>> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(Error::format("not a model file (bad magic)"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::format(format!("unsupported model format version {version}")));
    }
    let variant: Variant = r
        .string()?
        .parse()
        .map_err(|e: Error| Error::format(format!("model file variant: {e}")))?;
    let mut model = Model::<f32>::build(variant, 0);
    let count = r.u32()?;
    if count != model.params.len() {
        return Err(Error::format(format!(
            "{variant} has {} parameters, file declares {count}",
            model.params.len()
        )));
    }
    for slot in model.params.iter_mut() {
        let name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if name != slot.name || shape != slot.shape {
            return Err(Error::format(format!(
                "expected {} {:?}, found {name} {shape:?}",
                slot.name, slot.shape
            )));
        }
        let raw = r.take(4 * slot.data.len())?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        *slot = Param { name, shape, data };
    }
    if r.at != bytes.len() {
        return Err(Error::format("trailing bytes after model parameters"));
    }
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model<f32>> {
    decode_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model<f32> {
        Model::build("fashion-baseline(stochastic)".parse().unwrap(), 11)
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = model();
        let back = decode_model(&encode_model(&m).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn header_layout() {
        let bytes = encode_model(&model()).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &28u32.to_le_bytes());
        assert_eq!(&bytes[16..44], b"fashion-baseline(stochastic)");
    }

    #[test]
    fn corruption_detected() {
        let good = encode_model(&model()).unwrap();
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[8] = 9;
        let mut extra = good.clone();
        extra.push(0);
        for bytes in [&bad_magic[..], &bad_version[..], &good[..good.len() - 3], &extra[..], &[][..]] {
            assert!(matches!(decode_model(bytes), Err(Error::Format(_))));
        }
    }
}
