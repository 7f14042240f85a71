//! IDX files as distributed with MNIST and Fashion-MNIST.
//!
//! Layout: big-endian magic `0x0000_08RR` (unsigned bytes, rank `RR`),
//! `RR` big-endian `u32` dimension sizes, then the raw bytes.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const MAGIC_LABELS: u32 = 0x0000_0801;
pub const MAGIC_IMAGES: u32 = 0x0000_0803;

/// Decoded unsigned-byte array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "IDX dims {dims:?} do not match {} bytes",
                data.len()
            )));
        }
        Ok(IdxArray { dims, data })
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(format!("IDX header truncated at byte {at}")))
}

/// Parses a rank-1 (labels) or rank-3 (images) unsigned-byte IDX buffer.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    let magic = be_u32(bytes, 0)?;
    let rank = match magic {
        MAGIC_LABELS => 1,
        MAGIC_IMAGES => 3,
        other => return Err(Error::format(format!("bad IDX magic 0x{other:08x}"))),
    };
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let offset = 4 + 4 * rank;
    let expected = dims.iter().product::<usize>();
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::format(format!(
            "IDX payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    IdxArray::new(dims, payload.to_vec())
}

pub fn serialize_idx(array: &IdxArray) -> Result<Vec<u8>> {
    let magic = match array.dims.len() {
        1 => MAGIC_LABELS,
        3 => MAGIC_IMAGES,
        r => return Err(Error::shape(format!("IDX rank {r} not supported"))),
    };
    let mut out = Vec::with_capacity(4 + 4 * array.dims.len() + array.data.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("IDX dimension {d} too large")))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

/// Reads an IDX file, transparently gunzipping `.gz` paths.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let file = File::open(path)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes)?;
    } else {
        BufReader::new(file).read_to_end(&mut bytes)?;
    }
    parse_idx(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_built_labels() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![3]);
        assert_eq!(a.data, vec![7, 0, 9]);
    }

    #[test]
    fn hand_built_image() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 1];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![1, 2, 2]);
        assert_eq!(a.data, vec![0, 255, 128, 1]);
    }

    #[test]
    fn wrong_magic() {
        let bytes = [0, 0, 8, 2, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bytes), Err(Error::Format(_))));
        let bytes = [0, 0, 0x0d, 1, 0, 0, 0, 0];
        assert!(matches!(parse_idx(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn truncated() {
        assert!(matches!(parse_idx(&[0, 0, 8]), Err(Error::Format(_))));
        assert!(matches!(parse_idx(&[0, 0, 8, 3, 0, 0, 0, 1]), Err(Error::Format(_))));
        let short = [0, 0, 8, 1, 0, 0, 0, 4, 1, 2, 3];
        assert!(matches!(parse_idx(&short), Err(Error::Format(_))));
    }

    #[test]
    fn gzip_files_are_decoded() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels-idx1-ubyte.gz");
        let raw = serialize_idx(&IdxArray::new(vec![4], vec![1, 2, 3, 4]).unwrap()).unwrap();
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::default());
        enc.write_all(&raw).unwrap();
        enc.finish().unwrap();
        assert_eq!(read_idx_file(&path).unwrap().data, vec![1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn roundtrip(rank3 in any::<bool>(), a in 1usize..6, b in 1usize..6, c in 1usize..6, seed in any::<u64>()) {
            let dims = if rank3 { vec![a, b, c] } else { vec![a * b * c] };
            let n = a * b * c;
            let data: Vec<u8> = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let arr = IdxArray::new(dims, data).unwrap();
            prop_assert_eq!(parse_idx(&serialize_idx(&arr).unwrap()).unwrap(), arr);
        }
    }
}
