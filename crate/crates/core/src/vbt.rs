//! `VBT1` binary tensor container.
//!
//! Layout: magic `VBT1`, four little-endian `u32` dims `T W H C`, then
//! `T·W·H·C` little-endian `f32` values in row-major `(t, w, h, c)` order.
//! Masks use the same container with values restricted to `{0.0, 1.0}`.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{BinaryMask, Dims, VideoTensor};

pub const MAGIC: &[u8; 4] = b"VBT1";
const HEADER_LEN: usize = 4 + 4 * 4;

/// Values are narrowed to `f32`; tensors whose entries are already
/// `f32`-representable round-trip bit-exactly.
pub fn encode(tensor: &VideoTensor) -> Vec<u8> {
    let dims = tensor.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    for d in dims.as_array() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in tensor.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<VideoTensor> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected VBT1".into()));
    }
    let mut d = [0usize; 4];
    for (i, slot) in d.iter_mut().enumerate() {
        let off = 4 + 4 * i;
        *slot = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let dims = Dims::new(d[0], d[1], d[2], d[3])?;
    let expected = HEADER_LEN + 4 * dims.len();
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload length {} does not match dims {dims} (expected {expected} bytes)",
            bytes.len()
        )));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    VideoTensor::new(dims, data)
}

pub fn write_to(mut w: impl Write, tensor: &VideoTensor) -> io::Result<()> {
    w.write_all(&encode(tensor))
}

pub fn read_from(mut r: impl Read) -> Result<VideoTensor> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    decode(&buf)
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &VideoTensor) -> Result<()> {
    fs::write(path, encode(tensor))?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<VideoTensor> {
    decode(&fs::read(path)?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_tensor(path, &mask.to_tensor())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    BinaryMask::from_tensor(&read_tensor(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let d = Dims::new(2, 1, 1, 1).unwrap();
        let t = VideoTensor::new(d, vec![1.5, -2.0]).unwrap();
        let bytes = encode(&t);
        assert_eq!(&bytes[..4], b"VBT1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[8..20], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[20..24], &1.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 28);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let d = Dims::new(1, 2, 2, 1).unwrap();
        let bytes = encode(&VideoTensor::zeros(d));
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn mask_roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dims::new(3, 2, 2, 3).unwrap();
        let m = BinaryMask::from_fn(d, |t, w, h, _| (t + w + h) % 2 == 0);
        let path = dir.path().join("m.vbt");
        write_mask(&path, &m).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            dims in (1usize..4, 1usize..4, 1usize..4, 1usize..4),
            seed in proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 1..200),
        ) {
            let d = Dims::new(dims.0, dims.1, dims.2, dims.3).unwrap();
            let data: Vec<f64> = (0..d.len()).map(|i| seed[i % seed.len()] as f64).collect();
            let t = VideoTensor::new(d, data).unwrap();
            let back = decode(&encode(&t)).unwrap();
            prop_assert_eq!(back.dims(), d);
            for (a, b) in t.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
