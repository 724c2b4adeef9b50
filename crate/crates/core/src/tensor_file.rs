//! `MOSSTNSR` binary tensor files.
//!
//! Layout, little-endian throughout:
//!
//! | offset | size       | field                               |
//! |--------|------------|-------------------------------------|
//! | 0      | 8          | magic `b"MOSSTNSR"`                 |
//! | 8      | 1          | version (currently 1)               |
//! | 9      | 1          | dtype tag                           |
//! | 10     | 4          | ndim (`u32`)                        |
//! | 14     | 8 × ndim   | dims (`u64` each)                   |
//! | …      | n × width  | payload (`f32` LE, or raw `u8` codes) |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{shape_len, Tensor};

pub const MAGIC: [u8; 8] = *b"MOSSTNSR";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    E4m3 = 1,
    E5m2 = 2,
    E8m0 = 3,
}

impl DType {
    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(DType::F32),
            1 => Ok(DType::E4m3),
            2 => Ok(DType::E5m2),
            3 => Ok(DType::E8m0),
            t => Err(Error::UnknownDType(t)),
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            _ => 1,
        }
    }
}

/// Contents of a tensor file: either `f32` data or 8-bit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorFile {
    F32(Tensor),
    Codes { dtype: DType, shape: Vec<usize>, codes: Vec<u8> },
}

impl TensorFile {
    pub fn codes(dtype: DType, shape: Vec<usize>, codes: Vec<u8>) -> Result<Self> {
        if dtype == DType::F32 {
            return Err(Error::InvalidArgument("code payloads cannot use the f32 tag".into()));
        }
        let expected = shape_len(&shape)?;
        if codes.len() != expected {
            return Err(Error::LengthMismatch { len: codes.len(), expected });
        }
        Ok(TensorFile::Codes { dtype, shape, codes })
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorFile::F32(_) => DType::F32,
            TensorFile::Codes { dtype, .. } => *dtype,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            TensorFile::F32(t) => t.shape(),
            TensorFile::Codes { shape, .. } => shape,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(14 + 8 * shape.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.dtype() as u8);
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            TensorFile::F32(t) => {
                out.reserve(4 * t.len());
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorFile::Codes { codes, .. } => out.extend_from_slice(codes),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let magic: [u8; 8] = take(&mut cur, 8, "magic")?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = take(&mut cur, 1, "version")?[0];
        if version != VERSION {
            return Err(Error::VersionMismatch { found: version, expected: VERSION });
        }
        let dtype = DType::from_tag(take(&mut cur, 1, "dtype")?[0])?;
        let ndim = u32::from_le_bytes(take(&mut cur, 4, "ndim")?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            let d = u64::from_le_bytes(take(&mut cur, 8, "dims")?.try_into().unwrap());
            shape.push(usize::try_from(d).map_err(|_| Error::InvalidShape(vec![usize::MAX]))?);
        }
        let n = shape_len(&shape)?;
        let payload_len = n
            .checked_mul(dtype.width())
            .ok_or_else(|| Error::InvalidShape(shape.clone()))?;
        if cur.len() < payload_len {
            return Err(Error::Truncated(format!(
                "payload has {} bytes, expected {payload_len}",
                cur.len()
            )));
        }
        if cur.len() > payload_len {
            return Err(Error::InvalidArgument(format!(
                "{} trailing bytes after payload",
                cur.len() - payload_len
            )));
        }
        match dtype {
            DType::F32 => {
                let data = cur
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Ok(TensorFile::F32(Tensor::new(shape, data)?))
            }
            _ => Ok(TensorFile::Codes { dtype, shape, codes: cur.to_vec() }),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn take<'a>(cur: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Truncated(format!("header ends inside {what}")));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

pub fn tensor_write(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    TensorFile::F32(t.clone()).write(path)
}

/// Reads an `f32` tensor file; code payloads are rejected.
pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor> {
    match TensorFile::read(path)? {
        TensorFile::F32(t) => Ok(t),
        TensorFile::Codes { dtype, .. } => {
            Err(Error::InvalidArgument(format!("expected f32 tensor, found {dtype:?} codes")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn f32_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.mosst");
        let t = Tensor::from_vec(vec![1.5, -2.25]).unwrap();
        tensor_write(&t, &p).unwrap();
        let back = tensor_read(&p).unwrap();
        assert_eq!(back.shape(), &[2]);
        let bits: Vec<u32> = back.data().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, vec![1.5f32.to_bits(), (-2.25f32).to_bits()]);
    }

    // Frozen golden bytes for a 2x2 E8M0 code tensor.
    const E8M0_GOLDEN: &[u8] = &[
        b'M', b'O', b'S', b'S', b'T', b'N', b'S', b'R', // magic
        1, 3, // version, dtype
        2, 0, 0, 0, // ndim
        2, 0, 0, 0, 0, 0, 0, 0, // dim 0
        2, 0, 0, 0, 0, 0, 0, 0, // dim 1
        127, 118, 0, 254, // codes
    ];

    #[test]
    fn e8m0_golden_file() {
        let tf = TensorFile::codes(DType::E8m0, vec![2, 2], vec![127, 118, 0, 254]).unwrap();
        assert_eq!(tf.to_bytes(), E8M0_GOLDEN);
        assert_eq!(TensorFile::from_bytes(E8M0_GOLDEN).unwrap(), tf);
    }

    #[test]
    fn wrong_magic() {
        let mut b = E8M0_GOLDEN.to_vec();
        b[0] = b'X';
        assert!(matches!(TensorFile::from_bytes(&b), Err(Error::BadMagic(_))));
    }

    #[test]
    fn wrong_version() {
        let mut b = E8M0_GOLDEN.to_vec();
        b[8] = 2;
        assert!(matches!(
            TensorFile::from_bytes(&b),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn truncated_payload_and_header() {
        let b = &E8M0_GOLDEN[..E8M0_GOLDEN.len() - 1];
        assert!(matches!(TensorFile::from_bytes(b), Err(Error::Truncated(_))));
        assert!(matches!(TensorFile::from_bytes(&E8M0_GOLDEN[..12]), Err(Error::Truncated(_))));
    }

    #[test]
    fn unknown_dtype() {
        let mut b = E8M0_GOLDEN.to_vec();
        b[9] = 9;
        assert!(matches!(TensorFile::from_bytes(&b), Err(Error::UnknownDType(9))));
    }

    #[test]
    fn f32_tag_rejects_codes() {
        assert!(TensorFile::codes(DType::F32, vec![1], vec![0]).is_err());
    }

    proptest! {
        #[test]
        fn roundtrip_all_dtypes(
            shape in proptest::collection::vec(1usize..5, 1..4),
            tag in 0u8..4,
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let dtype = DType::from_tag(tag).unwrap();
            let tf = if dtype == DType::F32 {
                let t = crate::tensor::tensor_randn(&shape, seed, crate::tensor::Dist::Gaussian).unwrap();
                TensorFile::F32(t)
            } else {
                let codes = (0..n).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 7) as u8).collect();
                TensorFile::codes(dtype, shape.clone(), codes).unwrap()
            };
            let bytes = tf.to_bytes();
            prop_assert_eq!(bytes.len(), 14 + 8 * shape.len() + n * dtype.width());
            let back = TensorFile::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
