//! Binary feature files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size            | field                                  |
//! |--------|-----------------|----------------------------------------|
//! | 0      | 4               | magic `MMFT`                           |
//! | 4      | 4               | version, `u32` = 1                     |
//! | 8      | 4               | count, `u32`                           |
//! | 12     | 4               | dim, `u32`                             |
//! | 16     | 4 · count · dim | payload, `f32` row-major (one row per item) |
//! | end−8  | 8               | FNV-1a 64 of the payload bytes, `u64`  |
//!
//! Values are computed in `f64` and narrowed to `f32` on write. `count` and
//! `dim` are both at least 1: an empty payload leaves the header unprotected
//! by the checksum, so empty files are refused on write and on read.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::numcore::Matrix;

pub const MAGIC: [u8; 4] = *b"MMFT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const CHECKSUM_LEN: usize = 8;

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;

    pub fn new() -> Self {
        Self(Self::OFFSET)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(Self::PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a::new();
    h.write(bytes);
    h.finish()
}

/// Exact file size for a `count × dim` payload, saturating for headers no
/// real file can match.
pub fn file_len(count: usize, dim: usize) -> u64 {
    (count as u64)
        .saturating_mul(dim as u64)
        .saturating_mul(4)
        .saturating_add((HEADER_LEN + CHECKSUM_LEN) as u64)
}

/// Serializes `features` (`count × dim`, one item per row).
pub fn encode_features(features: &Matrix) -> Result<Vec<u8>> {
    let (count, dim) = features.shape();
    if count == 0 || dim == 0 {
        return Err(Error::Param(format!("cannot write an empty {count}x{dim} feature file")));
    }
    let count32 = u32::try_from(count).map_err(|_| Error::Param(format!("count {count} exceeds u32")))?;
    let dim32 = u32::try_from(dim).map_err(|_| Error::Param(format!("dim {dim} exceeds u32")))?;
    let mut out = Vec::with_capacity(file_len(count, dim) as usize);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count32.to_le_bytes());
    out.extend_from_slice(&dim32.to_le_bytes());
    for (i, &v) in features.as_slice().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite(format!(
                "feature [{}, {}] = {v} is not representable as a finite f32",
                i / dim.max(1),
                i % dim.max(1)
            )));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    let checksum = fnv1a64(&out[HEADER_LEN..]);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses a feature file image, validating every header field, the exact
/// length, the checksum and finiteness.
pub fn decode_features(bytes: &[u8]) -> Result<Matrix, FormatError> {
    let min = (HEADER_LEN + CHECKSUM_LEN) as u64;
    if bytes.len() < 4 {
        return Err(FormatError::Truncated {
            actual: bytes.len() as u64,
            needed: min,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    if (bytes.len() as u64) < min {
        return Err(FormatError::Truncated {
            actual: bytes.len() as u64,
            needed: min,
        });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let count = u32_at(bytes, 8) as usize;
    let dim = u32_at(bytes, 12) as usize;
    if count == 0 || dim == 0 {
        return Err(FormatError::Empty { count, dim });
    }
    let expected = file_len(count, dim);
    if bytes.len() as u64 != expected {
        return Err(FormatError::SizeMismatch {
            expected,
            actual: bytes.len() as u64,
        });
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - CHECKSUM_LEN];
    let stored = u64::from_le_bytes(bytes[bytes.len() - CHECKSUM_LEN..].try_into().expect("8 bytes"));
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(FormatError::ChecksumMismatch { stored, computed });
    }
    let mut data = Vec::with_capacity(count * dim);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FormatError::NonFinite {
                row: i / dim.max(1),
                col: i % dim.max(1),
            });
        }
        data.push(v as f64);
    }
    Ok(Matrix::from_vec(count, dim, data).expect("length checked"))
}

pub fn write_features(path: impl AsRef<Path>, features: &Matrix) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_features(features)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes).map_err(|cause| Error::Format {
        path: path.to_path_buf(),
        cause,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x8594_4171_f739_67e8);
    }

    #[test]
    fn huge_header_is_a_size_mismatch() {
        let mut bytes = encode_features(&Matrix::from_rows(&[vec![1.0]])).unwrap();
        bytes[8..16].copy_from_slice(&[0xff; 8]);
        assert!(matches!(
            decode_features(&bytes),
            Err(FormatError::SizeMismatch { expected: u64::MAX, .. })
        ));
    }

    #[test]
    fn empty_files_are_refused() {
        assert!(matches!(encode_features(&Matrix::zeros(0, 7)), Err(Error::Param(_))));
        assert!(matches!(encode_features(&Matrix::zeros(3, 0)), Err(Error::Param(_))));
        let mut bytes = MAGIC.to_vec();
        for v in [VERSION, 0, 7] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&fnv1a64(b"").to_le_bytes());
        assert_eq!(bytes.len(), 24);
        assert_eq!(decode_features(&bytes), Err(FormatError::Empty { count: 0, dim: 7 }));
    }

    #[test]
    fn three_by_four_is_72_bytes() {
        let m = Matrix::from_vec(3, 4, (0..12).map(|v| v as f64 * 0.5).collect()).unwrap();
        let bytes = encode_features(&m).unwrap();
        assert_eq!(bytes.len(), 72);
        assert_eq!(decode_features(&bytes).unwrap(), m);
    }

    #[test]
    fn golden_bytes() {
        let m = Matrix::from_rows(&[vec![1.0, -2.0]]);
        let bytes = encode_features(&m).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"MMFT");
        expected.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0]);
        expected.extend_from_slice(&fnv1a64(&expected[16..]).to_le_bytes());
        assert_eq!(bytes, expected);
    }

    #[test]
    fn each_corruption_has_its_own_error() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        let good = encode_features(&m).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(decode_features(&bad), Err(FormatError::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 2;
        assert!(matches!(
            decode_features(&bad),
            Err(FormatError::UnsupportedVersion { found: 2, .. })
        ));

        assert!(matches!(decode_features(&good[..10]), Err(FormatError::Truncated { .. })));
        assert!(matches!(
            decode_features(&good[..good.len() - 1]),
            Err(FormatError::SizeMismatch { .. })
        ));

        let mut bad = good.clone();
        bad[20] ^= 0x01;
        assert!(matches!(decode_features(&bad), Err(FormatError::ChecksumMismatch { .. })));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let mut bytes = encode_features(&Matrix::from_rows(&[vec![1.0]])).unwrap();
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        let sum = fnv1a64(&bytes[16..20]);
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&sum.to_le_bytes());
        assert!(matches!(decode_features(&bytes), Err(FormatError::NonFinite { row: 0, col: 0 })));
        assert!(encode_features(&Matrix::from_rows(&[vec![1e300]])).is_err());
    }

    #[test]
    fn io_errors_name_the_path() {
        let err = read_features("/nonexistent/dir/x.mmft").unwrap_err().to_string();
        assert!(err.contains("/nonexistent/dir/x.mmft"), "{err}");
    }

    proptest! {
        #[test]
        fn round_trips_at_f32_precision(count in 1usize..6, dim in 1usize..6, seed in any::<u64>()) {
            let mut r = crate::numcore::rng::rng(seed);
            let vals: Vec<f64> = (0..count * dim).map(|_| rand::Rng::gen_range(&mut r, -1e6..1e6)).collect();
            let m = Matrix::from_vec(count, dim, vals).unwrap();
            let back = decode_features(&encode_features(&m).unwrap()).unwrap();
            prop_assert_eq!(back.shape(), m.shape());
            for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                prop_assert_eq!(*a, *b as f32 as f64);
            }
            // f32 values survive exactly.
            let again = decode_features(&encode_features(&back).unwrap()).unwrap();
            prop_assert_eq!(again, back);
        }
    }
}
