use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{ByteCursor, Matrix};

pub const FEATURE_MAGIC: &[u8; 4] = b"MBFT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// `n_frames × d_a` acoustic feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Matrix<f32>,
}

impl FeatureSequence {
    pub fn new(frames: Matrix<f32>) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Empty("feature sequence has no frames".into()));
        }
        if frames.cols() == 0 {
            return Err(Error::Empty("feature frames have zero dimension".into()));
        }
        if !frames.is_finite() {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(Self { frames })
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frames(&self) -> &Matrix<f32> {
        &self.frames
    }
}

/// Encodes `"MBFT" version n_frames dim` (little-endian `u32`s) followed by
/// the row-major little-endian `f32` payload.
pub fn encode_features(features: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + features.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u32).to_le_bytes());
    for v in features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], origin: &Path) -> Result<Matrix<f32>> {
    let mut cur = ByteCursor {
        bytes,
        pos: 0,
        origin,
    };
    if cur.take(4)? != FEATURE_MAGIC {
        return Err(Error::format(origin, "bad magic, expected MBFT"));
    }
    let version = cur.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::format(origin, format!("unsupported feature version {version}")));
    }
    let rows = cur.u32()? as usize;
    let cols = cur.u32()? as usize;
    let len = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, "shape overflow"))?;
    let payload = cur.take(len)?;
    if cur.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after payload"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn write_feature_file(path: &Path, features: &Matrix<f32>) -> Result<()> {
    std::fs::write(path, encode_features(features)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<Matrix<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_three_payload_is_24_bytes() {
        let m = Matrix::from_vec(2, 3, vec![0.0f32; 6]);
        assert_eq!(encode_features(&m).len() - HEADER_LEN, 24);
    }

    #[test]
    fn truncated_file_is_an_error() {
        let m = Matrix::from_vec(2, 3, vec![1.5f32; 6]);
        let bytes = encode_features(&m);
        for cut in [0, 7, HEADER_LEN, bytes.len() - 1] {
            assert!(decode_features(&bytes[..cut], Path::new("f")).is_err());
        }
    }

    #[test]
    fn bad_magic_is_an_error() {
        let mut bytes = encode_features(&Matrix::from_vec(1, 1, vec![1.0f32]));
        bytes[..4].copy_from_slice(b"NOPE");
        let err = decode_features(&bytes, Path::new("f")).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn overflowing_shape_is_an_error() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(FEATURE_MAGIC);
        bytes.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode_features(&bytes, Path::new("f")).is_err());
    }

    #[test]
    fn empty_sequence_is_rejected() {
        assert!(FeatureSequence::new(Matrix::zeros(0, 4)).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            (rows, cols, data) in (0usize..6, 0usize..6).prop_flat_map(|(r, c)| {
                (Just(r), Just(c), proptest::collection::vec(-1e6f32..1e6, r * c))
            })
        ) {
            let m = Matrix::from_vec(rows, cols, data);
            let back = decode_features(&encode_features(&m), Path::new("f")).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
