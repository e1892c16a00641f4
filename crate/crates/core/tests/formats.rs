use vqarank::data::features::{decode_features, encode_features, read_features, write_features};
use vqarank::numcore::Matrix;
use vqarank::FormatError;

const GOLDEN: &[u8] = include_bytes!("data/golden_2x3.mmft");

fn golden_matrix() -> Matrix {
    Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![3.25, 0.0, -0.125]])
}

#[test]
fn golden_file_decodes() {
    assert_eq!(decode_features(GOLDEN).unwrap(), golden_matrix());
}

#[test]
fn encoder_reproduces_golden_file() {
    assert_eq!(encode_features(&golden_matrix()).unwrap(), GOLDEN);
}

#[test]
fn golden_layout() {
    assert_eq!(&GOLDEN[..4], b"MMFT");
    assert_eq!(u32::from_le_bytes(GOLDEN[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(GOLDEN[8..12].try_into().unwrap()), 2);
    assert_eq!(u32::from_le_bytes(GOLDEN[12..16].try_into().unwrap()), 3);
    assert_eq!(f32::from_le_bytes(GOLDEN[20..24].try_into().unwrap()), -2.0);
    assert_eq!(GOLDEN.len(), 16 + 4 * 6 + 8);
}

#[test]
fn file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.mmft");
    write_features(&path, &golden_matrix()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), GOLDEN);
    assert_eq!(read_features(&path).unwrap(), golden_matrix());

    let mut bad = GOLDEN.to_vec();
    bad[30] ^= 0x40;
    std::fs::write(&path, &bad).unwrap();
    let err = read_features(&path).unwrap_err();
    assert!(err.to_string().contains("x.mmft"), "{err}");
    assert!(matches!(decode_features(&bad), Err(FormatError::ChecksumMismatch { .. })));
}
