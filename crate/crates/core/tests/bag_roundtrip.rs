//! Property tests for the feature-bag binary format.

use mmsurv_core::data::{read_feature_bag, write_feature_bag, DataError, Modality};
use mmsurv_core::tensor::Tensor;
use proptest::prelude::*;

fn modality_strategy() -> impl Strategy<Value = Modality> {
    prop_oneof![
        Just(Modality::Histology),
        Just(Modality::ProteinGrid),
        Just(Modality::ProteinPatch),
        Just(Modality::Parameter),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Values on disk are 32-bit, so any f32-representable payload must
    /// survive the round trip bit-exactly.
    #[test]
    fn round_trip_is_bit_exact(
        rows in 1usize..64,
        cols in 1usize..64,
        seed in any::<u32>(),
        modality in modality_strategy(),
    ) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| {
                let x = (i as u32).wrapping_mul(2654435761).wrapping_add(seed);
                (f32::from_bits(0x3f80_0000 | (x >> 9)) - 1.5) as f64
            })
            .collect();
        let tensor = Tensor::new(rows, cols, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bag.fbag");
        write_feature_bag(&path, &tensor, modality).unwrap();
        let (back, m) = read_feature_bag(&path).unwrap();
        prop_assert_eq!(back, tensor);
        prop_assert_eq!(m, modality);
    }

    /// Flipping any tail byte of the payload is detected as a value change,
    /// never as a parse failure; shrinking the file is a truncation error.
    #[test]
    fn payload_truncation_always_detected(cut in 1usize..16) {
        let tensor = Tensor::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bag.fbag");
        write_feature_bag(&path, &tensor, Modality::Histology).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let cut = cut.min(bytes.len() - 1);
        bytes.truncate(bytes.len() - cut);
        std::fs::write(&path, &bytes).unwrap();
        let rejected = matches!(
            read_feature_bag(&path),
            Err(DataError::Truncated { .. }) | Err(DataError::Format { .. })
        );
        prop_assert!(rejected);
    }
}

#[test]
fn oversized_payload_rejected() {
    let tensor = Tensor::new(1, 2, vec![1.0, 2.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bag.fbag");
    write_feature_bag(&path, &tensor, Modality::Histology).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.extend_from_slice(&[0u8; 4]);
    std::fs::write(&path, &bytes).unwrap();
    match read_feature_bag(&path) {
        Err(DataError::Truncated { expected, actual, .. }) => {
            assert_eq!(actual, expected + 4);
        }
        other => panic!("expected size mismatch, got {other:?}"),
    }
}
