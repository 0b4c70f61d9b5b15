//! The committed model file must parse to exactly the values it was built
//! from on every platform, and re-saving must reproduce it byte for byte —
//! the format is fixed little-endian and versioned.

use std::path::Path;

use mrstct::io::{load_model, save_model};
use mrstct::mrst::MrstModel;
use ndarray::arr2;

#[test]
fn golden_model_file_is_stable() {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/golden_model_v1.mrst");
    let loaded = load_model(&golden).unwrap();

    // every entry of the expected model is exactly representable, so the
    // comparison is immune to platform math differences
    let h = arr2(&[
        [0.5, 0.5, 0.5, 0.5],
        [0.5, -0.5, 0.5, -0.5],
        [0.5, 0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5, 0.5],
    ]);
    let perm = arr2(&[
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0, 0.0],
    ]);
    let expected = MrstModel::new(vec![h, perm], vec![0.5, 0.25]).unwrap();

    assert_eq!(loaded.layers(), 2);
    assert_eq!(loaded.patch_len(), 4);
    assert_eq!(loaded.learn_thresholds(), expected.learn_thresholds());
    assert_eq!(loaded.transform(1), expected.transform(1));
    assert_eq!(loaded.transform(2), expected.transform(2));

    let dir = tempfile::tempdir().unwrap();
    let resaved = dir.path().join("resaved.mrst");
    save_model(&loaded, &resaved).unwrap();
    let original_bytes = std::fs::read(&golden).unwrap();
    let resaved_bytes = std::fs::read(&resaved).unwrap();
    assert_eq!(original_bytes.len(), 288);
    assert_eq!(original_bytes, resaved_bytes);
}
