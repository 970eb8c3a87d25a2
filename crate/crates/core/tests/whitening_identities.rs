mod common;

use common::whitening_check::{hand_example, hand_example_exact, identities};
use macforge::descriptor::Descriptor;
use macforge::whitening::{apply_projection, ProjectionKind, ProjectionModel};

#[test]
fn lw_whitens_matching_and_diagonalizes_non_matching() {
    for k in [16, 64] {
        let id = identities(7, k);
        assert!(id.pairs >= 10 * k);
        println!("{id:?}");
        assert!(id.passed(), "{id:?}");
    }
}

#[test]
fn hand_example_up_to_column_sign() {
    assert!(hand_example_exact(), "{:?}", hand_example());
}

#[test]
fn hand_projection_applied() {
    let model = ProjectionModel {
        kind: ProjectionKind::Lw,
        mean: vec![0.0, 0.0],
        projection: hand_example(),
        spectrum: vec![9.0, 0.0],
    };
    let out = apply_projection(&model, &Descriptor::raw(vec![1.0, 0.0]), 2).unwrap();
    assert_eq!(out.values(), &[0.0, 1.0]);
}
