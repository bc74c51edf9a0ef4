mod common;

use common::layers::*;

#[test]
fn every_layer_matches_finite_differences() {
    for (name, err) in all_layer_errors(12) {
        assert!(err <= 1e-4, "{name}: max rel error {err}");
    }
}

#[test]
fn conv_checks_cover_strides_and_padding() {
    // The random instances should include both strides and both paddings.
    let worst = (0..40).map(|s| conv_instance(s * 7 + 3)).fold(0.0, f64::max);
    assert!(worst <= 1e-4, "max rel error {worst}");
}
