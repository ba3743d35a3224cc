//! Randomized comparisons of every kernel against direct loop references.

mod support;

use support::kernels::{conv_like_float, conv_like_int8, dense_check, pool_check};

#[test]
fn conv_int8_is_bit_exact() {
    conv_like_int8(false, 1_000).unwrap();
}

#[test]
fn depthwise_int8_is_bit_exact() {
    conv_like_int8(true, 2_000).unwrap();
}

#[test]
fn conv_float_matches_reference() {
    conv_like_float(false, 3_000).unwrap();
}

#[test]
fn depthwise_float_matches_reference() {
    conv_like_float(true, 4_000).unwrap();
}

#[test]
fn dense_matches_reference() {
    dense_check().unwrap();
}

#[test]
fn pool_matches_reference() {
    pool_check().unwrap();
}
