mod common;

use common::codec;

#[test]
fn ten_thousand_frame_sequences_round_trip() {
    codec::check_round_trip(10_000).unwrap();
}

#[test]
fn length_limits_are_enforced() {
    codec::check_limits().unwrap();
}
