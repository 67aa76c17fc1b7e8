mod common;

use common::neural;

#[test]
fn forward_pass_matches_oracle_on_fifty_pairs() {
    let summary = neural::check_agreement(50, 1e-6).unwrap();
    println!("{summary}");
}

#[test]
fn zero_weights_give_one_half() {
    neural::check_zero_network().unwrap();
}

#[test]
fn oracle_sees_the_exported_weights() {
    // A bias shift on the head must move both implementations identically.
    let mut w = remoni_core::fall::ModelWeights::zeros();
    w.dense.bias[0] = 2.0;
    let input = neural::random_input(1);
    let want = 1.0 / (1.0 + (-2.0f64).exp());
    assert_eq!(neural::oracle_probability(&w.to_json(), &input), want);
    assert!((w.infer(&neural::as_window(&input)).probability - want).abs() < 1e-15);
}
