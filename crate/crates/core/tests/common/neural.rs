//! Brute-force forward pass written from the layer equations, reading the
//! weight document as plain JSON.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use remoni_core::fall::ModelWeights;
use remoni_core::signal::Window;
use remoni_core::AccelSample;
use serde_json::Value;

use super::Check;

struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    fn at(&self, idx: &[usize]) -> f64 {
        let mut flat = 0;
        for (i, d) in idx.iter().zip(&self.dims) {
            assert!(i < d);
            flat = flat * d + i;
        }
        self.data[flat]
    }
}

struct Layer {
    tensors: Vec<(String, Tensor)>,
}

impl Layer {
    fn get(&self, name: &str) -> &Tensor {
        &self.tensors.iter().find(|(n, _)| n == name).unwrap().1
    }
}

fn layer(doc: &Value, name: &str, order: &[&str]) -> Layer {
    let l = doc["layers"]
        .as_array()
        .unwrap()
        .iter()
        .find(|l| l["name"] == name)
        .unwrap_or_else(|| panic!("no layer {name}"));
    let values: Vec<f64> = l["values"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let mut offset = 0;
    let tensors = order
        .iter()
        .map(|t| {
            let dims: Vec<usize> = l["shape"][*t]
                .as_array()
                .unwrap()
                .iter()
                .map(|d| d.as_u64().unwrap() as usize)
                .collect();
            let n: usize = dims.iter().product();
            let data = values[offset..offset + n].to_vec();
            offset += n;
            (t.to_string(), Tensor { dims, data })
        })
        .collect();
    assert_eq!(offset, values.len());
    Layer { tensors }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `out[t][f] = relu(b[f] + sum_k sum_c in[t + k - k/2][c] * K[k][c][f])`.
fn conv_same_relu(input: &[Vec<f64>], l: &Layer) -> Vec<Vec<f64>> {
    let k = l.get("kernel");
    let b = l.get("bias");
    let (ksize, channels, filters) = (k.dims[0], k.dims[1], k.dims[2]);
    let n = input.len() as i64;
    let mut out = vec![vec![0.0; filters]; input.len()];
    for t in 0..n {
        for f in 0..filters {
            let mut s = b.at(&[f]);
            for j in 0..ksize {
                let src = t + j as i64 - (ksize as i64 - 1) / 2;
                if src < 0 || src >= n {
                    continue;
                }
                for c in 0..channels {
                    s += input[src as usize][c] * k.at(&[j, c, f]);
                }
            }
            out[t as usize][f] = if s > 0.0 { s } else { 0.0 };
        }
    }
    out
}

fn pool2(input: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..input.len() / 2)
        .map(|t| {
            (0..input[0].len())
                .map(|f| {
                    let (a, b) = (input[2 * t][f], input[2 * t + 1][f]);
                    if a >= b {
                        a
                    } else {
                        b
                    }
                })
                .collect()
        })
        .collect()
}

fn lstm_last(seq: &[Vec<f64>], l: &Layer) -> Vec<f64> {
    let w = l.get("kernel");
    let u = l.get("recurrent_kernel");
    let b = l.get("bias");
    let units = u.dims[0];
    let mut h = vec![0.0; units];
    let mut c = vec![0.0; units];
    for x in seq {
        let gate = |g: usize, j: usize, h: &[f64]| {
            let col = g * units + j;
            let mut s = b.at(&[col]);
            for (i, xi) in x.iter().enumerate() {
                s += xi * w.at(&[i, col]);
            }
            for (i, hi) in h.iter().enumerate() {
                s += hi * u.at(&[i, col]);
            }
            s
        };
        let prev = h.clone();
        for j in 0..units {
            let i_t = logistic(gate(0, j, &prev));
            let f_t = logistic(gate(1, j, &prev));
            let g_t = gate(2, j, &prev).tanh();
            let o_t = logistic(gate(3, j, &prev));
            c[j] = f_t * c[j] + i_t * g_t;
            h[j] = o_t * c[j].tanh();
        }
    }
    h
}

/// Fall probability for a `len x 3` input.
pub fn oracle_probability(weights_json: &str, input: &[[f64; 3]]) -> f64 {
    let doc: Value = serde_json::from_str(weights_json).unwrap();
    let rows: Vec<Vec<f64>> = input.iter().map(|r| r.to_vec()).collect();
    let a = pool2(&conv_same_relu(&rows, &layer(&doc, "conv1", &["kernel", "bias"])));
    let b = pool2(&conv_same_relu(&a, &layer(&doc, "conv2", &["kernel", "bias"])));
    let h = lstm_last(&b, &layer(&doc, "lstm", &["kernel", "recurrent_kernel", "bias"]));
    let d = layer(&doc, "dense", &["kernel", "bias"]);
    let k = d.get("kernel");
    let mut y = d.get("bias").at(&[0]);
    for (i, hi) in h.iter().enumerate() {
        y += hi * k.at(&[i, 0]);
    }
    logistic(y)
}

pub fn random_input(seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    (0..128)
        .map(|_| [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
        .collect()
}

pub fn as_window(input: &[[f64; 3]]) -> Window {
    let samples = input
        .iter()
        .enumerate()
        .map(|(i, r)| AccelSample::new(i as i64 * 1000 / 32, r[0], r[1], r[2]))
        .collect();
    Window::new("oracle", samples)
}

/// Forward pass against the oracle on `pairs` seeded (weights, window) pairs.
pub fn check_agreement(pairs: u64, max_rel: f64) -> Check {
    let mut worst: f64 = 0.0;
    let mut spread = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..pairs {
        let weights = ModelWeights::seeded(42 + seed, 0.3);
        let input = random_input(seed);
        let got = weights.infer(&as_window(&input)).probability;
        let want = oracle_probability(&weights.to_json(), &input);
        let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
        if !(rel <= max_rel) {
            return Err(format!("pair {seed}: model {got} vs oracle {want} (rel {rel:e})"));
        }
        worst = worst.max(rel);
        spread = (spread.0.min(want), spread.1.max(want));
    }
    Ok(format!(
        "{pairs} pairs, max rel err {worst:.1e}, p in [{:.3}, {:.3}]",
        spread.0, spread.1
    ))
}

pub fn check_zero_network() -> Check {
    let zeros = ModelWeights::zeros();
    for seed in 0..5 {
        let input = random_input(seed);
        let p = zeros.infer(&as_window(&input)).probability;
        if p != 0.5 {
            return Err(format!("zero network gave {p}"));
        }
        let o = oracle_probability(&zeros.to_json(), &input);
        if o != 0.5 {
            return Err(format!("oracle on zero network gave {o}"));
        }
    }
    Ok("zero network = 0.5 exactly".into())
}
