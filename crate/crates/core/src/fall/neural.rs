//! Conv1D + LSTM fall classifier: weight file format and forward pass.
//!
//! Architecture (`remoni-hdl-v1`):
//!
//! ```text
//! 128x3 -> conv1 (16 filters, k=5, same, ReLU) -> pool1 (max 2)
//!       -> conv2 (32 filters, k=5, same, ReLU) -> pool2 (max 2)
//!       -> 32x32 sequence -> lstm (hidden 32, last state) -> dense (1) -> sigmoid
//! ```
//!
//! Tensors are row-major with Keras-style layouts: conv kernels are
//! `[kernel, in_channels, filters]`, LSTM kernels `[in, 4*hidden]` with gate
//! blocks ordered input, forget, candidate, output, dense kernels `[in, out]`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{DetectorSource, FallScore, DEFAULT_THRESHOLD};
use crate::signal::{Window, WINDOW_LEN};

pub const ARCH_TAG: &str = "remoni-hdl-v1";
pub const INPUT_CHANNELS: usize = 3;
pub const CONV1_FILTERS: usize = 16;
pub const CONV2_FILTERS: usize = 32;
pub const KERNEL: usize = 5;
pub const POOL: usize = 2;
pub const HIDDEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightsError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("layer {layer}: expected shape {expected}, got {got}")]
    Shape {
        layer: String,
        expected: String,
        got: String,
    },
    #[error("layer {layer}: non-finite value at index {index}")]
    NonFinite { layer: String, index: usize },
}

fn schema(msg: impl Into<String>) -> WeightsError {
    WeightsError::Schema(msg.into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_channels: usize,
    pub filters: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub kernel: Vec<f64>,
    pub recurrent_kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: usize,
}

/// Validated parameters of the fixed architecture. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub lstm: Lstm,
    pub dense: Dense,
}

/// On-disk layer record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerDoc {
    name: String,
    kind: String,
    shape: BTreeMap<String, Value>,
    values: Vec<Value>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct WeightsDoc {
    arch: String,
    layers: Vec<LayerDoc>,
}

/// Expected layer order: (name, kind, tensor names in value order).
const LAYOUT: [(&str, &str, &[&str]); 6] = [
    ("conv1", "conv1d", &["kernel", "bias"]),
    ("pool1", "maxpool", &[]),
    ("conv2", "conv1d", &["kernel", "bias"]),
    ("pool2", "maxpool", &[]),
    ("lstm", "lstm", &["kernel", "recurrent_kernel", "bias"]),
    ("dense", "dense", &["kernel", "bias"]),
];

fn expected_dims(layer: &str) -> Vec<(&'static str, Vec<usize>)> {
    match layer {
        "conv1" => vec![
            ("kernel", vec![KERNEL, INPUT_CHANNELS, CONV1_FILTERS]),
            ("bias", vec![CONV1_FILTERS]),
        ],
        "conv2" => vec![
            ("kernel", vec![KERNEL, CONV1_FILTERS, CONV2_FILTERS]),
            ("bias", vec![CONV2_FILTERS]),
        ],
        "lstm" => vec![
            ("kernel", vec![CONV2_FILTERS, 4 * HIDDEN]),
            ("recurrent_kernel", vec![HIDDEN, 4 * HIDDEN]),
            ("bias", vec![4 * HIDDEN]),
        ],
        "dense" => vec![("kernel", vec![HIDDEN, 1]), ("bias", vec![1])],
        _ => Vec::new(),
    }
}

fn fmt_dims(d: &[usize]) -> String {
    let parts: Vec<String> = d.iter().map(usize::to_string).collect();
    format!("({})", parts.join(","))
}

fn parse_values(layer: &str, values: &[Value]) -> Result<Vec<f64>, WeightsError> {
    values
        .iter()
        .enumerate()
        .map(|(index, v)| {
            let x = match v {
                Value::Number(n) => n
                    .as_f64()
                    .ok_or_else(|| schema(format!("layer {layer}: bad number at {index}")))?,
                // Exporters that cannot write IEEE specials emit them as strings.
                Value::String(s) => s
                    .parse::<f64>()
                    .map_err(|_| schema(format!("layer {layer}: '{s}' is not a number")))?,
                other => {
                    return Err(schema(format!(
                        "layer {layer}: value {index} is {other}, not a number"
                    )))
                }
            };
            if x.is_finite() {
                Ok(x)
            } else {
                Err(WeightsError::NonFinite {
                    layer: layer.to_string(),
                    index,
                })
            }
        })
        .collect()
}

fn shape_dims(layer: &str, shape: &BTreeMap<String, Value>, key: &str) -> Result<Vec<usize>, WeightsError> {
    let v = shape
        .get(key)
        .ok_or_else(|| schema(format!("layer {layer}: shape lacks '{key}'")))?;
    let arr = v
        .as_array()
        .ok_or_else(|| schema(format!("layer {layer}: shape '{key}' is not a list")))?;
    arr.iter()
        .map(|d| {
            d.as_u64()
                .map(|d| d as usize)
                .ok_or_else(|| schema(format!("layer {layer}: shape '{key}' has a non-integer")))
        })
        .collect()
}

impl ModelWeights {
    /// Parses and validates a weight document.
    pub fn from_json(text: &str) -> Result<Self, WeightsError> {
        let doc: WeightsDoc = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
        if doc.arch != ARCH_TAG {
            return Err(schema(format!("arch '{}' is not {ARCH_TAG}", doc.arch)));
        }
        if doc.layers.len() != LAYOUT.len() {
            return Err(schema(format!(
                "expected {} layers, got {}",
                LAYOUT.len(),
                doc.layers.len()
            )));
        }
        let mut tensors: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
        for (layer, (name, kind, order)) in doc.layers.iter().zip(LAYOUT) {
            if layer.name != name || layer.kind != kind {
                return Err(schema(format!(
                    "expected layer {name} ({kind}), got {} ({})",
                    layer.name, layer.kind
                )));
            }
            if kind == "maxpool" {
                let size = layer.shape.get("pool_size").and_then(Value::as_u64);
                if size != Some(POOL as u64) {
                    return Err(WeightsError::Shape {
                        layer: name.into(),
                        expected: format!("pool_size {POOL}"),
                        got: format!("{:?}", layer.shape.get("pool_size")),
                    });
                }
                if !layer.values.is_empty() {
                    return Err(schema(format!("layer {name}: maxpool carries no values")));
                }
                continue;
            }
            let mut total = 0;
            for ((tensor, expected), key) in expected_dims(name).into_iter().zip(order.iter()) {
                debug_assert_eq!(tensor, *key);
                let got = shape_dims(name, &layer.shape, tensor)?;
                if got != expected {
                    return Err(WeightsError::Shape {
                        layer: name.into(),
                        expected: format!("{tensor} {}", fmt_dims(&expected)),
                        got: format!("{tensor} {}", fmt_dims(&got)),
                    });
                }
                total += expected.iter().product::<usize>();
            }
            if layer.values.len() != total {
                return Err(WeightsError::Shape {
                    layer: name.into(),
                    expected: format!("{total} values"),
                    got: format!("{} values", layer.values.len()),
                });
            }
            let flat = parse_values(name, &layer.values)?;
            let mut parts = Vec::new();
            let mut offset = 0;
            for (_, dims) in expected_dims(name) {
                let n: usize = dims.iter().product();
                parts.push(flat[offset..offset + n].to_vec());
                offset += n;
            }
            tensors.insert(name.to_string(), parts);
        }
        let mut take = |name: &str| tensors.remove(name).expect("validated above");
        let conv1 = take("conv1");
        let conv2 = take("conv2");
        let lstm = take("lstm");
        let dense = take("dense");
        Ok(Self {
            conv1: Conv1d {
                kernel: conv1[0].clone(),
                bias: conv1[1].clone(),
                in_channels: INPUT_CHANNELS,
                filters: CONV1_FILTERS,
            },
            conv2: Conv1d {
                kernel: conv2[0].clone(),
                bias: conv2[1].clone(),
                in_channels: CONV1_FILTERS,
                filters: CONV2_FILTERS,
            },
            lstm: Lstm {
                kernel: lstm[0].clone(),
                recurrent_kernel: lstm[1].clone(),
                bias: lstm[2].clone(),
                input: CONV2_FILTERS,
                hidden: HIDDEN,
            },
            dense: Dense {
                kernel: dense[0].clone(),
                bias: dense[1].clone(),
                input: HIDDEN,
            },
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, WeightsError> {
        let text = std::fs::read_to_string(path).map_err(|e| schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Renders the weight document.
    pub fn to_json(&self) -> String {
        let nums = |parts: &[&Vec<f64>]| -> Vec<Value> {
            parts.iter().flat_map(|p| p.iter()).map(|x| Value::from(*x)).collect()
        };
        let mut layers = Vec::new();
        for (name, kind, _) in LAYOUT {
            let mut shape = BTreeMap::new();
            let values = match name {
                "pool1" | "pool2" => {
                    shape.insert("pool_size".to_string(), Value::from(POOL));
                    Vec::new()
                }
                "conv1" => nums(&[&self.conv1.kernel, &self.conv1.bias]),
                "conv2" => nums(&[&self.conv2.kernel, &self.conv2.bias]),
                "lstm" => nums(&[&self.lstm.kernel, &self.lstm.recurrent_kernel, &self.lstm.bias]),
                _ => nums(&[&self.dense.kernel, &self.dense.bias]),
            };
            for (tensor, dims) in expected_dims(name) {
                shape.insert(tensor.to_string(), Value::from(dims));
            }
            layers.push(LayerDoc {
                name: name.into(),
                kind: kind.into(),
                shape,
                values,
            });
        }
        serde_json::to_string(&WeightsDoc {
            arch: ARCH_TAG.into(),
            layers,
        })
        .expect("weights serialize")
    }

    pub fn zeros() -> Self {
        Self::filled(|| 0.0)
    }

    /// Uniform weights in `[-scale, scale]` from a ChaCha8 stream.
    pub fn seeded(seed: u64, scale: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::filled(move || rng.random_range(-scale..=scale))
    }

    fn filled(mut f: impl FnMut() -> f64) -> Self {
        let mut v = |n: usize| (0..n).map(|_| f()).collect::<Vec<_>>();
        Self {
            conv1: Conv1d {
                kernel: v(KERNEL * INPUT_CHANNELS * CONV1_FILTERS),
                bias: v(CONV1_FILTERS),
                in_channels: INPUT_CHANNELS,
                filters: CONV1_FILTERS,
            },
            conv2: Conv1d {
                kernel: v(KERNEL * CONV1_FILTERS * CONV2_FILTERS),
                bias: v(CONV2_FILTERS),
                in_channels: CONV1_FILTERS,
                filters: CONV2_FILTERS,
            },
            lstm: Lstm {
                kernel: v(CONV2_FILTERS * 4 * HIDDEN),
                recurrent_kernel: v(HIDDEN * 4 * HIDDEN),
                bias: v(4 * HIDDEN),
                input: CONV2_FILTERS,
                hidden: HIDDEN,
            },
            dense: Dense {
                kernel: v(HIDDEN),
                bias: v(1),
                input: HIDDEN,
            },
        }
    }

    /// Window samples as a `len x 3` row-major sequence.
    fn input_rows(w: &Window) -> Vec<Vec<f64>> {
        w.samples.iter().map(|s| vec![s.x, s.y, s.z]).collect()
    }

    /// Output of conv1 + pool1 (64 x 16 for a full window).
    pub fn pool1_features(&self, w: &Window) -> Vec<Vec<f64>> {
        max_pool(&self.conv1.forward(&Self::input_rows(w)))
    }

    /// Sequence fed to the LSTM (32 x 32 for a full window).
    pub fn conv_features(&self, w: &Window) -> Vec<Vec<f64>> {
        max_pool(&self.conv2.forward(&self.pool1_features(w)))
    }

    /// Pre-sigmoid output.
    pub fn logit(&self, w: &Window) -> f64 {
        debug_assert_eq!(w.samples.len(), WINDOW_LEN);
        let h = self.lstm.last_hidden(&self.conv_features(w));
        self.dense.forward(&h)
    }

    pub fn infer(&self, w: &Window) -> FallScore {
        self.infer_with_threshold(w, DEFAULT_THRESHOLD)
    }

    pub fn infer_with_threshold(&self, w: &Window, threshold: f64) -> FallScore {
        FallScore::new(sigmoid(self.logit(w)), threshold, DetectorSource::NeuralModel, w.t_start)
    }
}

impl Conv1d {
    /// Same-padded stride-1 convolution followed by ReLU.
    fn forward(&self, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let pad = (KERNEL / 2) as isize;
        let len = input.len() as isize;
        (0..len)
            .map(|t| {
                let mut acc = self.bias.clone();
                for j in 0..KERNEL {
                    let src = t + j as isize - pad;
                    if src < 0 || src >= len {
                        continue;
                    }
                    let row = &input[src as usize];
                    for (c, &x) in row.iter().enumerate() {
                        if x == 0.0 {
                            continue;
                        }
                        let base = (j * self.in_channels + c) * self.filters;
                        let taps = &self.kernel[base..base + self.filters];
                        for (a, k) in acc.iter_mut().zip(taps) {
                            *a += x * k;
                        }
                    }
                }
                acc.iter_mut().for_each(|a| *a = a.max(0.0));
                acc
            })
            .collect()
    }
}

fn max_pool(input: &[Vec<f64>]) -> Vec<Vec<f64>> {
    input
        .chunks_exact(POOL)
        .map(|pair| {
            pair[0]
                .iter()
                .zip(&pair[1])
                .map(|(a, b)| a.max(*b))
                .collect()
        })
        .collect()
}

impl Lstm {
    fn last_hidden(&self, seq: &[Vec<f64>]) -> Vec<f64> {
        let n = self.hidden;
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut z = vec![0.0; 4 * n];
        for x in seq {
            z.copy_from_slice(&self.bias);
            for (i, &xi) in x.iter().enumerate() {
                let row = &self.kernel[i * 4 * n..(i + 1) * 4 * n];
                z.iter_mut().zip(row).for_each(|(a, w)| *a += xi * w);
            }
            for (i, &hi) in h.iter().enumerate() {
                let row = &self.recurrent_kernel[i * 4 * n..(i + 1) * 4 * n];
                z.iter_mut().zip(row).for_each(|(a, w)| *a += hi * w);
            }
            for u in 0..n {
                let input_gate = sigmoid(z[u]);
                let forget_gate = sigmoid(z[n + u]);
                let candidate = z[2 * n + u].tanh();
                let output_gate = sigmoid(z[3 * n + u]);
                c[u] = forget_gate * c[u] + input_gate * candidate;
                h[u] = output_gate * c[u].tanh();
            }
        }
        h
    }
}

impl Dense {
    fn forward(&self, x: &[f64]) -> f64 {
        self.bias[0] + x.iter().zip(&self.kernel).map(|(a, w)| a * w).sum::<f64>()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AccelSample;

    fn test_window(seed: u64) -> Window {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let samples = (0..WINDOW_LEN)
            .map(|i| {
                AccelSample::new(
                    i as i64 * 1000 / 32,
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                )
            })
            .collect();
        Window::new("p", samples)
    }

    fn with_layer<F: FnOnce(&mut Vec<Value>)>(json: &str, layer: &str, f: F) -> String {
        let mut doc: Value = serde_json::from_str(json).unwrap();
        let l = doc["layers"]
            .as_array_mut()
            .unwrap()
            .iter_mut()
            .find(|l| l["name"] == layer)
            .unwrap();
        f(l["values"].as_array_mut().unwrap());
        doc.to_string()
    }

    #[test]
    fn zero_network_outputs_one_half() {
        let m = ModelWeights::zeros();
        for seed in 0..3 {
            let s = m.infer(&test_window(seed));
            assert_eq!(s.probability, 0.5);
            assert!(s.is_fall);
            assert_eq!(s.source, DetectorSource::NeuralModel);
        }
    }

    #[test]
    fn bias_only_path() {
        let mut m = ModelWeights::zeros();
        m.dense.bias[0] = -1.3;
        let p = m.infer(&test_window(1)).probability;
        assert_eq!(p, sigmoid(-1.3));
        assert!(!m.infer(&test_window(1)).is_fall);
    }

    #[test]
    fn document_round_trips() {
        let m = ModelWeights::seeded(42, 0.3);
        let back = ModelWeights::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn reference_conv_shape_is_accepted() {
        let json = ModelWeights::zeros().to_json();
        assert!(json.contains(r#""kernel":[5,3,16]"#));
        ModelWeights::from_json(&json).unwrap();
    }

    #[test]
    fn wrong_kernel_shape_is_rejected() {
        let json = ModelWeights::zeros()
            .to_json()
            .replacen(r#""kernel":[5,3,16]"#, r#""kernel":[3,3,16]"#, 1);
        match ModelWeights::from_json(&json) {
            Err(WeightsError::Shape { layer, expected, got }) => {
                assert_eq!(layer, "conv1");
                assert_eq!(expected, "kernel (5,3,16)");
                assert_eq!(got, "kernel (3,3,16)");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn value_count_mismatch_is_a_shape_error() {
        let json = with_layer(&ModelWeights::zeros().to_json(), "dense", |v| {
            v.pop();
        });
        assert!(matches!(
            ModelWeights::from_json(&json),
            Err(WeightsError::Shape { layer, .. }) if layer == "dense"
        ));
    }

    #[test]
    fn nan_weight_is_rejected() {
        let json = with_layer(&ModelWeights::zeros().to_json(), "lstm", |v| {
            v[7] = Value::from("NaN");
        });
        assert_eq!(
            ModelWeights::from_json(&json),
            Err(WeightsError::NonFinite {
                layer: "lstm".into(),
                index: 7
            })
        );
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(ModelWeights::from_json("{"), Err(WeightsError::Schema(_))));
        let wrong_arch = ModelWeights::zeros().to_json().replace(ARCH_TAG, "other");
        assert!(matches!(ModelWeights::from_json(&wrong_arch), Err(WeightsError::Schema(_))));
        let wrong_order = ModelWeights::zeros().to_json().replacen("\"conv1\"", "\"convA\"", 1);
        assert!(matches!(ModelWeights::from_json(&wrong_order), Err(WeightsError::Schema(_))));
        let text_value = with_layer(&ModelWeights::zeros().to_json(), "conv2", |v| {
            v[0] = Value::from("abc");
        });
        assert!(matches!(ModelWeights::from_json(&text_value), Err(WeightsError::Schema(_))));
    }

    #[test]
    fn inference_is_bit_deterministic() {
        let m = ModelWeights::seeded(7, 0.4);
        let w = test_window(9);
        let a = m.infer(&w).probability;
        let b = m.clone().infer(&w.clone()).probability;
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn probability_is_monotone_in_dense_bias() {
        let mut m = ModelWeights::seeded(3, 0.4);
        let w = test_window(4);
        let mut last = 0.0;
        for b in [-3.0, -1.0, 0.0, 0.5, 2.0] {
            m.dense.bias[0] = b;
            let p = m.infer(&w).probability;
            assert!(p > last);
            last = p;
        }
    }

    fn shifted(w: &Window, by: usize) -> Window {
        let mut samples = w.samples.clone();
        samples.rotate_right(by);
        for s in samples.iter_mut().take(by) {
            *s = AccelSample::new(s.t, 0.0, 0.0, 0.0);
        }
        Window::new("p", samples)
    }

    #[test]
    fn conv_stack_is_shift_covariant() {
        let m = ModelWeights::seeded(11, 0.5);
        let w = test_window(12);
        // Two input samples move pool1 rows by one.
        let base = m.pool1_features(&w);
        let moved = m.pool1_features(&shifted(&w, 2));
        for r in 4..60 {
            for (a, b) in base[r].iter().zip(&moved[r + 1]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        // Four input samples move the LSTM input rows by one.
        let base = m.conv_features(&w);
        let moved = m.conv_features(&shifted(&w, 4));
        for r in 3..29 {
            for (a, b) in base[r].iter().zip(&moved[r + 1]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
