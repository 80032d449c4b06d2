//! Reference inputs: the three-input hiring network with its integer domain,
//! plus generators of random networks and discrete domains for property tests.

use rand::Rng;

use crate::model::{Activation, AttributeKind, AttributeSpec, DomainSpec, Layer, Network};

/// Hiring network: inputs (interview score, gender, years of experience),
/// hidden layer of two ReLUs, linear output.
pub const RUNNING_EXAMPLE_JSON: &str = r#"{
  "input_dim": 3,
  "threshold": 0.0,
  "layers": [
    {"weights": [[2.0, 0.5, 1.2], [-0.2, 0.7, 0.4]], "bias": [0.0, 0.0], "activation": "relu"},
    {"weights": [[0.2, -1.0]], "bias": [0.0], "activation": "linear"}
  ]
}"#;

/// x1 ∈ {1..5}, protected x2 ∈ {0, 1}, x3 ∈ {0..5}.
pub const RUNNING_EXAMPLE_DOMAIN_JSON: &str = r#"{
  "attributes": [
    {"name": "x1", "kind": "integer", "lb": 1, "ub": 5},
    {"name": "x2", "kind": "binary", "lb": 0, "ub": 1},
    {"name": "x3", "kind": "integer", "lb": 0, "ub": 5}
  ],
  "protected": "x2"
}"#;

pub fn running_example_network() -> Network {
    Network::from_json(RUNNING_EXAMPLE_JSON).expect("fixture network is valid")
}

pub fn running_example_domain() -> DomainSpec {
    DomainSpec::from_json(RUNNING_EXAMPLE_DOMAIN_JSON, None).expect("fixture domain is valid")
}

/// Network computing `bias + Σ w_i x_i` through a single pass-through ReLU
/// layer that never changes the sign structure: the hidden layer holds
/// `max(0, ±(...))` pairs so the output is exactly linear.
pub fn linear_network(weights: &[f64], bias: f64) -> Network {
    let dim = weights.len();
    let pos: Vec<f64> = weights.to_vec();
    let neg: Vec<f64> = weights.iter().map(|w| -w).collect();
    Network::new(
        dim,
        0.0,
        vec![
            Layer::new(vec![pos, neg], Some(vec![bias, -bias]), Activation::Relu),
            Layer::new(vec![vec![1.0, -1.0]], None, Activation::Linear),
        ],
    )
    .expect("linear fixture is valid")
}

/// Random ReLU network with the given hidden widths and weights uniform in
/// `[-scale, scale]`. Biases are drawn from the same range.
pub fn random_network<R: Rng>(rng: &mut R, input_dim: usize, hidden: &[usize], scale: f64) -> Network {
    let mut layers = Vec::with_capacity(hidden.len() + 1);
    let mut fan_in = input_dim;
    for (i, &width) in hidden.iter().chain(std::iter::once(&1)).enumerate() {
        let rows = (0..width)
            .map(|_| (0..fan_in).map(|_| rng.random_range(-scale..=scale)).collect())
            .collect();
        let bias = (0..width).map(|_| rng.random_range(-scale..=scale)).collect();
        let act = if i == hidden.len() {
            Activation::Linear
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(rows, Some(bias), act));
        fan_in = width;
    }
    Network::new(input_dim, 0.0, layers).expect("random network is valid")
}

/// Discrete domain with `values[i]` integer grid points for each unprotected
/// attribute and the protected binary attribute at `protected`.
pub fn integer_domain(values: &[u32], protected: usize) -> DomainSpec {
    let mut attrs = Vec::with_capacity(values.len() + 1);
    let mut it = values.iter();
    for i in 0..=values.len() {
        if i == protected {
            attrs.push(AttributeSpec::new("pa", AttributeKind::Binary, 0.0, 1.0));
        } else {
            let n = *it.next().expect("value count");
            attrs.push(AttributeSpec::new(
                format!("a{i}"),
                AttributeKind::Integer,
                0.0,
                f64::from(n.max(1) - 1),
            ));
        }
    }
    DomainSpec::new(attrs, "pa").expect("generated domain is valid")
}

/// Domain of real attributes, each on `[lb, ub]`, plus a binary protected one.
pub fn real_domain(bounds: &[(f64, f64)], protected: usize) -> DomainSpec {
    let mut attrs = Vec::with_capacity(bounds.len() + 1);
    let mut it = bounds.iter();
    for i in 0..=bounds.len() {
        if i == protected {
            attrs.push(AttributeSpec::new("pa", AttributeKind::Binary, 0.0, 1.0));
        } else {
            let &(lb, ub) = it.next().expect("bound count");
            attrs.push(AttributeSpec::new(format!("r{i}"), AttributeKind::Real, lb, ub));
        }
    }
    DomainSpec::new(attrs, "pa").expect("generated domain is valid")
}
