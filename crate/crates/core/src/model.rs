//! Networks, input domains and partitions.
//!
//! A [`Network`] is a stack of dense layers: every hidden layer is followed by
//! a ReLU and the final layer is a single linear output neuron whose score is
//! compared against a threshold. Labels are positive iff `score > threshold`.
//!
//! A [`DomainSpec`] describes the box of admissible inputs, one bounded
//! attribute per network input, exactly one of which is the binary protected
//! attribute. A [`Partition`] is an axis-aligned sub-box of the domain.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::Interval;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("network has no layers")]
    Empty,
    #[error("input_dim must be at least 1")]
    ZeroInputDim,
    #[error("layer {layer}: expected {expected} input columns, found {found} in row {row}")]
    DimensionMismatch {
        layer: usize,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: has no output neurons")]
    EmptyLayer { layer: usize },
    #[error("layer {layer}: bias has {found} entries for {expected} neurons")]
    BiasLength {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("layer {layer}: non-finite {what}")]
    NonFinite { layer: usize, what: String },
    #[error("layer {layer}: unsupported activation `{name}` (expected relu or linear)")]
    UnsupportedActivation { layer: usize, name: String },
    #[error("layer {layer}: hidden layers must use relu")]
    HiddenNotRelu { layer: usize },
    #[error("layer {layer}: final layer must be one linear output neuron ({detail})")]
    FinalLayer { layer: usize, detail: String },
    #[error("threshold is not finite")]
    NonFiniteThreshold,
    #[error("input has {found} values, network expects {expected}")]
    InputLength { expected: usize, found: usize },
}

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("cannot read {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed domain file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("domain has no attributes")]
    Empty,
    #[error("duplicate attribute name `{0}`")]
    DuplicateName(String),
    #[error("unknown protected attribute `{0}`")]
    UnknownProtected(String),
    #[error("protected attribute `{0}` must be binary")]
    ProtectedNotBinary(String),
    #[error("attribute `{name}`: lower bound {lb} exceeds upper bound {ub}")]
    InvertedBounds { name: String, lb: f64, ub: f64 },
    #[error("attribute `{name}`: bounds must be finite")]
    NonFiniteBounds { name: String },
    #[error("attribute `{name}`: binary attributes have bounds [0, 1]")]
    BinaryBounds { name: String },
    #[error("attribute `{name}`: integer attributes need whole-number bounds")]
    FractionalBounds { name: String },
    #[error("network takes {network} inputs but domain declares {domain} attributes")]
    DimensionMismatch { network: usize, domain: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    fn parse(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Self::Relu),
            "linear" => Some(Self::Linear),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Linear => "linear",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// Dense layer. Weights are row-major: row `k` holds the incoming weights of
/// output neuron `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<S> {
    weights: Vec<S>,
    bias: Vec<S>,
    inputs: usize,
    activation: Activation,
}

impl<S: Scalar> Layer<S> {
    /// Builds a layer from rows of weights. Bias defaults to zero.
    pub fn new(rows: Vec<Vec<S>>, bias: Option<Vec<S>>, activation: Activation) -> Self {
        let inputs = rows.first().map_or(0, Vec::len);
        let outputs = rows.len();
        Self {
            weights: rows.into_iter().flatten().collect(),
            bias: bias.unwrap_or_else(|| vec![S::zero(); outputs]),
            inputs,
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn row(&self, k: usize) -> &[S] {
        &self.weights[k * self.inputs..(k + 1) * self.inputs]
    }

    pub fn weight(&self, k: usize, j: usize) -> S {
        self.weights[k * self.inputs + j]
    }

    pub fn bias(&self) -> &[S] {
        &self.bias
    }

    fn apply(&self, x: &[S]) -> Vec<S> {
        (0..self.outputs())
            .map(|k| {
                let z = self
                    .row(k)
                    .iter()
                    .zip(x)
                    .fold(self.bias[k], |acc, (&w, &v)| acc + w * v);
                match self.activation {
                    Activation::Relu => z.max(S::zero()),
                    Activation::Linear => z,
                }
            })
            .collect()
    }
}

/// Output of [`Network::evaluate`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation<S> {
    pub score: S,
    pub label: Label,
}

/// Feedforward ReLU classifier with a single scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<S = f64> {
    input_dim: usize,
    threshold: S,
    layers: Vec<Layer<S>>,
}

impl<S: Scalar> Network<S> {
    /// Validates the layer stack and builds a network.
    pub fn new(input_dim: usize, threshold: S, layers: Vec<Layer<S>>) -> Result<Self, ModelError> {
        if input_dim == 0 {
            return Err(ModelError::ZeroInputDim);
        }
        if layers.is_empty() {
            return Err(ModelError::Empty);
        }
        if !threshold.is_finite() {
            return Err(ModelError::NonFiniteThreshold);
        }
        let last = layers.len() - 1;
        let mut expected = input_dim;
        for (li, layer) in layers.iter().enumerate() {
            if layer.outputs() == 0 {
                return Err(ModelError::EmptyLayer { layer: li });
            }
            if layer.inputs != expected || layer.weights.len() != layer.outputs() * expected {
                return Err(ModelError::DimensionMismatch {
                    layer: li,
                    row: 0,
                    expected,
                    found: layer.inputs,
                });
            }
            if let Some(pos) = layer.weights.iter().position(|w| !w.is_finite()) {
                return Err(ModelError::NonFinite {
                    layer: li,
                    what: format!("weight at row {}, column {}", pos / expected, pos % expected),
                });
            }
            if let Some(pos) = layer.bias.iter().position(|b| !b.is_finite()) {
                return Err(ModelError::NonFinite {
                    layer: li,
                    what: format!("bias at index {pos}"),
                });
            }
            if li == last {
                if layer.outputs() != 1 {
                    return Err(ModelError::FinalLayer {
                        layer: li,
                        detail: format!("found {} neurons", layer.outputs()),
                    });
                }
                if layer.activation != Activation::Linear {
                    return Err(ModelError::FinalLayer {
                        layer: li,
                        detail: format!("found {} activation", layer.activation.name()),
                    });
                }
            } else if layer.activation != Activation::Relu {
                return Err(ModelError::HiddenNotRelu { layer: li });
            }
            expected = layer.outputs();
        }
        Ok(Self {
            input_dim,
            threshold,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn threshold(&self) -> S {
        self.threshold
    }

    pub fn layers(&self) -> &[Layer<S>] {
        &self.layers
    }

    /// Number of hidden (ReLU) layers.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn classify(&self, score: S) -> Label {
        if score > self.threshold {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// Exact forward pass on a concrete input.
    pub fn evaluate(&self, x: &[S]) -> Result<Evaluation<S>, ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::InputLength {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let score = self.score(x);
        Ok(Evaluation {
            score,
            label: self.classify(score),
        })
    }

    pub(crate) fn score(&self, x: &[S]) -> S {
        let mut v = x.to_vec();
        for layer in &self.layers {
            v = layer.apply(&v);
        }
        v[0]
    }

    /// Pre-activation values of every hidden neuron at `x`, layer by layer.
    pub fn hidden_preactivations(&self, x: &[S]) -> Result<Vec<Vec<S>>, ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::InputLength {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.hidden_layers());
        let mut v = x.to_vec();
        for layer in &self.layers[..self.hidden_layers()] {
            let pre: Vec<S> = (0..layer.outputs())
                .map(|k| {
                    layer
                        .row(k)
                        .iter()
                        .zip(&v)
                        .fold(layer.bias[k], |acc, (&w, &xv)| acc + w * xv)
                })
                .collect();
            v = pre.iter().map(|z| z.max(S::zero())).collect();
            out.push(pre);
        }
        Ok(out)
    }

    /// Parses and validates the JSON network format.
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: NetworkFile = serde_json::from_str(text)?;
        file.into_network()
    }

    pub fn to_json(&self) -> String {
        let file = NetworkFile {
            input_dim: self.input_dim,
            threshold: self.threshold.to_f64_lossy(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    weights: (0..l.outputs())
                        .map(|k| l.row(k).iter().map(|w| JsonNum::Num(w.to_f64_lossy())).collect())
                        .collect(),
                    bias: Some(l.bias.iter().map(|b| JsonNum::Num(b.to_f64_lossy())).collect()),
                    activation: l.activation.name().to_string(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("network serialization is infallible")
    }

    /// Same network in another scalar type.
    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            input_dim: self.input_dim,
            threshold: T::of(self.threshold.to_f64_lossy()),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.iter().map(|w| T::of(w.to_f64_lossy())).collect(),
                    bias: l.bias.iter().map(|b| T::of(b.to_f64_lossy())).collect(),
                    inputs: l.inputs,
                    activation: l.activation,
                })
                .collect(),
        }
    }
}

/// Loads and validates a network file.
pub fn load_network<S: Scalar>(path: impl AsRef<Path>) -> Result<Network<S>, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Network::from_json(&text)
}

/// A JSON number, or a string spelling one (`"NaN"`, `"inf"`), so that
/// non-finite values surface as validation errors with a layer index rather
/// than as opaque parse failures.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum JsonNum {
    Num(f64),
    Text(String),
}

impl JsonNum {
    fn value(&self) -> f64 {
        match self {
            Self::Num(v) => *v,
            Self::Text(s) => s.trim().parse().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    input_dim: usize,
    #[serde(default)]
    threshold: f64,
    layers: Vec<LayerFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    weights: Vec<Vec<JsonNum>>,
    #[serde(default)]
    bias: Option<Vec<JsonNum>>,
    activation: String,
}

impl NetworkFile {
    fn into_network<S: Scalar>(self) -> Result<Network<S>, ModelError> {
        let mut expected = self.input_dim;
        let mut layers = Vec::with_capacity(self.layers.len());
        for (li, lf) in self.layers.into_iter().enumerate() {
            let activation = Activation::parse(&lf.activation).ok_or_else(|| ModelError::UnsupportedActivation {
                layer: li,
                name: lf.activation.clone(),
            })?;
            for (row, r) in lf.weights.iter().enumerate() {
                if r.len() != expected {
                    return Err(ModelError::DimensionMismatch {
                        layer: li,
                        row,
                        expected,
                        found: r.len(),
                    });
                }
            }
            let outputs = lf.weights.len();
            if let Some(b) = &lf.bias {
                if b.len() != outputs {
                    return Err(ModelError::BiasLength {
                        layer: li,
                        expected: outputs,
                        found: b.len(),
                    });
                }
            }
            let rows: Vec<Vec<S>> = lf
                .weights
                .iter()
                .map(|r| r.iter().map(|w| S::of(w.value())).collect())
                .collect();
            let bias = lf.bias.map(|b| b.iter().map(|v| S::of(v.value())).collect());
            let mut layer = Layer::new(rows, bias, activation);
            layer.inputs = expected;
            layers.push(layer);
            expected = outputs;
        }
        if !self.threshold.is_finite() {
            return Err(ModelError::NonFiniteThreshold);
        }
        Network::new(self.input_dim, S::of(self.threshold), layers)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Integer,
    Real,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub kind: AttributeKind,
    pub lb: f64,
    pub ub: f64,
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, kind: AttributeKind, lb: f64, ub: f64) -> Self {
        Self {
            name: name.into(),
            kind,
            lb,
            ub,
        }
    }

    fn validate(&self) -> Result<(), DomainError> {
        if !self.lb.is_finite() || !self.ub.is_finite() {
            return Err(DomainError::NonFiniteBounds {
                name: self.name.clone(),
            });
        }
        if self.lb > self.ub {
            return Err(DomainError::InvertedBounds {
                name: self.name.clone(),
                lb: self.lb,
                ub: self.ub,
            });
        }
        match self.kind {
            AttributeKind::Binary if self.lb != 0.0 || self.ub != 1.0 => Err(DomainError::BinaryBounds {
                name: self.name.clone(),
            }),
            AttributeKind::Integer if self.lb.fract() != 0.0 || self.ub.fract() != 0.0 => {
                Err(DomainError::FractionalBounds {
                    name: self.name.clone(),
                })
            }
            _ => Ok(()),
        }
    }
}

/// The input domain: one attribute per network input plus the protected index.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    attributes: Vec<AttributeSpec>,
    protected: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DomainFile {
    attributes: Vec<AttributeSpec>,
    protected: String,
}

impl DomainSpec {
    pub fn new(attributes: Vec<AttributeSpec>, protected: &str) -> Result<Self, DomainError> {
        if attributes.is_empty() {
            return Err(DomainError::Empty);
        }
        for (i, a) in attributes.iter().enumerate() {
            if attributes[..i].iter().any(|b| b.name == a.name) {
                return Err(DomainError::DuplicateName(a.name.clone()));
            }
        }
        let idx = attributes
            .iter()
            .position(|a| a.name == protected)
            .ok_or_else(|| DomainError::UnknownProtected(protected.to_string()))?;
        for a in &attributes {
            a.validate()?;
        }
        if attributes[idx].kind != AttributeKind::Binary {
            return Err(DomainError::ProtectedNotBinary(protected.to_string()));
        }
        Ok(Self {
            attributes,
            protected: idx,
        })
    }

    /// Parses the JSON domain format; `protected` overrides the file's choice.
    pub fn from_json(text: &str, protected: Option<&str>) -> Result<Self, DomainError> {
        let file: DomainFile = serde_json::from_str(text)?;
        Self::new(file.attributes, protected.unwrap_or(&file.protected))
    }

    pub fn to_json(&self) -> String {
        let file = DomainFile {
            attributes: self.attributes.clone(),
            protected: self.protected_attribute().name.clone(),
        };
        serde_json::to_string_pretty(&file).expect("domain serialization is infallible")
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn protected_index(&self) -> usize {
        self.protected
    }

    pub fn protected_attribute(&self) -> &AttributeSpec {
        &self.attributes[self.protected]
    }

    pub fn kind(&self, i: usize) -> AttributeKind {
        self.attributes[i].kind
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    /// Fails unless the network consumes exactly one value per attribute.
    pub fn check_network<S: Scalar>(&self, net: &Network<S>) -> Result<(), DomainError> {
        if net.input_dim() != self.len() {
            return Err(DomainError::DimensionMismatch {
                network: net.input_dim(),
                domain: self.len(),
            });
        }
        Ok(())
    }
}

pub fn load_domain(path: impl AsRef<Path>, protected: Option<&str>) -> Result<DomainSpec, DomainError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| DomainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    DomainSpec::from_json(&text, protected)
}

/// Axis-aligned sub-box of the domain with its refinement depth.
///
/// `key` identifies the partition's position in the refinement tree and seeds
/// its private sampling stream, so results do not depend on visit order.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub bounds: Vec<Interval<f64>>,
    pub depth: u32,
    pub key: u64,
}

impl Partition {
    /// The whole domain at depth 0.
    pub fn root(domain: &DomainSpec, seed: u64) -> Self {
        Self {
            bounds: domain.attributes.iter().map(|a| Interval::new(a.lb, a.ub)).collect(),
            depth: 0,
            key: mix64(seed ^ 0x6a09_e667_f3bc_c908),
        }
    }

    /// Copy of this partition with attribute `i` restricted to `bounds`.
    pub fn with_bounds(&self, i: usize, bounds: Interval<f64>) -> Self {
        let mut p = self.clone();
        p.bounds[i] = bounds;
        p
    }

    pub(crate) fn child(&self, i: usize, bounds: Interval<f64>, upper: bool) -> Self {
        let mut p = self.with_bounds(i, bounds);
        p.depth = self.depth + 1;
        p.key = mix64(self.key.wrapping_add(if upper { 0x9e37_79b9 } else { 0x7f4a_7c15 }));
        p
    }

    /// Number of concrete points of a fully discrete partition, excluding the
    /// protected attribute. `None` if some unprotected attribute is real.
    pub fn discrete_points(&self, domain: &DomainSpec) -> Option<u128> {
        let mut n: u128 = 1;
        for (i, b) in self.bounds.iter().enumerate() {
            if i == domain.protected_index() {
                continue;
            }
            match domain.kind(i) {
                AttributeKind::Real => return None,
                _ => n = n.saturating_mul((b.hi - b.lo) as u128 + 1),
            }
        }
        Some(n)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len() && self.bounds.iter().zip(x).all(|(b, &v)| b.contains(v))
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "depth {}:", self.depth)?;
        for b in &self.bounds {
            write!(f, " {b}")?;
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
