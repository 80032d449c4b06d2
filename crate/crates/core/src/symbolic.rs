//! Symbolic intervals: pairs of linear expressions over the input attributes
//! that bound a neuron's value on an input box.

use serde::{Deserialize, Serialize};

use crate::interval::Interval;
use crate::model::Layer;
use crate::scalar::Scalar;

/// `constant + Σ coeffs[i] · x_i`
#[derive(Clone, Debug, PartialEq)]
pub struct LinearExpr<S> {
    pub coeffs: Vec<S>,
    pub constant: S,
}

impl<S: Scalar> LinearExpr<S> {
    pub fn zero(dim: usize) -> Self {
        Self {
            coeffs: vec![S::zero(); dim],
            constant: S::zero(),
        }
    }

    pub fn constant(dim: usize, c: S) -> Self {
        Self {
            coeffs: vec![S::zero(); dim],
            constant: c,
        }
    }

    /// The expression `x_i`.
    pub fn variable(dim: usize, i: usize) -> Self {
        let mut e = Self::zero(dim);
        e.coeffs[i] = S::one();
        e
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, x: &[S]) -> S {
        self.coeffs
            .iter()
            .zip(x)
            .fold(self.constant, |acc, (&c, &v)| acc + c * v)
    }

    pub fn scale(&self, k: S) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&c| c * k).collect(),
            constant: self.constant * k,
        }
    }

    /// `self += k · other`
    pub fn add_scaled(&mut self, k: S, other: &Self) {
        for (c, &o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c = *c + k * o;
        }
        self.constant = self.constant + k * other.constant;
    }

    pub fn is_zero(&self) -> bool {
        self.constant == S::zero() && self.coeffs.iter().all(|c| *c == S::zero())
    }
}

/// Tightest interval containing `e(x)` for every `x` in the box.
pub fn concretize<S: Scalar>(e: &LinearExpr<S>, bounds: &[Interval<S>]) -> Interval<S> {
    let mut lo = e.constant;
    let mut hi = e.constant;
    for (&c, b) in e.coeffs.iter().zip(bounds) {
        if c > S::zero() {
            lo = lo + c * b.lo;
            hi = hi + c * b.hi;
        } else if c < S::zero() {
            lo = lo + c * b.hi;
            hi = hi + c * b.lo;
        }
    }
    Interval::new(lo, hi)
}

/// Lower and upper linear bounds on one neuron.
#[derive(Clone, Debug, PartialEq)]
pub struct SymbolicInterval<S> {
    pub lo: LinearExpr<S>,
    pub up: LinearExpr<S>,
}

impl<S: Scalar> SymbolicInterval<S> {
    pub fn exact(e: LinearExpr<S>) -> Self {
        Self { lo: e.clone(), up: e }
    }

    /// Symbolic inputs for a box. Point-width attributes enter as constants,
    /// so a collapsed protected attribute contributes only its fixed value.
    pub fn inputs(bounds: &[Interval<S>]) -> Vec<Self> {
        let dim = bounds.len();
        bounds
            .iter()
            .enumerate()
            .map(|(i, b)| {
                if b.lo == b.hi {
                    Self::exact(LinearExpr::constant(dim, b.lo))
                } else {
                    Self::exact(LinearExpr::variable(dim, i))
                }
            })
            .collect()
    }

    /// Concrete range: lower end from `lo`, upper end from `up`.
    pub fn concretize(&self, bounds: &[Interval<S>]) -> Interval<S> {
        Interval::new(concretize(&self.lo, bounds).lo, concretize(&self.up, bounds).hi)
    }
}

/// ReLU state of a hidden neuron over a box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationState {
    /// `[0, 0]`: never fires.
    Inactive,
    /// `[1, 1]`: always fires.
    Active,
    /// `[0, 1]`
    Unknown,
}

impl ActivationState {
    pub fn from_range<S: Scalar>(pre: Interval<S>) -> Self {
        if pre.hi <= S::zero() {
            Self::Inactive
        } else if pre.lo >= S::zero() {
            Self::Active
        } else {
            Self::Unknown
        }
    }

    /// Range of the ReLU derivative as an interval.
    pub fn as_interval<S: Scalar>(self) -> Interval<S> {
        match self {
            Self::Inactive => Interval::zero(),
            Self::Active => Interval::point(S::one()),
            Self::Unknown => Interval::new(S::zero(), S::one()),
        }
    }
}

/// Per hidden layer, per neuron activation states.
pub type ActivationMask = Vec<Vec<ActivationState>>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("layer expects {expected} inputs, got {found}")]
pub struct ShapeError {
    pub expected: usize,
    pub found: usize,
}

/// Pushes symbolic intervals through `W·x + b` without the activation.
///
/// Positive weights pair upper with upper; negative weights pair upper with lower.
pub fn affine_transform<S: Scalar>(
    inputs: &[SymbolicInterval<S>],
    layer: &Layer<S>,
) -> Result<Vec<SymbolicInterval<S>>, ShapeError> {
    if inputs.len() != layer.inputs() {
        return Err(ShapeError {
            expected: layer.inputs(),
            found: inputs.len(),
        });
    }
    let dim = inputs.first().map_or(0, |s| s.lo.dim());
    Ok((0..layer.outputs())
        .map(|k| {
            let b = layer.bias()[k];
            let mut lo = LinearExpr::constant(dim, b);
            let mut up = LinearExpr::constant(dim, b);
            for (&w, s) in layer.row(k).iter().zip(inputs) {
                if w > S::zero() {
                    lo.add_scaled(w, &s.lo);
                    up.add_scaled(w, &s.up);
                } else if w < S::zero() {
                    lo.add_scaled(w, &s.up);
                    up.add_scaled(w, &s.lo);
                }
            }
            SymbolicInterval { lo, up }
        })
        .collect())
}

/// Sound linear relaxation of ReLU.
///
/// With pre-activation range `[l, u]` straddling zero and `λ = u / (u - l)`,
/// the result is `[λ·lo, λ·up - λ·l]`. Stable neurons pass through exactly
/// (active) or collapse to zero (inactive).
pub fn relu_relax<S: Scalar>(
    s: &SymbolicInterval<S>,
    bounds: &[Interval<S>],
) -> (SymbolicInterval<S>, ActivationState) {
    let pre = s.concretize(bounds);
    let state = ActivationState::from_range(pre);
    let out = match state {
        ActivationState::Inactive => SymbolicInterval::exact(LinearExpr::zero(s.lo.dim())),
        ActivationState::Active => s.clone(),
        ActivationState::Unknown => {
            let (l, u) = (pre.lo, pre.hi);
            let lambda = u / (u - l);
            let lo = s.lo.scale(lambda);
            let mut up = s.up.scale(lambda);
            up.constant = up.constant - lambda * l;
            SymbolicInterval { lo, up }
        }
    };
    (out, state)
}
