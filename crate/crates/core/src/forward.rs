//! Dual symbolic forward pass and the fair / unfair / undecided decision.
//!
//! The partition is analysed twice, once with the protected attribute pinned
//! to 0 and once pinned to 1. Each pass yields a concrete output range; the
//! verdict compares both ranges against the classification threshold:
//!
//! | `O`            | `O'`           | verdict   |
//! |----------------|----------------|-----------|
//! | `lo > t`       | `lo > t`       | fair      |
//! | `hi < t`       | `hi < t`       | fair      |
//! | `lo > t`       | `hi < t`       | unfair    |
//! | `hi < t`       | `lo > t`       | unfair    |
//! | anything else  |                | undecided |

use serde::{Deserialize, Serialize};

use crate::interval::Interval;
use crate::model::{Activation, Network, Partition};
use crate::scalar::Scalar;
use crate::symbolic::{affine_transform, relu_relax, ActivationMask, ShapeError, SymbolicInterval};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Fair,
    Unfair,
    Undecided,
}

/// Result of one symbolic pass over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass<S> {
    pub output: SymbolicInterval<S>,
    pub concrete: Interval<S>,
    pub masks: ActivationMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutcome<S> {
    pub verdict: Verdict,
    /// Output range with the protected attribute at 0.
    pub output: Interval<S>,
    /// Output range with the protected attribute at 1.
    pub output_prime: Interval<S>,
    pub masks: ActivationMask,
    pub masks_prime: ActivationMask,
}

/// Layer-by-layer symbolic propagation over `bounds`.
pub fn forward_pass<S: Scalar>(net: &Network<S>, bounds: &[Interval<S>]) -> Result<ForwardPass<S>, ShapeError> {
    if bounds.len() != net.input_dim() {
        return Err(ShapeError {
            expected: net.input_dim(),
            found: bounds.len(),
        });
    }
    let mut current = SymbolicInterval::inputs(bounds);
    let mut masks = Vec::with_capacity(net.hidden_layers());
    for layer in net.layers() {
        let pre = affine_transform(&current, layer)?;
        current = match layer.activation() {
            Activation::Linear => pre,
            Activation::Relu => {
                let (post, states): (Vec<_>, Vec<_>) = pre.iter().map(|s| relu_relax(s, bounds)).unzip();
                masks.push(states);
                post
            }
        };
    }
    let output = current.swap_remove(0);
    let concrete = output.concretize(bounds);
    Ok(ForwardPass {
        output,
        concrete,
        masks,
    })
}

/// Verdict from the two output ranges; all comparisons are strict.
pub fn decide<S: Scalar>(o: Interval<S>, o_prime: Interval<S>, threshold: S) -> Verdict {
    let pos = |i: &Interval<S>| i.lo > threshold;
    let neg = |i: &Interval<S>| i.hi < threshold;
    if (pos(&o) && pos(&o_prime)) || (neg(&o) && neg(&o_prime)) {
        Verdict::Fair
    } else if (pos(&o) && neg(&o_prime)) || (neg(&o) && pos(&o_prime)) {
        Verdict::Unfair
    } else {
        Verdict::Undecided
    }
}

/// Bounds of `partition` in the analysis scalar with the protected attribute
/// pinned to `value`.
pub fn pinned_bounds<S: Scalar>(partition: &Partition, protected: usize, value: f64) -> Vec<Interval<S>> {
    partition
        .bounds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == protected {
                Interval::point(S::of(value))
            } else {
                Interval::new(S::of(b.lo), S::of(b.hi))
            }
        })
        .collect()
}

/// Analyses `partition` for both values of the protected attribute.
pub fn symbolic_forward<S: Scalar>(
    net: &Network<S>,
    protected: usize,
    partition: &Partition,
) -> Result<ForwardOutcome<S>, ShapeError> {
    let a = forward_pass(net, &pinned_bounds(partition, protected, 0.0))?;
    let b = forward_pass(net, &pinned_bounds(partition, protected, 1.0))?;
    Ok(ForwardOutcome {
        verdict: decide(a.concrete, b.concrete, net.threshold()),
        output: a.concrete,
        output_prime: b.concrete,
        masks: a.masks,
        masks_prime: b.masks,
    })
}
