//! Refinement of undecided partitions: early termination, counterexample
//! sampling, interval gradients, smear-based attribute choice and bisection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::ForwardOutcome;
use crate::interval::Interval;
use crate::model::{mix64, AttributeKind, DomainSpec, Network, Partition};
use crate::scalar::Scalar;
use crate::symbolic::{ActivationMask, ShapeError};

/// Real attributes narrower than this are not split further.
pub const MIN_REAL_WIDTH: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RefineError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("mask has {found} entries for layer {layer} of width {expected}")]
    MaskShape {
        layer: usize,
        expected: usize,
        found: usize,
    },
    #[error("attribute {0} cannot be bisected")]
    Unsplittable(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("min_sample_depth ({min}) exceeds max_refinement_depth ({max})")]
    SampleDepth { min: u32, max: u32 },
    #[error("timeout must be positive")]
    Timeout,
    #[error("at least one worker is required")]
    NoWorkers,
    #[error("deterministic mode runs on exactly one worker")]
    DeterministicWorkers,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_refinement_depth: u32,
    pub min_sample_depth: u32,
    pub samples_per_check: u32,
    pub rng_seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_refinement_depth: 20,
            min_sample_depth: 15,
            samples_per_check: 10,
            rng_seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.min_sample_depth > self.max_refinement_depth {
            return Err(ConfigError::SampleDepth {
                min: self.min_sample_depth,
                max: self.max_refinement_depth,
            });
        }
        Ok(())
    }
}

/// Per-input interval bounds on the output gradient.
pub type GradientInterval<S> = Vec<Interval<S>>;

/// A pair differing only in the protected attribute that the network labels
/// differently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub x_prime: Vec<f64>,
    pub score: f64,
    pub score_prime: f64,
}

impl Counterexample {
    /// Re-evaluates both inputs and checks the labels really differ.
    pub fn verify<S: Scalar>(&self, net: &Network<S>) -> bool {
        let eval = |x: &[f64]| {
            let xs: Vec<S> = x.iter().map(|&v| S::of(v)).collect();
            net.evaluate(&xs).map(|e| e.label)
        };
        matches!((eval(&self.x), eval(&self.x_prime)), (Ok(a), Ok(b)) if a != b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplitResult {
    Split(Partition, Partition),
    StoppedMaxDepth,
    StoppedCexFound(Counterexample),
    StoppedUnsplittable,
}

/// Backpropagates the interval `[1, 1]` from the output neuron, multiplying
/// by each hidden neuron's activation-state interval on the way.
pub fn backward_gradient<S: Scalar>(
    net: &Network<S>,
    masks: &ActivationMask,
) -> Result<GradientInterval<S>, RefineError> {
    let layers = net.layers();
    if masks.len() != net.hidden_layers() {
        return Err(ShapeError {
            expected: net.hidden_layers(),
            found: masks.len(),
        }
        .into());
    }
    let mut grad = vec![Interval::point(S::one())];
    for (li, layer) in layers.iter().enumerate().rev() {
        let mut g_in = vec![Interval::zero(); layer.inputs()];
        for (k, gk) in grad.iter().enumerate() {
            for (j, gj) in g_in.iter_mut().enumerate() {
                *gj = *gj + gk.scale(layer.weight(k, j));
            }
        }
        grad = if li == 0 {
            g_in
        } else {
            let mask = &masks[li - 1];
            if mask.len() != g_in.len() {
                return Err(RefineError::MaskShape {
                    layer: li - 1,
                    expected: g_in.len(),
                    found: mask.len(),
                });
            }
            g_in.iter()
                .zip(mask)
                .map(|(g, m)| m.as_interval::<S>().mul(g))
                .collect()
        };
    }
    Ok(grad)
}

pub fn is_splittable(kind: AttributeKind, bounds: Interval<f64>) -> bool {
    match kind {
        AttributeKind::Real => bounds.hi - bounds.lo > MIN_REAL_WIDTH,
        AttributeKind::Integer | AttributeKind::Binary => bounds.hi > bounds.lo,
    }
}

/// Smear value of every attribute: gradient magnitude (averaged over both
/// passes) times the attribute's width.
pub fn smear_values<S: Scalar>(
    grad: &GradientInterval<S>,
    grad_prime: &GradientInterval<S>,
    partition: &Partition,
) -> Vec<f64> {
    grad.iter()
        .zip(grad_prime)
        .zip(&partition.bounds)
        .map(|((a, b), w)| a.average(b).magnitude().to_f64_lossy() * w.width())
        .collect()
}

/// Unprotected splittable attribute with the largest smear; lowest index wins ties.
pub fn select_split_attribute<S: Scalar>(
    grad: &GradientInterval<S>,
    grad_prime: &GradientInterval<S>,
    partition: &Partition,
    domain: &DomainSpec,
) -> Option<usize> {
    let smear = smear_values(grad, grad_prime, partition);
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in smear.iter().enumerate() {
        if i == domain.protected_index() || !is_splittable(domain.kind(i), partition.bounds[i]) {
            continue;
        }
        let s = if s.is_nan() { 0.0 } else { s };
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Halves attribute `i`. Discrete attributes split into disjoint grids
/// `[lb, mid]` and `[mid + 1, ub]` with `mid = ⌊(lb + ub) / 2⌋`; real
/// attributes share the midpoint.
pub fn bisect(partition: &Partition, i: usize, domain: &DomainSpec) -> Result<(Partition, Partition), RefineError> {
    let b = partition.bounds[i];
    let kind = domain.kind(i);
    if i == domain.protected_index() || !is_splittable(kind, b) {
        return Err(RefineError::Unsplittable(i));
    }
    let (lower, upper) = match kind {
        AttributeKind::Real => {
            let mid = b.lo + (b.hi - b.lo) / 2.0;
            (Interval::new(b.lo, mid), Interval::new(mid, b.hi))
        }
        AttributeKind::Integer | AttributeKind::Binary => {
            let mid = ((b.lo + b.hi) / 2.0).floor();
            (Interval::new(b.lo, mid), Interval::new(mid + 1.0, b.hi))
        }
    };
    Ok((partition.child(i, lower, false), partition.child(i, upper, true)))
}

/// Random point of the partition, drawn per attribute kind.
fn sample_point<R: Rng>(partition: &Partition, domain: &DomainSpec, rng: &mut R) -> Vec<f64> {
    partition
        .bounds
        .iter()
        .enumerate()
        .map(|(i, b)| {
            if i == domain.protected_index() {
                return if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            }
            match domain.kind(i) {
                _ if b.lo == b.hi => b.lo,
                AttributeKind::Real => rng.random_range(b.lo..=b.hi),
                AttributeKind::Integer | AttributeKind::Binary => rng.random_range(b.lo as i64..=b.hi as i64) as f64,
            }
        })
        .collect()
}

/// Draws up to `samples` inputs from the partition and returns the first one
/// whose protected-attribute flip changes the label.
pub fn sampled_cex<S: Scalar, R: Rng>(
    net: &Network<S>,
    domain: &DomainSpec,
    partition: &Partition,
    samples: u32,
    rng: &mut R,
) -> Option<Counterexample> {
    let j = domain.protected_index();
    for _ in 0..samples {
        let x = sample_point(partition, domain, rng);
        let mut x_prime = x.clone();
        x_prime[j] = 1.0 - x[j];
        let cast = |v: &[f64]| v.iter().map(|&t| S::of(t)).collect::<Vec<S>>();
        let a = net.score(&cast(&x));
        let b = net.score(&cast(&x_prime));
        if net.classify(a) != net.classify(b) {
            return Some(Counterexample {
                x,
                x_prime,
                score: a.to_f64_lossy(),
                score_prime: b.to_f64_lossy(),
            });
        }
    }
    None
}

/// Sampling stream private to one partition of one run.
pub fn partition_rng(seed: u64, partition: &Partition) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ partition.key.rotate_left(17)))
}

/// Decides what to do with an undecided partition.
pub fn backward_refinement<S: Scalar>(
    net: &Network<S>,
    domain: &DomainSpec,
    partition: &Partition,
    outcome: &ForwardOutcome<S>,
    cfg: &RefineConfig,
) -> Result<SplitResult, RefineError> {
    if partition.depth >= cfg.max_refinement_depth {
        return Ok(SplitResult::StoppedMaxDepth);
    }
    if partition.depth >= cfg.min_sample_depth {
        let mut rng = partition_rng(cfg.rng_seed, partition);
        if let Some(cex) = sampled_cex(net, domain, partition, cfg.samples_per_check, &mut rng) {
            return Ok(SplitResult::StoppedCexFound(cex));
        }
    }
    let g = backward_gradient(net, &outcome.masks)?;
    let g_prime = backward_gradient(net, &outcome.masks_prime)?;
    match select_split_attribute(&g, &g_prime, partition, domain) {
        Some(i) => {
            let (lower, upper) = bisect(partition, i, domain)?;
            Ok(SplitResult::Split(lower, upper))
        }
        None => Ok(SplitResult::StoppedUnsplittable),
    }
}
