//! Partition measures and the certified / falsified / undecided rates.
//!
//! Integer and binary attributes are measured by grid-point count
//! (`ub - lb + 1`), real attributes by width (`ub - lb`). The protected
//! attribute is excluded, so a measure counts `(x, x')` pairs. Populations
//! are assumed uniform over each attribute.
//!
//! Rates are kept as compensated sums of measures and divided by the domain
//! measure only when read, which keeps them exact on integer grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::Verdict;
use crate::model::{AttributeKind, DomainSpec, Partition};

/// Slack allowed on the rate invariants before declaring a bookkeeping bug.
pub const RATE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantifyError {
    #[error("undecided rate dropped to {0}; a partition was counted twice")]
    DoubleCount(f64),
}

/// A real attribute that is a single point in the domain carries unit
/// measure, so it does not zero out the product.
pub fn partition_measure(partition: &Partition, domain: &DomainSpec) -> f64 {
    partition
        .bounds
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != domain.protected_index())
        .map(|(i, b)| {
            let attr = &domain.attributes()[i];
            match attr.kind {
                AttributeKind::Real if attr.ub == attr.lb => 1.0,
                AttributeKind::Real => b.hi - b.lo,
                AttributeKind::Integer | AttributeKind::Binary => b.hi - b.lo + 1.0,
            }
        })
        .product()
}

pub fn domain_measure(domain: &DomainSpec) -> f64 {
    partition_measure(&Partition::root(domain, 0), domain)
}

/// Share of the domain covered by `partition`.
pub fn partition_rate(partition: &Partition, domain: &DomainSpec) -> f64 {
    partition_measure(partition, domain) / domain_measure(domain)
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new(v: f64) -> Self {
        Self { sum: v, comp: 0.0 }
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Certified, falsified and undecided fractions of the domain.
///
/// A fresh triple is `(0, 0, 1)`. Worker-local partial triples start from
/// [`RateTriple::delta`] and are folded into the global one with
/// [`RateTriple::merge`]; merging is associative and commutative up to
/// rounding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateTriple {
    total: f64,
    certified: CompensatedSum,
    falsified: CompensatedSum,
    undecided: CompensatedSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub certified: f64,
    pub falsified: f64,
    pub undecided: f64,
}

impl RateTriple {
    /// Everything undecided over a domain of measure `total`.
    pub fn new(total: f64) -> Self {
        Self {
            total,
            certified: CompensatedSum::new(0.0),
            falsified: CompensatedSum::new(0.0),
            undecided: CompensatedSum::new(total),
        }
    }

    pub fn for_domain(domain: &DomainSpec) -> Self {
        Self::new(domain_measure(domain))
    }

    /// All-zero accumulator for partial updates.
    pub fn delta(total: f64) -> Self {
        Self {
            undecided: CompensatedSum::new(0.0),
            ..Self::new(total)
        }
    }

    pub fn certified(&self) -> f64 {
        self.certified.value() / self.total
    }

    pub fn falsified(&self) -> f64 {
        self.falsified.value() / self.total
    }

    pub fn undecided(&self) -> f64 {
        self.undecided.value() / self.total
    }

    pub fn rates(&self) -> Rates {
        Rates {
            certified: self.certified(),
            falsified: self.falsified(),
            undecided: self.undecided(),
        }
    }

    /// Moves `measure` out of the undecided share according to `verdict`.
    pub fn apply(&mut self, verdict: Verdict, measure: f64) {
        match verdict {
            Verdict::Fair => self.certified.add(measure),
            Verdict::Unfair => self.falsified.add(measure),
            Verdict::Undecided => return,
        }
        self.undecided.add(-measure);
    }

    pub fn merge(&mut self, other: &Self) {
        self.certified.merge(&other.certified);
        self.falsified.merge(&other.falsified);
        self.undecided.merge(&other.undecided);
    }

    /// Checks the undecided share has not gone negative.
    pub fn check(&self) -> Result<(), QuantifyError> {
        let und = self.undecided();
        if und < -RATE_TOLERANCE {
            return Err(QuantifyError::DoubleCount(und));
        }
        Ok(())
    }
}

/// Updates `rates` for a resolved (or still undecided) partition.
pub fn quantify(
    verdict: Verdict,
    partition: &Partition,
    domain: &DomainSpec,
    rates: &mut RateTriple,
) -> Result<(), QuantifyError> {
    rates.apply(verdict, partition_measure(partition, domain));
    rates.check()
}
