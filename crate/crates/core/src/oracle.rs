//! Brute-force ground truth for small discrete domains.
//!
//! Every grid point of the unprotected attributes is evaluated with the
//! protected attribute at 0 and at 1. Only [`Network::evaluate`] is used, so
//! the oracle shares no code with the symbolic analysis it checks.

use thiserror::Error;

use crate::model::{AttributeKind, DomainSpec, Network, Partition};
use crate::scalar::Scalar;

pub const DEFAULT_PAIR_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("attribute `{0}` is real-valued; enumeration needs a discrete domain")]
    RealAttribute(String),
    #[error("{pairs} pairs exceed the enumeration cap of {limit}")]
    TooLarge { pairs: u128, limit: u64 },
    #[error("network takes {network} inputs but domain declares {domain}")]
    Dimension { network: usize, domain: usize },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExactFairness {
    pub total_pairs: u64,
    pub fair_pairs: u64,
    pub unfair_pairs: u64,
    /// `(x, x')` with the protected attribute 0 in `x` and 1 in `x'`.
    pub violating_pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ExactFairness {
    pub fn fair_fraction(&self) -> f64 {
        self.fair_pairs as f64 / self.total_pairs as f64
    }

    pub fn unfair_fraction(&self) -> f64 {
        self.unfair_pairs as f64 / self.total_pairs as f64
    }
}

/// Exact fair / unfair pair counts over the whole domain.
pub fn exhaustive_fairness<S: Scalar>(
    net: &Network<S>,
    domain: &DomainSpec,
    limit: u64,
) -> Result<ExactFairness, OracleError> {
    enumerate(net, domain, &Partition::root(domain, 0), limit)
}

/// True iff every pair inside `partition` receives matching labels.
pub fn check_partition_fair<S: Scalar>(
    net: &Network<S>,
    domain: &DomainSpec,
    partition: &Partition,
) -> Result<bool, OracleError> {
    Ok(enumerate(net, domain, partition, DEFAULT_PAIR_LIMIT)?.unfair_pairs == 0)
}

/// True iff every pair inside `partition` receives different labels.
pub fn check_partition_unfair<S: Scalar>(
    net: &Network<S>,
    domain: &DomainSpec,
    partition: &Partition,
) -> Result<bool, OracleError> {
    Ok(enumerate(net, domain, partition, DEFAULT_PAIR_LIMIT)?.fair_pairs == 0)
}

/// Enumerates the integer grid of `partition`.
pub fn enumerate<S: Scalar>(
    net: &Network<S>,
    domain: &DomainSpec,
    partition: &Partition,
    limit: u64,
) -> Result<ExactFairness, OracleError> {
    if net.input_dim() != domain.len() {
        return Err(OracleError::Dimension {
            network: net.input_dim(),
            domain: domain.len(),
        });
    }
    let j = domain.protected_index();
    let mut axes = Vec::new();
    let mut pairs: u128 = 1;
    for (i, a) in domain.attributes().iter().enumerate() {
        if i == j {
            continue;
        }
        if a.kind == AttributeKind::Real {
            return Err(OracleError::RealAttribute(a.name.clone()));
        }
        let b = partition.bounds[i];
        let (lo, hi) = (b.lo.ceil() as i64, b.hi.floor() as i64);
        pairs = pairs.saturating_mul((hi - lo + 1).max(0) as u128);
        axes.push((i, lo, hi));
    }
    if pairs > u128::from(limit) {
        return Err(OracleError::TooLarge { pairs, limit });
    }

    let mut result = ExactFairness::default();
    if pairs == 0 {
        return Ok(result);
    }
    let mut point: Vec<i64> = axes.iter().map(|&(_, lo, _)| lo).collect();
    let mut x = vec![S::zero(); domain.len()];
    loop {
        for (&(i, _, _), &v) in axes.iter().zip(&point) {
            x[i] = S::of(v as f64);
        }
        x[j] = S::zero();
        let a = net.evaluate(&x).expect("dimension checked").label;
        x[j] = S::one();
        let b = net.evaluate(&x).expect("dimension checked").label;
        result.total_pairs += 1;
        if a == b {
            result.fair_pairs += 1;
        } else {
            result.unfair_pairs += 1;
            let xp: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
            let mut x0 = xp.clone();
            x0[j] = 0.0;
            result.violating_pairs.push((x0, xp));
        }

        // odometer step
        let mut k = 0;
        loop {
            if k == point.len() {
                return Ok(result);
            }
            if point[k] < axes[k].2 {
                point[k] += 1;
                break;
            }
            point[k] = axes[k].1;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{
        integer_domain, linear_network, real_domain, running_example_domain, running_example_network,
    };
    use crate::interval::Interval;

    #[test]
    fn running_example_pairs() {
        let net = running_example_network();
        let d = running_example_domain();
        let exact = exhaustive_fairness(&net, &d, DEFAULT_PAIR_LIMIT).unwrap();
        assert_eq!(exact.total_pairs, 30);
        assert_eq!(exact.fair_pairs + exact.unfair_pairs, 30);
        assert!(exact
            .violating_pairs
            .contains(&(vec![1.0, 0.0, 3.0], vec![1.0, 1.0, 3.0])));
    }

    #[test]
    fn constant_network_is_fair_everywhere() {
        let net = linear_network(&[0.0, 0.0, 0.0], 1.0);
        let d = integer_domain(&[3, 4], 1);
        let exact = exhaustive_fairness(&net, &d, DEFAULT_PAIR_LIMIT).unwrap();
        assert_eq!(exact.total_pairs, 12);
        assert_eq!(exact.fair_pairs, 12);
        assert!(exact.violating_pairs.is_empty());
    }

    #[test]
    fn refuses_real_and_oversized_domains() {
        let net = linear_network(&[1.0, 1.0], 0.0);
        let d = real_domain(&[(0.0, 1.0)], 1);
        assert!(matches!(
            exhaustive_fairness(&net, &d, DEFAULT_PAIR_LIMIT),
            Err(OracleError::RealAttribute(_))
        ));
        let d = integer_domain(&[100], 1);
        assert_eq!(
            exhaustive_fairness(&net, &d, 10),
            Err(OracleError::TooLarge { pairs: 100, limit: 10 })
        );
    }

    #[test]
    fn partition_checks() {
        let net = running_example_network();
        let d = running_example_domain();
        let root = Partition::root(&d, 0);
        let upper = root.with_bounds(0, Interval::new(4.0, 5.0));
        assert_eq!(enumerate(&net, &d, &upper, DEFAULT_PAIR_LIMIT).unwrap().total_pairs, 12);
        assert!(check_partition_fair(&net, &d, &upper).unwrap());
        let with_cex = root.with_bounds(0, Interval::new(1.0, 2.0));
        assert!(!check_partition_fair(&net, &d, &with_cex).unwrap());
        let point = root
            .with_bounds(0, Interval::point(1.0))
            .with_bounds(2, Interval::point(3.0));
        let e = enumerate(&net, &d, &point, DEFAULT_PAIR_LIMIT).unwrap();
        assert_eq!(e.total_pairs, 1);
        assert!(check_partition_unfair(&net, &d, &point).unwrap());
    }
}
