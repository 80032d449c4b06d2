//! Certification driver.
//!
//! Partitions are processed depth-first from a LIFO stack, starting with the
//! whole domain. Each popped partition gets a dual forward pass; fair and
//! unfair partitions are quantified, undecided ones are refined and their
//! children pushed (lower half on top). The loop ends when the stack is empty
//! or the timeout expires, in which case whatever is left stays undecided.
//!
//! With more than one worker, each worker keeps its own LIFO deque and idle
//! workers steal from the others. Workers accumulate partial rate triples
//! that are merged once all of them finish.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crossbeam_deque::{Injector, Stealer, Worker};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{symbolic_forward, Verdict};
use crate::interval::Interval;
use crate::model::{DomainError, DomainSpec, Network, Partition};
use crate::oracle::{exhaustive_fairness, ExactFairness, OracleError, DEFAULT_PAIR_LIMIT};
use crate::quantifier::{domain_measure, partition_measure, QuantifyError, RateTriple, Rates, RATE_TOLERANCE};
use crate::refinement::{backward_refinement, ConfigError, Counterexample, RefineConfig, RefineError, SplitResult};
use crate::scalar::Scalar;
use crate::symbolic::ShapeError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Quantify(#[from] QuantifyError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineConfig {
    pub refine: RefineConfig,
    pub timeout: Duration,
    pub workers: usize,
    pub deterministic: bool,
    pub max_recorded_cex: usize,
    /// Keep one [`PartitionRecord`] per leaf of the refinement tree.
    pub record_partitions: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            refine: RefineConfig::default(),
            timeout: Duration::from_secs(1800),
            workers: 1,
            deterministic: false,
            max_recorded_cex: 1000,
            record_partitions: false,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.refine.validate()?;
        if self.timeout.is_zero() {
            return Err(ConfigError::Timeout);
        }
        if self.workers == 0 {
            return Err(ConfigError::NoWorkers);
        }
        if self.deterministic && self.workers != 1 {
            return Err(ConfigError::DeterministicWorkers);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverallVerdict {
    CertifiedFair,
    FalsifiedUnfair,
    Undecided,
}

/// How a leaf of the refinement tree was closed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafOutcome {
    Fair,
    Unfair,
    MaxDepth,
    Counterexample,
    Unsplittable,
}

impl LeafOutcome {
    pub fn verdict(self) -> Verdict {
        match self {
            Self::Fair => Verdict::Fair,
            Self::Unfair => Verdict::Unfair,
            _ => Verdict::Undecided,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Fair => "fair",
            Self::Unfair => "unfair",
            Self::MaxDepth => "max_depth",
            Self::Counterexample => "counterexample",
            Self::Unsplittable => "unsplittable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub bounds: Vec<Interval<f64>>,
    pub depth: u32,
    pub outcome: LeafOutcome,
    pub measure: f64,
}

impl PartitionRecord {
    pub fn partition(&self) -> Partition {
        Partition {
            bounds: self.bounds.clone(),
            depth: self.depth,
            key: 0,
        }
    }
}

/// Configuration echoed into the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub max_refinement_depth: u32,
    pub min_sample_depth: u32,
    pub samples_per_check: u32,
    pub seed: u64,
    pub timeout_seconds: f64,
    pub workers: usize,
    pub deterministic: bool,
    pub max_recorded_cex: usize,
}

impl From<&EngineConfig> for ReportConfig {
    fn from(c: &EngineConfig) -> Self {
        Self {
            max_refinement_depth: c.refine.max_refinement_depth,
            min_sample_depth: c.refine.min_sample_depth,
            samples_per_check: c.refine.samples_per_check,
            seed: c.refine.rng_seed,
            timeout_seconds: c.timeout.as_secs_f64(),
            workers: c.workers,
            deterministic: c.deterministic,
            max_recorded_cex: c.max_recorded_cex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub verdict: OverallVerdict,
    pub rates: Rates,
    /// Counterexample events: sampled counterexamples that stopped a
    /// partition plus witnesses of partitions proven unfair.
    pub cex_count: u64,
    pub counterexamples: Vec<Counterexample>,
    pub partitions_processed: u64,
    pub max_depth_reached: u32,
    /// Wall-clock time; reported as 0 in deterministic mode.
    pub elapsed_seconds: f64,
    pub timed_out: bool,
    pub config: ReportConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<PartitionRecord>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization is infallible")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Per-worker tallies.
struct Accumulator {
    rates: RateTriple,
    cex_count: u64,
    counterexamples: Vec<Counterexample>,
    processed: u64,
    max_depth: u32,
    unresolved_leaves: u64,
    fair_leaves: u64,
    unfair_leaves: u64,
    records: Vec<PartitionRecord>,
}

impl Accumulator {
    fn new(total: f64) -> Self {
        Self {
            rates: RateTriple::delta(total),
            cex_count: 0,
            counterexamples: Vec::new(),
            processed: 0,
            max_depth: 0,
            unresolved_leaves: 0,
            fair_leaves: 0,
            unfair_leaves: 0,
            records: Vec::new(),
        }
    }
}

struct Job<'a, S> {
    net: &'a Network<S>,
    domain: &'a DomainSpec,
    cfg: &'a EngineConfig,
    /// Global count of recorded counterexamples, shared by all workers.
    recorded: &'a AtomicUsize,
    total: f64,
}

impl<S: Scalar> Job<'_, S> {
    fn record_cex(&self, acc: &mut Accumulator, cex: Counterexample) {
        acc.cex_count += 1;
        if !cex.verify(self.net) {
            return;
        }
        let slot = self.recorded.fetch_add(1, Ordering::Relaxed);
        if slot < self.cfg.max_recorded_cex {
            acc.counterexamples.push(cex);
        }
    }

    fn close_leaf(&self, acc: &mut Accumulator, p: &Partition, outcome: LeafOutcome) {
        match outcome {
            LeafOutcome::Fair => acc.fair_leaves += 1,
            LeafOutcome::Unfair => acc.unfair_leaves += 1,
            _ => acc.unresolved_leaves += 1,
        }
        let measure = partition_measure(p, self.domain);
        acc.rates.apply(outcome.verdict(), measure);
        if self.cfg.record_partitions {
            acc.records.push(PartitionRecord {
                bounds: p.bounds.clone(),
                depth: p.depth,
                outcome,
                measure,
            });
        }
    }

    /// Witness for a partition proven unfair: its lower corner.
    fn unfair_witness(&self, p: &Partition) -> Counterexample {
        let j = self.domain.protected_index();
        let mut x: Vec<f64> = p.bounds.iter().map(|b| b.lo).collect();
        x[j] = 0.0;
        let mut x_prime = x.clone();
        x_prime[j] = 1.0;
        let score = |v: &[f64]| {
            let xs: Vec<S> = v.iter().map(|&t| S::of(t)).collect();
            self.net.score(&xs).to_f64_lossy()
        };
        Counterexample {
            score: score(&x),
            score_prime: score(&x_prime),
            x,
            x_prime,
        }
    }

    /// Analyses one partition; returns its children if it was split.
    fn process(&self, p: &Partition, acc: &mut Accumulator) -> Result<Option<(Partition, Partition)>, EngineError> {
        acc.processed += 1;
        acc.max_depth = acc.max_depth.max(p.depth);
        let outcome = symbolic_forward(self.net, self.domain.protected_index(), p)?;
        match outcome.verdict {
            Verdict::Fair => self.close_leaf(acc, p, LeafOutcome::Fair),
            Verdict::Unfair => {
                self.record_cex(acc, self.unfair_witness(p));
                self.close_leaf(acc, p, LeafOutcome::Unfair);
            }
            Verdict::Undecided => match backward_refinement(self.net, self.domain, p, &outcome, &self.cfg.refine)? {
                SplitResult::Split(lower, upper) => return Ok(Some((lower, upper))),
                SplitResult::StoppedMaxDepth => self.close_leaf(acc, p, LeafOutcome::MaxDepth),
                SplitResult::StoppedUnsplittable => self.close_leaf(acc, p, LeafOutcome::Unsplittable),
                SplitResult::StoppedCexFound(cex) => {
                    self.record_cex(acc, cex);
                    self.close_leaf(acc, p, LeafOutcome::Counterexample);
                }
            },
        }
        Ok(None)
    }
}

/// Runs the full certification loop.
pub fn certify<S: Scalar>(net: &Network<S>, domain: &DomainSpec, cfg: &EngineConfig) -> Result<Report, EngineError> {
    cfg.validate()?;
    domain.check_network(net)?;
    let start = Instant::now();
    let deadline = start + cfg.timeout;
    let recorded = AtomicUsize::new(0);
    let job = Job {
        net,
        domain,
        cfg,
        recorded: &recorded,
        total: domain_measure(domain),
    };
    let root = Partition::root(domain, cfg.refine.rng_seed);

    let (parts, timed_out) = if cfg.workers == 1 {
        let (acc, timed_out) = run_sequential(&job, root, deadline)?;
        (vec![acc], timed_out)
    } else {
        run_parallel(&job, root, deadline)?
    };

    let mut rates = RateTriple::new(job.total);
    let mut report = Report {
        verdict: OverallVerdict::Undecided,
        rates: rates.rates(),
        cex_count: 0,
        counterexamples: Vec::new(),
        partitions_processed: 0,
        max_depth_reached: 0,
        elapsed_seconds: 0.0,
        timed_out,
        config: ReportConfig::from(cfg),
        partitions: Vec::new(),
    };
    let (mut fair, mut unfair, mut unresolved) = (0, 0, 0);
    for acc in parts {
        rates.merge(&acc.rates);
        report.cex_count += acc.cex_count;
        report.counterexamples.extend(acc.counterexamples);
        report.partitions_processed += acc.processed;
        report.max_depth_reached = report.max_depth_reached.max(acc.max_depth);
        report.partitions.extend(acc.records);
        fair += acc.fair_leaves;
        unfair += acc.unfair_leaves;
        unresolved += acc.unresolved_leaves;
    }
    rates.check()?;
    report.counterexamples.truncate(cfg.max_recorded_cex);

    let complete = !timed_out && unresolved == 0;
    report.verdict = if complete && unfair == 0 && fair > 0 {
        OverallVerdict::CertifiedFair
    } else if complete && fair == 0 && unfair > 0 {
        OverallVerdict::FalsifiedUnfair
    } else {
        OverallVerdict::Undecided
    };
    report.rates = match report.verdict {
        // The whole domain was resolved one way; drop accumulated rounding.
        OverallVerdict::CertifiedFair => Rates {
            certified: 1.0,
            falsified: 0.0,
            undecided: 0.0,
        },
        OverallVerdict::FalsifiedUnfair => Rates {
            certified: 0.0,
            falsified: 1.0,
            undecided: 0.0,
        },
        OverallVerdict::Undecided => rates.rates(),
    };
    if !cfg.deterministic {
        report.elapsed_seconds = start.elapsed().as_secs_f64();
    }
    Ok(report)
}

fn run_sequential<S: Scalar>(
    job: &Job<'_, S>,
    root: Partition,
    deadline: Instant,
) -> Result<(Accumulator, bool), EngineError> {
    let mut acc = Accumulator::new(job.total);
    let mut stack = vec![root];
    while let Some(p) = stack.pop() {
        if Instant::now() >= deadline {
            return Ok((acc, true));
        }
        if let Some((lower, upper)) = job.process(&p, &mut acc)? {
            stack.push(upper);
            stack.push(lower);
        }
    }
    Ok((acc, false))
}

fn run_parallel<S: Scalar>(
    job: &Job<'_, S>,
    root: Partition,
    deadline: Instant,
) -> Result<(Vec<Accumulator>, bool), EngineError> {
    let n = job.cfg.workers;
    let injector = Injector::new();
    injector.push(root);
    let locals: Vec<Worker<Partition>> = (0..n).map(|_| Worker::new_lifo()).collect();
    let stealers: Vec<Stealer<Partition>> = locals.iter().map(Worker::stealer).collect();
    // Partitions pushed but not yet fully processed.
    let pending = AtomicUsize::new(1);
    let stop = AtomicBool::new(false);
    let timed_out = AtomicBool::new(false);
    let error: Mutex<Option<EngineError>> = Mutex::new(None);

    let results: Vec<Accumulator> = std::thread::scope(|scope| {
        let handles: Vec<_> = locals
            .into_iter()
            .enumerate()
            .map(|(me, local)| {
                let (injector, stealers) = (&injector, &stealers);
                let (pending, stop, timed_out, error) = (&pending, &stop, &timed_out, &error);
                scope.spawn(move || {
                    let mut acc = Accumulator::new(job.total);
                    while !stop.load(Ordering::Acquire) {
                        let task = local.pop().or_else(|| steal(injector, stealers, me));
                        let Some(p) = task else {
                            if pending.load(Ordering::Acquire) == 0 {
                                break;
                            }
                            std::thread::yield_now();
                            continue;
                        };
                        if Instant::now() >= deadline {
                            timed_out.store(true, Ordering::Release);
                            stop.store(true, Ordering::Release);
                            break;
                        }
                        match job.process(&p, &mut acc) {
                            Ok(Some((lower, upper))) => {
                                pending.fetch_add(2, Ordering::AcqRel);
                                local.push(upper);
                                local.push(lower);
                            }
                            Ok(None) => {}
                            Err(e) => {
                                error.lock().expect("error slot").get_or_insert(e);
                                stop.store(true, Ordering::Release);
                            }
                        }
                        pending.fetch_sub(1, Ordering::AcqRel);
                    }
                    acc
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });

    if let Some(e) = error.into_inner().expect("error slot") {
        return Err(e);
    }
    Ok((results, timed_out.into_inner()))
}

fn steal(injector: &Injector<Partition>, stealers: &[Stealer<Partition>], me: usize) -> Option<Partition> {
    loop {
        let mut retry = false;
        match injector.steal() {
            crossbeam_deque::Steal::Success(p) => return Some(p),
            crossbeam_deque::Steal::Retry => retry = true,
            crossbeam_deque::Steal::Empty => {}
        }
        for (i, s) in stealers.iter().enumerate() {
            if i == me {
                continue;
            }
            match s.steal() {
                crossbeam_deque::Steal::Success(p) => return Some(p),
                crossbeam_deque::Steal::Retry => retry = true,
                crossbeam_deque::Steal::Empty => {}
            }
        }
        if !retry {
            return None;
        }
    }
}

/// Certification result next to the exhaustive ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleComparison {
    pub report: Report,
    pub exact: ExactFairness,
    /// `r_cer ≤` exact fair fraction.
    pub certified_is_lower_bound: bool,
    /// `r_fal ≤` exact unfair fraction.
    pub falsified_is_lower_bound: bool,
}

impl OracleComparison {
    pub fn holds(&self) -> bool {
        self.certified_is_lower_bound && self.falsified_is_lower_bound
    }
}

/// Runs [`certify`] and the exhaustive oracle on a small discrete domain.
pub fn certify_exact_rates_check<S: Scalar>(
    net: &Network<S>,
    domain: &DomainSpec,
    cfg: &EngineConfig,
) -> Result<OracleComparison, EngineError> {
    let exact = exhaustive_fairness(net, domain, DEFAULT_PAIR_LIMIT)?;
    let report = certify(net, domain, cfg)?;
    Ok(OracleComparison {
        certified_is_lower_bound: report.rates.certified <= exact.fair_fraction() + RATE_TOLERANCE,
        falsified_is_lower_bound: report.rates.falsified <= exact.unfair_fraction() + RATE_TOLERANCE,
        report,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{integer_domain, linear_network, running_example_domain, running_example_network};
    use crate::model::{Activation, Layer};

    fn protected_only() -> (Network, DomainSpec) {
        let net = Network::new(
            2,
            0.0,
            vec![
                Layer::new(
                    vec![vec![0.0, -2.0], vec![0.0, 2.0]],
                    Some(vec![1.0, -1.0]),
                    Activation::Relu,
                ),
                Layer::new(vec![vec![1.0, -1.0]], None, Activation::Linear),
            ],
        )
        .unwrap();
        (net, integer_domain(&[5], 1))
    }

    #[test]
    fn running_example_certifies_fig3_branches() {
        let net = running_example_network();
        let d = running_example_domain();
        let cfg = EngineConfig {
            record_partitions: true,
            ..EngineConfig::default()
        };
        let r = certify(&net, &d, &cfg).unwrap();
        assert!(r.rates.certified >= 0.6 - 1e-12);
        let sum = r.rates.certified + r.rates.falsified + r.rates.undecided;
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(r.verdict, OverallVerdict::Undecided);
        assert!(r.cex_count >= 1);
        let fair_x1_45 = r
            .partitions
            .iter()
            .any(|p| p.outcome == LeafOutcome::Fair && p.bounds[0] == Interval::new(4.0, 5.0) && p.depth == 1);
        assert!(fair_x1_45);
        let fair_x1_3 = r
            .partitions
            .iter()
            .any(|p| p.outcome == LeafOutcome::Fair && p.bounds[0] == Interval::point(3.0) && p.depth == 2);
        assert!(fair_x1_3);
        for c in &r.counterexamples {
            assert!(c.verify(&net));
        }
    }

    #[test]
    fn protected_only_is_falsified_at_root() {
        let (net, d) = protected_only();
        let r = certify(&net, &d, &EngineConfig::default()).unwrap();
        assert_eq!(r.verdict, OverallVerdict::FalsifiedUnfair);
        assert_eq!(r.rates.falsified, 1.0);
        assert_eq!(r.max_depth_reached, 0);
        assert_eq!(r.partitions_processed, 1);
    }

    #[test]
    fn constant_positive_is_certified_at_root() {
        let net = linear_network(&[0.0, 0.0, 0.0], 1.0);
        let d = running_example_domain();
        let r = certify(&net, &d, &EngineConfig::default()).unwrap();
        assert_eq!(r.verdict, OverallVerdict::CertifiedFair);
        assert_eq!(r.rates.certified, 1.0);
        assert_eq!(r.partitions_processed, 1);
    }

    #[test]
    fn oracle_comparison_on_fixtures() {
        let cfg = EngineConfig::default();
        let cmp = certify_exact_rates_check(&running_example_network(), &running_example_domain(), &cfg).unwrap();
        assert!(cmp.holds());
        let cmp = certify_exact_rates_check(&linear_network(&[0.0; 3], 1.0), &running_example_domain(), &cfg).unwrap();
        assert_eq!((cmp.report.rates.certified, cmp.exact.fair_fraction()), (1.0, 1.0));
        let (net, d) = protected_only();
        let cmp = certify_exact_rates_check(&net, &d, &cfg).unwrap();
        assert_eq!((cmp.report.rates.falsified, cmp.exact.unfair_fraction()), (1.0, 1.0));
    }

    #[test]
    fn invalid_configs_rejected() {
        let net = running_example_network();
        let d = running_example_domain();
        let bad = EngineConfig {
            deterministic: true,
            workers: 2,
            ..EngineConfig::default()
        };
        assert!(matches!(
            certify(&net, &d, &bad),
            Err(EngineError::Config(ConfigError::DeterministicWorkers))
        ));
        let bad = EngineConfig {
            timeout: Duration::ZERO,
            ..EngineConfig::default()
        };
        assert!(matches!(
            certify(&net, &d, &bad),
            Err(EngineError::Config(ConfigError::Timeout))
        ));
        let wrong = integer_domain(&[3, 3, 3], 0);
        assert!(matches!(
            certify(&net, &wrong, &EngineConfig::default()),
            Err(EngineError::Domain(_))
        ));
    }

    #[test]
    fn parallel_matches_sequential() {
        let net = running_example_network();
        let d = running_example_domain();
        let seq = certify(&net, &d, &EngineConfig::default()).unwrap();
        let par = certify(
            &net,
            &d,
            &EngineConfig {
                workers: 4,
                ..EngineConfig::default()
            },
        )
        .unwrap();
        assert!((seq.rates.certified - par.rates.certified).abs() < 1e-9);
        assert!((seq.rates.falsified - par.rates.falsified).abs() < 1e-9);
        assert_eq!(seq.partitions_processed, par.partitions_processed);
        assert_eq!(seq.cex_count, par.cex_count);
    }

    #[test]
    fn report_json_round_trips() {
        let net = running_example_network();
        let d = running_example_domain();
        let cfg = EngineConfig {
            record_partitions: true,
            ..EngineConfig::default()
        };
        let r = certify(&net, &d, &cfg).unwrap();
        let back = Report::from_json(&r.to_json()).unwrap();
        assert_eq!(r, back);
    }
}
