//! Certification and quantification of individual fairness for feedforward
//! ReLU classifiers.
//!
//! Given a network, an input domain and a binary protected attribute, the
//! certifier splits the domain into partitions and proves each one fair
//! (flipping the protected attribute never changes the label), unfair (it
//! always does), or leaves it undecided. The certified and falsified shares
//! of the domain are sound lower bounds on the true fair and unfair shares.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common choices.
//!
//! ```
//! use faircert::{certify, fixtures, EngineConfig, OverallVerdict};
//!
//! let net = fixtures::running_example_network();
//! let domain = fixtures::running_example_domain();
//! let report = certify(&net, &domain, &EngineConfig::default()).unwrap();
//! assert!(report.rates.certified >= 0.6);
//! assert_eq!(report.verdict, OverallVerdict::Undecided);
//! ```

pub mod engine;
pub mod fixtures;
pub mod forward;
pub mod interval;
pub mod model;
pub mod oracle;
pub mod quantifier;
pub mod refinement;
pub mod scalar;
pub mod symbolic;

pub use engine::{
    certify, certify_exact_rates_check, EngineConfig, EngineError, LeafOutcome, OracleComparison, OverallVerdict,
    PartitionRecord, Report, ReportConfig,
};
pub use forward::{decide, forward_pass, symbolic_forward, ForwardOutcome, ForwardPass, Verdict};
pub use interval::Interval;
pub use model::{
    load_domain, load_network, Activation, AttributeKind, AttributeSpec, DomainError, DomainSpec, Evaluation, Label,
    Layer, ModelError, Network, Partition,
};
pub use oracle::{check_partition_fair, exhaustive_fairness, ExactFairness, OracleError};
pub use quantifier::{partition_measure, quantify, RateTriple, Rates};
pub use refinement::{
    backward_gradient, backward_refinement, bisect, sampled_cex, select_split_attribute, ConfigError, Counterexample,
    GradientInterval, RefineConfig, SplitResult,
};
pub use scalar::Scalar;
pub use symbolic::{
    affine_transform, concretize, relu_relax, ActivationMask, ActivationState, LinearExpr, SymbolicInterval,
};

pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Interval32 = Interval<f32>;
pub type Interval64 = Interval<f64>;
pub type LinearExpr32 = LinearExpr<f32>;
pub type LinearExpr64 = LinearExpr<f64>;
pub type SymbolicInterval32 = SymbolicInterval<f32>;
pub type SymbolicInterval64 = SymbolicInterval<f64>;
pub type ForwardOutcome32 = ForwardOutcome<f32>;
pub type ForwardOutcome64 = ForwardOutcome<f64>;
