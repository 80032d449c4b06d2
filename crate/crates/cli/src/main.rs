//! `faircert` command-line front end.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use faircert::{
    certify, exhaustive_fairness, load_domain, load_network, DomainSpec, EngineConfig, Network, OverallVerdict,
    RefineConfig, Report,
};
use serde::Deserialize;

const EXIT_USAGE: u8 = 10;
const EXIT_MODEL: u8 = 11;
const EXIT_DOMAIN: u8 = 12;
const EXIT_CONFIG: u8 = 13;
const EXIT_OUTPUT: u8 = 14;
const EXIT_ORACLE: u8 = 15;
const EXIT_ENGINE: u8 = 20;
const EXIT_UNSOUND: u8 = 21;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Format {
    #[default]
    Json,
    Csv,
}

/// Certify individual fairness of a ReLU classifier over a tabular input domain.
///
/// Exit status: 0 certified fair, 1 falsified unfair, 2 undecided, 10 and up on errors.
#[derive(Debug, Parser)]
#[command(name = "faircert", version)]
struct Args {
    /// Network JSON file.
    #[arg(long, short = 'm')]
    model: Option<PathBuf>,
    /// Domain JSON file.
    #[arg(long, short = 'd')]
    domain: Option<PathBuf>,
    /// Name of the protected attribute, overriding the domain file.
    #[arg(long, short = 'p')]
    protected: Option<String>,
    /// Maximum refinement depth [default: 20].
    #[arg(long)]
    max_depth: Option<u32>,
    /// Depth from which partitions are sampled for counterexamples [default: 15].
    #[arg(long)]
    min_sample_depth: Option<u32>,
    /// Random samples drawn per sampled partition [default: 10].
    #[arg(long)]
    samples: Option<u32>,
    /// Wall-clock budget in seconds [default: 1800].
    #[arg(long)]
    timeout: Option<f64>,
    /// Seed for counterexample sampling [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads [default: 1].
    #[arg(long, short = 'j')]
    workers: Option<usize>,
    /// Reproducible run: one worker, no wall-clock time in the report.
    #[arg(long)]
    deterministic: bool,
    /// Where to write the report.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
    /// Report format [default: json].
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Cross-check the rates against exhaustive enumeration (small discrete domains only).
    #[arg(long)]
    oracle_check: bool,
    /// TOML file with default values for any of the flags above.
    #[arg(long, env = "FAIRCERT_CONFIG")]
    config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    domain: Option<PathBuf>,
    protected: Option<String>,
    max_depth: Option<u32>,
    min_sample_depth: Option<u32>,
    samples: Option<u32>,
    timeout: Option<f64>,
    seed: Option<u64>,
    workers: Option<usize>,
    deterministic: Option<bool>,
    output: Option<PathBuf>,
    format: Option<Format>,
    oracle_check: Option<bool>,
}

#[derive(Debug)]
struct Settings {
    model: PathBuf,
    domain: PathBuf,
    protected: Option<String>,
    engine: EngineConfig,
    output: Option<PathBuf>,
    format: Format,
    oracle_check: bool,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn load_config(path: &Path) -> Result<FileConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("invalid config {}: {e}", path.display())))
}

fn settings(args: Args) -> Result<Settings, Failure> {
    let file = match &args.config {
        Some(path) => load_config(path)?,
        None => FileConfig::default(),
    };
    let model = args
        .model
        .or(file.model)
        .ok_or_else(|| Failure::new(EXIT_USAGE, "missing --model"))?;
    let domain = args
        .domain
        .or(file.domain)
        .ok_or_else(|| Failure::new(EXIT_USAGE, "missing --domain"))?;

    let defaults = RefineConfig::default();
    let refine = RefineConfig {
        max_refinement_depth: args
            .max_depth
            .or(file.max_depth)
            .unwrap_or(defaults.max_refinement_depth),
        min_sample_depth: args
            .min_sample_depth
            .or(file.min_sample_depth)
            .unwrap_or(defaults.min_sample_depth),
        samples_per_check: args.samples.or(file.samples).unwrap_or(defaults.samples_per_check),
        rng_seed: args.seed.or(file.seed).unwrap_or(defaults.rng_seed),
    };
    let base = EngineConfig::default();
    let secs = args.timeout.or(file.timeout).unwrap_or(base.timeout.as_secs_f64());
    let timeout = Duration::try_from_secs_f64(secs)
        .ok()
        .filter(|d| !d.is_zero())
        .ok_or_else(|| {
            Failure::new(
                EXIT_USAGE,
                format!("--timeout must be a positive number of seconds, got {secs}"),
            )
        })?;
    let format = args.format.or(file.format).unwrap_or_default();
    let engine = EngineConfig {
        refine,
        timeout,
        workers: args.workers.or(file.workers).unwrap_or(base.workers),
        deterministic: args.deterministic || file.deterministic.unwrap_or(false),
        record_partitions: format == Format::Csv,
        ..base
    };
    engine
        .validate()
        .map_err(|e| Failure::new(EXIT_USAGE, format!("invalid flags: {e}")))?;
    Ok(Settings {
        model,
        domain,
        protected: args.protected.or(file.protected),
        engine,
        output: args.output.or(file.output),
        format,
        oracle_check: args.oracle_check || file.oracle_check.unwrap_or(false),
    })
}

/// `rate` as a percentage truncated (not rounded) to two decimals.
fn percent(rate: f64) -> String {
    let hundredths = (rate * 10_000.0 + 1e-6).floor().max(0.0) as u64;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

fn verdict_name(v: OverallVerdict) -> &'static str {
    match v {
        OverallVerdict::CertifiedFair => "certified_fair",
        OverallVerdict::FalsifiedUnfair => "falsified_unfair",
        OverallVerdict::Undecided => "undecided",
    }
}

fn summary(report: &Report) -> String {
    format!(
        "{:<17} {:>7} {:>7} {:>7} {:>6} {:>9}\n{:<17} {:>7} {:>7} {:>7} {:>6} {:>9.2}",
        "Verdict",
        "Cer(%)",
        "Fal(%)",
        "Und(%)",
        "#Cex",
        "Time(s)",
        verdict_name(report.verdict),
        percent(report.rates.certified),
        percent(report.rates.falsified),
        percent(report.rates.undecided),
        report.cex_count,
        report.elapsed_seconds,
    )
}

fn write_csv(report: &Report, domain: &DomainSpec, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["depth".to_string(), "outcome".to_string(), "measure".to_string()];
    for attr in domain.attributes() {
        header.push(format!("{}_lo", attr.name));
        header.push(format!("{}_hi", attr.name));
    }
    w.write_record(&header)?;
    for rec in &report.partitions {
        let mut row = vec![
            rec.depth.to_string(),
            rec.outcome.name().to_string(),
            rec.measure.to_string(),
        ];
        for b in &rec.bounds {
            row.push(b.lo.to_string());
            row.push(b.hi.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn emit(report: &Report, domain: &DomainSpec, path: &Path, format: Format) -> Result<(), Failure> {
    let fail = |e: &dyn fmt::Display| Failure::new(EXIT_OUTPUT, format!("cannot write {}: {e}", path.display()));
    match format {
        Format::Json => fs::write(path, report.to_json() + "\n").map_err(|e| fail(&e)),
        Format::Csv => {
            let file = fs::File::create(path).map_err(|e| fail(&e))?;
            write_csv(report, domain, io::BufWriter::new(file)).map_err(|e| fail(&e))
        }
    }
}

fn oracle_check(net: &Network, domain: &DomainSpec, report: &Report) -> Result<(), Failure> {
    let exact = exhaustive_fairness(net, domain, faircert::oracle::DEFAULT_PAIR_LIMIT)
        .map_err(|e| Failure::new(EXIT_ORACLE, format!("--oracle-check: {e}")))?;
    println!(
        "oracle: {} pairs, exact fair {}%, exact unfair {}%",
        exact.total_pairs,
        percent(exact.fair_fraction()),
        percent(exact.unfair_fraction())
    );
    let tol = faircert::quantifier::RATE_TOLERANCE;
    if report.rates.certified > exact.fair_fraction() + tol || report.rates.falsified > exact.unfair_fraction() + tol {
        return Err(Failure::new(
            EXIT_UNSOUND,
            "oracle check failed: reported rates exceed the exact fractions",
        ));
    }
    Ok(())
}

fn run(args: Args) -> Result<OverallVerdict, Failure> {
    let s = settings(args)?;
    let net: Network =
        load_network(&s.model).map_err(|e| Failure::new(EXIT_MODEL, format!("{}: {e}", s.model.display())))?;
    let domain = load_domain(&s.domain, s.protected.as_deref())
        .map_err(|e| Failure::new(EXIT_DOMAIN, format!("{}: {e}", s.domain.display())))?;
    domain
        .check_network(&net)
        .map_err(|e| Failure::new(EXIT_DOMAIN, format!("{}: {e}", s.domain.display())))?;

    let report = certify(&net, &domain, &s.engine).map_err(|e| Failure::new(EXIT_ENGINE, e.to_string()))?;
    println!("{}", summary(&report));
    if let Some(path) = &s.output {
        emit(&report, &domain, path, s.format)?;
    }
    if s.oracle_check {
        oracle_check(&net, &domain, &report)?;
    }
    Ok(report.verdict)
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(args) {
        Ok(OverallVerdict::CertifiedFair) => ExitCode::from(0),
        Ok(OverallVerdict::FalsifiedUnfair) => ExitCode::from(1),
        Ok(OverallVerdict::Undecided) => ExitCode::from(2),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
