//! Batch front end for causal testing: bind a DAG, a dataset, and a suite
//! of causal test cases, then report verdicts for CI consumption.
//!
//! Exit codes are uniform across subcommands: 0 for success (all tests
//! passing, feasible identification), 1 when some test FAILed, 2 for
//! configuration and parse errors, 3 for indeterminate results (INFEASIBLE
//! or INSUFFICIENT_DATA verdicts, infeasible adjustment sets). Reports are
//! plain text by default; `--format json` emits a stable-ordered,
//! schema-versioned document instead.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest as _, Sha256};

use causaltest_core::dataset::load_csv;
use causaltest_core::estimation::EffectEstimate;
use causaltest_core::graph::{parse_dag, GraphError};
use causaltest_core::synth::{builtin_spec, drop_unobserved, generate, parse_spec, BuiltinName};
use causaltest_core::testing::{
    evaluate, parse_suite, parse_term, run_suite, verdict_counts, CausalTestCase, Diagnostics,
    EstimatorConfig, GroupComparison, IvConfig, OlsConfig, Oracle, TestOutcome, Verdict,
};

/// Version tag for the JSON report layout, bumped on breaking changes.
const REPORT_SCHEMA_VERSION: u32 = 1;

type Error = Box<dyn std::error::Error>;

#[derive(Parser)]
#[command(name = "causaltest", version, about = "Causal testing over observational run data")]
struct Cli {
    /// Output format for results and reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Seed override for `generate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for suite evaluation and data synthesis.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Print the backdoor adjustment set for a treatment/outcome pair.
    Identify {
        /// DAG file in the DOT subset.
        dag: PathBuf,
        treatment: String,
        outcome: String,
    },
    /// Run a suite file and report one verdict per test case.
    Test {
        /// TOML suite file; its dag/data paths resolve relative to it.
        suite: PathBuf,
    },
    /// Estimate one causal effect without judging an oracle.
    Estimate(EstimateArgs),
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// DAG file in the DOT subset.
    #[arg(long)]
    dag: PathBuf,
    /// CSV data file; column types are inferred.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    treatment: String,
    #[arg(long)]
    outcome: String,
    /// Model term for an OLS fit, repeated per term: `intercept`, a column
    /// name, `a*b`, or `name^2`.
    #[arg(long = "term", conflicts_with = "instrument")]
    terms: Vec<String>,
    /// Instrument column; switches to the two-stage ratio estimator.
    #[arg(long)]
    instrument: Option<String>,
    /// Fit only rows where this categorical column equals --stratum.
    #[arg(long, requires = "stratum", conflicts_with = "instrument")]
    stratify_by: Option<String>,
    #[arg(long, requires = "stratify_by", conflicts_with = "instrument")]
    stratum: Option<String>,
    /// Contrast level for categorical treatments with several levels.
    #[arg(long, conflicts_with = "instrument")]
    treatment_level: Option<String>,
    /// Estimate even when the graph says the model is biased.
    #[arg(long)]
    allow_biased: bool,
    /// Estimate per level of this column and compare the groups' intervals.
    #[arg(long)]
    group_by: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    /// Bundled generator: re1, re2, re2-effect, re3, re3-equal, or fig1.
    #[arg(long, conflicts_with = "spec")]
    builtin: Option<String>,
    /// TOML generator spec file.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Rows to generate. Defaults to the spec's value, or 1000 for builtins.
    #[arg(long)]
    n: Option<usize>,
    /// Output CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Drop columns the DAG marks unobserved.
    #[arg(long)]
    drop_unobserved: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_jobs(cli.jobs);
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_jobs(jobs: Option<usize>) {
    if let Some(n) = jobs {
        // Fails only if a global pool already exists, which cannot happen
        // this early in main.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_jobs(jobs: Option<usize>) {
    if jobs.is_some() {
        eprintln!("warning: built without the parallel feature, --jobs has no effect");
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    match &cli.command {
        Command::Identify {
            dag,
            treatment,
            outcome,
        } => cmd_identify(dag, treatment, outcome, cli.format),
        Command::Test { suite } => cmd_test(suite, cli.format),
        Command::Estimate(args) => cmd_estimate(args, cli.format),
        Command::Generate(args) => cmd_generate(args, cli.seed),
    }
}

// ---------------------------------------------------------------------------
// identify
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct IdentifyReport {
    treatment: String,
    outcome: String,
    feasible: bool,
    adjustment_set: Vec<String>,
    /// Adjustment variables the DAG marks unobserved; a nonempty list is
    /// what makes the set infeasible.
    unobserved_members: Vec<String>,
    required_interactions: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

fn cmd_identify(
    dag_path: &Path,
    treatment: &str,
    outcome: &str,
    format: Format,
) -> Result<u8, Error> {
    let g = parse_dag(&fs::read_to_string(dag_path)?)?;
    let report = match g.adjustment_set(treatment, outcome) {
        Ok(r) => IdentifyReport {
            treatment: treatment.to_string(),
            outcome: outcome.to_string(),
            feasible: r.feasible,
            adjustment_set: r.adjustment_set.iter().cloned().collect(),
            unobserved_members: r
                .adjustment_set
                .intersection(g.unobserved())
                .cloned()
                .collect(),
            required_interactions: r.required_interactions.iter().cloned().collect(),
            reason: None,
        },
        // A treatment caused by its outcome has no adjustment set at all;
        // that is an infeasibility finding, not a usage error.
        Err(e @ GraphError::Unidentifiable { .. }) => IdentifyReport {
            treatment: treatment.to_string(),
            outcome: outcome.to_string(),
            feasible: false,
            adjustment_set: Vec::new(),
            unobserved_members: Vec::new(),
            required_interactions: Vec::new(),
            reason: Some(e.to_string()),
        },
        Err(e) => return Err(e.into()),
    };

    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            println!("treatment: {}", report.treatment);
            println!("outcome: {}", report.outcome);
            println!("adjustment set: {}", name_list(&report.adjustment_set));
            if !report.unobserved_members.is_empty() {
                println!("unobserved members: {}", name_list(&report.unobserved_members));
            }
            let interactions: Vec<String> = report
                .required_interactions
                .iter()
                .map(|(m, t)| format!("{m}*{t}"))
                .collect();
            println!("required interactions: {}", name_list(&interactions));
            println!("feasible: {}", if report.feasible { "yes" } else { "no" });
            if let Some(reason) = &report.reason {
                println!("reason: {reason}");
            }
        }
    }
    Ok(if report.feasible { 0 } else { 3 })
}

fn name_list(names: &[String]) -> String {
    if names.is_empty() {
        "(none)".to_string()
    } else {
        names.join(", ")
    }
}

// ---------------------------------------------------------------------------
// test
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct InputFile {
    role: &'static str,
    path: String,
    sha256: String,
}

/// Machine-readable run record. Field order is the serialization order;
/// maps are sorted, so equal runs serialize to equal bytes except for
/// `wall_time_ms`.
#[derive(serde::Serialize)]
struct Report {
    schema_version: u32,
    tool: &'static str,
    tool_version: &'static str,
    inputs: Vec<InputFile>,
    /// Verdict tallies over `outcomes`, all four verdicts always present.
    summary: BTreeMap<String, usize>,
    outcomes: Vec<TestOutcome>,
    wall_time_ms: u64,
}

fn digest(role: &'static str, path: &Path, bytes: &[u8]) -> InputFile {
    let hash = Sha256::digest(bytes);
    InputFile {
        role,
        path: path.display().to_string(),
        sha256: hash.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }),
    }
}

fn cmd_test(suite_path: &Path, format: Format) -> Result<u8, Error> {
    let start = Instant::now();
    let suite_bytes = fs::read(suite_path)?;
    let suite = parse_suite(std::str::from_utf8(&suite_bytes)?)?;

    let base = suite_path.parent().unwrap_or(Path::new("."));
    let dag_path = base.join(&suite.dag);
    let data_path = base.join(&suite.data);
    let dag_bytes = fs::read(&dag_path)?;
    let data_bytes = fs::read(&data_path)?;

    let g = parse_dag(std::str::from_utf8(&dag_bytes)?)?;
    let d = load_csv(std::str::from_utf8(&data_bytes)?, &suite.schema)?;
    let outcomes = run_suite(&g, &d, &suite.cases)?;

    let counts = verdict_counts(&outcomes);
    let mut summary = BTreeMap::new();
    for v in [
        Verdict::Pass,
        Verdict::Fail,
        Verdict::InsufficientData,
        Verdict::Infeasible,
    ] {
        summary.insert(v.to_string(), counts.get(&v).copied().unwrap_or(0));
    }

    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        tool: "causaltest",
        tool_version: env!("CARGO_PKG_VERSION"),
        inputs: vec![
            digest("suite", suite_path, &suite_bytes),
            digest("dag", &dag_path, &dag_bytes),
            digest("data", &data_path, &data_bytes),
        ],
        summary,
        outcomes,
        wall_time_ms: start.elapsed().as_millis() as u64,
    };

    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            println!("suite: {}", suite_path.display());
            let mut body = String::new();
            for outcome in &report.outcomes {
                push_outcome_lines(&mut body, outcome);
            }
            print!("{body}");
            println!(
                "summary: {} PASS, {} FAIL, {} INSUFFICIENT_DATA, {} INFEASIBLE  ({} ms)",
                report.summary["PASS"],
                report.summary["FAIL"],
                report.summary["INSUFFICIENT_DATA"],
                report.summary["INFEASIBLE"],
                report.wall_time_ms
            );
        }
    }

    let any = |v: Verdict| counts.get(&v).copied().unwrap_or(0) > 0;
    Ok(if any(Verdict::Fail) {
        1
    } else if any(Verdict::Infeasible) || any(Verdict::InsufficientData) {
        3
    } else {
        0
    })
}

fn push_outcome_lines(buf: &mut String, o: &TestOutcome) {
    let _ = write!(buf, "{}: {}", o.id, o.verdict);
    if let Some(e) = &o.estimate {
        let _ = write!(buf, "  {}", fmt_estimate(e));
    }
    if o.verdict != Verdict::Pass {
        let _ = write!(buf, "  ({})", o.rationale);
    }
    buf.push('\n');
    if let Some(groups) = &o.groups {
        for (level, sub) in &groups.outcomes {
            let _ = write!(buf, "    {} = {}: {}", groups.group_by, level, sub.verdict);
            if let Some(e) = &sub.estimate {
                let _ = write!(buf, "  {}", fmt_estimate(e));
            }
            buf.push('\n');
        }
        for p in &groups.pairs {
            let relation = if p.regression {
                "regression"
            } else if p.ci_overlap {
                "overlap"
            } else {
                "disjoint"
            };
            let _ = writeln!(buf, "    {} vs {}: {relation}", p.first, p.second);
        }
    }
}

fn fmt_estimate(e: &EffectEstimate) -> String {
    format!(
        "effect {} [{}, {}]",
        sig6(e.point),
        sig6(e.ci_low),
        sig6(e.ci_high)
    )
}

/// Six significant digits for text output; JSON keeps full precision.
fn sig6(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{x}");
    }
    let decimals = (5 - x.abs().log10().floor() as i32).max(0) as usize;
    format!("{x:.decimals$}")
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

#[derive(serde::Serialize)]
struct EstimateReport {
    /// "OK" when an estimate was obtained, otherwise the blocking verdict
    /// (INFEASIBLE or INSUFFICIENT_DATA).
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    estimate: Option<EffectEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    groups: Option<GroupComparison>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
    diagnostics: Diagnostics,
}

fn cmd_estimate(args: &EstimateArgs, format: Format) -> Result<u8, Error> {
    let g = parse_dag(&fs::read_to_string(&args.dag)?)?;
    let d = load_csv(&fs::read_to_string(&args.data)?, &BTreeMap::new())?;

    let estimator = if let Some(instrument) = &args.instrument {
        EstimatorConfig::Iv(IvConfig {
            instrument: instrument.clone(),
            allow_biased: args.allow_biased,
        })
    } else if args.terms.is_empty() {
        return Err("provide --instrument or at least one --term".into());
    } else {
        let terms = args
            .terms
            .iter()
            .map(|t| parse_term(t))
            .collect::<Result<Vec<_>, _>>()?;
        EstimatorConfig::Ols(OlsConfig {
            terms,
            stratify_by: args.stratify_by.clone(),
            stratum: args.stratum.clone(),
            treatment_level: args.treatment_level.clone(),
            allow_biased: args.allow_biased,
        })
    };

    // The pipeline wants an oracle; estimation does not depend on which
    // one, and its judgment is not reported here.
    let tc = CausalTestCase {
        id: "estimate".to_string(),
        treatment: args.treatment.clone(),
        outcome: args.outcome.clone(),
        oracle: Oracle::SomeEffect,
        estimator,
        group_by: args.group_by.clone(),
    };
    let outcome = evaluate(&g, &d, &tc)?;

    let obtained = matches!(outcome.verdict, Verdict::Pass | Verdict::Fail);
    let report = EstimateReport {
        status: if obtained {
            "OK".to_string()
        } else {
            outcome.verdict.to_string()
        },
        estimate: outcome.estimate,
        groups: outcome.groups,
        reason: (!obtained).then(|| outcome.rationale.clone()),
        diagnostics: outcome.diagnostics,
    };

    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report)?),
        Format::Text => {
            println!("status: {}", report.status);
            if let Some(e) = &report.estimate {
                println!(
                    "{}  ({}, {:.0}% CI, dof {})",
                    fmt_estimate(e),
                    e.method,
                    e.level * 100.0,
                    e.dof
                );
            }
            if let Some(groups) = &report.groups {
                for (level, sub) in &groups.outcomes {
                    match &sub.estimate {
                        Some(e) => println!(
                            "{} = {}: {}",
                            groups.group_by,
                            level,
                            fmt_estimate(e)
                        ),
                        None => println!(
                            "{} = {}: {}  ({})",
                            groups.group_by, level, sub.verdict, sub.rationale
                        ),
                    }
                }
                for p in &groups.pairs {
                    let relation = if p.ci_overlap { "overlap" } else { "disjoint" };
                    println!("{} vs {}: {relation}", p.first, p.second);
                }
            }
            if let Some(reason) = &report.reason {
                println!("reason: {reason}");
            }
            let dx = &report.diagnostics;
            if let Some(adjustment) = &dx.adjustment {
                let set: Vec<String> = adjustment.adjustment_set.iter().cloned().collect();
                println!("adjustment set: {}", name_list(&set));
            }
            if dx.rows_dropped > 0 {
                println!("rows dropped: {}", dx.rows_dropped);
            }
            for w in &dx.instrument_warnings {
                println!("warning: {w}");
            }
            for n in &dx.notes {
                println!("note: {n}");
            }
        }
    }
    Ok(if obtained { 0 } else { 3 })
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

fn cmd_generate(args: &GenerateArgs, seed: Option<u64>) -> Result<u8, Error> {
    let mut spec = match (&args.builtin, &args.spec) {
        (Some(name), None) => {
            let name: BuiltinName = name.parse()?;
            builtin_spec(name, args.n.unwrap_or(1000), seed.unwrap_or(0))
        }
        (None, Some(path)) => {
            let mut spec = parse_spec(&fs::read_to_string(path)?)?;
            if let Some(n) = args.n {
                spec.n = n;
            }
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            spec
        }
        _ => return Err("exactly one of --builtin or --spec is required".into()),
    };
    // A spec file may omit n; zero rows is never what the caller wants.
    if spec.n == 0 {
        spec.n = 1000;
    }

    let mut d = generate(&spec)?;
    if args.drop_unobserved {
        d = drop_unobserved(&d, &spec.dag);
    }
    let csv = d.write_csv();
    match &args.out {
        Some(path) => fs::write(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(0)
}
