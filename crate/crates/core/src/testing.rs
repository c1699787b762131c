//! Causal test cases and their evaluation.
//!
//! A test case names a treatment, an outcome, an expectation about the causal
//! effect (the oracle), and an estimation strategy. Evaluation first consults
//! the causal graph: it identifies the adjustment set and checks that the
//! chosen model actually covers it, refusing with INFEASIBLE when the data
//! or model cannot support an unbiased answer. Only then is the effect
//! estimated and judged. Inadequate data downgrades to INSUFFICIENT_DATA
//! rather than failing the test, so a FAIL always means the effect estimate
//! itself contradicted the expectation.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dataset::{ColumnKind, DataError, Dataset, PositivityReport};
use crate::estimation::{
    design_matrix, iv_estimate, ols_fit, unit_ate, EffectEstimate, EstimationError, TermSpec,
};
use crate::graph::{AdjustmentResult, CausalDag, GraphError, NodeId};

/// Default relative tolerance for [`Oracle::ExactValue`].
pub const DEFAULT_EXACT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TestingError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("estimation failed: {0}")]
    Estimation(EstimationError),
    #[error("test {id}: {message}")]
    InvalidCase { id: String, message: String },
    #[error("duplicate test id {0}")]
    DuplicateId(String),
    #[error("bad term {text:?}: {message}")]
    BadTerm { text: String, message: String },
    #[error("suite file error: {0}")]
    SuiteFile(String),
}

/// Expected behavior of the causal effect, judged against its 95% CI.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    /// The CI must contain zero.
    NoEffect,
    /// The CI must exclude zero.
    SomeEffect,
    /// The CI must lie entirely above zero.
    Positive,
    /// The CI must lie entirely below zero.
    Negative,
    /// The CI must not lie entirely above zero (no detectable increase).
    NotPositive,
    /// The point estimate must fall within a relative tolerance of `value`.
    ExactValue { value: f64, tolerance: f64 },
}

impl Oracle {
    /// Judges an estimate, returning the pass flag and a one-line reason.
    pub fn judge(&self, e: &EffectEstimate) -> (bool, String) {
        let ci = format!("95% CI [{:.6}, {:.6}]", e.ci_low, e.ci_high);
        match self {
            Oracle::NoEffect => {
                if e.contains(0.0) {
                    (true, format!("{ci} contains 0, consistent with no effect"))
                } else {
                    (false, format!("{ci} excludes 0, but no effect was expected"))
                }
            }
            Oracle::SomeEffect => {
                if e.contains(0.0) {
                    (false, format!("{ci} contains 0, but an effect was expected"))
                } else {
                    (true, format!("{ci} excludes 0, an effect is present"))
                }
            }
            Oracle::Positive => {
                if e.ci_low > 0.0 {
                    (true, format!("{ci} lies above 0"))
                } else {
                    (false, format!("{ci} does not lie above 0"))
                }
            }
            Oracle::Negative => {
                if e.ci_high < 0.0 {
                    (true, format!("{ci} lies below 0"))
                } else {
                    (false, format!("{ci} does not lie below 0"))
                }
            }
            Oracle::NotPositive => {
                if e.ci_low > 0.0 {
                    (false, format!("{ci} lies above 0, an increase is detectable"))
                } else {
                    (true, format!("{ci} is consistent with no increase"))
                }
            }
            Oracle::ExactValue { value, tolerance } => {
                let deviation = (e.point - value).abs();
                let allowed = tolerance * value.abs();
                if deviation <= allowed {
                    (
                        true,
                        format!(
                            "point {:.6} is within {:.1}% of {:.6}",
                            e.point,
                            100.0 * tolerance,
                            value
                        ),
                    )
                } else {
                    let relative = if *value != 0.0 {
                        format!("{:.2}% from", 100.0 * deviation / value.abs())
                    } else {
                        format!("{deviation:.6} from")
                    };
                    (
                        false,
                        format!(
                            "point {:.6} deviates {relative} {:.6} (allowed {:.1}%)",
                            e.point,
                            value,
                            100.0 * tolerance
                        ),
                    )
                }
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Oracle::NoEffect => "no_effect",
            Oracle::SomeEffect => "some_effect",
            Oracle::Positive => "positive",
            Oracle::Negative => "negative",
            Oracle::NotPositive => "not_positive",
            Oracle::ExactValue { .. } => "exact_value",
        }
    }
}

impl fmt::Display for Oracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Oracle::ExactValue { value, tolerance } => {
                write!(f, "exact_value({value} +-{:.0}%)", 100.0 * tolerance)
            }
            other => f.write_str(other.kind()),
        }
    }
}

/// Ordinary-least-squares estimation strategy for one test case.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsConfig {
    /// Model terms. Must mention the treatment exactly once as a bare
    /// linear term; that term's coefficient is the effect estimate.
    pub terms: Vec<TermSpec>,
    /// Restrict the fit to rows where this categorical column equals
    /// `stratum`. Set both or neither.
    pub stratify_by: Option<String>,
    pub stratum: Option<String>,
    /// For categorical treatments with more than two levels: which level's
    /// contrast against the reference level is the effect of interest.
    pub treatment_level: Option<String>,
    /// Proceed even when the model does not cover the identified
    /// adjustment set. The estimate may be confounded; the gap is recorded
    /// in the outcome's diagnostics.
    pub allow_biased: bool,
}

/// Instrumental-variable estimation strategy for one test case.
#[derive(Debug, Clone, PartialEq)]
pub struct IvConfig {
    pub instrument: String,
    /// Proceed even when the instrument fails a graphical condition.
    pub allow_biased: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorConfig {
    Ols(OlsConfig),
    Iv(IvConfig),
}

/// One causal expectation about the system under test.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalTestCase {
    pub id: String,
    pub treatment: NodeId,
    pub outcome: NodeId,
    pub oracle: Oracle,
    pub estimator: EstimatorConfig,
    /// Evaluate per level of this categorical column and compare the
    /// groups' intervals instead of judging a single pooled estimate.
    pub group_by: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    /// Estimate obtained and the oracle holds.
    Pass,
    /// Estimate obtained and the oracle is violated.
    Fail,
    /// The data cannot support the estimate (too few rows, no variation,
    /// weak instrument, empty stratum).
    InsufficientData,
    /// The graph says the requested effect cannot be estimated without bias
    /// by the configured model.
    Infeasible,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::InsufficientData => "INSUFFICIENT_DATA",
            Verdict::Infeasible => "INFEASIBLE",
        })
    }
}

/// Evidence trail attached to every outcome.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize)]
pub struct Diagnostics {
    /// Identification result from the graph, when reached.
    pub adjustment: Option<AdjustmentResult>,
    /// Rows excluded for missing values in referenced columns.
    pub rows_dropped: usize,
    /// Level coverage of the treatment (categorical treatments only).
    pub positivity: Option<PositivityReport>,
    /// Design columns shed because they were identically zero.
    pub dropped_zero_columns: Vec<String>,
    /// Non-fatal instrument findings, e.g. extra instrument-to-treatment
    /// paths folded into the first stage.
    pub instrument_warnings: Vec<String>,
    pub notes: Vec<String>,
}

/// CI comparison between two groups, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GroupPair {
    pub first: String,
    pub second: String,
    pub ci_overlap: bool,
    /// Intervals disjoint with the second group's point higher: the change
    /// made things worse.
    pub regression: bool,
}

/// Per-group evaluation results plus pairwise CI comparisons.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct GroupComparison {
    pub group_by: String,
    pub outcomes: BTreeMap<String, TestOutcome>,
    pub pairs: Vec<GroupPair>,
}

/// Result of evaluating one test case.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct TestOutcome {
    pub id: String,
    pub verdict: Verdict,
    pub estimate: Option<EffectEstimate>,
    pub groups: Option<GroupComparison>,
    pub rationale: String,
    pub diagnostics: Diagnostics,
}

impl TestOutcome {
    fn terminal(tc: &CausalTestCase, verdict: Verdict, rationale: String, diagnostics: Diagnostics) -> Self {
        Self {
            id: tc.id.clone(),
            verdict,
            estimate: None,
            groups: None,
            rationale,
            diagnostics,
        }
    }
}

fn invalid(tc: &CausalTestCase, message: impl Into<String>) -> TestingError {
    TestingError::InvalidCase {
        id: tc.id.clone(),
        message: message.into(),
    }
}

/// Estimation failures that reflect the data, not the configuration, become
/// INSUFFICIENT_DATA verdicts; configuration mistakes stay hard errors.
fn data_verdict(err: EstimationError) -> Result<String, TestingError> {
    match err {
        EstimationError::InsufficientData { .. }
        | EstimationError::RankDeficient(_)
        | EstimationError::WeakInstrument { .. }
        | EstimationError::TermAbsent(_) => Ok(err.to_string()),
        other => Err(TestingError::Estimation(other)),
    }
}

fn validate_case(g: &CausalDag, d: &Dataset, tc: &CausalTestCase) -> Result<(), TestingError> {
    if tc.treatment == tc.outcome {
        return Err(invalid(tc, "treatment and outcome must differ"));
    }
    for node in [&tc.treatment, &tc.outcome] {
        if !g.nodes().contains(node) {
            return Err(invalid(tc, format!("{node} is not a node of the causal graph")));
        }
        if !d.has_column(node) {
            return Err(invalid(tc, format!("{node} is not a column of the dataset")));
        }
    }
    if let Oracle::ExactValue { value, tolerance } = &tc.oracle {
        if !value.is_finite() {
            return Err(invalid(tc, "exact_value oracle needs a finite value"));
        }
        if !(*tolerance > 0.0) || !tolerance.is_finite() {
            return Err(invalid(tc, "exact_value tolerance must be a positive fraction"));
        }
    }
    match &tc.estimator {
        EstimatorConfig::Ols(cfg) => {
            let treated = cfg
                .terms
                .iter()
                .filter(|t| matches!(t, TermSpec::Linear(v) if *v == tc.treatment))
                .count();
            if treated != 1 {
                return Err(invalid(
                    tc,
                    format!(
                        "model terms must mention the treatment {} exactly once as a linear term (found {treated})",
                        tc.treatment
                    ),
                ));
            }
            for term in &cfg.terms {
                for var in term.variables() {
                    if !d.has_column(var) {
                        return Err(invalid(tc, format!("term variable {var} is not a column")));
                    }
                }
            }
            match (&cfg.stratify_by, &cfg.stratum) {
                (Some(by), Some(_)) => {
                    if *by == tc.treatment {
                        return Err(invalid(tc, "stratifying by the treatment leaves it constant"));
                    }
                    if d.column(by)?.kind() != ColumnKind::Categorical {
                        return Err(invalid(tc, format!("stratify_by column {by} must be categorical")));
                    }
                }
                (None, None) => {}
                _ => return Err(invalid(tc, "stratify_by and stratum must be set together")),
            }
            if let Some(level) = &cfg.treatment_level {
                let column = d.column(&tc.treatment)?;
                if column.kind() != ColumnKind::Categorical {
                    return Err(invalid(tc, "treatment_level applies to categorical treatments only"));
                }
                let levels = column.levels();
                match levels.first() {
                    Some(reference) if reference == level => {
                        return Err(invalid(
                            tc,
                            format!("treatment level {level} is the reference level; effects are contrasts against it"),
                        ));
                    }
                    _ => {}
                }
            }
        }
        EstimatorConfig::Iv(cfg) => {
            if !g.nodes().contains(&cfg.instrument) {
                return Err(invalid(tc, format!("instrument {} is not a graph node", cfg.instrument)));
            }
            if cfg.instrument == tc.treatment || cfg.instrument == tc.outcome {
                return Err(invalid(tc, "instrument must differ from treatment and outcome"));
            }
            for col in [&cfg.instrument, &tc.treatment, &tc.outcome] {
                if !d.has_column(col) {
                    return Err(invalid(tc, format!("{col} is not a column of the dataset")));
                }
                if d.column(col)?.kind() != ColumnKind::Numeric {
                    return Err(invalid(
                        tc,
                        format!("instrumented estimation needs numeric variables, {col} is categorical"),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Evaluates one test case against a graph and dataset.
///
/// Cases with `group_by` set are delegated to [`compare_across_groups`].
/// After configuration validation, every failure mode is reported as a
/// verdict, never an error: identification gaps yield INFEASIBLE and data
/// inadequacies yield INSUFFICIENT_DATA.
pub fn evaluate(g: &CausalDag, d: &Dataset, tc: &CausalTestCase) -> Result<TestOutcome, TestingError> {
    match &tc.group_by {
        Some(key) => compare_across_groups(g, d, tc, key),
        None => evaluate_single(g, d, tc, &BTreeSet::new()),
    }
}

/// `handled` lists variables already held fixed by the caller (the group
/// key during grouped evaluation), which therefore need no adjustment.
fn evaluate_single(
    g: &CausalDag,
    d: &Dataset,
    tc: &CausalTestCase,
    handled: &BTreeSet<String>,
) -> Result<TestOutcome, TestingError> {
    validate_case(g, d, tc)?;
    let mut diagnostics = Diagnostics::default();

    // Identification. A treatment whose outcome is among its direct causes
    // has no valid adjustment set at all.
    let adjustment = match g.adjustment_set(&tc.treatment, &tc.outcome) {
        Ok(result) => result,
        Err(GraphError::Unidentifiable { .. }) => {
            return Ok(TestOutcome::terminal(
                tc,
                Verdict::Infeasible,
                format!(
                    "no adjustment set exists: {} is a direct cause of {}",
                    tc.outcome, tc.treatment
                ),
                diagnostics,
            ));
        }
        Err(other) => return Err(other.into()),
    };
    diagnostics.adjustment = Some(adjustment.clone());

    // Model coverage of the identification requirements.
    let allow_biased = match &tc.estimator {
        EstimatorConfig::Ols(cfg) => cfg.allow_biased,
        EstimatorConfig::Iv(cfg) => cfg.allow_biased,
    };
    let mut gaps: Vec<String> = Vec::new();
    match &tc.estimator {
        EstimatorConfig::Ols(cfg) => {
            let covered = |node: &str| {
                handled.contains(node)
                    || cfg.stratify_by.as_deref() == Some(node)
                    || cfg.terms.iter().any(|t| t.variables().contains(&node))
            };
            for node in &adjustment.adjustment_set {
                if !covered(node) {
                    gaps.push(format!("adjustment variable {node} is not in the model"));
                }
            }
            for (modifier, treatment) in &adjustment.required_interactions {
                let present = cfg.terms.iter().any(|t| {
                    matches!(t, TermSpec::Interaction(a, b)
                        if (a == modifier && b == treatment) || (a == treatment && b == modifier))
                });
                let fixed = handled.contains(modifier) || cfg.stratify_by.as_deref() == Some(modifier.as_str());
                if !present && !fixed {
                    gaps.push(format!("required interaction {treatment}*{modifier} is missing"));
                }
            }
        }
        EstimatorConfig::Iv(cfg) => {
            let report = g.validate_instrument(&cfg.instrument, &tc.treatment, &tc.outcome)?;
            diagnostics.instrument_warnings = report.warnings.clone();
            for check in report.checks.iter().filter(|c| !c.passed) {
                gaps.push(format!("instrument condition failed: {}", check.detail));
            }
            // Confounders tied to the instrument leak into both stage
            // regressions; the ratio does not cancel them.
            for node in &adjustment.adjustment_set {
                if handled.contains(node) {
                    continue;
                }
                if g.has_edge(node, &cfg.instrument) || g.has_edge(&cfg.instrument, node) {
                    gaps.push(format!(
                        "confounder {node} shares an edge with the instrument {}",
                        cfg.instrument
                    ));
                }
            }
        }
    }
    if !gaps.is_empty() {
        if !allow_biased {
            return Ok(TestOutcome::terminal(
                tc,
                Verdict::Infeasible,
                format!("unbiased estimation is not possible with this model: {}", gaps.join("; ")),
                diagnostics,
            ));
        }
        diagnostics
            .notes
            .push(format!("biased estimate requested despite: {}", gaps.join("; ")));
    }

    // Analysis rows: the requested stratum, or everything.
    let analysis: Cow<'_, Dataset> = match &tc.estimator {
        EstimatorConfig::Ols(OlsConfig {
            stratify_by: Some(by),
            stratum: Some(level),
            ..
        }) => {
            let strata = d.stratify(by)?;
            match strata.get(level) {
                Some(sub) => Cow::Owned(sub.clone()),
                None => {
                    return Ok(TestOutcome::terminal(
                        tc,
                        Verdict::InsufficientData,
                        format!("no rows with {by} = {level}"),
                        diagnostics,
                    ));
                }
            }
        }
        _ => Cow::Borrowed(d),
    };

    // Positivity over the treatment levels, judged against the levels the
    // full dataset knows about.
    if d.column(&tc.treatment)?.kind() == ColumnKind::Categorical {
        let full_levels = d.column(&tc.treatment)?.levels();
        let report = analysis.positivity_check(&tc.treatment, &full_levels)?;
        if !report.satisfied() {
            diagnostics.notes.push(format!(
                "treatment levels without data: {}",
                report.missing_levels.join(", ")
            ));
        }
        diagnostics.positivity = Some(report);
    }

    // Estimation.
    let estimate = match &tc.estimator {
        EstimatorConfig::Ols(cfg) => {
            let mut design = match design_matrix(&analysis, &tc.outcome, &cfg.terms) {
                Ok(design) => design,
                Err(err) => {
                    let reason = data_verdict(err)?;
                    return Ok(TestOutcome::terminal(tc, Verdict::InsufficientData, reason, diagnostics));
                }
            };
            diagnostics.rows_dropped = design.rows_dropped;
            diagnostics.dropped_zero_columns = design
                .drop_zero_columns()
                .iter()
                .map(ToString::to_string)
                .collect();
            let fit = match ols_fit(&design) {
                Ok(fit) => fit,
                Err(err) => {
                    let reason = data_verdict(err)?;
                    return Ok(TestOutcome::terminal(tc, Verdict::InsufficientData, reason, diagnostics));
                }
            };
            let treatment_term = TermSpec::Linear(tc.treatment.clone());
            let expansions = fit.expansions_of(&treatment_term);
            let chosen = match (expansions.len(), &cfg.treatment_level) {
                (0, _) => {
                    return Ok(TestOutcome::terminal(
                        tc,
                        Verdict::InsufficientData,
                        format!("treatment {} does not vary in the analysis rows", tc.treatment),
                        diagnostics,
                    ));
                }
                (1, None) => expansions[0],
                (_, Some(level)) => {
                    match expansions
                        .iter()
                        .find(|e| e.levels.first().map(|(_, l)| l.as_str()) == Some(level))
                    {
                        Some(term) => *term,
                        None => {
                            return Ok(TestOutcome::terminal(
                                tc,
                                Verdict::InsufficientData,
                                format!(
                                    "treatment level {level} of {} is absent from the analysis rows",
                                    tc.treatment
                                ),
                                diagnostics,
                            ));
                        }
                    }
                }
                (k, None) => {
                    return Err(invalid(
                        tc,
                        format!(
                            "treatment {} expands to {k} contrasts; set treatment_level to pick one",
                            tc.treatment
                        ),
                    ));
                }
            };
            match unit_ate(&fit, chosen) {
                Ok(estimate) => estimate,
                Err(err) => {
                    let reason = data_verdict(err)?;
                    return Ok(TestOutcome::terminal(tc, Verdict::InsufficientData, reason, diagnostics));
                }
            }
        }
        EstimatorConfig::Iv(cfg) => {
            let referenced = [cfg.instrument.as_str(), tc.treatment.as_str(), tc.outcome.as_str()];
            diagnostics.rows_dropped = (0..analysis.row_count())
                .filter(|&row| {
                    referenced
                        .iter()
                        .any(|c| analysis.column(c).map(|col| col.is_missing(row)).unwrap_or(false))
                })
                .count();
            match iv_estimate(&analysis, &cfg.instrument, &tc.treatment, &tc.outcome) {
                Ok(estimate) => estimate,
                Err(err) => {
                    let reason = data_verdict(err)?;
                    return Ok(TestOutcome::terminal(tc, Verdict::InsufficientData, reason, diagnostics));
                }
            }
        }
    };

    // Judgment.
    let (pass, rationale) = tc.oracle.judge(&estimate);
    Ok(TestOutcome {
        id: tc.id.clone(),
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
        estimate: Some(estimate),
        groups: None,
        rationale,
        diagnostics,
    })
}

/// Evaluates `tc` separately per level of `group_by` and compares the
/// groups' confidence intervals.
///
/// Every lexicographic pair of groups is compared; a pair flags a
/// regression when the intervals are disjoint and the later group's point
/// estimate is higher. For [`Oracle::NotPositive`] the combined verdict is
/// FAIL exactly when some pair regressed; for other oracles it is FAIL when
/// some group's own verdict failed. Groups that cannot be estimated
/// downgrade the combined verdict to INFEASIBLE or INSUFFICIENT_DATA.
pub fn compare_across_groups(
    g: &CausalDag,
    d: &Dataset,
    tc: &CausalTestCase,
    group_by: &str,
) -> Result<TestOutcome, TestingError> {
    if !d.has_column(group_by) {
        return Err(invalid(tc, format!("group_by column {group_by} is not in the dataset")));
    }
    if d.column(group_by)?.kind() != ColumnKind::Categorical {
        return Err(invalid(tc, format!("group_by column {group_by} must be categorical")));
    }
    if group_by == tc.treatment || group_by == tc.outcome {
        return Err(invalid(tc, "group_by must differ from treatment and outcome"));
    }

    let mut diagnostics = Diagnostics::default();
    let full_levels = d.column(group_by)?.levels();
    diagnostics.positivity = Some(d.positivity_check(group_by, &full_levels)?);

    let strata = d.stratify(group_by)?;
    let handled: BTreeSet<String> = std::iter::once(group_by.to_string()).collect();
    let mut outcomes: BTreeMap<String, TestOutcome> = BTreeMap::new();
    let mut grouped_rows = 0usize;
    for (level, sub) in &strata {
        grouped_rows += sub.row_count();
        let outcome = evaluate_single(g, sub, tc, &handled)?;
        diagnostics.rows_dropped += outcome.diagnostics.rows_dropped;
        outcomes.insert(level.clone(), outcome);
    }
    let unkeyed = d.row_count() - grouped_rows;
    if unkeyed > 0 {
        diagnostics.rows_dropped += unkeyed;
        diagnostics
            .notes
            .push(format!("{unkeyed} rows had no {group_by} value"));
    }
    if let Some(first) = outcomes.values().next() {
        diagnostics.adjustment = first.diagnostics.adjustment.clone();
    }

    if outcomes.len() < 2 {
        let comparison = GroupComparison {
            group_by: group_by.to_string(),
            outcomes,
            pairs: Vec::new(),
        };
        let mut outcome = TestOutcome::terminal(
            tc,
            Verdict::InsufficientData,
            format!("comparison needs at least two {group_by} groups, found {}", comparison.outcomes.len()),
            diagnostics,
        );
        outcome.groups = Some(comparison);
        return Ok(outcome);
    }

    let levels: Vec<&String> = outcomes.keys().collect();
    let mut pairs = Vec::new();
    for i in 0..levels.len() {
        for j in i + 1..levels.len() {
            let (first, second) = (&outcomes[levels[i]], &outcomes[levels[j]]);
            if let (Some(a), Some(b)) = (&first.estimate, &second.estimate) {
                let disjoint = a.disjoint_from(b);
                pairs.push(GroupPair {
                    first: levels[i].clone(),
                    second: levels[j].clone(),
                    ci_overlap: !disjoint,
                    regression: disjoint && b.point > a.point,
                });
            }
        }
    }

    let any = |v: Verdict| outcomes.values().any(|o| o.verdict == v);
    let (verdict, rationale) = if any(Verdict::Infeasible) {
        let blocked: Vec<&str> = outcomes
            .iter()
            .filter(|(_, o)| o.verdict == Verdict::Infeasible)
            .map(|(l, _)| l.as_str())
            .collect();
        (
            Verdict::Infeasible,
            format!("estimation is infeasible for groups: {}", blocked.join(", ")),
        )
    } else if any(Verdict::InsufficientData) {
        let starved: Vec<&str> = outcomes
            .iter()
            .filter(|(_, o)| o.verdict == Verdict::InsufficientData)
            .map(|(l, _)| l.as_str())
            .collect();
        (
            Verdict::InsufficientData,
            format!("not enough data in groups: {}", starved.join(", ")),
        )
    } else if matches!(tc.oracle, Oracle::NotPositive) {
        // The expectation concerns the change across groups, not the sign
        // of each group's own effect.
        match pairs.iter().find(|p| p.regression) {
            Some(p) => (
                Verdict::Fail,
                format!(
                    "regression across {group_by}: CIs for {} and {} are disjoint and {} is higher",
                    p.first, p.second, p.second
                ),
            ),
            None => (
                Verdict::Pass,
                format!("no regression across {group_by}: no disjoint CI pair increases"),
            ),
        }
    } else if any(Verdict::Fail) {
        let failed: Vec<&str> = outcomes
            .iter()
            .filter(|(_, o)| o.verdict == Verdict::Fail)
            .map(|(l, _)| l.as_str())
            .collect();
        (
            Verdict::Fail,
            format!("oracle violated in groups: {}", failed.join(", ")),
        )
    } else {
        (
            Verdict::Pass,
            format!("oracle holds in every {group_by} group"),
        )
    };

    Ok(TestOutcome {
        id: tc.id.clone(),
        verdict,
        estimate: None,
        groups: Some(GroupComparison {
            group_by: group_by.to_string(),
            outcomes,
            pairs,
        }),
        rationale,
        diagnostics,
    })
}

/// Evaluates a whole suite against one dataset.
///
/// Test ids must be unique. Outcomes come back in input order regardless of
/// how the work is scheduled; with the `parallel` feature the cases run on
/// the rayon pool.
pub fn run_suite(
    g: &CausalDag,
    d: &Dataset,
    cases: &[CausalTestCase],
) -> Result<Vec<TestOutcome>, TestingError> {
    let mut seen = BTreeSet::new();
    for case in cases {
        if !seen.insert(case.id.as_str()) {
            return Err(TestingError::DuplicateId(case.id.clone()));
        }
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        cases.par_iter().map(|tc| evaluate(g, d, tc)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        cases.iter().map(|tc| evaluate(g, d, tc)).collect()
    }
}

/// Tallies outcomes by verdict, for report summaries.
pub fn verdict_counts(outcomes: &[TestOutcome]) -> BTreeMap<Verdict, usize> {
    let mut counts = BTreeMap::new();
    for o in outcomes {
        *counts.entry(o.verdict).or_insert(0) += 1;
    }
    counts
}

// ---------------------------------------------------------------------------
// Suite files (TOML).
// ---------------------------------------------------------------------------

/// A parsed suite file: where the graph and data live, plus the cases.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    /// Path to the DAG file, relative to the suite file.
    pub dag: String,
    /// Path to the CSV data file, relative to the suite file.
    pub data: String,
    /// Column type overrides applied when loading the CSV.
    pub schema: BTreeMap<String, ColumnKind>,
    pub cases: Vec<CausalTestCase>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct SuiteDoc {
    dag: String,
    data: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    schema: BTreeMap<String, ColumnKind>,
    #[serde(default)]
    tests: Vec<CaseDoc>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CaseDoc {
    id: String,
    treatment: String,
    outcome: String,
    oracle: OracleDoc,
    estimator: EstimatorDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_by: Option<String>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct OracleDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tolerance: Option<f64>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EstimatorDoc {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terms: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stratify_by: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stratum: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    treatment_level: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    allow_biased: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instrument: Option<String>,
}

/// Parses one model term.
///
/// Grammar: `intercept` | `name` | `a*b` | `name^k` with k >= 2. Names may
/// not contain `*`, `^`, or whitespace.
pub fn parse_term(text: &str) -> Result<TermSpec, TestingError> {
    let bad = |message: &str| TestingError::BadTerm {
        text: text.to_string(),
        message: message.to_string(),
    };
    let name_ok = |s: &str| {
        !s.is_empty() && !s.contains(['*', '^']) && !s.chars().any(char::is_whitespace)
    };
    let s = text.trim();
    if s == "intercept" {
        return Ok(TermSpec::Intercept);
    }
    if let Some((a, b)) = s.split_once('*') {
        let (a, b) = (a.trim(), b.trim());
        if !name_ok(a) || !name_ok(b) {
            return Err(bad("interactions take exactly two variable names"));
        }
        if a == b {
            return Err(bad("interaction variables must differ"));
        }
        return Ok(TermSpec::Interaction(a.to_string(), b.to_string()));
    }
    if let Some((v, k)) = s.split_once('^') {
        let v = v.trim();
        if !name_ok(v) {
            return Err(bad("power terms take one variable name"));
        }
        let k: u32 = k
            .trim()
            .parse()
            .map_err(|_| bad("power exponent must be an integer"))?;
        if k < 2 {
            return Err(bad("power exponent must be at least 2"));
        }
        return Ok(TermSpec::Power(v.to_string(), k));
    }
    if !name_ok(s) {
        return Err(bad("empty or malformed variable name"));
    }
    Ok(TermSpec::Linear(s.to_string()))
}

fn case_from_doc(doc: CaseDoc) -> Result<CausalTestCase, TestingError> {
    let fail = |message: String| TestingError::SuiteFile(format!("test {}: {message}", doc.id));

    let oracle = match doc.oracle.kind.as_str() {
        "exact_value" => {
            let value = doc
                .oracle
                .value
                .ok_or_else(|| fail("exact_value oracle needs a value".into()))?;
            Oracle::ExactValue {
                value,
                tolerance: doc.oracle.tolerance.unwrap_or(DEFAULT_EXACT_TOLERANCE),
            }
        }
        plain => {
            if doc.oracle.value.is_some() || doc.oracle.tolerance.is_some() {
                return Err(fail(format!("oracle {plain} takes no value or tolerance")));
            }
            match plain {
                "no_effect" => Oracle::NoEffect,
                "some_effect" => Oracle::SomeEffect,
                "positive" => Oracle::Positive,
                "negative" => Oracle::Negative,
                "not_positive" => Oracle::NotPositive,
                other => return Err(fail(format!("unknown oracle kind {other}"))),
            }
        }
    };

    let estimator = match doc.estimator.kind.as_str() {
        "ols" => {
            if doc.estimator.instrument.is_some() {
                return Err(fail("ols estimators take no instrument".into()));
            }
            let term_texts = doc
                .estimator
                .terms
                .ok_or_else(|| fail("ols estimators need model terms".into()))?;
            if term_texts.is_empty() {
                return Err(fail("ols estimators need at least one term".into()));
            }
            let terms = term_texts
                .iter()
                .map(|t| parse_term(t))
                .collect::<Result<Vec<_>, _>>()?;
            EstimatorConfig::Ols(OlsConfig {
                terms,
                stratify_by: doc.estimator.stratify_by,
                stratum: doc.estimator.stratum,
                treatment_level: doc.estimator.treatment_level,
                allow_biased: doc.estimator.allow_biased.unwrap_or(false),
            })
        }
        "iv" => {
            for (name, present) in [
                ("terms", doc.estimator.terms.is_some()),
                ("stratify_by", doc.estimator.stratify_by.is_some()),
                ("stratum", doc.estimator.stratum.is_some()),
                ("treatment_level", doc.estimator.treatment_level.is_some()),
            ] {
                if present {
                    return Err(fail(format!("iv estimators take no {name}")));
                }
            }
            EstimatorConfig::Iv(IvConfig {
                instrument: doc
                    .estimator
                    .instrument
                    .ok_or_else(|| fail("iv estimators need an instrument".into()))?,
                allow_biased: doc.estimator.allow_biased.unwrap_or(false),
            })
        }
        other => return Err(fail(format!("unknown estimator type {other}"))),
    };

    Ok(CausalTestCase {
        id: doc.id,
        treatment: doc.treatment,
        outcome: doc.outcome,
        oracle,
        estimator,
        group_by: doc.group_by,
    })
}

fn case_to_doc(tc: &CausalTestCase) -> CaseDoc {
    let oracle = match &tc.oracle {
        Oracle::ExactValue { value, tolerance } => OracleDoc {
            kind: "exact_value".to_string(),
            value: Some(*value),
            tolerance: Some(*tolerance),
        },
        plain => OracleDoc {
            kind: plain.kind().to_string(),
            value: None,
            tolerance: None,
        },
    };
    let estimator = match &tc.estimator {
        EstimatorConfig::Ols(cfg) => EstimatorDoc {
            kind: "ols".to_string(),
            terms: Some(cfg.terms.iter().map(ToString::to_string).collect()),
            stratify_by: cfg.stratify_by.clone(),
            stratum: cfg.stratum.clone(),
            treatment_level: cfg.treatment_level.clone(),
            allow_biased: cfg.allow_biased.then_some(true),
            instrument: None,
        },
        EstimatorConfig::Iv(cfg) => EstimatorDoc {
            kind: "iv".to_string(),
            terms: None,
            stratify_by: None,
            stratum: None,
            treatment_level: None,
            allow_biased: cfg.allow_biased.then_some(true),
            instrument: Some(cfg.instrument.clone()),
        },
    };
    CaseDoc {
        id: tc.id.clone(),
        treatment: tc.treatment.clone(),
        outcome: tc.outcome.clone(),
        oracle,
        estimator,
        group_by: tc.group_by.clone(),
    }
}

/// Parses a TOML suite file into paths, schema overrides, and test cases.
pub fn parse_suite(text: &str) -> Result<SuiteConfig, TestingError> {
    let doc: SuiteDoc = toml::from_str(text).map_err(|e| TestingError::SuiteFile(e.to_string()))?;
    let cases = doc
        .tests
        .into_iter()
        .map(case_from_doc)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SuiteConfig {
        dag: doc.dag,
        data: doc.data,
        schema: doc.schema,
        cases,
    })
}

/// Renders a suite back to TOML; `parse_suite(render_suite(s)) == s` up to
/// the default exact-value tolerance being made explicit.
pub fn render_suite(suite: &SuiteConfig) -> String {
    let doc = SuiteDoc {
        dag: suite.dag.clone(),
        data: suite.data.clone(),
        schema: suite.schema.clone(),
        tests: suite.cases.iter().map(case_to_doc).collect(),
    };
    toml::to_string(&doc).expect("suite serializes")
}
