//! Effect estimation: design matrices from term specifications, ordinary
//! least squares with confidence intervals, and the instrumental-variable
//! ratio estimator.
//!
//! Every estimate is a *unit average treatment effect*: the expected change
//! in the outcome when the treatment increases by one (for categorical
//! treatments, when the indicator flips 0 to 1).

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::dataset::{Column, DataError, Dataset};

/// 0.975 quantile of the standard normal, used for IV ratio intervals.
pub const NORMAL_Q975: f64 = 1.959964;

/// Residual sums of squares at or below this fraction of the response
/// variance are treated as exact zero: the relationship is deterministic and
/// intervals collapse to a point.
pub const DETERMINISTIC_RSS_FRACTION: f64 = 1e-12;

/// Columns whose norm falls at or below this fraction of the largest column
/// norm count as rank deficiencies.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimationError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("term references the outcome {0}")]
    TermReferencesOutcome(String),
    #[error("interaction variables must differ (both {0})")]
    InteractionSelfPair(String),
    #[error("power exponent must be at least 2, got {0}")]
    PowerTooSmall(u32),
    #[error("power terms require a numeric variable, {0} is categorical")]
    PowerOfCategorical(String),
    #[error("design matrix is rank deficient; collinear columns: {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("insufficient data: {rows} usable rows for {params} parameters")]
    InsufficientData { rows: usize, params: usize },
    #[error("term {0} is not part of the fit")]
    TermAbsent(String),
    #[error(
        "weak instrument: first-stage coefficient {coefficient:.6e} is within \
         two standard errors ({standard_error:.6e}) of zero"
    )]
    WeakInstrument {
        coefficient: f64,
        standard_error: f64,
    },
}

/// One term of a regression model specification.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TermSpec {
    Intercept,
    Linear(String),
    /// Product of two distinct variables.
    Interaction(String, String),
    /// variable^exponent, exponent >= 2.
    Power(String, u32),
}

impl TermSpec {
    /// Variables the term reads, in spec order.
    pub fn variables(&self) -> Vec<&str> {
        match self {
            Self::Intercept => vec![],
            Self::Linear(v) => vec![v],
            Self::Interaction(a, b) => vec![a, b],
            Self::Power(v, _) => vec![v],
        }
    }

    fn validate(&self) -> Result<(), EstimationError> {
        match self {
            Self::Interaction(a, b) if a == b => {
                Err(EstimationError::InteractionSelfPair(a.clone()))
            }
            Self::Power(_, k) if *k < 2 => Err(EstimationError::PowerTooSmall(*k)),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for TermSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Intercept => f.write_str("intercept"),
            Self::Linear(v) => f.write_str(v),
            Self::Interaction(a, b) => write!(f, "{a}*{b}"),
            Self::Power(v, k) => write!(f, "{v}^{k}"),
        }
    }
}

/// One concrete design-matrix column: a term spec plus the categorical level
/// bindings its one-hot expansion fixed, in the order the variables appear.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ExpandedTerm {
    pub spec: TermSpec,
    pub levels: Vec<(String, String)>,
}

impl ExpandedTerm {
    /// A term with no categorical level bindings.
    pub fn plain(spec: TermSpec) -> Self {
        Self {
            spec,
            levels: Vec::new(),
        }
    }
}

impl fmt::Display for ExpandedTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.levels.is_empty() {
            return write!(f, "{}", self.spec);
        }
        let bound = |var: &str| {
            self.levels
                .iter()
                .find(|(v, _)| v == var)
                .map(|(v, l)| format!("{v}={l}"))
                .unwrap_or_else(|| var.to_string())
        };
        match &self.spec {
            TermSpec::Linear(v) => f.write_str(&bound(v)),
            TermSpec::Interaction(a, b) => write!(f, "{}*{}", bound(a), bound(b)),
            other => write!(f, "{other}"),
        }
    }
}

/// Design matrix, response vector, and column bookkeeping for one model.
#[derive(Debug, Clone)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub response: DVector<f64>,
    /// Column labels, in matrix column order.
    pub terms: Vec<ExpandedTerm>,
    /// Rows dropped because a referenced column was missing a value.
    pub rows_dropped: usize,
}

impl Design {
    /// Removes columns that are identically zero, returning their labels.
    ///
    /// A zero column arises when an interaction's factor is constant zero in
    /// the data (for example, a stratum that never leaves the lane). The
    /// regressor carries no information there, and keeping it would only
    /// force a rank-deficiency error, so callers may shed it and record the
    /// fact in their diagnostics.
    pub fn drop_zero_columns(&mut self) -> Vec<ExpandedTerm> {
        let mut dropped = Vec::new();
        let mut keep = Vec::new();
        for (i, term) in self.terms.iter().enumerate() {
            if self.matrix.column(i).iter().all(|v| *v == 0.0) {
                dropped.push(term.clone());
            } else {
                keep.push(i);
            }
        }
        if !dropped.is_empty() {
            self.matrix = self.matrix.select_columns(&keep);
            self.terms = keep.iter().map(|&i| self.terms[i].clone()).collect();
        }
        dropped
    }
}

/// Ordinary-least-squares result over expanded terms.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    /// Expanded terms in design order, with their coefficients and standard
    /// errors in the two parallel lookups below.
    pub terms: Vec<ExpandedTerm>,
    pub coefficients: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub residual_variance: f64,
    pub degrees_of_freedom: usize,
    /// Rows that entered the fit.
    pub n: usize,
}

impl RegressionFit {
    pub fn coefficient(&self, term: &ExpandedTerm) -> Option<f64> {
        self.index_of(term).map(|i| self.coefficients[i])
    }

    pub fn standard_error(&self, term: &ExpandedTerm) -> Option<f64> {
        self.index_of(term).map(|i| self.standard_errors[i])
    }

    fn index_of(&self, term: &ExpandedTerm) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    /// Expanded columns that realize `spec` (one for numeric terms, one per
    /// non-reference level for categorical expansions).
    pub fn expansions_of(&self, spec: &TermSpec) -> Vec<&ExpandedTerm> {
        self.terms.iter().filter(|t| &t.spec == spec).collect()
    }
}

/// Estimator provenance carried on every effect estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Ols,
    /// Ratio of two first-stage regressions on an instrument.
    IvRatio,
}

impl fmt::Display for EstimateMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Ols => "OLS",
            Self::IvRatio => "IV ratio",
        })
    }
}

/// A unit average treatment effect with a 95% confidence interval.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EffectEstimate {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Confidence level of [ci_low, ci_high]; fixed at 0.95.
    pub level: f64,
    pub method: EstimateMethod,
    pub dof: usize,
}

impl EffectEstimate {
    /// Zero-width intervals signal a deterministic relationship.
    pub fn is_degenerate(&self) -> bool {
        self.ci_low == self.point && self.ci_high == self.point
    }

    pub fn contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }

    /// True when the two intervals share no point.
    pub fn disjoint_from(&self, other: &EffectEstimate) -> bool {
        self.ci_high < other.ci_low || other.ci_high < self.ci_low
    }
}

impl fmt::Display for EffectEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.6} [{:.6}, {:.6}]",
            self.point, self.ci_low, self.ci_high
        )
    }
}

/// Builds the design matrix and response vector for `outcome ~ terms`.
///
/// Categorical variables are one-hot encoded with the lexicographically
/// first level dropped as the reference; an interaction with a categorical
/// factor expands to one product column per non-reference level (and per
/// level pair when both factors are categorical). Rows with a missing value
/// in the outcome or any referenced column are dropped and counted.
pub fn design_matrix(
    d: &Dataset,
    outcome: &str,
    terms: &[TermSpec],
) -> Result<Design, EstimationError> {
    for term in terms {
        term.validate()?;
        for var in term.variables() {
            if var == outcome {
                return Err(EstimationError::TermReferencesOutcome(outcome.into()));
            }
            d.column(var)?; // existence check up front, for a clean error
        }
    }
    let response_all = d.numeric(outcome)?;

    // Rows usable by this model: no missing value in any referenced column.
    let mut referenced: BTreeSet<&str> = terms.iter().flat_map(|t| t.variables()).collect();
    referenced.insert(outcome);
    let rows: Vec<usize> = (0..d.row_count())
        .filter(|&r| {
            referenced
                .iter()
                .all(|c| !d.column(c).expect("checked above").is_missing(r))
        })
        .collect();
    let rows_dropped = d.row_count() - rows.len();

    let mut columns: Vec<(ExpandedTerm, Vec<f64>)> = Vec::new();
    for term in terms {
        expand_term(d, term, &rows, &mut columns)?;
    }

    let n = rows.len();
    let p = columns.len();
    let mut matrix = DMatrix::zeros(n, p);
    for (j, (_, values)) in columns.iter().enumerate() {
        for (i, v) in values.iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    let response = DVector::from_iterator(
        n,
        rows.iter().map(|&r| response_all[r].expect("missing rows filtered")),
    );
    Ok(Design {
        matrix,
        response,
        terms: columns.into_iter().map(|(t, _)| t).collect(),
        rows_dropped,
    })
}

/// A factor of a product column: either a numeric column or an indicator for
/// one categorical level.
enum FactorData<'a> {
    Numeric(&'a [Option<f64>]),
    Indicator(&'a [Option<String>], String),
}

impl FactorData<'_> {
    fn value(&self, row: usize) -> f64 {
        match self {
            Self::Numeric(v) => v[row].expect("missing rows filtered"),
            Self::Indicator(v, level) => {
                let cell = v[row].as_ref().expect("missing rows filtered");
                if cell == level {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn expand_term(
    d: &Dataset,
    term: &TermSpec,
    rows: &[usize],
    out: &mut Vec<(ExpandedTerm, Vec<f64>)>,
) -> Result<(), EstimationError> {
    // Every variant reduces to a cross-product of per-variable factor lists:
    // numeric columns contribute themselves, categorical columns one
    // indicator per non-reference level.
    let factor_lists = |var: &str| -> Result<Vec<(Option<String>, FactorData<'_>)>, EstimationError> {
        match d.column(var)? {
            Column::Numeric(v) => Ok(vec![(None, FactorData::Numeric(v))]),
            Column::Categorical(v) => {
                let levels = d.column(var)?.levels();
                Ok(levels
                    .into_iter()
                    .skip(1) // lexicographic first level is the reference
                    .map(|level| {
                        (
                            Some(level.clone()),
                            FactorData::Indicator(v, level),
                        )
                    })
                    .collect())
            }
        }
    };

    match term {
        TermSpec::Intercept => {
            out.push((
                ExpandedTerm::plain(TermSpec::Intercept),
                vec![1.0; rows.len()],
            ));
        }
        TermSpec::Linear(var) => {
            for (level, factor) in factor_lists(var)? {
                let values = rows.iter().map(|&r| factor.value(r)).collect();
                let levels = match level {
                    Some(l) => vec![(var.clone(), l)],
                    None => Vec::new(),
                };
                out.push((
                    ExpandedTerm {
                        spec: term.clone(),
                        levels,
                    },
                    values,
                ));
            }
        }
        TermSpec::Interaction(a, b) => {
            for (level_a, factor_a) in factor_lists(a)? {
                for (level_b, factor_b) in factor_lists(b)? {
                    let values = rows
                        .iter()
                        .map(|&r| factor_a.value(r) * factor_b.value(r))
                        .collect();
                    let mut levels = Vec::new();
                    if let Some(l) = &level_a {
                        levels.push((a.clone(), l.clone()));
                    }
                    if let Some(l) = &level_b {
                        levels.push((b.clone(), l.clone()));
                    }
                    out.push((
                        ExpandedTerm {
                            spec: term.clone(),
                            levels,
                        },
                        values,
                    ));
                }
            }
        }
        TermSpec::Power(var, k) => match d.column(var)? {
            Column::Categorical(_) => {
                return Err(EstimationError::PowerOfCategorical(var.clone()))
            }
            Column::Numeric(v) => {
                let values = rows
                    .iter()
                    .map(|&r| v[r].expect("missing rows filtered").powi(*k as i32))
                    .collect();
                out.push((ExpandedTerm::plain(term.clone()), values));
            }
        },
    }
    Ok(())
}

/// Fits ordinary least squares via a column-pivoted QR decomposition.
///
/// Standard errors come from `residual_variance * diag((X'X)^-1)`. When the
/// residual sum of squares is numerically zero relative to the response
/// variance the fit is deterministic: the residual variance and every
/// standard error are reported as exactly 0.
pub fn ols_fit(design: &Design) -> Result<RegressionFit, EstimationError> {
    let x = &design.matrix;
    let y = &design.response;
    let (n, p) = (x.nrows(), x.ncols());
    if n <= p {
        return Err(EstimationError::InsufficientData { rows: n, params: p });
    }

    let max_col_norm = (0..p)
        .map(|j| x.column(j).norm())
        .fold(0.0_f64, f64::max);
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let tol = RANK_TOLERANCE * max_col_norm;
    let deficient: Vec<usize> = (0..p).filter(|&j| r[(j, j)].abs() <= tol).collect();
    if !deficient.is_empty() || max_col_norm == 0.0 {
        // Map the offending R diagonals back through the column permutation
        // to name the model columns involved.
        let mut order = DVector::<usize>::from_iterator(p, 0..p);
        qr.p().inv_permute_rows(&mut order);
        let names = (0..p)
            .filter(|&i| deficient.contains(&order[i]))
            .map(|i| design.terms[i].to_string())
            .collect();
        return Err(EstimationError::RankDeficient(names));
    }

    // Least squares through the factorization: solve R z = Q'y, unpermute.
    let qty = qr.q().transpose() * y;
    let z = r
        .view((0, 0), (p, p))
        .solve_upper_triangular(&qty.rows(0, p).into_owned())
        .expect("full rank checked above");
    let mut beta = z;
    qr.p().inv_permute_rows(&mut beta);

    let residuals = y - x * &beta;
    let rss: f64 = residuals.norm_squared();
    let dof = n - p;

    let mean = y.mean();
    let response_variance = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let deterministic = rss <= DETERMINISTIC_RSS_FRACTION * response_variance;
    let residual_variance = if deterministic { 0.0 } else { rss / dof as f64 };

    let standard_errors = if deterministic {
        vec![0.0; p]
    } else {
        // diag((X'X)^-1) = diag(P R^-1 R^-T P'): row norms of R^-1, unpermuted.
        let r_inv = r
            .view((0, 0), (p, p))
            .solve_upper_triangular(&DMatrix::identity(p, p))
            .expect("full rank checked above");
        let mut diag: Vec<f64> = (0..p).map(|i| r_inv.row(i).norm_squared()).collect();
        let mut diag_vec = DVector::from_vec(diag.clone());
        qr.p().inv_permute_rows(&mut diag_vec);
        diag = diag_vec.iter().copied().collect();
        diag.iter()
            .map(|d| (residual_variance * d).sqrt())
            .collect()
    };

    Ok(RegressionFit {
        terms: design.terms.clone(),
        coefficients: beta.iter().copied().collect(),
        standard_errors,
        residual_variance,
        degrees_of_freedom: dof,
        n,
    })
}

/// Convenience: design + fit in one call.
pub fn fit_model(
    d: &Dataset,
    outcome: &str,
    terms: &[TermSpec],
) -> Result<RegressionFit, EstimationError> {
    ols_fit(&design_matrix(d, outcome, terms)?)
}

/// Reads the unit average treatment effect off a fitted model: the
/// coefficient of `term` with its t-based 95% confidence interval. A zero
/// standard error yields the degenerate interval [point, point].
pub fn unit_ate(fit: &RegressionFit, term: &ExpandedTerm) -> Result<EffectEstimate, EstimationError> {
    let point = fit
        .coefficient(term)
        .ok_or_else(|| EstimationError::TermAbsent(term.to_string()))?;
    let se = fit.standard_error(term).expect("same index as coefficient");
    let (ci_low, ci_high) = if se == 0.0 {
        (point, point)
    } else {
        let t = student_t_quantile(0.975, fit.degrees_of_freedom);
        (point - t * se, point + t * se)
    };
    Ok(EffectEstimate {
        point,
        ci_low,
        ci_high,
        level: 0.95,
        method: EstimateMethod::Ols,
        dof: fit.degrees_of_freedom,
    })
}

/// Instrumental-variable ratio estimate of the effect of `treatment` on
/// `outcome`, using `instrument`.
///
/// Two intercept regressions on the instrument give the total effect on the
/// outcome and the first-stage effect on the treatment; their ratio is the
/// effect estimate. The interval is a first-order delta-method interval
/// with a normal quantile. Instruments whose first-stage coefficient is
/// within two standard errors of zero are refused: the ratio would be
/// dominated by noise.
pub fn iv_estimate(
    d: &Dataset,
    instrument: &str,
    treatment: &str,
    outcome: &str,
) -> Result<EffectEstimate, EstimationError> {
    let stage = |response: &str| -> Result<(f64, f64, usize), EstimationError> {
        let fit = fit_model(
            d,
            response,
            &[TermSpec::Intercept, TermSpec::Linear(instrument.to_string())],
        )?;
        let term = ExpandedTerm::plain(TermSpec::Linear(instrument.to_string()));
        let coefficient = fit
            .coefficient(&term)
            .ok_or_else(|| EstimationError::TermAbsent(term.to_string()))?;
        let se = fit.standard_error(&term).expect("term present");
        Ok((coefficient, se, fit.degrees_of_freedom))
    };
    let (gamma_out, se_out, dof_out) = stage(outcome)?;
    let (gamma_first, se_first, dof_first) = stage(treatment)?;

    if gamma_first.abs() <= 2.0 * se_first {
        return Err(EstimationError::WeakInstrument {
            coefficient: gamma_first,
            standard_error: se_first,
        });
    }

    let point = gamma_out / gamma_first;
    // |ratio| * sqrt((se_out/gamma_out)^2 + (se_first/gamma_first)^2),
    // written so a zero numerator stays finite.
    let se = (se_out.powi(2) / gamma_first.powi(2)
        + gamma_out.powi(2) * se_first.powi(2) / gamma_first.powi(4))
    .sqrt();
    let (ci_low, ci_high) = if se == 0.0 {
        (point, point)
    } else {
        (point - NORMAL_Q975 * se, point + NORMAL_Q975 * se)
    };
    Ok(EffectEstimate {
        point,
        ci_low,
        ci_high,
        level: 0.95,
        method: EstimateMethod::IvRatio,
        dof: dof_out.min(dof_first),
    })
}

// ---------------------------------------------------------------------------
// Student-t quantiles.
//
// The 0.975 quantile turns standard errors into 95% intervals. Computed by
// inverting the t CDF, which reduces to the regularized incomplete beta
// function; bisection is plenty fast at the call rates involved and is
// immune to the usual Newton divergence near dof = 1.
// ---------------------------------------------------------------------------

/// Quantile of the Student-t distribution with `dof` degrees of freedom.
/// `p` must lie in (0, 1); `dof` must be positive.
pub fn student_t_quantile(p: f64, dof: usize) -> f64 {
    assert!(p > 0.0 && p < 1.0, "p must be in (0, 1)");
    assert!(dof > 0, "degrees of freedom must be positive");
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, dof);
    }
    // Bracket the root: the CDF is strictly increasing.
    let mut lo = 0.0_f64;
    let mut hi = 2.0_f64;
    while student_t_cdf(hi, dof) < p {
        hi *= 2.0;
        assert!(hi.is_finite(), "quantile bracket diverged");
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break; // interval collapsed to adjacent floats
        }
        if student_t_cdf(mid, dof) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// CDF of the Student-t distribution via the regularized incomplete beta.
fn student_t_cdf(t: f64, dof: usize) -> f64 {
    let v = dof as f64;
    let x = v / (v + t * t);
    let tail = 0.5 * regularized_incomplete_beta(0.5 * v, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Regularized incomplete beta function I_x(a, b) by continued fraction.
fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!((0.0..=1.0).contains(&x));
    if x == 0.0 {
        return 0.0;
    }
    if x == 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() + ln_gamma(a + b)
        - ln_gamma(a)
        - ln_gamma(b);
    // The continued fraction converges fast only for x below the mean
    // a/(a+b); use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - regularized_incomplete_beta(b, a, 1.0 - x)
    }
}

/// Continued-fraction kernel of the incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            return h;
        }
    }
    h // converged to machine precision long before this for our arguments
}

/// Natural log of the gamma function (Lanczos approximation, g = 7).
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection for the left half-plane.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, c) in COEFFS.iter().enumerate() {
        acc += c / (x + i as f64 + 1.0);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
