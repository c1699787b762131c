//! Columnar run data: CSV ingestion with type inference, stratification by
//! categorical columns, and positivity diagnostics.
//!
//! Datasets are immutable after construction. Missing values are allowed in
//! both column kinds; how they are handled (dropped per referenced column)
//! is the caller's policy, implemented in the testing pipeline.

use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("csv parse error: {0}")]
    Csv(String),
    #[error("duplicate header {0}")]
    DuplicateHeader(String),
    #[error("row {row} has {got} fields, expected {want}")]
    Ragged { row: usize, got: usize, want: usize },
    #[error("schema references missing column {0}")]
    SchemaUnknownColumn(String),
    #[error("column {column}, row {row}: {value:?} is not numeric")]
    NotNumeric {
        column: String,
        row: usize,
        value: String,
    },
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {0} is numeric, expected categorical")]
    NotCategorical(String),
    #[error("column {0} is categorical, expected numeric")]
    ExpectedNumeric(String),
    #[error("columns differ in length: {0} has {1} rows, expected {2}")]
    LengthMismatch(String, usize, usize),
    #[error("empty column name")]
    EmptyColumnName,
}

/// Declared or inferred column kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

impl fmt::Display for ColumnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Numeric => "numeric",
            Self::Categorical => "categorical",
        })
    }
}

/// One column of observations; `None` entries are missing cells.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Numeric(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Self::Numeric(v) => v.len(),
            Self::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            Self::Numeric(_) => ColumnKind::Numeric,
            Self::Categorical(_) => ColumnKind::Categorical,
        }
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            Self::Numeric(v) => v[row].is_none(),
            Self::Categorical(v) => v[row].is_none(),
        }
    }

    /// Distinct non-missing values in lexicographic order. The first level
    /// doubles as the regression reference level.
    pub fn levels(&self) -> Vec<String> {
        match self {
            Self::Numeric(_) => Vec::new(),
            Self::Categorical(v) => {
                let mut levels: Vec<String> =
                    v.iter().flatten().cloned().collect::<std::collections::BTreeSet<_>>()
                        .into_iter()
                        .collect();
                levels.dedup();
                levels
            }
        }
    }
}

/// Positivity diagnostic for one variable: which required levels (or
/// intervals) actually carry observations.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PositivityReport {
    pub variable: String,
    /// Levels (or interval labels) with at least one observation.
    pub observed_levels: Vec<String>,
    /// Required levels with zero observations.
    pub missing_levels: Vec<String>,
    pub per_level_counts: BTreeMap<String, usize>,
}

impl PositivityReport {
    /// True when every required level carries data.
    pub fn satisfied(&self) -> bool {
        self.missing_levels.is_empty()
    }
}

/// An immutable table of observations with uniquely named, equal-length
/// columns in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    names: Vec<String>,
    columns: BTreeMap<String, Column>,
    row_count: usize,
}

impl Dataset {
    pub fn new(columns: Vec<(String, Column)>) -> Result<Self, DataError> {
        let row_count = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        let mut names = Vec::with_capacity(columns.len());
        let mut map = BTreeMap::new();
        for (name, column) in columns {
            if name.is_empty() {
                return Err(DataError::EmptyColumnName);
            }
            if column.len() != row_count {
                return Err(DataError::LengthMismatch(name, column.len(), row_count));
            }
            if map.insert(name.clone(), column).is_some() {
                return Err(DataError::DuplicateHeader(name));
            }
            names.push(name);
        }
        Ok(Self {
            names,
            columns: map,
            row_count,
        })
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    /// Column names in original (header) order.
    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column, DataError> {
        self.columns
            .get(name)
            .ok_or_else(|| DataError::UnknownColumn(name.to_string()))
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>], DataError> {
        match self.column(name)? {
            Column::Numeric(v) => Ok(v),
            Column::Categorical(_) => Err(DataError::ExpectedNumeric(name.to_string())),
        }
    }

    pub fn categorical(&self, name: &str) -> Result<&[Option<String>], DataError> {
        match self.column(name)? {
            Column::Categorical(v) => Ok(v),
            Column::Numeric(_) => Err(DataError::NotCategorical(name.to_string())),
        }
    }

    /// New dataset containing the rows at `rows` (in the given order).
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let columns = self
            .names
            .iter()
            .map(|name| {
                let column = match &self.columns[name] {
                    Column::Numeric(v) => {
                        Column::Numeric(rows.iter().map(|&r| v[r]).collect())
                    }
                    Column::Categorical(v) => {
                        Column::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
                    }
                };
                (name.clone(), column)
            })
            .collect();
        Self::new(columns).expect("projection preserves invariants")
    }

    /// New dataset without the named columns; unknown names are ignored.
    pub fn drop_columns(&self, names: &[String]) -> Self {
        let keep: Vec<(String, Column)> = self
            .names
            .iter()
            .filter(|n| !names.contains(n))
            .map(|n| (n.clone(), self.columns[n].clone()))
            .collect();
        Self::new(keep).expect("column removal preserves invariants")
    }

    /// Partitions rows by the level of a categorical column. Rows with a
    /// missing level belong to no stratum; each stratum keeps all columns.
    pub fn stratify(&self, by: &str) -> Result<BTreeMap<String, Dataset>, DataError> {
        let levels = self.categorical(by)?;
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (row, level) in levels.iter().enumerate() {
            if let Some(level) = level {
                groups.entry(level.clone()).or_default().push(row);
            }
        }
        Ok(groups
            .into_iter()
            .map(|(level, rows)| (level, self.select_rows(&rows)))
            .collect())
    }

    /// Counts observations per required level. For categorical variables the
    /// required levels are literal; for numeric variables they are interval
    /// endpoints `e1 < e2 < ... < ek` defining bins [e1,e2), ..., [e(k-1),ek]
    /// and each bin label reports its observation count.
    pub fn positivity_check(
        &self,
        variable: &str,
        required_levels: &[String],
    ) -> Result<PositivityReport, DataError> {
        match self.column(variable)? {
            Column::Categorical(values) => {
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                for v in values.iter().flatten() {
                    *counts.entry(v.clone()).or_insert(0) += 1;
                }
                let missing = required_levels
                    .iter()
                    .filter(|l| !counts.contains_key(*l))
                    .cloned()
                    .collect();
                Ok(PositivityReport {
                    variable: variable.to_string(),
                    observed_levels: counts.keys().cloned().collect(),
                    missing_levels: missing,
                    per_level_counts: counts,
                })
            }
            Column::Numeric(values) => {
                let mut endpoints = Vec::with_capacity(required_levels.len());
                for raw in required_levels {
                    let e: f64 = raw.parse().map_err(|_| DataError::NotNumeric {
                        column: variable.to_string(),
                        row: 0,
                        value: raw.clone(),
                    })?;
                    endpoints.push(e);
                }
                let mut counts: BTreeMap<String, usize> = BTreeMap::new();
                let mut labels = Vec::new();
                for pair in endpoints.windows(2) {
                    let label = format!("[{}, {})", pair[0], pair[1]);
                    labels.push((label.clone(), pair[0], pair[1]));
                    counts.insert(label, 0);
                }
                for v in values.iter().flatten() {
                    for (i, (bin, lo, hi)) in labels.iter().enumerate() {
                        // The final bin is closed above so the top endpoint
                        // is countable.
                        let inside = if i + 1 == labels.len() {
                            *v >= *lo && *v <= *hi
                        } else {
                            *v >= *lo && *v < *hi
                        };
                        if inside {
                            *counts.get_mut(bin).unwrap() += 1;
                            break;
                        }
                    }
                }
                let observed = labels
                    .iter()
                    .filter(|(bin, _, _)| counts[bin] > 0)
                    .map(|(bin, _, _)| bin.clone())
                    .collect();
                let missing = labels
                    .iter()
                    .filter(|(bin, _, _)| counts[bin] == 0)
                    .map(|(bin, _, _)| bin.clone())
                    .collect();
                Ok(PositivityReport {
                    variable: variable.to_string(),
                    observed_levels: observed,
                    missing_levels: missing,
                    per_level_counts: counts,
                })
            }
        }
    }

    /// Renders the dataset as CSV. Floats are printed with enough digits to
    /// round-trip (`load_csv(write_csv(d)) == d` up to 15 significant
    /// digits); missing cells are empty.
    pub fn write_csv(&self) -> String {
        let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
        wtr.write_record(&self.names).expect("in-memory write");
        for row in 0..self.row_count {
            let record: Vec<String> = self
                .names
                .iter()
                .map(|name| match &self.columns[name] {
                    Column::Numeric(v) => {
                        v[row].map(format_float).unwrap_or_default()
                    }
                    Column::Categorical(v) => v[row].clone().unwrap_or_default(),
                })
                .collect();
            wtr.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

/// Shortest decimal representation that parses back to the same f64.
fn format_float(v: f64) -> String {
    let mut s = format!("{v}");
    if s.parse::<f64>() != Ok(v) {
        s = format!("{v:e}");
    }
    s
}

/// Parses CSV text (RFC-4180 quoting, header row required, empty cell =
/// missing) into a typed [`Dataset`].
///
/// Columns named in `schema` take the declared kind; a non-numeric value in a
/// declared numeric column is an error. Unnamed columns are inferred: if
/// every non-missing cell parses as a number the column is numeric,
/// otherwise categorical.
pub fn load_csv(
    text: &str,
    schema: &BTreeMap<String, ColumnKind>,
) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    for name in &headers {
        if name.is_empty() {
            return Err(DataError::EmptyColumnName);
        }
        if headers.iter().filter(|h| *h == name).count() > 1 {
            return Err(DataError::DuplicateHeader(name.clone()));
        }
    }
    for name in schema.keys() {
        if !headers.contains(name) {
            return Err(DataError::SchemaUnknownColumn(name.clone()));
        }
    }

    let mut cells: Vec<Vec<Option<String>>> = vec![Vec::new(); headers.len()];
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(DataError::Ragged {
                row: i + 2, // 1-based, after the header line
                got: record.len(),
                want: headers.len(),
            });
        }
        for (c, field) in record.iter().enumerate() {
            cells[c].push(if field.is_empty() {
                None
            } else {
                Some(field.to_string())
            });
        }
    }

    let mut columns = Vec::with_capacity(headers.len());
    for (name, raw) in headers.into_iter().zip(cells) {
        let kind = schema.get(&name).copied().unwrap_or_else(|| {
            let all_numeric = raw
                .iter()
                .flatten()
                .all(|v| parse_number(v).is_some());
            if all_numeric {
                ColumnKind::Numeric
            } else {
                ColumnKind::Categorical
            }
        });
        let column = match kind {
            ColumnKind::Numeric => {
                let mut values = Vec::with_capacity(raw.len());
                for (row, cell) in raw.into_iter().enumerate() {
                    match cell {
                        None => values.push(None),
                        Some(text) => match parse_number(&text) {
                            Some(v) => values.push(Some(v)),
                            None => {
                                return Err(DataError::NotNumeric {
                                    column: name,
                                    row: row + 2,
                                    value: text,
                                })
                            }
                        },
                    }
                }
                Column::Numeric(values)
            }
            ColumnKind::Categorical => Column::Categorical(raw),
        };
        columns.push((name, column));
    }
    Dataset::new(columns)
}

/// Decimal notation with optional sign and exponent; no locale handling, no
/// infinities or NaN from data files.
fn parse_number(text: &str) -> Option<f64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let rest = t.strip_prefix(['+', '-']).unwrap_or(t);
    if !rest.starts_with(|c: char| c.is_ascii_digit() || c == '.') {
        return None; // rejects inf/nan spellings that f64::from_str accepts
    }
    t.parse::<f64>().ok().filter(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn no_schema() -> BTreeMap<String, ColumnKind> {
        BTreeMap::new()
    }

    #[test]
    fn loads_numeric_table() {
        let d = load_csv("x,y\n1,2\n3,4\n", &no_schema()).unwrap();
        assert_eq!(d.row_count(), 2);
        assert_eq!(d.numeric("x").unwrap(), &[Some(1.0), Some(3.0)]);
        assert_eq!(d.numeric("y").unwrap(), &[Some(2.0), Some(4.0)]);
    }

    #[test]
    fn infers_categorical_with_sorted_levels() {
        let d = load_csv("infraction\nred_light\nnone\nnone\n", &no_schema()).unwrap();
        let col = d.column("infraction").unwrap();
        assert_eq!(col.kind(), ColumnKind::Categorical);
        assert_eq!(col.levels(), vec!["none".to_string(), "red_light".to_string()]);
    }

    #[test]
    fn schema_overrides_inference() {
        let mut schema = BTreeMap::new();
        schema.insert("version".to_string(), ColumnKind::Categorical);
        let d = load_csv("version\n1\n2\n", &schema).unwrap();
        assert_eq!(d.column("version").unwrap().kind(), ColumnKind::Categorical);
    }

    #[test]
    fn numeric_schema_rejects_text() {
        let mut schema = BTreeMap::new();
        schema.insert("x".to_string(), ColumnKind::Numeric);
        let err = load_csv("x\nfoo\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::NotNumeric { .. }), "{err}");
    }

    #[test]
    fn empty_cells_are_missing() {
        let d = load_csv("x,y\n1,\n,b\n", &no_schema()).unwrap();
        assert_eq!(d.numeric("x").unwrap(), &[Some(1.0), None]);
        assert_eq!(
            d.categorical("y").unwrap(),
            &[None, Some("b".to_string())]
        );
    }

    #[test]
    fn rejects_ragged_rows() {
        let err = load_csv("x,y\n1,2\n3\n", &no_schema()).unwrap_err();
        assert!(matches!(err, DataError::Ragged { row: 3, .. }), "{err}");
    }

    #[test]
    fn rejects_duplicate_headers() {
        let err = load_csv("x,x\n1,2\n", &no_schema()).unwrap_err();
        assert!(matches!(err, DataError::DuplicateHeader(_)), "{err}");
    }

    #[test]
    fn rejects_schema_for_absent_column() {
        let mut schema = BTreeMap::new();
        schema.insert("ghost".to_string(), ColumnKind::Numeric);
        let err = load_csv("x\n1\n", &schema).unwrap_err();
        assert!(matches!(err, DataError::SchemaUnknownColumn(_)), "{err}");
    }

    #[test]
    fn rejects_non_finite_spellings() {
        let d = load_csv("x\ninf\nnan\n", &no_schema()).unwrap();
        // Both rows fail numeric parsing, so the column falls back to
        // categorical rather than smuggling non-finite floats in.
        assert_eq!(d.column("x").unwrap().kind(), ColumnKind::Categorical);
    }

    #[test]
    fn quoted_fields_follow_rfc4180() {
        let d = load_csv("a,b\n\"x,1\",\"say \"\"hi\"\"\"\n", &no_schema()).unwrap();
        assert_eq!(
            d.categorical("a").unwrap(),
            &[Some("x,1".to_string())]
        );
        assert_eq!(
            d.categorical("b").unwrap(),
            &[Some("say \"hi\"".to_string())]
        );
    }

    #[test]
    fn stratify_partitions_rows() {
        let d = load_csv(
            "infraction,score\nnone,1\nred_light,2\nnone,3\nnone,4\nred_light,5\n",
            &no_schema(),
        )
        .unwrap();
        let strata = d.stratify("infraction").unwrap();
        assert_eq!(strata.len(), 2);
        assert_eq!(strata["none"].row_count(), 3);
        assert_eq!(strata["red_light"].row_count(), 2);
        assert_eq!(
            strata["none"].numeric("score").unwrap(),
            &[Some(1.0), Some(3.0), Some(4.0)]
        );
    }

    #[test]
    fn stratify_skips_missing_levels_and_keeps_columns() {
        let d = load_csv("g,x\na,1\n,2\nb,3\n", &no_schema()).unwrap();
        let strata = d.stratify("g").unwrap();
        let total: usize = strata.values().map(|s| s.row_count()).sum();
        assert_eq!(total, 2);
        for s in strata.values() {
            assert_eq!(s.column_names(), d.column_names());
        }
    }

    #[test]
    fn stratify_rejects_numeric_column() {
        let d = load_csv("x\n1\n", &no_schema()).unwrap();
        assert!(matches!(
            d.stratify("x").unwrap_err(),
            DataError::NotCategorical(_)
        ));
    }

    #[test]
    fn positivity_flags_absent_levels() {
        let d = load_csv("infraction\nnone\nnone\nred_light\n", &no_schema()).unwrap();
        let report = d
            .positivity_check(
                "infraction",
                &["none".into(), "red_light".into(), "collisions_pedestrian".into()],
            )
            .unwrap();
        assert_eq!(report.missing_levels, vec!["collisions_pedestrian".to_string()]);
        assert_eq!(report.per_level_counts["none"], 2);
        assert!(!report.satisfied());
    }

    #[test]
    fn positivity_numeric_bins_count_rows() {
        let d = load_csv("x\n0.1\n0.5\n0.9\n1.0\n", &no_schema()).unwrap();
        let report = d
            .positivity_check("x", &["0".into(), "0.5".into(), "1".into()])
            .unwrap();
        assert_eq!(report.per_level_counts["[0, 0.5)"], 1);
        // The last bin is closed above, so 1.0 lands inside it.
        assert_eq!(report.per_level_counts["[0.5, 1)"], 3);
        assert!(report.satisfied());
    }

    #[test]
    fn csv_round_trip_preserves_data() {
        let d = load_csv(
            "x,label\n0.1234567890123456,alpha\n-3.5e-7,\n,beta\n",
            &no_schema(),
        )
        .unwrap();
        let again = load_csv(&d.write_csv(), &no_schema()).unwrap();
        assert_eq!(d, again);
    }

    #[test]
    fn select_rows_projects_in_order() {
        let d = load_csv("x\n10\n20\n30\n", &no_schema()).unwrap();
        let s = d.select_rows(&[2, 0]);
        assert_eq!(s.numeric("x").unwrap(), &[Some(30.0), Some(10.0)]);
    }

    proptest::proptest! {
        #[test]
        fn stratification_is_a_partition(levels in proptest::collection::vec(0u8..4, 0..60)) {
            let mut csv = String::from("g,row\n");
            for (i, l) in levels.iter().enumerate() {
                csv.push_str(&format!("g{l},{i}\n"));
            }
            let mut schema = BTreeMap::new();
            schema.insert("g".to_string(), ColumnKind::Categorical);
            let d = load_csv(&csv, &schema).unwrap();
            let strata = d.stratify("g").unwrap();
            let total: usize = strata.values().map(|s| s.row_count()).sum();
            proptest::prop_assert_eq!(total, d.row_count());
            // Row ids across strata are disjoint and cover the originals.
            let mut seen: Vec<f64> = strata
                .values()
                .flat_map(|s| s.numeric("row").unwrap().iter().map(|v| v.unwrap()))
                .collect();
            seen.sort_by(f64::total_cmp);
            let want: Vec<f64> = (0..levels.len()).map(|i| i as f64).collect();
            proptest::prop_assert_eq!(seen, want);
        }
    }
}
