//! Two-period two-group panel data: loading, validation, and the
//! contingency-table representation for discrete outcomes.

use std::collections::HashSet;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Declared measurement scale of the outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Continuous,
    Count,
    Binary,
}

/// Input file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    Wide,
    Long,
    Contingency,
}

/// One unit observed in both periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelUnit {
    pub unit_id: String,
    /// Group indicator: 1 = treated, 0 = control.
    pub group: u8,
    pub y_pre: f64,
    pub y_post: f64,
    pub stratum: Option<String>,
}

/// An immutable two-period two-group panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub units: Vec<PanelUnit>,
    pub outcome_kind: OutcomeKind,
    /// When loaded from a top-coded contingency table, the level that means
    /// "this value and above", materialized at its numeric floor.
    pub top_code: Option<i64>,
}

impl PanelDataset {
    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn n_treated(&self) -> usize {
        self.units.iter().filter(|u| u.group == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.units.iter().filter(|u| u.group == 0).count()
    }

    pub fn treated(&self) -> impl Iterator<Item = &PanelUnit> {
        self.units.iter().filter(|u| u.group == 1)
    }

    pub fn control(&self) -> impl Iterator<Item = &PanelUnit> {
        self.units.iter().filter(|u| u.group == 0)
    }

    /// Dichotomize outcomes at >= 1, preserving everything else.
    pub fn dichotomized(&self) -> PanelDataset {
        let units = self
            .units
            .iter()
            .map(|u| PanelUnit {
                unit_id: u.unit_id.clone(),
                group: u.group,
                y_pre: if u.y_pre >= 1.0 { 1.0 } else { 0.0 },
                y_post: if u.y_post >= 1.0 { 1.0 } else { 0.0 },
                stratum: u.stratum.clone(),
            })
            .collect();
        PanelDataset {
            units,
            outcome_kind: OutcomeKind::Binary,
            top_code: None,
        }
    }
}

/// One cell of a contingency table for discrete outcomes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyCell {
    pub group: u8,
    pub y_pre: i64,
    pub y_post: i64,
    pub count: u64,
}

/// Cross-tabulated discrete panel data (e.g. crash counts by before/after level).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub cells: Vec<ContingencyCell>,
    /// Highest level is "this value and above" when set.
    pub top_code: Option<i64>,
}

/// A single invariant violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub unit_id: Option<String>,
    pub message: String,
}

/// Report every invariant violation in the dataset. The dataset is usable by
/// the estimators iff the returned list is empty.
pub fn validate(ds: &PanelDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    for u in &ds.units {
        if u.group > 1 {
            out.push(Violation {
                unit_id: Some(u.unit_id.clone()),
                message: format!("unknown group code {}", u.group),
            });
        }
        if !u.y_pre.is_finite() || !u.y_post.is_finite() {
            out.push(Violation {
                unit_id: Some(u.unit_id.clone()),
                message: "non-finite outcome".into(),
            });
            continue;
        }
        match ds.outcome_kind {
            OutcomeKind::Binary => {
                for y in [u.y_pre, u.y_post] {
                    if y != 0.0 && y != 1.0 {
                        out.push(Violation {
                            unit_id: Some(u.unit_id.clone()),
                            message: format!("outcome out of range for binary data: {y}"),
                        });
                    }
                }
            }
            OutcomeKind::Count => {
                for y in [u.y_pre, u.y_post] {
                    if y < 0.0 || y.fract() != 0.0 {
                        out.push(Violation {
                            unit_id: Some(u.unit_id.clone()),
                            message: format!("outcome is not a nonnegative integer: {y}"),
                        });
                    }
                }
            }
            OutcomeKind::Continuous => {}
        }
    }
    if !ds.units.iter().any(|u| u.group == 0) {
        out.push(Violation {
            unit_id: None,
            message: "control group empty".into(),
        });
    }
    if !ds.units.iter().any(|u| u.group == 1) {
        out.push(Violation {
            unit_id: None,
            message: "treatment group empty".into(),
        });
    }
    out
}

fn check_valid(ds: PanelDataset) -> Result<PanelDataset> {
    let violations = validate(&ds);
    if violations.is_empty() {
        Ok(ds)
    } else {
        let msgs: Vec<String> = violations
            .iter()
            .map(|v| match &v.unit_id {
                Some(id) => format!("{} (unit {id})", v.message),
                None => v.message.clone(),
            })
            .collect();
        Err(Error::Validation(msgs.join("; ")))
    }
}

/// Load and validate a panel from CSV bytes in the declared layout.
///
/// `top_code` is only meaningful for the contingency layout and records that
/// the highest level means "this value and above".
pub fn load_panel<R: Read>(
    source: R,
    layout: Layout,
    outcome_kind: OutcomeKind,
    top_code: Option<i64>,
) -> Result<PanelDataset> {
    match layout {
        Layout::Wide => load_wide(source, outcome_kind),
        Layout::Long => load_long(source, outcome_kind),
        Layout::Contingency => {
            let table = load_contingency_table(source, top_code)?;
            expand_contingency(&table, outcome_kind)
        }
    }
}

struct RowReader<R: Read> {
    reader: csv::Reader<R>,
}

impl<R: Read> RowReader<R> {
    fn new(source: R) -> Self {
        let reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(false)
            .from_reader(source);
        RowReader { reader }
    }

    fn headers(&mut self) -> Result<Vec<String>> {
        let hs = self
            .reader
            .headers()
            .map_err(|e| csv_error(e))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        Ok(hs)
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = match e.position() {
        Some(p) => p.line(),
        None => 0,
    };
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, name: &str, line: u64) -> Result<T> {
    field.parse::<T>().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {name} from {field:?}"),
    })
}

fn parse_group(field: &str, line: u64) -> Result<u8> {
    match field {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Validation(format!(
            "unknown group code {other:?} at line {line}"
        ))),
    }
}

fn expect_headers(actual: &[String], required: &[&str], optional: &[&str]) -> Result<()> {
    let want: Vec<&str> = required.to_vec();
    let ok_exact = actual.len() == want.len() && actual.iter().zip(&want).all(|(a, w)| a == w);
    let with_opt: Vec<&str> = required.iter().chain(optional.iter()).copied().collect();
    let ok_opt =
        actual.len() == with_opt.len() && actual.iter().zip(&with_opt).all(|(a, w)| a == w);
    if ok_exact || ok_opt {
        Ok(())
    } else {
        Err(Error::Parse {
            line: 1,
            message: format!(
                "unexpected header {:?}; expected {:?} (optionally followed by {:?})",
                actual, required, optional
            ),
        })
    }
}

fn load_wide<R: Read>(source: R, outcome_kind: OutcomeKind) -> Result<PanelDataset> {
    let mut rr = RowReader::new(source);
    let headers = rr.headers()?;
    expect_headers(&headers, &["unit", "group", "y_pre", "y_post"], &["stratum"])?;
    let has_stratum = headers.len() == 5;

    let mut units = Vec::new();
    for record in rr.reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        units.push(PanelUnit {
            unit_id: record[0].to_string(),
            group: parse_group(&record[1], line)?,
            y_pre: parse_field(&record[2], "y_pre", line)?,
            y_post: parse_field(&record[3], "y_post", line)?,
            stratum: if has_stratum {
                Some(record[4].to_string())
            } else {
                None
            },
        });
    }
    check_valid(PanelDataset {
        units,
        outcome_kind,
        top_code: None,
    })
}

fn load_long<R: Read>(source: R, outcome_kind: OutcomeKind) -> Result<PanelDataset> {
    let mut rr = RowReader::new(source);
    let headers = rr.headers()?;
    expect_headers(&headers, &["unit", "period", "group", "y"], &["stratum"])?;
    let has_stratum = headers.len() == 5;

    struct LongRow {
        period: String,
        group: u8,
        y: f64,
        stratum: Option<String>,
    }

    // Preserve first-appearance order of units.
    let mut order: Vec<String> = Vec::new();
    let mut rows: std::collections::HashMap<String, Vec<LongRow>> = Default::default();
    let mut periods: Vec<String> = Vec::new();

    for record in rr.reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let unit = record[0].to_string();
        let period = record[1].to_string();
        if !periods.contains(&period) {
            periods.push(period.clone());
        }
        let row = LongRow {
            period,
            group: parse_group(&record[2], line)?,
            y: parse_field(&record[3], "y", line)?,
            stratum: if has_stratum {
                Some(record[4].to_string())
            } else {
                None
            },
        };
        if !rows.contains_key(&unit) {
            order.push(unit.clone());
        }
        rows.entry(unit).or_default().push(row);
    }

    if periods.len() != 2 {
        return Err(Error::Validation(format!(
            "long layout requires exactly two distinct period values, found {}",
            periods.len()
        )));
    }
    // Smaller period value is "pre": numeric when both parse, else lexicographic.
    let (pre, post) = {
        let a = periods[0].clone();
        let b = periods[1].clone();
        let swapped = match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(x), Ok(y)) => x > y,
            _ => a > b,
        };
        if swapped {
            (b, a)
        } else {
            (a, b)
        }
    };

    let mut units = Vec::new();
    for unit_id in order {
        let unit_rows = &rows[&unit_id];
        if unit_rows.len() != 2 {
            return Err(Error::Validation(format!(
                "unit {unit_id:?} appears in {} periods, expected 2",
                unit_rows.len()
            )));
        }
        let row_pre = unit_rows.iter().find(|r| r.period == pre);
        let row_post = unit_rows.iter().find(|r| r.period == post);
        let (row_pre, row_post) = match (row_pre, row_post) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Validation(format!(
                    "unit {unit_id:?} does not appear exactly once in each period"
                )))
            }
        };
        if row_pre.group != row_post.group {
            return Err(Error::Validation(format!(
                "unit {unit_id:?} changes group across periods"
            )));
        }
        if row_pre.stratum != row_post.stratum {
            return Err(Error::Validation(format!(
                "unit {unit_id:?} changes stratum across periods"
            )));
        }
        units.push(PanelUnit {
            unit_id,
            group: row_pre.group,
            y_pre: row_pre.y,
            y_post: row_post.y,
            stratum: row_pre.stratum.clone(),
        });
    }
    check_valid(PanelDataset {
        units,
        outcome_kind,
        top_code: None,
    })
}

fn load_contingency_table<R: Read>(source: R, top_code: Option<i64>) -> Result<ContingencyTable> {
    let mut rr = RowReader::new(source);
    let headers = rr.headers()?;
    expect_headers(&headers, &["group", "y_pre", "y_post", "count"], &[])?;

    let mut cells = Vec::new();
    for record in rr.reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        cells.push(ContingencyCell {
            group: parse_group(&record[0], line)?,
            y_pre: parse_field(&record[1], "y_pre", line)?,
            y_post: parse_field(&record[2], "y_post", line)?,
            count: parse_field(&record[3], "count", line)?,
        });
    }
    Ok(ContingencyTable { cells, top_code })
}

/// Materialize a contingency table as one unit per count. Top-coded levels
/// keep their numeric floor; the dataset records the top code so reports can
/// flag the truncation.
pub fn expand_contingency(
    table: &ContingencyTable,
    outcome_kind: OutcomeKind,
) -> Result<PanelDataset> {
    let mut seen: HashSet<(u8, i64, i64)> = HashSet::new();
    for cell in &table.cells {
        if !seen.insert((cell.group, cell.y_pre, cell.y_post)) {
            return Err(Error::Validation(format!(
                "duplicate contingency cell (group={}, y_pre={}, y_post={})",
                cell.group, cell.y_pre, cell.y_post
            )));
        }
    }

    let mut units = Vec::new();
    for cell in &table.cells {
        for k in 0..cell.count {
            units.push(PanelUnit {
                unit_id: format!("g{}-{}-{}-{}", cell.group, cell.y_pre, cell.y_post, k),
                group: cell.group,
                y_pre: cell.y_pre as f64,
                y_post: cell.y_post as f64,
                stratum: None,
            });
        }
    }
    check_valid(PanelDataset {
        units,
        outcome_kind,
        top_code: table.top_code,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY_WIDE: &str = "unit,group,y_pre,y_post\n\
        c1,0,0,0\n\
        c2,0,1,1\n\
        c3,0,2,3\n\
        t1,1,1,2\n\
        t2,1,3,5\n";

    const TINY_LONG: &str = "unit,period,group,y\n\
        c1,1,0,0\n\
        c1,2,0,0\n\
        c2,1,0,1\n\
        c2,2,0,1\n\
        c3,1,0,2\n\
        c3,2,0,3\n\
        t1,1,1,1\n\
        t1,2,1,2\n\
        t2,1,1,3\n\
        t2,2,1,5\n";

    #[test]
    fn wide_maps_rows_to_units() {
        let ds = load_panel(
            TINY_WIDE.as_bytes(),
            Layout::Wide,
            OutcomeKind::Count,
            None,
        )
        .unwrap();
        assert_eq!(ds.n(), 5);
        assert_eq!(ds.n_treated(), 2);
        assert_eq!(ds.units[0].unit_id, "c1");
        assert_eq!(ds.units[4].y_post, 5.0);
    }

    #[test]
    fn long_and_wide_agree_up_to_order() {
        let wide = load_panel(
            TINY_WIDE.as_bytes(),
            Layout::Wide,
            OutcomeKind::Count,
            None,
        )
        .unwrap();
        let long = load_panel(
            TINY_LONG.as_bytes(),
            Layout::Long,
            OutcomeKind::Count,
            None,
        )
        .unwrap();
        let mut a = wide.units.clone();
        let mut b = long.units.clone();
        a.sort_by(|x, y| x.unit_id.cmp(&y.unit_id));
        b.sort_by(|x, y| x.unit_id.cmp(&y.unit_id));
        assert_eq!(a, b);
    }

    #[test]
    fn long_period_order_is_numeric_when_possible() {
        // Period "10" is post relative to "2" numerically, pre lexicographically.
        let csv = "unit,period,group,y\n\
            c1,10,0,7\n\
            c1,2,0,1\n\
            t1,10,1,9\n\
            t1,2,1,3\n";
        let ds = load_panel(csv.as_bytes(), Layout::Long, OutcomeKind::Count, None).unwrap();
        let c1 = &ds.units[0];
        assert_eq!((c1.y_pre, c1.y_post), (1.0, 7.0));
    }

    #[test]
    fn long_unit_in_wrong_number_of_periods_errors() {
        let csv = "unit,period,group,y\n\
            c1,1,0,0\n\
            c1,2,0,0\n\
            c1,2,0,1\n\
            t1,1,1,1\n\
            t1,2,1,2\n";
        let err = load_panel(csv.as_bytes(), Layout::Long, OutcomeKind::Count, None).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn unknown_group_code_errors() {
        let csv = "unit,group,y_pre,y_post\nu1,2,0,0\nu2,0,1,1\n";
        let err = load_panel(csv.as_bytes(), Layout::Wide, OutcomeKind::Count, None).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let csv = "unit,group,y_pre,y_post\nu1,0,abc,0\n";
        let err = load_panel(csv.as_bytes(), Layout::Wide, OutcomeKind::Count, None).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn only_treated_rows_errors_with_empty_control() {
        let csv = "unit,group,y_pre,y_post\nu1,1,0,0\nu2,1,1,1\n";
        let err = load_panel(csv.as_bytes(), Layout::Wide, OutcomeKind::Count, None).unwrap_err();
        assert!(err.to_string().contains("control group empty"), "{err}");
    }

    #[test]
    fn validate_flags_nan_and_binary_range() {
        let ds = PanelDataset {
            units: vec![
                PanelUnit {
                    unit_id: "a".into(),
                    group: 0,
                    y_pre: 0.0,
                    y_post: f64::NAN,
                    stratum: None,
                },
                PanelUnit {
                    unit_id: "b".into(),
                    group: 1,
                    y_pre: 2.0,
                    y_post: 1.0,
                    stratum: None,
                },
            ],
            outcome_kind: OutcomeKind::Binary,
            top_code: None,
        };
        let report = validate(&ds);
        assert!(report.iter().any(|v| v.message == "non-finite outcome"));
        assert!(report.iter().any(|v| v.message.contains("out of range")));
    }

    #[test]
    fn expand_is_count_preserving() {
        let table = ContingencyTable {
            cells: vec![
                ContingencyCell {
                    group: 0,
                    y_pre: 0,
                    y_post: 0,
                    count: 789,
                },
                ContingencyCell {
                    group: 1,
                    y_pre: 0,
                    y_post: 1,
                    count: 3,
                },
            ],
            top_code: None,
        };
        let ds = expand_contingency(&table, OutcomeKind::Count).unwrap();
        assert_eq!(ds.n(), 792);
        let tally = ds
            .units
            .iter()
            .filter(|u| u.group == 0 && u.y_pre == 0.0 && u.y_post == 0.0)
            .count();
        assert_eq!(tally, 789);
    }

    #[test]
    fn empty_table_errors() {
        let table = ContingencyTable {
            cells: vec![],
            top_code: None,
        };
        let err = expand_contingency(&table, OutcomeKind::Count).unwrap_err();
        assert!(err.to_string().contains("control group empty"), "{err}");
    }

    #[test]
    fn duplicate_cell_errors() {
        let cell = ContingencyCell {
            group: 0,
            y_pre: 1,
            y_post: 1,
            count: 2,
        };
        let table = ContingencyTable {
            cells: vec![cell.clone(), cell],
            top_code: None,
        };
        assert!(expand_contingency(&table, OutcomeKind::Count).is_err());
    }
}
