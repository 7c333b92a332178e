//! CSV tables.
//!
//! Default curves use a header `rating,1,2,...,N` and one row per non-default
//! rating. Square matrices (full chains, `Q*`) use `rating,<labels...>` with
//! the same labels down the first column. Writers emit six significant digits.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{CtmError, Result};
use crate::markov::{AbsorbingChain, DefaultCurveTable, RatingScale, SubstochasticMatrix};
use crate::validation::PredictionErrorTable;

/// Label appended to ingested curve tables for the absorbing state.
pub const DEFAULT_STATE_LABEL: &str = "D";

#[derive(Debug, Clone, Copy, Default)]
pub struct CurveReadOptions {
    /// Values are percentages and are divided by 100.
    pub percent: bool,
    /// Reject tables whose curves decrease anywhere.
    pub strict_monotone: bool,
}

/// Six significant digits, printed without exponent notation.
pub fn format_value(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().unwrap_or(v);
    rounded.to_string()
}

struct RawTable {
    header: Vec<String>,
    labels: Vec<String>,
    values: DMatrix<f64>,
}

fn read_raw(text: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(CtmError::parse(1, 1, "empty file")),
    };
    let header: Vec<String> = header.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(CtmError::parse(
            1,
            header.len(),
            "header needs a label column and at least one value column",
        ));
    }
    let width = header.len() - 1;
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for (idx, record) in records.enumerate() {
        let row = idx + 2;
        let record = record?;
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != header.len() {
            return Err(CtmError::parse(
                row,
                record.len().min(header.len()) + 1,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let label = record[0].to_string();
        if label.is_empty() {
            return Err(CtmError::parse(row, 1, "missing rating label"));
        }
        if labels.contains(&label) {
            return Err(CtmError::parse(
                row,
                1,
                format!("duplicate rating {label:?}"),
            ));
        }
        for (c, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field
                .parse()
                .map_err(|_| CtmError::parse(row, c + 1, format!("non-numeric value {field:?}")))?;
            if !v.is_finite() {
                return Err(CtmError::parse(
                    row,
                    c + 1,
                    format!("non-finite value {field:?}"),
                ));
            }
            data.push(v);
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(CtmError::parse(2, 1, "no data rows"));
    }
    let values = DMatrix::from_row_slice(labels.len(), width, &data);
    Ok(RawTable {
        header,
        labels,
        values,
    })
}

fn read_text(path: &Path) -> Result<String> {
    Ok(fs::read_to_string(path)?)
}

pub fn parse_default_curves(text: &str, options: CurveReadOptions) -> Result<DefaultCurveTable> {
    let raw = read_raw(text)?;
    for (c, h) in raw.header.iter().enumerate().skip(1) {
        if h.parse::<usize>().ok() != Some(c) {
            return Err(CtmError::parse(
                1,
                c + 1,
                format!("expected year {c}, found {h:?}"),
            ));
        }
    }
    let mut values = raw.values;
    if options.percent {
        values /= 100.0;
    }
    for (i, row) in values.row_iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(CtmError::parse(
                    i + 2,
                    c + 2,
                    format!(
                        "{v} is not a probability{}",
                        if options.percent {
                            ""
                        } else {
                            " (missing --percent?)"
                        }
                    ),
                ));
            }
        }
    }
    let scale = RatingScale::with_default(raw.labels, DEFAULT_STATE_LABEL)
        .map_err(|e| CtmError::parse(1, 1, e.to_string()))?;
    let table = DefaultCurveTable::new(scale, values)?;
    let violations = table.monotonicity_violations();
    for v in &violations {
        log::warn!(
            "cumulative default curve for {} decreases at year {}: {} -> {}",
            v.rating,
            v.year,
            v.previous,
            v.value
        );
    }
    if options.strict_monotone {
        if let Some(v) = violations.first() {
            let row = table.scale().rating_index(&v.rating).unwrap_or(0) + 2;
            return Err(CtmError::parse(
                row,
                v.year + 1,
                format!("curve for {} decreases at year {}", v.rating, v.year),
            ));
        }
    }
    Ok(table)
}

pub fn read_default_curves(path: &Path, options: CurveReadOptions) -> Result<DefaultCurveTable> {
    parse_default_curves(&read_text(path)?, options)
}

pub fn format_default_curves(table: &DefaultCurveTable) -> String {
    let mut out = String::from("rating");
    for n in 1..=table.horizon() {
        out.push_str(&format!(",{n}"));
    }
    out.push('\n');
    for (label, row) in table
        .scale()
        .ratings()
        .iter()
        .zip(table.curves().row_iter())
    {
        out.push_str(label);
        for v in row.iter() {
            out.push(',');
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out
}

/// A square matrix with matching row and column labels.
fn parse_labeled_square(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let raw = read_raw(text)?;
    let cols = &raw.header[1..];
    if raw.labels.len() != cols.len() {
        return Err(CtmError::parse(
            raw.labels.len() + 1,
            1,
            format!(
                "matrix has {} rows but {} columns",
                raw.labels.len(),
                cols.len()
            ),
        ));
    }
    for (i, (r, c)) in raw.labels.iter().zip(cols).enumerate() {
        if r != c {
            return Err(CtmError::parse(
                i + 2,
                1,
                format!("row label {r:?} does not match column label {c:?}"),
            ));
        }
    }
    Ok((raw.labels, raw.values))
}

/// Full `K x K` transition matrix whose last state is absorbing. Rows off
/// from one by at most `row_tolerance` are rescaled.
pub fn parse_chain(text: &str, row_tolerance: f64) -> Result<AbsorbingChain> {
    let (labels, p) = parse_labeled_square(text)?;
    let scale = RatingScale::new(labels)?;
    AbsorbingChain::from_transition_matrix_with_tolerance(scale, &p, row_tolerance)
}

pub fn read_chain(path: &Path, row_tolerance: f64) -> Result<AbsorbingChain> {
    parse_chain(&read_text(path)?, row_tolerance)
}

/// `Q*` with its rating labels (default state excluded).
pub fn parse_q_matrix(text: &str, row_slack: f64) -> Result<(Vec<String>, SubstochasticMatrix)> {
    let (labels, q) = parse_labeled_square(text)?;
    Ok((labels, SubstochasticMatrix::with_row_slack(q, row_slack)?))
}

pub fn read_q_matrix(path: &Path, row_slack: f64) -> Result<(Vec<String>, SubstochasticMatrix)> {
    parse_q_matrix(&read_text(path)?, row_slack)
}

pub fn format_labeled_matrix(labels: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::from("rating");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (label, row) in labels.iter().zip(m.row_iter()) {
        out.push_str(label);
        for v in row.iter() {
            out.push(',');
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out
}

pub fn format_chain(chain: &AbsorbingChain) -> String {
    format_labeled_matrix(chain.scale().labels(), &chain.transition_matrix())
}

pub fn format_error_table(table: &PredictionErrorTable) -> String {
    let mut out = String::from("data_years");
    for y in &table.prediction_years {
        out.push_str(&format!(",{y}"));
    }
    out.push('\n');
    for (n, row) in table.years_of_data.iter().zip(table.errors.row_iter()) {
        out.push_str(&n.to_string());
        for v in row.iter() {
            out.push(',');
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out
}

/// Fundamental matrix with the mean time to default as a trailing column.
pub fn format_mean_times(
    labels: &[String],
    fundamental: &DMatrix<f64>,
    mean: &DVector<f64>,
) -> String {
    let mut out = String::from("rating");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push_str(",mean_time_to_default\n");
    for ((label, row), m) in labels.iter().zip(fundamental.row_iter()).zip(mean.iter()) {
        out.push_str(label);
        for v in row.iter() {
            out.push(',');
            out.push_str(&format_value(*v));
        }
        out.push(',');
        out.push_str(&format_value(*m));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::STOCHASTIC_TOL;

    const TABLE: &str = "rating,1,2,3\nAAA,0,0,0\nCCC/C,26.55,36.74,41.80\n";

    #[test]
    fn reads_percent_table() {
        let t = parse_default_curves(
            TABLE,
            CurveReadOptions {
                percent: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(t.scale().labels(), &["AAA", "CCC/C", "D"]);
        assert!((t.curves()[(1, 0)] - 0.2655).abs() < 1e-15);
        assert_eq!(t.horizon(), 3);
    }

    #[test]
    fn rejects_percentages_without_flag() {
        let err = parse_default_curves(TABLE, CurveReadOptions::default()).unwrap_err();
        assert!(
            matches!(
                err,
                CtmError::Parse {
                    row: 3,
                    column: 2,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn parse_error_locations() {
        let opts = CurveReadOptions::default();
        assert!(matches!(
            parse_default_curves("", opts),
            Err(CtmError::Parse { row: 1, .. })
        ));
        assert!(matches!(
            parse_default_curves("rating,1,2\nA,0.1,x\n", opts),
            Err(CtmError::Parse {
                row: 2,
                column: 3,
                ..
            })
        ));
        assert!(matches!(
            parse_default_curves("rating,1,2\nA,0.1,0.2\nA,0.1,0.2\n", opts),
            Err(CtmError::Parse {
                row: 3,
                column: 1,
                ..
            })
        ));
        assert!(matches!(
            parse_default_curves("rating,1,3\nA,0.1,0.2\n", opts),
            Err(CtmError::Parse {
                row: 1,
                column: 3,
                ..
            })
        ));
        assert!(matches!(
            parse_default_curves("rating,1,2\nA,0.1\n", opts),
            Err(CtmError::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn monotonicity_warns_or_fails() {
        let text = "rating,1,2\nA,0.2,0.1\n";
        assert!(parse_default_curves(text, CurveReadOptions::default()).is_ok());
        let err = parse_default_curves(
            text,
            CurveReadOptions {
                strict_monotone: true,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(
            matches!(
                err,
                CtmError::Parse {
                    row: 2,
                    column: 3,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_value(0.959123456), "0.959123");
        assert_eq!(format_value(1.53e-5), "0.0000153");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(1.0), "1");
        assert_eq!(format_value(277.2076531), "277.208");
    }

    #[test]
    fn chain_round_trip_and_checks() {
        let text = "rating,B,D\nB,0.7,0.3\nD,0,1\n";
        let chain = parse_chain(text, STOCHASTIC_TOL).unwrap();
        assert_eq!(format_chain(&chain), text);
        assert!(parse_chain("rating,B,D\nB,0.7,0.3\nD,0.1,0.9\n", STOCHASTIC_TOL).is_err());
        assert!(parse_chain("rating,B,D\nX,0.7,0.3\nD,0,1\n", STOCHASTIC_TOL).is_err());
        assert!(parse_chain("rating,B,D\nB,0.7,0.3\n", STOCHASTIC_TOL).is_err());

        let rounded = "rating,B,D\nB,0.70001,0.3\nD,0,1\n";
        assert!(parse_chain(rounded, STOCHASTIC_TOL).is_err());
        let chain = parse_chain(rounded, 1e-4).unwrap();
        assert!((chain.q().entries()[(0, 0)] + chain.first_year_default()[0] - 1.0).abs() <= 1e-15);
    }
}
