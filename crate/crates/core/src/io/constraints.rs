//! Box-constraint files.
//!
//! ```text
//! # bounds for every cell of Q
//! default = 0, 1
//!
//! [diagonal]
//! AAA = 0.9, 1
//! BBB = 0.8, 1
//!
//! [cells]
//! B, CCC/C = 0, 0.05
//! ```
//!
//! Diagonal entries override the default; cell entries override both.

use std::fs;
use std::path::Path;

use nalgebra::DVector;

use crate::assembly::BoxConstraints;
use crate::error::{CtmError, Result};
use crate::markov::RatingScale;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const UNIT: Bounds = Bounds {
        lower: 0.0,
        upper: 1.0,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalBound {
    pub line: usize,
    pub rating: String,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellBound {
    pub line: usize,
    pub from: String,
    pub to: String,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub default_bounds: Bounds,
    pub diagonal_bounds: Vec<DiagonalBound>,
    pub cell_bounds: Vec<CellBound>,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        Self {
            default_bounds: Bounds::UNIT,
            diagonal_bounds: Vec::new(),
            cell_bounds: Vec::new(),
        }
    }
}

enum Section {
    Top,
    Diagonal,
    Cells,
}

fn parse_bounds(line: usize, text: &str) -> Result<Bounds> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CtmError::config(
            line,
            format!("expected `lower, upper`, found {text:?}"),
        ));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| CtmError::config(line, format!("invalid number {s:?}")))
    };
    let (lower, upper) = (parse(parts[0])?, parse(parts[1])?);
    if !(0.0 <= lower && lower <= upper && upper <= 1.0) {
        return Err(CtmError::config(
            line,
            format!("bounds [{lower}, {upper}] violate 0 <= lower <= upper <= 1"),
        ));
    }
    Ok(Bounds { lower, upper })
}

impl ConstraintSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ConstraintSpec::default();
        let mut section = Section::Top;
        let mut seen_default = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if content.starts_with('[') {
                section = match content {
                    "[diagonal]" => Section::Diagonal,
                    "[cells]" => Section::Cells,
                    other => {
                        return Err(CtmError::config(line, format!("unknown section {other}")))
                    }
                };
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| CtmError::config(line, "expected `key = lower, upper`"))?;
            let key = key.trim();
            let bounds = parse_bounds(line, value.trim())?;
            match section {
                Section::Top => {
                    if key != "default" {
                        return Err(CtmError::config(
                            line,
                            format!(
                                "unknown key {key:?} (only `default` is allowed before a section)"
                            ),
                        ));
                    }
                    if seen_default {
                        return Err(CtmError::config(line, "`default` given twice"));
                    }
                    seen_default = true;
                    spec.default_bounds = bounds;
                }
                Section::Diagonal => spec.diagonal_bounds.push(DiagonalBound {
                    line,
                    rating: key.to_string(),
                    bounds,
                }),
                Section::Cells => {
                    let (from, to) = key.split_once(',').ok_or_else(|| {
                        CtmError::config(
                            line,
                            format!("expected `FROM, TO` cell key, found {key:?}"),
                        )
                    })?;
                    spec.cell_bounds.push(CellBound {
                        line,
                        from: from.trim().to_string(),
                        to: to.trim().to_string(),
                        bounds,
                    });
                }
            }
        }
        Ok(spec)
    }

    /// Row-major bounds for every cell of `Q`.
    pub fn expand(&self, scale: &RatingScale) -> Result<BoxConstraints> {
        let m = scale.num_ratings();
        let mut lower = DVector::from_element(m * m, self.default_bounds.lower);
        let mut upper = DVector::from_element(m * m, self.default_bounds.upper);
        let index = |line: usize, label: &str| {
            scale
                .rating_index(label)
                .ok_or_else(|| CtmError::config(line, format!("unknown rating {label:?}")))
        };
        for d in &self.diagonal_bounds {
            let i = index(d.line, &d.rating)?;
            lower[i * m + i] = d.bounds.lower;
            upper[i * m + i] = d.bounds.upper;
        }
        for c in &self.cell_bounds {
            let (i, j) = (index(c.line, &c.from)?, index(c.line, &c.to)?);
            lower[i * m + j] = c.bounds.lower;
            upper[i * m + j] = c.bounds.upper;
        }
        BoxConstraints::new(lower, upper)
    }
}

pub fn parse_constraints(text: &str, scale: &RatingScale) -> Result<BoxConstraints> {
    ConstraintSpec::parse(text)?.expand(scale)
}

/// Reads a constraint file; without one every cell gets `[0, 1]`.
pub fn read_constraints(path: Option<&Path>, scale: &RatingScale) -> Result<BoxConstraints> {
    match path {
        Some(p) => parse_constraints(&fs::read_to_string(p)?, scale),
        None => {
            let m = scale.num_ratings();
            Ok(BoxConstraints::unit(m * m))
        }
    }
}
