//! Stacked linear system `A x = y` linking the migration block to default curves.
//!
//! With `u` the all-ones vector, the rows of `Q` must satisfy
//! `Q u = u - p(1)` and `Q p(n) = p(n+1) - p(1)`. Unknowns are the entries
//! of `Q` stacked row by row, so each equation block is block-diagonal with
//! `u^t` (first block) or `p(k)^t` (block `k`) repeated `K - 1` times.

use nalgebra::{DMatrix, DVector};

use crate::error::{CtmError, Result};
use crate::markov::{DefaultCurveTable, RatingScale, SubstochasticMatrix};

/// Per-unknown bounds `a_j <= x_j <= b_j`, row-major over the cells of `Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxConstraints {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl BoxConstraints {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(CtmError::Dimension {
                expected: lower.len(),
                actual: upper.len(),
                context: "lower and upper bounds must have equal length",
            });
        }
        for (j, (&a, &b)) in lower.iter().zip(upper.iter()).enumerate() {
            if !(a.is_finite() && b.is_finite() && 0.0 <= a && a <= b && b <= 1.0) {
                return Err(CtmError::Input(format!(
                    "bounds [{a}, {b}] for unknown {j} violate 0 <= lower <= upper <= 1"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0, 1]` on every one of `n` unknowns.
    pub fn unit(n: usize) -> Self {
        Self {
            lower: DVector::zeros(n),
            upper: DVector::from_element(n, 1.0),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn is_pinned(&self, j: usize) -> bool {
        self.lower[j] == self.upper[j]
    }

    /// Unknowns with `a_j = b_j`.
    pub fn pinned(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| self.is_pinned(j)).collect()
    }

    pub fn free(&self) -> Vec<usize> {
        (0..self.len()).filter(|&j| !self.is_pinned(j)).collect()
    }

    /// Box midpoint, the primal point at zero multipliers.
    pub fn midpoint(&self) -> DVector<f64> {
        (&self.lower + &self.upper) * 0.5
    }

    /// Whether `x` lies in the closed box.
    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.len() == self.len()
            && x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(&v, (&a, &b))| a <= v && v <= b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub a_matrix: DMatrix<f64>,
    pub y: DVector<f64>,
    pub bounds: BoxConstraints,
    pub scale: RatingScale,
    pub years_used: usize,
}

impl LinearSystem {
    pub fn num_equations(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn num_unknowns(&self) -> usize {
        self.a_matrix.ncols()
    }
}

fn check_years(table: &DefaultCurveTable, years: usize) -> Result<()> {
    if years == 0 || years > table.horizon() {
        return Err(CtmError::OutOfRange {
            what: "years of data",
            value: years,
            min: 1,
            max: table.horizon(),
        });
    }
    Ok(())
}

/// `q(1) = u - p(1)` and `q(n+1) = p(n+1) - p(1)` for `n = 1..years-1`.
pub fn build_data_vectors(table: &DefaultCurveTable, years: usize) -> Result<Vec<DVector<f64>>> {
    check_years(table, years)?;
    let p1 = table.first_year();
    let m = p1.len();
    let mut out = Vec::with_capacity(years);
    out.push(DVector::from_element(m, 1.0) - &p1);
    for n in 2..=years {
        out.push(table.year(n)? - &p1);
    }
    Ok(out)
}

/// Builds the `years (K-1) x (K-1)^2` system from the first `years` columns.
pub fn assemble_system(
    table: &DefaultCurveTable,
    years: usize,
    bounds: BoxConstraints,
) -> Result<LinearSystem> {
    check_years(table, years)?;
    let m = table.scale().num_ratings();
    if bounds.len() != m * m {
        return Err(CtmError::Dimension {
            expected: m * m,
            actual: bounds.len(),
            context: "box constraints must cover every cell of Q",
        });
    }
    let data = build_data_vectors(table, years)?;
    let mut a = DMatrix::zeros(years * m, m * m);
    for block in 0..years {
        let weights = if block == 0 {
            DVector::from_element(m, 1.0)
        } else {
            table.year(block)?
        };
        for i in 0..m {
            for j in 0..m {
                a[(block * m + i, i * m + j)] = weights[j];
            }
        }
    }
    let y = DVector::from_iterator(years * m, data.iter().flat_map(|q| q.iter().copied()));
    Ok(LinearSystem {
        a_matrix: a,
        y,
        bounds,
        scale: table.scale().clone(),
        years_used: years,
    })
}

/// `||A x - y||_2`.
pub fn residual(system: &LinearSystem, x: &DVector<f64>) -> Result<f64> {
    if x.len() != system.num_unknowns() {
        return Err(CtmError::Dimension {
            expected: system.num_unknowns(),
            actual: x.len(),
            context: "unknown vector",
        });
    }
    Ok((&system.a_matrix * x - &system.y).norm())
}

/// Inverse of the row-major vectorization.
///
/// Row sums may exceed one by `row_slack`; see [`SubstochasticMatrix::with_row_slack`].
pub fn matrix_from_vector(
    x: &DVector<f64>,
    scale: &RatingScale,
    row_slack: f64,
) -> Result<SubstochasticMatrix> {
    let m = scale.num_ratings();
    if x.len() != m * m {
        return Err(CtmError::Dimension {
            expected: m * m,
            actual: x.len(),
            context: "vectorized Q must have (K-1)^2 entries",
        });
    }
    SubstochasticMatrix::with_row_slack(DMatrix::from_row_slice(m, m, x.as_slice()), row_slack)
}
