//! Absorbing Markov chains in block form.
//!
//! A chain over `K` rating classes keeps the default class last. Its
//! one-year transition matrix is
//!
//! ```text
//! P = | Q    p(1) |
//!     | 0^t  1    |
//! ```
//!
//! with `Q` the `(K-1) x (K-1)` migration block among non-default classes
//! and `p(1)` the one-year default probabilities. The last column of `P^n`
//! holds the cumulative default probabilities `p(n)`, which satisfy
//! `p(n) = p(1) + Q p(n-1)`.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{CtmError, Result};

/// Row-sum tolerance for stochasticity checks.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Slack allowed on monotonicity of generated curves (floating-point noise only).
const GENERATED_MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingScale {
    labels: Vec<String>,
}

impl RatingScale {
    /// Builds a scale from labels; the last label is the absorbing default state.
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() < 2 {
            return Err(CtmError::Input(format!(
                "rating scale needs at least 2 labels, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if label.trim().is_empty() {
                return Err(CtmError::Input("empty rating label".into()));
            }
            if !seen.insert(label.as_str()) {
                return Err(CtmError::Input(format!("duplicate rating label {label:?}")));
            }
        }
        Ok(Self { labels })
    }

    /// Non-default labels followed by `default_label`.
    pub fn with_default<S: Into<String>>(
        ratings: impl IntoIterator<Item = S>,
        default_label: &str,
    ) -> Result<Self> {
        let mut labels: Vec<String> = ratings.into_iter().map(Into::into).collect();
        labels.push(default_label.to_string());
        Self::new(labels)
    }

    /// Generic scale `R1..R{k-1}, D` for synthetic chains.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::with_default((1..k).map(|i| format!("R{i}")), "D")
    }

    /// Total number of states `K`, including default.
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of non-default classes, `K - 1`.
    pub fn num_ratings(&self) -> usize {
        self.labels.len() - 1
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn ratings(&self) -> &[String] {
        &self.labels[..self.labels.len() - 1]
    }

    pub fn default_label(&self) -> &str {
        &self.labels[self.labels.len() - 1]
    }

    /// Index of a non-default rating label.
    pub fn rating_index(&self, label: &str) -> Option<usize> {
        self.ratings().iter().position(|l| l == label)
    }
}

/// The migration block `Q`: entries in `[0, 1]`, row sums at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct SubstochasticMatrix {
    entries: DMatrix<f64>,
}

impl SubstochasticMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        Self::with_row_slack(entries, STOCHASTIC_TOL)
    }

    /// Like [`SubstochasticMatrix::new`] but row sums may exceed one by `slack`.
    ///
    /// Reconstructed matrices satisfy the row-sum identity only up to the
    /// solver residual.
    pub fn with_row_slack(entries: DMatrix<f64>, slack: f64) -> Result<Self> {
        if !entries.is_square() {
            return Err(CtmError::Dimension {
                expected: entries.nrows(),
                actual: entries.ncols(),
                context: "substochastic matrix must be square",
            });
        }
        for i in 0..entries.nrows() {
            for j in 0..entries.ncols() {
                let v = entries[(i, j)];
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(CtmError::InvalidChain(format!(
                        "entry ({i}, {j}) = {v} is not a probability"
                    )));
                }
            }
        }
        for (i, row) in entries.row_iter().enumerate() {
            let sum = row.sum();
            if sum > 1.0 + slack {
                return Err(CtmError::InvalidChain(format!(
                    "row {i} sums to {sum}, exceeding 1 by more than {slack:e}"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn row_sums(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.entries.row_iter().map(|r| r.sum()))
    }

    /// Row-major vectorization, the unknown ordering used by the linear system.
    pub fn to_row_major(&self) -> DVector<f64> {
        DVector::from_column_slice(self.entries.transpose().as_slice())
    }
}

/// A full transition matrix in block form with a single absorbing default state.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    scale: RatingScale,
    q: SubstochasticMatrix,
    first_year_default: DVector<f64>,
}

impl AbsorbingChain {
    /// Assembles a chain from its blocks.
    ///
    /// Rows of `[Q | p(1)]` must sum to one within [`STOCHASTIC_TOL`]; rows off
    /// by less are rescaled, rows off by more are rejected.
    pub fn new(
        scale: RatingScale,
        q: DMatrix<f64>,
        first_year_default: DVector<f64>,
    ) -> Result<Self> {
        Self::with_row_tolerance(scale, q, first_year_default, STOCHASTIC_TOL)
    }

    /// [`AbsorbingChain::new`] with an explicit row-sum tolerance, for matrices
    /// published with rounded entries. Rescaled rows beyond [`STOCHASTIC_TOL`]
    /// are logged as warnings.
    pub fn with_row_tolerance(
        scale: RatingScale,
        q: DMatrix<f64>,
        first_year_default: DVector<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        let m = scale.num_ratings();
        check_block_dims(m, &q, &first_year_default)?;
        let mut q = q;
        let mut p1 = first_year_default;
        for (i, &v) in p1.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(CtmError::InvalidChain(format!(
                    "default probability of row {i} = {v} is not a probability"
                )));
            }
        }
        for i in 0..m {
            let sum = q.row(i).sum() + p1[i];
            let gap = (sum - 1.0).abs();
            if gap.is_nan() || gap > tolerance {
                return Err(CtmError::InvalidChain(format!(
                    "row {} ({}) sums to {sum}, not 1 (tolerance {tolerance:e})",
                    i,
                    scale.labels()[i]
                )));
            }
            if gap > STOCHASTIC_TOL {
                log::warn!("rescaling row {} ({}): sum {sum}", i, scale.labels()[i]);
            }
            if gap > 0.0 {
                log::debug!("renormalizing row {i}: sum {sum}");
                q.row_mut(i).iter_mut().for_each(|v| *v /= sum);
                p1[i] /= sum;
            }
        }
        let q = SubstochasticMatrix::new(q)?;
        Ok(Self {
            scale,
            q,
            first_year_default: p1,
        })
    }

    /// Splits a full `K x K` transition matrix into blocks.
    pub fn from_transition_matrix(scale: RatingScale, p: &DMatrix<f64>) -> Result<Self> {
        Self::from_transition_matrix_with_tolerance(scale, p, STOCHASTIC_TOL)
    }

    pub fn from_transition_matrix_with_tolerance(
        scale: RatingScale,
        p: &DMatrix<f64>,
        tolerance: f64,
    ) -> Result<Self> {
        let k = scale.len();
        if p.nrows() != k || p.ncols() != k {
            return Err(CtmError::Dimension {
                expected: k,
                actual: if p.nrows() != k { p.nrows() } else { p.ncols() },
                context: "transition matrix must be K x K",
            });
        }
        for j in 0..k {
            let expected = if j == k - 1 { 1.0 } else { 0.0 };
            if (p[(k - 1, j)] - expected).abs() > STOCHASTIC_TOL {
                return Err(CtmError::InvalidChain(
                    "last row must be absorbing (0, ..., 0, 1)".into(),
                ));
            }
        }
        let q = p.view((0, 0), (k - 1, k - 1)).into_owned();
        let p1 = p.view((0, k - 1), (k - 1, 1)).column(0).into_owned();
        Self::with_row_tolerance(scale, q, p1, tolerance)
    }

    /// Blocks are taken as given, without any row-sum condition on `[Q | p(1)]`.
    /// The caller is responsible for the consistency of the blocks.
    pub(crate) fn from_blocks_unchecked(
        scale: RatingScale,
        q: SubstochasticMatrix,
        first_year_default: DVector<f64>,
    ) -> Self {
        Self {
            scale,
            q,
            first_year_default,
        }
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn q(&self) -> &SubstochasticMatrix {
        &self.q
    }

    pub fn first_year_default(&self) -> &DVector<f64> {
        &self.first_year_default
    }

    /// The full `K x K` matrix `P`.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let m = self.scale.num_ratings();
        let mut p = DMatrix::zeros(m + 1, m + 1);
        p.view_mut((0, 0), (m, m)).copy_from(self.q.entries());
        p.view_mut((0, m), (m, 1))
            .copy_from(&self.first_year_default);
        p[(m, m)] = 1.0;
        p
    }
}

fn check_block_dims(m: usize, q: &DMatrix<f64>, p1: &DVector<f64>) -> Result<()> {
    if q.nrows() != m || q.ncols() != m {
        return Err(CtmError::Dimension {
            expected: m,
            actual: if q.nrows() != m { q.nrows() } else { q.ncols() },
            context: "Q block must be (K-1) x (K-1)",
        });
    }
    if p1.len() != m {
        return Err(CtmError::Dimension {
            expected: m,
            actual: p1.len(),
            context: "default column must have K-1 entries",
        });
    }
    Ok(())
}

/// Cumulative default probabilities `p_i(n)` for years `1..=N`.
///
/// Rows follow the non-default ratings of the scale, column `n - 1` holds year `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct DefaultCurveTable {
    scale: RatingScale,
    curves: DMatrix<f64>,
}

/// A place where a curve decreases from one year to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityViolation {
    pub rating: String,
    pub year: usize,
    pub previous: f64,
    pub value: f64,
}

impl DefaultCurveTable {
    /// Validates shape and that every entry is a probability.
    ///
    /// Monotonicity is not enforced here; see [`DefaultCurveTable::monotonicity_violations`].
    pub fn new(scale: RatingScale, curves: DMatrix<f64>) -> Result<Self> {
        let m = scale.num_ratings();
        if curves.nrows() != m {
            return Err(CtmError::Dimension {
                expected: m,
                actual: curves.nrows(),
                context: "default curve table needs one row per non-default rating",
            });
        }
        if curves.ncols() == 0 {
            return Err(CtmError::Input("default curve table has no years".into()));
        }
        for (i, row) in curves.row_iter().enumerate() {
            for (n, &v) in row.iter().enumerate() {
                if !v.is_finite() || !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&v) {
                    return Err(CtmError::Input(format!(
                        "p_{}({}) = {v} is not a probability",
                        scale.labels()[i],
                        n + 1
                    )));
                }
            }
        }
        Ok(Self { scale, curves })
    }

    pub fn scale(&self) -> &RatingScale {
        &self.scale
    }

    pub fn curves(&self) -> &DMatrix<f64> {
        &self.curves
    }

    /// Number of years `N` covered.
    pub fn horizon(&self) -> usize {
        self.curves.ncols()
    }

    /// `p(year)` for `1 <= year <= horizon`.
    pub fn year(&self, year: usize) -> Result<DVector<f64>> {
        if year == 0 || year > self.horizon() {
            return Err(CtmError::OutOfRange {
                what: "year",
                value: year,
                min: 1,
                max: self.horizon(),
            });
        }
        Ok(self.curves.column(year - 1).into_owned())
    }

    pub fn first_year(&self) -> DVector<f64> {
        self.curves.column(0).into_owned()
    }

    /// The first `years` columns.
    pub fn truncated(&self, years: usize) -> Result<Self> {
        if years == 0 || years > self.horizon() {
            return Err(CtmError::OutOfRange {
                what: "years",
                value: years,
                min: 1,
                max: self.horizon(),
            });
        }
        Ok(Self {
            scale: self.scale.clone(),
            curves: self.curves.columns(0, years).into_owned(),
        })
    }

    pub fn monotonicity_violations(&self) -> Vec<MonotonicityViolation> {
        self.violations_above(0.0)
    }

    fn violations_above(&self, tol: f64) -> Vec<MonotonicityViolation> {
        let mut out = Vec::new();
        for (i, row) in self.curves.row_iter().enumerate() {
            for n in 1..row.len() {
                if row[n] < row[n - 1] - tol {
                    out.push(MonotonicityViolation {
                        rating: self.scale.labels()[i].clone(),
                        year: n + 1,
                        previous: row[n - 1],
                        value: row[n],
                    });
                }
            }
        }
        out
    }
}

/// Iterates `p(n+1) = p(1) + Q p(n)` for `n = 1..horizon`.
pub fn cumulative_default_curves(
    chain: &AbsorbingChain,
    horizon: usize,
) -> Result<DefaultCurveTable> {
    if horizon == 0 {
        return Err(CtmError::OutOfRange {
            what: "horizon",
            value: 0,
            min: 1,
            max: usize::MAX,
        });
    }
    let m = chain.scale.num_ratings();
    let q = chain.q.entries();
    let p1 = &chain.first_year_default;
    let mut curves = DMatrix::zeros(m, horizon);
    curves.set_column(0, p1);
    for n in 1..horizon {
        let next = p1 + q * curves.column(n - 1);
        curves.set_column(n, &next);
    }
    let table = DefaultCurveTable::new(chain.scale.clone(), curves)?;
    if let Some(v) = table.violations_above(GENERATED_MONOTONE_TOL).first() {
        return Err(CtmError::InvalidChain(format!(
            "generated curve for {} decreases at year {}",
            v.rating, v.year
        )));
    }
    Ok(table)
}

/// `P^n` by repeated multiplication; `n = 0` gives the identity.
pub fn chain_power(chain: &AbsorbingChain, n: usize) -> DMatrix<f64> {
    let p = chain.transition_matrix();
    let k = p.nrows();
    let mut acc = DMatrix::identity(k, k);
    for _ in 0..n {
        acc = &acc * &p;
    }
    acc
}

/// `(I - Q)^{-1}`: entry `(i, j)` is the expected number of years spent in
/// class `j` before default when starting from class `i`.
pub fn fundamental_matrix(q: &SubstochasticMatrix) -> Result<DMatrix<f64>> {
    let m = q.dim();
    let i_minus_q = DMatrix::identity(m, m) - q.entries();
    let inverse = i_minus_q
        .clone()
        .lu()
        .try_inverse()
        .ok_or(CtmError::NonAbsorbing)?;
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(CtmError::NonAbsorbing);
    }
    // A numerically singular (I - Q) leaves a large identity residual.
    let scale = inverse.amax().max(1.0);
    let residual = (&inverse * &i_minus_q - DMatrix::identity(m, m)).amax();
    if residual > 1e-9 * scale {
        return Err(CtmError::NonAbsorbing);
    }
    let mut t = inverse;
    for v in t.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-9 * scale {
                return Err(CtmError::NonAbsorbing);
            }
            *v = 0.0;
        }
    }
    Ok(t)
}

/// Expected years to default by initial class, `(I - Q)^{-1} u`.
pub fn mean_time_to_default(q: &SubstochasticMatrix) -> Result<DVector<f64>> {
    let t = fundamental_matrix(q)?;
    Ok(DVector::from_iterator(
        t.nrows(),
        t.row_iter().map(|r| r.sum()),
    ))
}
