//! Forward-prediction consistency checks for reconstructed migration matrices.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::assembly::{assemble_system, matrix_from_vector, BoxConstraints};
use crate::error::{CtmError, Result};
use crate::markov::{
    cumulative_default_curves, AbsorbingChain, DefaultCurveTable, RatingScale, SubstochasticMatrix,
    STOCHASTIC_TOL,
};
use crate::solver::{solve, DualSolution, SolverConfig};

/// Row-sum excess tolerated by [`augment`].
pub const AUGMENT_SLACK: f64 = 1e-6;

/// Rebuilds `P*` from a reconstructed `Q*` and the observed one-year default column.
///
/// Rows of `[Q* | p(1)]` within [`STOCHASTIC_TOL`] of one are rescaled to sum
/// to one; other rows are kept as they are, unless they exceed one by more
/// than [`AUGMENT_SLACK`].
pub fn augment(
    scale: &RatingScale,
    q_star: &SubstochasticMatrix,
    first_year: &DVector<f64>,
) -> Result<AbsorbingChain> {
    augment_with_slack(scale, q_star, first_year, AUGMENT_SLACK)
}

/// [`augment`] with an explicit row-sum slack.
///
/// A solve stopped at gradient norm `r` satisfies each row-sum equation to
/// within `r`, so `max(AUGMENT_SLACK, r)` admits exactly what the solver
/// could have produced.
pub fn augment_with_slack(
    scale: &RatingScale,
    q_star: &SubstochasticMatrix,
    first_year: &DVector<f64>,
    slack: f64,
) -> Result<AbsorbingChain> {
    let m = scale.num_ratings();
    if q_star.dim() != m || first_year.len() != m {
        return Err(CtmError::Dimension {
            expected: m,
            actual: if q_star.dim() != m {
                q_star.dim()
            } else {
                first_year.len()
            },
            context: "augmented blocks vs. rating scale",
        });
    }
    if first_year.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(CtmError::Input(
            "one-year default column is not a probability vector".into(),
        ));
    }
    let mut q = q_star.entries().clone();
    let mut p1 = first_year.clone();
    for i in 0..m {
        let sum = q.row(i).sum() + p1[i];
        if sum > 1.0 + slack {
            return Err(CtmError::Inconsistent(format!(
                "row {} sums to {sum} with its default probability (slack {slack:e})",
                scale.labels()[i]
            )));
        }
        if (sum - 1.0).abs() <= STOCHASTIC_TOL && sum != 1.0 {
            q.row_mut(i).iter_mut().for_each(|v| *v /= sum);
            p1[i] /= sum;
        }
    }
    let q = SubstochasticMatrix::with_row_slack(q, slack)?;
    Ok(AbsorbingChain::from_blocks_unchecked(scale.clone(), q, p1))
}

/// `sum_i |p*_i(year) - p_i(year)|`.
pub fn l1_curve_error(
    reference: &DefaultCurveTable,
    predicted: &DefaultCurveTable,
    year: usize,
) -> Result<f64> {
    if reference.scale() != predicted.scale() {
        return Err(CtmError::Input(
            "curve tables use different rating scales".into(),
        ));
    }
    let r = reference.year(year)?;
    let p = predicted.year(year)?;
    Ok((p - r).abs().sum())
}

/// l1 prediction errors; rows are years of data, columns are predicted years.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionErrorTable {
    pub years_of_data: Vec<usize>,
    pub prediction_years: Vec<usize>,
    pub errors: DMatrix<f64>,
    /// Whether each row's solve met its tolerance.
    pub converged: Vec<bool>,
    /// Reconstruction error of each row's solve (`NaN` when the row failed).
    pub residuals: Vec<f64>,
}

impl PredictionErrorTable {
    pub fn cell(&self, data_years: usize, year: usize) -> Option<f64> {
        let r = self.years_of_data.iter().position(|&n| n == data_years)?;
        let c = self.prediction_years.iter().position(|&n| n == year)?;
        Some(self.errors[(r, c)])
    }

    /// Cells `(row, col)` where the error grows when moving to more years of data.
    pub fn data_year_increases(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for c in 0..self.errors.ncols() {
            for r in 1..self.errors.nrows() {
                if self.errors[(r, c)] > self.errors[(r - 1, c)] {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Cells `(row, col)` where the error shrinks when predicting further ahead.
    pub fn prediction_year_decreases(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.errors.nrows() {
            for c in 1..self.errors.ncols() {
                if self.errors[(r, c)] < self.errors[(r, c - 1)] {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

/// One reconstruction: solve on the first `years` columns, rebuild `P*`,
/// and forward-predict up to `horizon`.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub solution: DualSolution,
    pub chain: AbsorbingChain,
    pub predicted: DefaultCurveTable,
}

pub fn reconstruct(
    reference: &DefaultCurveTable,
    years: usize,
    bounds: &BoxConstraints,
    config: &SolverConfig,
    horizon: usize,
) -> Result<Reconstruction> {
    let data = reference.truncated(years)?;
    let system = assemble_system(&data, years, bounds.clone())?;
    let solution = solve(&system, config)?;
    let slack = AUGMENT_SLACK.max(solution.gradient_norm);
    let q_star = matrix_from_vector(&solution.x_star, reference.scale(), slack)?;
    let chain = augment_with_slack(reference.scale(), &q_star, &reference.first_year(), slack)?;
    let predicted = cumulative_default_curves(&chain, horizon)?;
    Ok(Reconstruction {
        solution,
        chain,
        predicted,
    })
}

/// Builds the l1 error table: one independent reconstruction per entry of
/// `data_years`, each compared with `reference` at every `predict_years` entry.
///
/// A row whose reconstruction fails is filled with `NaN` and marked as not
/// converged; the table is still returned.
pub fn consistency_table(
    reference: &DefaultCurveTable,
    data_years: &[usize],
    predict_years: &[usize],
    bounds: &BoxConstraints,
    config: &SolverConfig,
) -> Result<PredictionErrorTable> {
    let horizon = predict_years
        .iter()
        .copied()
        .max()
        .ok_or_else(|| CtmError::Input("no prediction years requested".into()))?;
    if horizon > reference.horizon() || predict_years.contains(&0) {
        return Err(CtmError::OutOfRange {
            what: "prediction year",
            value: horizon,
            min: 1,
            max: reference.horizon(),
        });
    }
    if data_years.is_empty() {
        return Err(CtmError::Input("no data years requested".into()));
    }
    if let Some(&bad) = data_years
        .iter()
        .find(|&&n| n == 0 || n > reference.horizon())
    {
        return Err(CtmError::OutOfRange {
            what: "years of data",
            value: bad,
            min: 1,
            max: reference.horizon(),
        });
    }
    config.validate()?;

    let rows: Vec<(Vec<f64>, bool, f64)> = data_years
        .par_iter()
        .map(
            |&years| match reconstruct(reference, years, bounds, config, horizon) {
                Ok(rec) => {
                    let errs = predict_years
                        .iter()
                        .map(|&n| l1_curve_error(reference, &rec.predicted, n))
                        .collect::<Result<Vec<_>>>();
                    match errs {
                        Ok(errs) => (errs, rec.solution.converged, rec.solution.gradient_norm),
                        Err(e) => {
                            log::warn!("row with {years} years of data failed: {e}");
                            (vec![f64::NAN; predict_years.len()], false, f64::NAN)
                        }
                    }
                }
                Err(e) => {
                    log::warn!("row with {years} years of data failed: {e}");
                    (vec![f64::NAN; predict_years.len()], false, f64::NAN)
                }
            },
        )
        .collect();

    let mut errors = DMatrix::zeros(data_years.len(), predict_years.len());
    let mut converged = Vec::with_capacity(rows.len());
    let mut residuals = Vec::with_capacity(rows.len());
    for (r, (errs, ok, res)) in rows.into_iter().enumerate() {
        for (c, e) in errs.into_iter().enumerate() {
            errors[(r, c)] = e;
        }
        converged.push(ok);
        residuals.push(res);
    }
    let table = PredictionErrorTable {
        years_of_data: data_years.to_vec(),
        prediction_years: predict_years.to_vec(),
        errors,
        converged,
        residuals,
    };
    let increases = table.data_year_increases();
    if !increases.is_empty() {
        log::warn!(
            "prediction error grows with more data years in {} cell(s)",
            increases.len()
        );
    }
    Ok(table)
}
