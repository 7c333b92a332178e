//! JSON run reports for `solve`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::markov::SubstochasticMatrix;
use crate::solver::{DualSolution, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

impl InputDigest {
    pub fn of_file(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub years: usize,
    pub percent: bool,
    pub strict_monotone: bool,
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub residual: f64,
    pub dual_value: f64,
    pub entropy_value: f64,
    pub ratings: Vec<String>,
    pub q_star: Vec<Vec<f64>>,
    pub provenance: Provenance,
}

impl RunReport {
    pub fn new(
        solution: &DualSolution,
        residual: f64,
        ratings: &[String],
        q_star: &SubstochasticMatrix,
        provenance: Provenance,
    ) -> Self {
        Self {
            converged: solution.converged,
            iterations: solution.iterations,
            gradient_norm: solution.gradient_norm,
            residual,
            dual_value: solution.dual_value,
            entropy_value: solution.entropy_value,
            ratings: ratings.to_vec(),
            q_star: q_star
                .entries()
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            provenance,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
