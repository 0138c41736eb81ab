//! Block-diagonal affine matrix inequalities `F_b(y) = F_b0 + Σ_p y_p F_bp ≻ 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::io::{matrix_from_rows, matrix_to_rows};
use crate::numerics::{sym_eigs, Matrix, SymMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LmiBlock {
    pub label: String,
    pub constant: Matrix,
    pub coefficients: Vec<Matrix>,
}

impl LmiBlock {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    /// `F0 + Σ y_p F_p`.
    pub fn evaluate(&self, y: &[f64]) -> Matrix {
        let mut m = self.constant.clone();
        for (coef, &v) in self.coefficients.iter().zip(y) {
            if v != 0.0 {
                m += coef * v;
            }
        }
        m
    }
}

/// An LMI system in canonical block form over `num_vars` scalar unknowns.
#[derive(Clone, Debug, PartialEq)]
pub struct LmiProblem {
    num_vars: usize,
    blocks: Vec<LmiBlock>,
}

impl LmiProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, blocks: Vec::new() }
    }

    /// Adds a block after checking that every matrix is square, symmetric,
    /// finite and of matching size.
    pub fn add_block(&mut self, label: impl Into<String>, constant: Matrix, coefficients: Vec<Matrix>) -> Result<()> {
        let label = label.into();
        if coefficients.len() != self.num_vars {
            return Err(invalid(format!(
                "block '{label}' has {} coefficient matrices, expected {}",
                coefficients.len(),
                self.num_vars
            )));
        }
        let k = constant.nrows();
        for m in std::iter::once(&constant).chain(&coefficients) {
            if m.nrows() != k || m.ncols() != k {
                return Err(invalid(format!("block '{label}' mixes matrix sizes")));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("block '{label}' has non-finite entries")));
            }
            if m != &m.transpose() {
                return Err(invalid(format!("block '{label}' is not symmetric")));
            }
        }
        self.blocks.push(LmiBlock { label, constant, coefficients });
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn blocks(&self) -> &[LmiBlock] {
        &self.blocks
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        self.blocks.iter().map(LmiBlock::size).collect()
    }

    pub fn evaluate(&self, y: &[f64]) -> Vec<Matrix> {
        self.blocks.iter().map(|b| b.evaluate(y)).collect()
    }

    /// Smallest eigenvalue of each block at `y`.
    pub fn block_min_eigs(&self, y: &[f64]) -> Vec<f64> {
        self.evaluate(y)
            .iter()
            .map(|m| sym_eigs(&SymMatrix::symmetrized(m).expect("blocks are square and finite")).min_eig)
            .collect()
    }

    pub fn margin(&self, y: &[f64]) -> f64 {
        self.block_min_eigs(y).into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn to_json(&self) -> LmiProblemFile {
        LmiProblemFile {
            num_vars: self.num_vars,
            blocks: self
                .blocks
                .iter()
                .map(|b| LmiBlockFile {
                    label: b.label.clone(),
                    size: b.size(),
                    constant: matrix_to_rows(&b.constant),
                    coefficients: b.coefficients.iter().map(matrix_to_rows).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(file: &LmiProblemFile) -> Result<Self> {
        let mut p = Self::new(file.num_vars);
        for b in &file.blocks {
            let constant = matrix_from_rows(&b.constant)?;
            if constant.nrows() != b.size {
                return Err(invalid(format!("block '{}' declares size {} but has {}", b.label, b.size, constant.nrows())));
            }
            let coefficients = b.coefficients.iter().map(|c| matrix_from_rows(c)).collect::<Result<Vec<_>>>()?;
            p.add_block(b.label.clone(), constant, coefficients)?;
        }
        Ok(p)
    }
}

/// Exchange format: `{num_vars, blocks: [{label, size, constant, coefficients}]}`
/// with every matrix stored as a list of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiProblemFile {
    pub num_vars: usize,
    pub blocks: Vec<LmiBlockFile>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmiBlockFile {
    pub label: String,
    pub size: usize,
    pub constant: Vec<Vec<f64>>,
    pub coefficients: Vec<Vec<Vec<f64>>>,
}
