use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::numeric::{check_finite_matrix, check_finite_vector, min_eigenvalue};

/// Tolerance for the fixed-X Gram identities on unit-norm columns. Checks on
/// raw-scale designs multiply it by the largest Gram diagonal.
pub const GRAM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseKind {
    Continuous,
    Binary,
}

/// Column preprocessing applied when a dataset is ingested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    /// Center every column and scale it to unit Euclidean norm.
    #[default]
    UnitNorm,
    /// Keep the design exactly as given.
    Raw,
}

/// Design matrix plus response.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
    response_kind: ResponseKind,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        y: DVector<f64>,
        response_kind: ResponseKind,
        scaling: Scaling,
    ) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(KnockoffError::InvalidInput("design must be non-empty".into()));
        }
        if y.len() != n {
            return Err(KnockoffError::DimensionMismatch(format!(
                "x has {n} rows but y has {} entries",
                y.len()
            )));
        }
        check_finite_matrix(&x, "x")?;
        check_finite_vector(&y, "y")?;
        if response_kind == ResponseKind::Binary && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(KnockoffError::InvalidInput(
                "binary response must contain only 0 and 1".into(),
            ));
        }
        let mut ds = Dataset { x, y, response_kind };
        if scaling == Scaling::UnitNorm {
            ds.standardize()?;
        }
        Ok(ds)
    }

    fn standardize(&mut self) -> Result<()> {
        let n = self.x.nrows() as f64;
        for (j, mut col) in self.x.column_iter_mut().enumerate() {
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            let norm = col.norm();
            if !(norm > 0.0) {
                return Err(KnockoffError::InvalidInput(format!(
                    "column {j} is constant and cannot be standardized"
                )));
            }
            col.scale_mut(1.0 / norm);
        }
        if self.response_kind == ResponseKind::Continuous {
            let mean = self.y.mean();
            self.y.add_scalar_mut(-mean);
        }
        Ok(())
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }
    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }
    pub fn response_kind(&self) -> ResponseKind {
        self.response_kind
    }
    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Same response, different design. Used by swap tests and the pipeline.
    pub fn with_x(&self, x: DMatrix<f64>) -> Result<Self> {
        Dataset::new(x, self.y.clone(), self.response_kind, Scaling::Raw)
    }
}

/// A partition of `0..p` into non-empty groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    groups: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(groups: Vec<Vec<usize>>, p: usize) -> Result<Self> {
        let mut seen = vec![false; p];
        for g in &groups {
            if g.is_empty() {
                return Err(KnockoffError::InvalidPartition("empty group".into()));
            }
            for &j in g {
                if j >= p {
                    return Err(KnockoffError::InvalidPartition(format!(
                        "index {j} out of range for p = {p}"
                    )));
                }
                if seen[j] {
                    return Err(KnockoffError::InvalidPartition(format!(
                        "index {j} appears twice"
                    )));
                }
                seen[j] = true;
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(KnockoffError::InvalidPartition(format!("index {j} not covered")));
        }
        Ok(Partition { groups })
    }

    pub fn singletons(p: usize) -> Self {
        Partition { groups: (0..p).map(|j| vec![j]).collect() }
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
    pub fn len(&self) -> usize {
        self.groups.len()
    }
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
    pub fn p(&self) -> usize {
        self.groups.iter().map(Vec::len).sum()
    }
    pub fn all_singletons(&self) -> bool {
        self.groups.iter().all(|g| g.len() == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnockoffKind {
    FixedX,
    ModelXGaussian,
}

/// Knockoff copy of a design plus the quantities that define it.
#[derive(Debug, Clone)]
pub struct KnockoffModel {
    pub x_tilde: DMatrix<f64>,
    /// Gram matrix `XᵀX` (fixed-X) or feature covariance (model-X).
    pub sigma: DMatrix<f64>,
    /// `S` as a full matrix: diagonal, or block-diagonal for group knockoffs.
    pub s: DMatrix<f64>,
    pub kind: KnockoffKind,
    pub groups: Option<Partition>,
}

impl KnockoffModel {
    pub fn s_diag(&self) -> DVector<f64> {
        self.s.diagonal()
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    /// Checks `2Σ − S ⪰ 0`, the group structure of `S`, and (fixed-X) the two
    /// Gram identities against the supplied design.
    pub fn validate(&self, x: &DMatrix<f64>) -> Result<()> {
        let p = self.p();
        if self.sigma.ncols() != p || self.s.shape() != (p, p) {
            return Err(KnockoffError::DimensionMismatch("sigma / S shape".into()));
        }
        if x.shape() != self.x_tilde.shape() || x.ncols() != p {
            return Err(KnockoffError::DimensionMismatch(format!(
                "x is {:?}, x_tilde is {:?}, sigma is {p}x{p}",
                x.shape(),
                self.x_tilde.shape()
            )));
        }
        let scale = (0..p).map(|j| self.sigma[(j, j)].abs()).fold(1.0, f64::max);
        let lam = min_eigenvalue(&(&self.sigma * 2.0 - &self.s));
        if lam < -GRAM_TOL * scale {
            return Err(KnockoffError::NotPositiveDefinite(format!(
                "2Σ − S has eigenvalue {lam:.3e}"
            )));
        }
        let block_of = self.block_index(p);
        for i in 0..p {
            for j in 0..p {
                if block_of[i] != block_of[j] && self.s[(i, j)] != 0.0 {
                    return Err(KnockoffError::InvalidInput(format!(
                        "S[{i},{j}] is nonzero across groups"
                    )));
                }
            }
        }
        if self.kind == KnockoffKind::FixedX {
            let tol = GRAM_TOL * scale;
            let kk = self.x_tilde.transpose() * &self.x_tilde;
            let dev = (&kk - &self.sigma).abs().max();
            if dev > tol {
                return Err(KnockoffError::InvalidInput(format!(
                    "X̃ᵀX̃ deviates from Σ by {dev:.3e}"
                )));
            }
            let xk = x.transpose() * &self.x_tilde;
            let dev = (&xk - (&self.sigma - &self.s)).abs().max();
            if dev > tol {
                return Err(KnockoffError::InvalidInput(format!(
                    "XᵀX̃ deviates from Σ − S by {dev:.3e}"
                )));
            }
        }
        Ok(())
    }

    fn block_index(&self, p: usize) -> Vec<usize> {
        let mut block = (0..p).collect::<Vec<_>>();
        if let Some(part) = &self.groups {
            for (g, members) in part.groups().iter().enumerate() {
                for &j in members {
                    block[j] = p + g;
                }
            }
        }
        block
    }
}

/// `[X, X̃]` with the columns in `j_set` exchanged between the two matrices.
pub fn swap_columns(
    x: &DMatrix<f64>,
    x_tilde: &DMatrix<f64>,
    j_set: &[usize],
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if x.shape() != x_tilde.shape() {
        return Err(KnockoffError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            x_tilde.shape()
        )));
    }
    let p = x.ncols();
    let mut a = x.clone();
    let mut b = x_tilde.clone();
    let mut done = vec![false; p];
    for &j in j_set {
        if j >= p {
            return Err(KnockoffError::IndexOutOfRange { index: j, dim: p });
        }
        if done[j] {
            continue;
        }
        done[j] = true;
        a.set_column(j, &x_tilde.column(j));
        b.set_column(j, &x.column(j));
    }
    Ok((a, b))
}

/// Swap a dataset and its knockoffs on `j_set`, keeping Σ and S.
pub fn swap_dataset(
    dataset: &Dataset,
    knockoffs: &KnockoffModel,
    j_set: &[usize],
) -> Result<(Dataset, KnockoffModel)> {
    let (x, xk) = swap_columns(dataset.x(), &knockoffs.x_tilde, j_set)?;
    let mut model = knockoffs.clone();
    model.x_tilde = xk;
    Ok((dataset.with_x(x)?, model))
}
