//! Data-generating processes for the simulations.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::{Beta, Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::model::{Dataset, Nonlinearity, ResponseKind, Scaling};
use crate::numeric::{cov_to_corr, min_eigenvalue, psd_factor, sigmoid, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum CovKind {
    /// `X_j | X_{j−1} ~ N(ρ_j X_{j−1}, 1)`, `ρ_j ~ min(cap, Beta(a, b))`.
    Ar1 {
        #[serde(default = "default_beta_a")]
        beta_a: f64,
        #[serde(default = "default_beta_b")]
        beta_b: f64,
        #[serde(default = "default_cap")]
        cap: f64,
    },
    ErdosRenyi {
        #[serde(default = "default_er_sparsity")]
        sparsity: f64,
    },
    Equicorrelated {
        rho: f64,
    },
}

fn default_beta_a() -> f64 {
    5.0
}
fn default_beta_b() -> f64 {
    1.0
}
fn default_cap() -> f64 {
    0.99
}
fn default_er_sparsity() -> f64 {
    0.8
}

impl CovKind {
    pub fn ar1() -> Self {
        CovKind::Ar1 { beta_a: 5.0, beta_b: 1.0, cap: 0.99 }
    }
}

/// Correlation matrix of an AR(1) chain with the given lag-one coefficients
/// (`rhos[k]` links features `k` and `k+1`), unit innovations and initial
/// variance `init_var`.
pub fn ar1_sigma_from_rhos(rhos: &[f64], init_var: f64) -> DMatrix<f64> {
    let p = rhos.len() + 1;
    let mut var = vec![init_var; p];
    for j in 1..p {
        var[j] = rhos[j - 1] * rhos[j - 1] * var[j - 1] + 1.0;
    }
    let mut cov = DMatrix::zeros(p, p);
    for i in 0..p {
        cov[(i, i)] = var[i];
        let mut prod = 1.0;
        for j in i + 1..p {
            prod *= rhos[j - 1];
            cov[(i, j)] = prod * var[i];
            cov[(j, i)] = cov[(i, j)];
        }
    }
    cov_to_corr(&cov).expect("positive variances").0
}

pub fn ar1_sigma(p: usize, beta_a: f64, beta_b: f64, cap: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let beta = Beta::new(beta_a, beta_b)
        .map_err(|e| KnockoffError::InvalidInput(format!("AR(1) Beta parameters: {e}")))?;
    let rhos: Vec<f64> = (1..p).map(|_| beta.sample(rng).min(cap)).collect();
    Ok(ar1_sigma_from_rhos(&rhos, 1.0))
}

/// Random sparse correlation matrix: off-diagonal zeros with probability
/// `sparsity`, other entries `Unif((−1, −0.1) ∪ (0.1, 1))`, shifted to
/// `λ_min = 0.1` and rescaled.
pub fn er_sigma(p: usize, sparsity: f64, rng: &mut Rng) -> Result<DMatrix<f64>> {
    if p < 2 {
        return Err(KnockoffError::InvalidInput("Erdős–Rényi covariance needs p ≥ 2".into()));
    }
    let v = er_raw(p, sparsity, rng);
    let sym = &v + v.transpose();
    let shift = 0.1 - min_eigenvalue(&sym);
    let sigma = sym + DMatrix::identity(p, p) * shift;
    Ok(cov_to_corr(&sigma)?.0)
}

/// The random matrix `V` behind [`er_sigma`], zero diagonal.
pub fn er_raw(p: usize, sparsity: f64, rng: &mut Rng) -> DMatrix<f64> {
    let mut v = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..p {
            if i == j || rng.random::<f64>() < sparsity {
                continue;
            }
            let mag = rng.random_range(0.1..1.0);
            v[(i, j)] = if rng.random::<bool>() { mag } else { -mag };
        }
    }
    v
}

pub fn equicorrelated_sigma(p: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > -1.0 / (p.max(2) as f64 - 1.0) && rho < 1.0) {
        return Err(KnockoffError::InvalidInput(format!("ρ = {rho} is not a valid equicorrelation")));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }))
}

pub fn sample_sigma(kind: &CovKind, p: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
    match *kind {
        CovKind::Ar1 { beta_a, beta_b, cap } => ar1_sigma(p, beta_a, beta_b, cap, rng),
        CovKind::ErdosRenyi { sparsity } => er_sigma(p, sparsity, rng),
        CovKind::Equicorrelated { rho } => equicorrelated_sigma(p, rho),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefDist {
    /// `Unif([−τ, −τ/2] ∪ [τ/2, τ])`.
    Uniform,
    /// Laplace with scale `τ`.
    Laplace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseModel {
    Linear,
    Gam(Nonlinearity),
    Logistic,
}

/// `n` rows drawn i.i.d. from `N(0, Σ)`.
pub fn sample_design(n: usize, sigma: &DMatrix<f64>, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let p = sigma.nrows();
    let c = psd_factor(sigma, 1e-10)?;
    let z = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    Ok(z * c)
}

/// Coefficients with `round(s·p)` non-nulls at uniformly random positions.
pub fn sample_beta(p: usize, sparsity: f64, tau: f64, dist: CoefDist, rng: &mut Rng) -> Vec<f64> {
    let k = ((sparsity * p as f64).round() as usize).min(p);
    let mut beta = vec![0.0; p];
    let mut positions = sample(rng, p, k).into_vec();
    positions.sort_unstable();
    for j in positions {
        let negative = rng.random::<bool>();
        let mag = match dist {
            CoefDist::Uniform => rng.random_range(0.5 * tau..=tau),
            CoefDist::Laplace => {
                if tau > 0.0 {
                    Exp::new(1.0 / tau).expect("positive rate").sample(rng)
                } else {
                    0.0
                }
            }
        };
        beta[j] = if negative { -mag } else { mag };
    }
    beta
}

pub fn sample_response(
    x: &DMatrix<f64>,
    beta: &[f64],
    model: ResponseModel,
    rng: &mut Rng,
) -> DVector<f64> {
    let b = DVector::from_column_slice(beta);
    let mean = match model {
        ResponseModel::Gam(h) => x.map(|v| h.apply(v)) * b,
        ResponseModel::Linear | ResponseModel::Logistic => x * b,
    };
    match model {
        ResponseModel::Logistic => {
            mean.map(|m| if rng.random::<f64>() < sigmoid(m) { 1.0 } else { 0.0 })
        }
        _ => mean.map(|m| m + Distribution::<f64>::sample(&StandardNormal, rng)),
    }
}

/// One simulated dataset on the raw scale, with its non-null set.
#[derive(Debug, Clone)]
pub struct Instance {
    pub dataset: Dataset,
    pub sigma: DMatrix<f64>,
    pub beta: Vec<f64>,
    pub truth: Vec<usize>,
}

#[allow(clippy::too_many_arguments)]
pub fn sample_instance(
    n: usize,
    sigma: DMatrix<f64>,
    sparsity: f64,
    tau: f64,
    dist: CoefDist,
    model: ResponseModel,
    rng: &mut Rng,
) -> Result<Instance> {
    let p = sigma.nrows();
    let x = sample_design(n, &sigma, rng)?;
    let beta = sample_beta(p, sparsity, tau, dist, rng);
    let y = sample_response(&x, &beta, model, rng);
    let kind = match model {
        ResponseModel::Logistic => ResponseKind::Binary,
        _ => ResponseKind::Continuous,
    };
    let truth = (0..p).filter(|&j| beta[j] != 0.0).collect();
    let dataset = Dataset::new(x, y, kind, Scaling::Raw)?;
    Ok(Instance { dataset, sigma, beta, truth })
}
