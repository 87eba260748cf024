//! Knockoff construction: S matrices (equicorrelated, MVR, group blocks),
//! fixed-X knockoffs and Gaussian model-X knockoffs.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::model::{Dataset, KnockoffKind, KnockoffModel, Partition};
use crate::numeric::{
    check_finite_matrix, cov_to_corr, inv_sqrt_spd, min_eigenvalue, psd_factor, rng_stream,
    spd_inverse, symmetrize, tags,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SMethod {
    Equicorrelated,
    Mvr,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SMatrixSpec {
    pub method: SMethod,
    /// Relative decrease of the MVR objective below which sweeps stop.
    pub tol: f64,
    pub max_iter: usize,
    pub min_eig_clamp: f64,
}

impl Default for SMatrixSpec {
    fn default() -> Self {
        SMatrixSpec { method: SMethod::Mvr, tol: 1e-10, max_iter: 100, min_eig_clamp: 1e-3 }
    }
}

impl SMatrixSpec {
    pub fn equicorrelated() -> Self {
        SMatrixSpec { method: SMethod::Equicorrelated, ..Default::default() }
    }
    pub fn mvr() -> Self {
        SMatrixSpec::default()
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !(self.min_eig_clamp > 0.0 && self.min_eig_clamp <= 1e-3) {
            return Err(KnockoffError::InvalidInput(format!(
                "S spec needs tol > 0 and clamp in (0, 1e-3], got tol = {}, clamp = {}",
                self.tol, self.min_eig_clamp
            )));
        }
        Ok(())
    }
}

fn check_correlation(sigma: &DMatrix<f64>) -> Result<f64> {
    let p = sigma.nrows();
    if sigma.ncols() != p || p == 0 {
        return Err(KnockoffError::DimensionMismatch(format!(
            "sigma is {}x{}",
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    check_finite_matrix(sigma, "sigma")?;
    for j in 0..p {
        if (sigma[(j, j)] - 1.0).abs() > 1e-8 {
            return Err(KnockoffError::InvalidInput(format!(
                "correlation matrix has diagonal entry {} at {j}",
                sigma[(j, j)]
            )));
        }
    }
    let lam = min_eigenvalue(sigma);
    if !(lam > 0.0) {
        return Err(KnockoffError::NotPositiveDefinite(format!("λ_min(Σ) = {lam:.3e}")));
    }
    Ok(lam)
}

/// `S = (1 − clamp)·min(2λ_min(Σ), 1)·I` for a correlation matrix Σ.
pub fn s_equicorrelated(sigma: &DMatrix<f64>, min_eig_clamp: f64) -> Result<DVector<f64>> {
    let lam = check_correlation(sigma)?;
    let s = (1.0 - min_eig_clamp) * (2.0 * lam).min(1.0);
    Ok(DVector::from_element(sigma.nrows(), s))
}

/// `Tr((2Σ − S)⁻¹) + Tr(S⁻¹)`, the trace of the inverse joint Gram matrix.
pub fn mvr_objective(sigma: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let a = spd_inverse(&(sigma * 2.0 - s), "2Σ − S")?;
    let b = spd_inverse(s, "S")?;
    Ok(a.trace() + b.trace())
}

/// Minimum-variance-reconstructability S by exact coordinate descent.
pub fn s_mvr(sigma: &DMatrix<f64>, spec: &SMatrixSpec) -> Result<DVector<f64>> {
    spec.validate()?;
    let lam = check_correlation(sigma)?;
    let p = sigma.nrows();
    let mut s = DVector::from_element(p, lam.min(1.0));
    let objective = |s: &DVector<f64>| mvr_objective(sigma, &DMatrix::from_diagonal(s));
    let mut prev = objective(&s)?;
    for _ in 0..spec.max_iter {
        let mut m = spd_inverse(&(sigma * 2.0 - DMatrix::from_diagonal(&s)), "2Σ − S")?;
        for j in 0..p {
            let c = m.column(j).norm_squared();
            let mjj = m[(j, j)];
            let rc = c.sqrt();
            let delta = (1.0 - s[j] * rc) / (rc + mjj);
            if delta == 0.0 {
                continue;
            }
            // Sherman–Morrison for (2Σ − S − δ e_j e_jᵀ)⁻¹.
            let denom = 1.0 - delta * mjj;
            if !(denom > 0.0) || !(s[j] + delta > 0.0) {
                return Err(KnockoffError::NotPositiveDefinite(
                    "MVR coordinate step left the feasible set".into(),
                ));
            }
            let col = m.column(j).clone_owned();
            m += (&col * col.transpose()) * (delta / denom);
            s[j] += delta;
        }
        let obj = objective(&s)?;
        if obj > prev * (1.0 + 1e-12) {
            log::debug!("MVR objective rose from {prev} to {obj}");
        }
        let done = (prev - obj).abs() <= spec.tol * obj.abs();
        prev = obj;
        if done {
            break;
        }
    }
    Ok(s * (1.0 - spec.min_eig_clamp))
}

pub fn s_diagonal(sigma_corr: &DMatrix<f64>, spec: &SMatrixSpec) -> Result<DVector<f64>> {
    match spec.method {
        SMethod::Equicorrelated => s_equicorrelated(sigma_corr, spec.min_eig_clamp),
        SMethod::Mvr => s_mvr(sigma_corr, spec),
    }
}

/// Diagonal S for a covariance matrix: computed on the correlation scale and
/// mapped back with the standard deviations.
pub fn s_for_covariance(cov: &DMatrix<f64>, spec: &SMatrixSpec) -> Result<DVector<f64>> {
    let (corr, sd) = cov_to_corr(cov)?;
    let s = s_diagonal(&corr, spec)?;
    Ok(s.component_mul(&sd.component_mul(&sd)))
}

fn block_diag(sigma: &DMatrix<f64>, groups: &Partition, gamma: &[f64]) -> DMatrix<f64> {
    let p = sigma.nrows();
    let mut s = DMatrix::zeros(p, p);
    for (g, members) in groups.groups().iter().enumerate() {
        for &a in members {
            for &b in members {
                s[(a, b)] = gamma[g] * sigma[(a, b)];
            }
        }
    }
    s
}

/// Block-diagonal `S = blockdiag(γ_g Σ_gg)` for group knockoffs.
pub fn group_s_block(
    sigma: &DMatrix<f64>,
    groups: &Partition,
    spec: &SMatrixSpec,
) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let p = sigma.nrows();
    if groups.p() != p {
        return Err(KnockoffError::InvalidPartition(format!(
            "partition covers {} features, Σ is {p}x{p}",
            groups.p()
        )));
    }
    if groups.all_singletons() {
        return Ok(DMatrix::from_diagonal(&s_for_covariance(sigma, spec)?));
    }
    let d = block_diag(sigma, groups, &vec![1.0; groups.len()]);
    let d_isqrt = inv_sqrt_spd(&d)?;
    let scaled = symmetrize(&(&d_isqrt * sigma * &d_isqrt));
    let lam = min_eigenvalue(&scaled);
    if !(lam > 0.0) {
        return Err(KnockoffError::NotPositiveDefinite(format!("λ_min = {lam:.3e}")));
    }
    let mut gamma = vec![(2.0 * lam).min(1.0); groups.len()];
    if spec.method == SMethod::Mvr {
        gamma = group_mvr(sigma, groups, gamma, spec)?;
    }
    let gamma: Vec<f64> = gamma.iter().map(|g| g * (1.0 - spec.min_eig_clamp)).collect();
    Ok(block_diag(sigma, groups, &gamma))
}

fn group_mvr(
    sigma: &DMatrix<f64>,
    groups: &Partition,
    mut gamma: Vec<f64>,
    spec: &SMatrixSpec,
) -> Result<Vec<f64>> {
    let objective = |gamma: &[f64]| {
        mvr_objective(sigma, &block_diag(sigma, groups, gamma)).unwrap_or(f64::INFINITY)
    };
    let mut prev = objective(&gamma);
    for _ in 0..spec.max_iter {
        for (g, members) in groups.groups().iter().enumerate() {
            let mut rest = gamma.clone();
            rest[g] = 0.0;
            let b = sigma * 2.0 - block_diag(sigma, groups, &rest);
            let b_inv = spd_inverse(&b, "2Σ − S")?;
            let k = members.len();
            let sub = DMatrix::from_fn(k, k, |a, c| sigma[(members[a], members[c])]);
            let binv_sub = DMatrix::from_fn(k, k, |a, c| b_inv[(members[a], members[c])]);
            let half = psd_factor(&sub, 1e-12)?;
            let top = min_eigenvalue(&(-(&half * binv_sub * half.transpose())));
            let gamma_max = 1.0 / (-top);
            let f = |x: f64| {
                let mut trial = gamma.clone();
                trial[g] = x;
                objective(&trial)
            };
            gamma[g] = golden_min(f, gamma_max * 1e-9, gamma_max * (1.0 - 1e-9), 200);
        }
        let obj = objective(&gamma);
        let done = (prev - obj).abs() <= spec.tol * obj.abs();
        prev = obj;
        if done {
            break;
        }
    }
    Ok(gamma)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if (b - a).abs() <= 1e-13 * (a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `X̃ = X(I − Σ⁻¹S) + ŨC` with `Σ = XᵀX`, `ŨᵀX = 0` and `CᵀC = 2S − SΣ⁻¹S`.
pub fn fixed_x_knockoffs(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if n < 2 * p {
        return Err(KnockoffError::InvalidInput(format!(
            "fixed-X knockoffs need n ≥ 2p, got n = {n}, p = {p}"
        )));
    }
    if s.shape() != (p, p) {
        return Err(KnockoffError::DimensionMismatch(format!("S is {:?}, p = {p}", s.shape())));
    }
    check_finite_matrix(x, "x")?;
    let sigma = symmetrize(&(x.transpose() * x));
    let sigma_inv = spd_inverse(&sigma, "XᵀX")?;
    let sinv_s = &sigma_inv * s;
    let cond = symmetrize(&(s * 2.0 - s * &sinv_s));
    let c = psd_factor(&cond, 1e-8)?;
    let mut xk = x - x * &sinv_s;
    if c.iter().any(|v| *v != 0.0) {
        let u = orthogonal_complement(x)?;
        xk += u * c;
    }
    check_finite_matrix(&xk, "x_tilde")?;
    Ok(xk)
}

/// `n×p` orthonormal columns orthogonal to the span of `x` (needs `n ≥ 2p`).
fn orthogonal_complement(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    let mut aug = DMatrix::zeros(n, p + n);
    aug.view_mut((0, 0), (n, p)).copy_from(x);
    aug.view_mut((0, p), (n, n)).fill_with_identity();
    let q = aug.qr().q();
    let u = q.columns(p, p).into_owned();
    let leak = (x.transpose() * &u).abs().max();
    let scale = x.abs().max().max(1.0);
    if leak > 1e-8 * scale {
        return Err(KnockoffError::NotPositiveDefinite(format!(
            "design is rank deficient (complement leakage {leak:.3e})"
        )));
    }
    Ok(u)
}

/// Rows of `X̃` drawn from `N((I − SΣ⁻¹)x, 2S − SΣ⁻¹S)` given the rows of `X`.
pub fn gaussian_mx_knockoffs(
    x: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
    s: &DMatrix<f64>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if sigma.shape() != (p, p) || s.shape() != (p, p) {
        return Err(KnockoffError::DimensionMismatch(format!(
            "x has {p} columns, Σ is {:?}, S is {:?}",
            sigma.shape(),
            s.shape()
        )));
    }
    check_finite_matrix(x, "x")?;
    let sigma_inv = spd_inverse(sigma, "Σ")?;
    let sinv_s = &sigma_inv * s;
    let cond = symmetrize(&(s * 2.0 - s * &sinv_s));
    let c = psd_factor(&cond, 1e-8)?;
    let mut rng = rng_stream(seed, tags::KNOCKOFFS);
    let mut z = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            z[(i, j)] = StandardNormal.sample(&mut rng);
        }
    }
    let xk = x - x * &sinv_s + z * c;
    check_finite_matrix(&xk, "x_tilde")?;
    Ok(xk)
}

/// Empirical covariance with off-diagonal correlations shrunk by 10%.
pub fn shrinkage_covariance(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(KnockoffError::InvalidInput("need at least two rows".into()));
    }
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let (corr, sd) = cov_to_corr(&cov)?;
    Ok(DMatrix::from_fn(p, p, |i, j| {
        let r = if i == j { 1.0 } else { 0.9 * corr[(i, j)] };
        r * sd[i] * sd[j]
    }))
}

/// Fixed-X knockoffs for a dataset, with `Σ = XᵀX`.
pub fn build_fixed_x(dataset: &Dataset, spec: &SMatrixSpec) -> Result<KnockoffModel> {
    let x = dataset.x();
    let sigma = symmetrize(&(x.transpose() * x));
    let s = DMatrix::from_diagonal(&s_for_covariance(&sigma, spec)?);
    let x_tilde = fixed_x_knockoffs(x, &s)?;
    Ok(KnockoffModel { x_tilde, sigma, s, kind: KnockoffKind::FixedX, groups: None })
}

/// Gaussian model-X knockoffs given the feature covariance, optionally grouped.
pub fn build_model_x(
    dataset: &Dataset,
    sigma: &DMatrix<f64>,
    spec: &SMatrixSpec,
    groups: Option<Partition>,
    seed: u64,
) -> Result<KnockoffModel> {
    let s = match &groups {
        Some(part) => group_s_block(sigma, part, spec)?,
        None => DMatrix::from_diagonal(&s_for_covariance(sigma, spec)?),
    };
    let x_tilde = gaussian_mx_knockoffs(dataset.x(), sigma, &s, seed)?;
    Ok(KnockoffModel {
        x_tilde,
        sigma: sigma.clone(),
        s,
        kind: KnockoffKind::ModelXGaussian,
        groups: groups.filter(|g| !g.all_singletons()),
    })
}
