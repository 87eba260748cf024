//! Small numerical helpers shared across modules: stable sigmoid / log-cosh,
//! log-sum-exp, symmetric eigen utilities and seeded RNG streams.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KnockoffError, Result};

pub type Rng = ChaCha8Rng;

/// RNG stream derived from `(seed, stream)` by counter-mode splitting.
pub fn rng_stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream tags so that independent consumers of one seed never share draws.
pub mod tags {
    pub const MASK: u64 = 1;
    pub const TIE_BREAK: u64 = 2;
    pub const KNOCKOFFS: u64 = 3;
    pub const CV_FOLDS: u64 = 4;
    pub const REPLICATE: u64 = 1 << 20;
    pub const CHAIN: u64 = 1 << 40;
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sigmoid(x)) without overflow.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// log(cosh(x)) = |x| + log1p(exp(-2|x|)) - log 2.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// log(exp(a) + exp(b)).
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn check_finite_matrix(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if let Some(pos) = m.iter().position(|v| !v.is_finite()) {
        let (r, c) = (pos % m.nrows(), pos / m.nrows());
        return Err(KnockoffError::NonFinite(format!("{what}[{r}, {c}]")));
    }
    Ok(())
}

pub fn check_finite_vector(v: &DVector<f64>, what: &str) -> Result<()> {
    if let Some(pos) = v.iter().position(|x| !x.is_finite()) {
        return Err(KnockoffError::NonFinite(format!("{what}[{pos}]")));
    }
    Ok(())
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Factor `C` with `CᵀC = m` for a symmetric PSD matrix (eigenvalues below
/// zero within `-tol·scale` are clipped). Returns `C = Λ^{1/2} Uᵀ`.
pub fn psd_factor(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.iter().fold(1e-300_f64, |a, v| a.max(v.abs()));
    let mut c = eig.eigenvectors.transpose();
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -tol * scale {
            return Err(KnockoffError::NotPositiveDefinite(format!(
                "eigenvalue {lam:.3e} below zero"
            )));
        }
        let s = lam.max(0.0).sqrt();
        c.row_mut(i).scale_mut(s);
    }
    Ok(c)
}

/// Symmetric inverse square root of an SPD matrix.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(KnockoffError::NotPositiveDefinite("inverse square root".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    symmetrize(m)
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| KnockoffError::NotPositiveDefinite(what.to_string()))
}

/// Convert a covariance matrix into a correlation matrix, also returning the
/// standard deviations.
pub fn cov_to_corr(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = cov.nrows();
    let sd = DVector::from_iterator(p, (0..p).map(|i| cov[(i, i)].sqrt()));
    if sd.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(KnockoffError::NotPositiveDefinite(
            "covariance has a non-positive diagonal".into(),
        ));
    }
    let corr = DMatrix::from_fn(p, p, |i, j| cov[(i, j)] / (sd[i] * sd[j]));
    Ok((corr, sd))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lexicographic total order on two equal-length columns.
pub fn column_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}
