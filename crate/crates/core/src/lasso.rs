//! Lasso on the augmented design `[X, X̃]` and the LCD / LSM statistics.
//!
//! Objective: `½‖y − Zb‖² + λ·n·‖b‖₁`. The solver works on the Gram form
//! `(ZᵀZ, Zᵀy)` with columns rescaled to unit norm, so fixed-X fits can run
//! directly from masked sufficient statistics. Coefficients refer to the
//! unit-norm columns.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::error::{KnockoffError, Result};
use crate::model::{FeatureStatVector, FixedXView, MaskedView, ModelXView, StatMethod};
use crate::numeric::{rng_stream, spd_inverse, tags};

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: DVector<f64>,
    pub lambda: f64,
    pub converged: bool,
    pub kkt_violation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LassoConfig {
    pub grid_len: usize,
    /// Smallest grid value relative to the null threshold.
    pub grid_ratio: f64,
    pub cv_folds: usize,
    /// KKT tolerance relative to `‖Zᵀy‖_max`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig { grid_len: 100, grid_ratio: 1e-3, cv_folds: 5, tol: 1e-10, max_iter: 100_000 }
    }
}

/// A lasso problem in Gram form on raw columns.
#[derive(Debug, Clone)]
pub struct GramProblem {
    pub gram: DMatrix<f64>,
    pub zty: DVector<f64>,
    pub yty: f64,
    pub n: usize,
}

impl GramProblem {
    pub fn from_design(z: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if z.nrows() != y.len() {
            return Err(KnockoffError::DimensionMismatch(format!(
                "Z has {} rows, y has {}",
                z.nrows(),
                y.len()
            )));
        }
        Ok(GramProblem {
            gram: z.transpose() * z,
            zty: z.transpose() * y,
            yty: y.norm_squared(),
            n: y.len(),
        })
    }

    fn standardized(&self) -> Standardized {
        let d = self.gram.nrows();
        let norms = DVector::from_fn(d, |j, _| self.gram[(j, j)].max(0.0).sqrt());
        let inv = norms.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
        let gram = DMatrix::from_fn(d, d, |i, j| self.gram[(i, j)] * inv[i] * inv[j]);
        let zty = self.zty.component_mul(&inv);
        Standardized { gram, zty, n: self.n }
    }

    /// `‖Zᵀy‖_max / n` on unit-norm columns.
    pub fn lambda_max(&self) -> f64 {
        self.standardized().lambda_max()
    }
}

struct Standardized {
    gram: DMatrix<f64>,
    zty: DVector<f64>,
    n: usize,
}

impl Standardized {
    fn lambda_max(&self) -> f64 {
        self.zty.amax() / self.n as f64
    }

    fn kkt(&self, b: &DVector<f64>, grad: &DVector<f64>, pen: f64) -> f64 {
        let mut worst = 0.0f64;
        for j in 0..b.len() {
            if self.gram[(j, j)] == 0.0 {
                continue;
            }
            let r = self.zty[j] - grad[j];
            let v = if b[j] != 0.0 { (r - pen * b[j].signum()).abs() } else { (r.abs() - pen).max(0.0) };
            worst = worst.max(v);
        }
        worst
    }

    fn solve(&self, lambda: f64, warm: Option<&DVector<f64>>, cfg: &LassoConfig) -> LassoFit {
        let d = self.zty.len();
        let pen = lambda * self.n as f64;
        let mut b = warm.cloned().unwrap_or_else(|| DVector::zeros(d));
        let mut grad = &self.gram * &b;
        let scale = self.zty.amax().max(f64::MIN_POSITIVE);
        let tol = cfg.tol * scale;
        let mut iter = 0;
        let mut converged = false;
        let mut kkt = f64::INFINITY;
        while iter < cfg.max_iter {
            // Full sweep, then cycle on the active set until it settles.
            self.sweep(&mut b, &mut grad, pen, None);
            iter += 1;
            let active: Vec<usize> = (0..d).filter(|&j| b[j] != 0.0).collect();
            while iter < cfg.max_iter {
                let change = self.sweep(&mut b, &mut grad, pen, Some(&active));
                iter += 1;
                if change <= tol {
                    break;
                }
            }
            grad = &self.gram * &b;
            kkt = self.kkt(&b, &grad, pen);
            if kkt <= tol {
                converged = true;
                break;
            }
        }
        LassoFit { coefficients: b, lambda, converged, kkt_violation: kkt }
    }

    /// One cyclic pass; returns the largest coefficient change.
    fn sweep(
        &self,
        b: &mut DVector<f64>,
        grad: &mut DVector<f64>,
        pen: f64,
        subset: Option<&[usize]>,
    ) -> f64 {
        let d = b.len();
        let mut max_change = 0.0f64;
        let mut visit = |j: usize| {
            let gjj = self.gram[(j, j)];
            if gjj == 0.0 {
                return;
            }
            let rho = self.zty[j] - grad[j] + gjj * b[j];
            let new = soft_threshold(rho, pen) / gjj;
            let delta = new - b[j];
            if delta != 0.0 {
                b[j] = new;
                grad.axpy(delta, &self.gram.column(j), 1.0);
                max_change = max_change.max(delta.abs() * gjj.sqrt());
            }
        };
        match subset {
            Some(s) => s.iter().for_each(|&j| visit(j)),
            None => (0..d).for_each(visit),
        }
        max_change
    }
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// `½‖y − Zb‖² + λn‖b‖₁`.
pub fn lasso_objective(z: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, lambda: f64) -> f64 {
    0.5 * (y - z * b).norm_squared() + lambda * y.len() as f64 * b.iter().map(|v| v.abs()).sum::<f64>()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(KnockoffError::InvalidInput(format!("λ = {lambda} must be positive")));
    }
    Ok(())
}

/// Lasso on a design whose columns are rescaled to unit norm internally.
pub fn lasso_fit(
    z: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<LassoFit> {
    check_lambda(lambda)?;
    let prob = GramProblem::from_design(z, y)?;
    let cfg = LassoConfig { tol, max_iter, ..Default::default() };
    Ok(prob.standardized().solve(lambda, None, &cfg))
}

pub fn lasso_fit_gram(prob: &GramProblem, lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    check_lambda(lambda)?;
    Ok(prob.standardized().solve(lambda, None, cfg))
}

/// `len` log-spaced values from `lambda_max` down to `ratio·lambda_max`.
pub fn lambda_grid(lambda_max: f64, len: usize, ratio: f64) -> Vec<f64> {
    if len == 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|k| lambda_max * (step * k as f64).exp()).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(KnockoffError::InvalidInput("empty λ grid".into()));
    }
    if grid.windows(2).any(|w| !(w[1] < w[0])) || !(grid[grid.len() - 1] > 0.0) {
        return Err(KnockoffError::InvalidInput("λ grid must be positive and strictly descending".into()));
    }
    Ok(())
}

/// Warm-started fits along `grid`, one per grid value.
pub fn lasso_path_gram(prob: &GramProblem, grid: &[f64], cfg: &LassoConfig) -> Result<Vec<LassoFit>> {
    check_grid(grid)?;
    let st = prob.standardized();
    let mut fits: Vec<LassoFit> = Vec::with_capacity(grid.len());
    for &lam in grid {
        let fit = st.solve(lam, fits.last().map(|f| &f.coefficients), cfg);
        fits.push(fit);
    }
    Ok(fits)
}

/// Largest grid value at which each coefficient is nonzero (0 if never).
pub fn lambda_entry_path_gram(prob: &GramProblem, grid: &[f64], cfg: &LassoConfig) -> Result<Vec<f64>> {
    let fits = lasso_path_gram(prob, grid, cfg)?;
    let d = prob.zty.len();
    let mut entry = vec![0.0; d];
    for fit in &fits {
        for j in 0..d {
            if entry[j] == 0.0 && fit.coefficients[j] != 0.0 {
                entry[j] = fit.lambda;
            }
        }
    }
    Ok(entry)
}

pub fn lambda_entry_path(z: &DMatrix<f64>, y: &DVector<f64>, grid: &[f64]) -> Result<Vec<f64>> {
    lambda_entry_path_gram(&GramProblem::from_design(z, y)?, grid, &LassoConfig::default())
}

/// `W_j = |b_j| − |b_{j+p}|`.
pub fn lcd(fit: &LassoFit) -> FeatureStatVector {
    let p = fit.coefficients.len() / 2;
    let w = (0..p).map(|j| fit.coefficients[j].abs() - fit.coefficients[j + p].abs()).collect();
    FeatureStatVector::new(w, StatMethod::Lcd)
}

/// `W_j = sign(λ̂_j − λ̃_j)·max(λ̂_j, λ̃_j)`.
pub fn lsm(entry_points: &[f64]) -> FeatureStatVector {
    let p = entry_points.len() / 2;
    let w = (0..p)
        .map(|j| {
            let (a, b) = (entry_points[j], entry_points[j + p]);
            if a == b {
                0.0
            } else {
                (a - b).signum() * a.max(b)
            }
        })
        .collect();
    FeatureStatVector::new(w, StatMethod::Lsm)
}

/// Gram problem on `[first, second]` built from the masked view alone.
pub fn pair_problem(view: &MaskedView) -> Result<GramProblem> {
    match view {
        MaskedView::ModelX(v) => {
            let z = augmented(v);
            GramProblem::from_design(&z, &v.y)
        }
        MaskedView::FixedX(v) => Ok(fixed_x_problem(v)),
    }
}

fn augmented(v: &ModelXView) -> DMatrix<f64> {
    let (n, p) = v.first.shape();
    let mut z = DMatrix::zeros(n, 2 * p);
    z.view_mut((0, 0), (n, p)).copy_from(&v.first);
    z.view_mut((0, p), (n, p)).copy_from(&v.second);
    z
}

fn fixed_x_problem(v: &FixedXView) -> GramProblem {
    let p = v.p();
    let mut gram = DMatrix::zeros(2 * p, 2 * p);
    let mut cross = v.sigma.clone();
    for j in 0..p {
        cross[(j, j)] -= v.s[j];
    }
    gram.view_mut((0, 0), (p, p)).copy_from(&v.sigma);
    gram.view_mut((p, p), (p, p)).copy_from(&v.sigma);
    gram.view_mut((0, p), (p, p)).copy_from(&cross);
    gram.view_mut((p, 0), (p, p)).copy_from(&cross.transpose());
    let (plus, minus) = v.pair_inner_products();
    let mut zty = DVector::zeros(2 * p);
    zty.rows_mut(0, p).copy_from(&plus);
    zty.rows_mut(p, p).copy_from(&minus);
    GramProblem { gram, zty, yty: v.yty, n: v.n }
}

/// `λ = σ̂·√(2 log p)/n` with `σ̂² = (‖y‖² − cᵀG⁻¹c)/(n − 2p)`, on unit-norm columns.
pub fn fixed_x_lambda(prob: &GramProblem) -> Result<f64> {
    let d = prob.zty.len();
    let p = d / 2;
    if prob.n <= d {
        return Err(KnockoffError::InvalidInput(format!(
            "residual variance needs n > 2p (n = {}, 2p = {d})",
            prob.n
        )));
    }
    let st = prob.standardized();
    let ginv = spd_inverse(&st.gram, "[X, X̃] Gram")?;
    let fitted = st.zty.dot(&(&ginv * &st.zty));
    let rss = (prob.yty - fitted).max(0.0);
    let sigma = (rss / (prob.n - d) as f64).sqrt();
    let lam = sigma * (2.0 * (p.max(2) as f64).ln()).sqrt() / prob.n as f64;
    if !(lam > 0.0) {
        return Err(KnockoffError::InvalidInput("estimated noise level is zero".into()));
    }
    Ok(lam)
}

/// λ minimizing `K`-fold cross-validated squared error over the grid.
pub fn cv_lambda(view: &ModelXView, cfg: &LassoConfig, seed: u64) -> Result<f64> {
    let z = augmented(view);
    let n = z.nrows();
    let k = cfg.cv_folds.clamp(2, n.max(2));
    if n < k {
        return Err(KnockoffError::InvalidInput(format!("{n} rows for {k}-fold CV")));
    }
    let full = GramProblem::from_design(&z, &view.y)?;
    let grid = lambda_grid(full.lambda_max(), cfg.grid_len, cfg.grid_ratio);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng_stream(seed, tags::CV_FOLDS));
    let mut err = vec![0.0; grid.len()];
    for fold in 0..k {
        let test: Vec<usize> = perm.iter().copied().skip(fold).step_by(k).collect();
        let mut in_test = vec![false; n];
        test.iter().for_each(|&i| in_test[i] = true);
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let ztr = z.select_rows(&train);
        let ytr = view.y.select_rows(&train);
        let prob = GramProblem::from_design(&ztr, &ytr)?;
        let norms: Vec<f64> = (0..z.ncols()).map(|j| prob.gram[(j, j)].max(0.0).sqrt()).collect();
        let fits = lasso_path_gram(&prob, &grid, cfg)?;
        let zte = z.select_rows(&test);
        let yte = view.y.select_rows(&test);
        for (g, fit) in fits.iter().enumerate() {
            let b = DVector::from_fn(z.ncols(), |j, _| {
                if norms[j] > 0.0 {
                    fit.coefficients[j] / norms[j]
                } else {
                    0.0
                }
            });
            err[g] += (&yte - &zte * b).norm_squared();
        }
    }
    let best = (0..grid.len()).fold(0, |a, g| if err[g] < err[a] { g } else { a });
    Ok(grid[best])
}

fn aggregate_units(view: &MaskedView, per_feature: Vec<f64>, combine_max: bool) -> Vec<f64> {
    match view {
        MaskedView::ModelX(v) if v.is_grouped() => v
            .units
            .groups()
            .iter()
            .map(|g| {
                if combine_max {
                    g.iter().map(|&j| per_feature[j]).fold(0.0, |a: f64, b| if b.abs() > a.abs() { b } else { a })
                } else {
                    g.iter().map(|&j| per_feature[j]).sum()
                }
            })
            .collect(),
        _ => per_feature,
    }
}

/// LCD for "first vs second", before orientation and tie-breaking.
pub fn lcd_pair(view: &MaskedView, cfg: &LassoConfig) -> Result<FeatureStatVector> {
    let prob = pair_problem(view)?;
    let lambda = match view {
        MaskedView::FixedX(_) => fixed_x_lambda(&prob)?,
        MaskedView::ModelX(v) => cv_lambda(v, cfg, v.seed)?,
    };
    let fit = lasso_path_to(&prob, lambda, cfg)?;
    let w = lcd(&fit).w;
    Ok(FeatureStatVector::new(aggregate_units(view, w, false), StatMethod::Lcd))
}

/// Solve at `lambda` by warm-starting down the default grid.
fn lasso_path_to(prob: &GramProblem, lambda: f64, cfg: &LassoConfig) -> Result<LassoFit> {
    let lmax = prob.lambda_max();
    let mut grid: Vec<f64> = lambda_grid(lmax, cfg.grid_len, cfg.grid_ratio)
        .into_iter()
        .filter(|&l| l > lambda)
        .collect();
    grid.push(lambda);
    Ok(lasso_path_gram(prob, &grid, cfg)?.pop().expect("grid is nonempty"))
}

/// LSM for "first vs second", before orientation and tie-breaking.
pub fn lsm_pair(view: &MaskedView, cfg: &LassoConfig) -> Result<FeatureStatVector> {
    let prob = pair_problem(view)?;
    let grid = lambda_grid(prob.lambda_max(), cfg.grid_len, cfg.grid_ratio);
    if !(grid[0] > 0.0) {
        return Ok(FeatureStatVector::new(vec![0.0; view.n_units()], StatMethod::Lsm));
    }
    let entry = lambda_entry_path_gram(&prob, &grid, cfg)?;
    let w = lsm(&entry).w;
    Ok(FeatureStatVector::new(aggregate_units(view, w, true), StatMethod::Lsm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn orthonormal() -> (DMatrix<f64>, DVector<f64>) {
        let mut z = DMatrix::zeros(6, 3);
        z[(0, 0)] = 1.0;
        z[(1, 1)] = 1.0;
        z[(2, 2)] = 1.0;
        let y = DVector::from_vec(vec![3.0, -1.5, 0.5, 0.2, 0.1, -0.3]);
        (z, y)
    }

    #[test]
    fn orthonormal_soft_thresholds() {
        let (z, y) = orthonormal();
        let lam = 0.8 / 6.0;
        let fit = lasso_fit(&z, &y, lam, 1e-12, 1000).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], 2.2, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], -0.7, epsilon = 1e-12);
        assert_eq!(fit.coefficients[2], 0.0);
    }

    #[test]
    fn null_threshold_gives_zero() {
        let (z, y) = orthonormal();
        let lmax = GramProblem::from_design(&z, &y).unwrap().lambda_max();
        let fit = lasso_fit(&z, &y, lmax, 1e-12, 1000).unwrap();
        assert!(fit.coefficients.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn entry_points_on_orthonormal_design() {
        let (z, y) = orthonormal();
        let prob = GramProblem::from_design(&z, &y).unwrap();
        let grid = lambda_grid(prob.lambda_max(), 100, 1e-3);
        let e = lambda_entry_path(&z, &y, &grid).unwrap();
        for j in 0..3 {
            let exact = y[j].abs() / 6.0;
            let step = grid[0] / grid[1];
            assert!(e[j] <= exact && e[j] * step >= exact * (1.0 - 1e-12), "j={j}");
        }
    }

    #[test]
    fn statistic_arithmetic() {
        let fit = LassoFit {
            coefficients: DVector::from_vec(vec![0.5, 0.0, -0.2, 0.0]),
            lambda: 1.0,
            converged: true,
            kkt_violation: 0.0,
        };
        let w = lcd(&fit).w;
        assert_abs_diff_eq!(w[0], 0.3, epsilon = 1e-15);
        assert_eq!(w[1], 0.0);
        assert_eq!(lsm(&[0.4, 0.7]).w, vec![-0.7]);
        assert_eq!(lsm(&[0.4, 0.0]).w, vec![0.4]);
        assert_eq!(lsm(&[0.0, 0.0]).w, vec![0.0]);
    }

    #[test]
    fn grid_is_descending() {
        let g = lambda_grid(2.0, 100, 1e-3);
        assert_eq!(g.len(), 100);
        assert_abs_diff_eq!(g[99], 2e-3, epsilon = 1e-15);
        assert!(check_grid(&g).is_ok());
        assert!(check_grid(&[]).is_err());
    }
}
