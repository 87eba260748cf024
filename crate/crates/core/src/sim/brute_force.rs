//! Exact posterior of the hidden pair orientations by enumeration.
//!
//! Sums over every hidden assignment and every mixture-label pattern, with
//! the coefficients integrated in closed form. Used as an independent check
//! of the Gibbs samplers, so it shares only the candidate bases with them.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{KnockoffError, Result};
use crate::gibbs::basis::{oracle_bases, unit_bases, UnitBasis};
use crate::gibbs::fixed_x::standardize_view;
use crate::model::{
    FixedXView, MaskedDataset, MaskedView, ModelXView, PointMass, PriorConfig, ResponseKind,
    VarianceParam, WeightParam,
};
use crate::numeric::{log_add_exp, spd_inverse, symmetrize};

pub const MAX_UNITS: usize = 8;
/// Upper bound on enumerated (assignment, label pattern) terms.
pub const MAX_TERMS: usize = 1 << 22;

const GRID_POINTS: usize = 1201;
const GRID_HALF_WIDTH: f64 = 12.0;

/// `P(X_j = x_j | D)` per unit.
pub fn brute_force_posterior(masked: &MaskedDataset, prior: &PriorConfig) -> Result<Vec<f64>> {
    let first = brute_force_first(masked.view(), prior)?;
    masked.orient_probabilities(&first)
}

/// Posterior probability that the first member of each pair is the feature.
pub fn brute_force_first(view: &MaskedView, prior: &PriorConfig) -> Result<Vec<f64>> {
    let m = view.n_units();
    if m > MAX_UNITS {
        return Err(KnockoffError::InvalidInput(format!(
            "enumeration supports at most {MAX_UNITS} units, got {m}"
        )));
    }
    if let Some(pm) = &prior.point_mass {
        return match view {
            MaskedView::ModelX(v) => point_mass_model_x(v, pm),
            MaskedView::FixedX(v) => point_mass_fixed_x(v, pm),
        };
    }
    prior.validate()?;
    let tau2 = prior
        .slab_variances
        .iter()
        .map(|v| match *v {
            VarianceParam::Fixed(t) => Ok(t),
            VarianceParam::InvGamma { .. } => Err(KnockoffError::Unsupported(
                "enumeration needs fixed slab variances".into(),
            )),
        })
        .collect::<Result<Vec<f64>>>()?;
    let terms = (1usize << m).saturating_mul((tau2.len() + 1).saturating_pow(m as u32));
    if terms > MAX_TERMS {
        return Err(KnockoffError::InvalidInput(format!(
            "{terms} enumeration terms exceed the limit of {MAX_TERMS}"
        )));
    }
    let problem = match view {
        MaskedView::ModelX(v) => Problem::model_x(v, prior)?,
        MaskedView::FixedX(v) => Problem::fixed_x(v)?,
    };
    let sigma = SigmaRule::new(&prior.sigma2, problem.base_dim, problem.base_ss)?;
    Ok(enumerate(&problem, &tau2, &prior.weights, &sigma))
}

/// Everything the enumeration needs, in a form shared by both frameworks.
///
/// Candidate block `(u, c)` owns columns `offset[u][c]..offset[u][c] + dim[u]`
/// of `gram`. The log-likelihood at `σ²` with active columns `A` and
/// variances `d` is
/// `−½N ln σ² − R/(2σ²) − ½ Σ ln(1 + λ_i/σ²) + ½ Σ g_i²/(σ²(σ² + λ_i))`
/// where `(λ, g)` diagonalize `K = D^{½} G_AA D^{½}` and `D^{½} c_A`.
struct Problem {
    gram: DMatrix<f64>,
    dim: Vec<usize>,
    offset: Vec<[usize; 2]>,
    /// `c` as a function of the assignment; `None` means "first".
    cross: CrossTerm,
    base_dim: f64,
    base_ss: f64,
}

enum CrossTerm {
    /// Same `Φᵀy` for every assignment.
    Shared(DVector<f64>),
    /// Fixed-X: `ξ_j ± S_jj|β̃_j|/2`.
    Signed { xi: DVector<f64>, half: DVector<f64> },
}

impl Problem {
    fn model_x(view: &ModelXView, prior: &PriorConfig) -> Result<Self> {
        if view.response_kind != ResponseKind::Continuous {
            return Err(KnockoffError::Unsupported(
                "enumeration needs a continuous response".into(),
            ));
        }
        let units = unit_bases(view, prior.basis)?;
        let (all, dim, offset) = stack(&units, view.n());
        Ok(Problem {
            gram: symmetrize(&(all.transpose() * &all)),
            cross: CrossTerm::Shared(all.transpose() * &view.y),
            dim,
            offset,
            base_dim: view.n() as f64,
            base_ss: view.y.norm_squared(),
        })
    }

    fn fixed_x(raw: &FixedXView) -> Result<Self> {
        let v = standardize_view(raw);
        let p = v.p();
        let a_inv = spd_inverse(&v.a_matrix(), "Σ − S/2")?;
        let mut ss = v.xi.dot(&(&a_inv * &v.xi));
        for j in 0..p {
            ss += 0.5 * v.s[j] * v.abs_beta_tilde[j] * v.abs_beta_tilde[j];
        }
        Ok(Problem {
            gram: v.sigma.clone(),
            dim: vec![1; p],
            offset: (0..p).map(|j| [j, j]).collect(),
            cross: CrossTerm::Signed {
                half: v.s.component_mul(&v.abs_beta_tilde) * 0.5,
                xi: v.xi,
            },
            base_dim: 2.0 * p as f64,
            base_ss: ss,
        })
    }

    fn n_units(&self) -> usize {
        self.dim.len()
    }

    /// Active column indices, their cross terms and prior variances.
    fn active(&self, assign: usize, labels: &[usize], tau2: &[f64]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
        let mut idx = Vec::new();
        let mut c = Vec::new();
        let mut d = Vec::new();
        for (u, &k) in labels.iter().enumerate() {
            if k == 0 || tau2[k - 1] <= 0.0 {
                continue;
            }
            let second = (assign >> u) & 1 == 1;
            let start = self.offset[u][usize::from(second)];
            for i in start..start + self.dim[u] {
                idx.push(i);
                d.push(tau2[k - 1]);
                c.push(match &self.cross {
                    CrossTerm::Shared(g) => g[i],
                    CrossTerm::Signed { xi, half } => {
                        if second {
                            xi[i] - half[i]
                        } else {
                            xi[i] + half[i]
                        }
                    }
                });
            }
        }
        (idx, c, d)
    }
}

fn stack(units: &[UnitBasis], n: usize) -> (DMatrix<f64>, Vec<usize>, Vec<[usize; 2]>) {
    let total: usize = units.iter().map(|u| 2 * u.dim()).sum();
    let mut all = DMatrix::zeros(n, total);
    let mut dim = Vec::with_capacity(units.len());
    let mut offset = Vec::with_capacity(units.len());
    let mut at = 0;
    for u in units {
        let mut o = [0; 2];
        for (c, slot) in o.iter_mut().enumerate() {
            *slot = at;
            all.columns_mut(at, u.dim()).copy_from(&u.cand[c].phi);
            at += u.dim();
        }
        dim.push(u.dim());
        offset.push(o);
    }
    (all, dim, offset)
}

/// σ² either pinned or integrated on a log grid against its inverse-gamma
/// prior (normalizing constants common to all terms dropped).
enum SigmaRule {
    Fixed(f64),
    Grid { s2: Vec<f64>, log_w: Vec<f64> },
}

impl SigmaRule {
    fn new(param: &VarianceParam, dim: f64, ss: f64) -> Result<Self> {
        match *param {
            VarianceParam::Fixed(s) => Ok(SigmaRule::Fixed(s)),
            VarianceParam::InvGamma { shape, rate } => {
                let centre = ((ss + 2.0 * rate) / (dim + 2.0 * shape)).ln();
                let step = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
                let mut s2 = Vec::with_capacity(GRID_POINTS);
                let mut log_w = Vec::with_capacity(GRID_POINTS);
                for i in 0..GRID_POINTS {
                    let t = centre - GRID_HALF_WIDTH + i as f64 * step;
                    let x = t.exp();
                    s2.push(x);
                    // IG density in σ², times the Jacobian e^t.
                    log_w.push(-(shape + 1.0) * t - rate / x + t);
                }
                if !s2.iter().all(|v| v.is_finite() && *v > 0.0) {
                    return Err(KnockoffError::NonFinite("σ² quadrature grid".into()));
                }
                Ok(SigmaRule::Grid { s2, log_w })
            }
        }
    }
}

fn log_lik(problem: &Problem, lambda: &[f64], g: &[f64], s2: f64) -> f64 {
    let mut v = -0.5 * problem.base_dim * s2.ln() - 0.5 * problem.base_ss / s2;
    for (l, gi) in lambda.iter().zip(g) {
        v += -0.5 * (1.0 + l / s2).ln() + 0.5 * gi * gi / (s2 * (s2 + l));
    }
    v
}

/// `log P(labels)` under fixed weights or the Dirichlet–multinomial.
fn log_label_prior(weights: &WeightParam, labels: &[usize]) -> f64 {
    match weights {
        WeightParam::Fixed(w) => labels.iter().map(|&k| w[k].ln()).sum(),
        WeightParam::Dirichlet(alpha) => {
            let mut counts = vec![0usize; alpha.len()];
            for &k in labels {
                counts[k] += 1;
            }
            let mut v = 0.0;
            for (a, &c) in alpha.iter().zip(&counts) {
                v += log_rising(*a, c);
            }
            v - log_rising(alpha.iter().sum(), labels.len())
        }
    }
}

fn log_rising(a: f64, n: usize) -> f64 {
    (0..n).map(|i| (a + i as f64).ln()).sum()
}

fn enumerate(problem: &Problem, tau2: &[f64], weights: &WeightParam, sigma: &SigmaRule) -> Vec<f64> {
    let m = problem.n_units();
    let n_labels = tau2.len() + 1;
    let mut total = f64::NEG_INFINITY;
    let mut first = vec![f64::NEG_INFINITY; m];
    let mut labels = vec![0usize; m];
    let mut scratch = Vec::new();
    loop {
        let lp = log_label_prior(weights, &labels);
        if lp > f64::NEG_INFINITY {
            for assign in 0..1usize << m {
                let (idx, c, d) = problem.active(assign, &labels, tau2);
                let (lambda, g) = diagonalize(&problem.gram, &idx, &c, &d);
                let ll = match sigma {
                    SigmaRule::Fixed(s2) => log_lik(problem, &lambda, &g, *s2),
                    SigmaRule::Grid { s2, log_w } => {
                        scratch.clear();
                        scratch.extend(
                            s2.iter().zip(log_w).map(|(&x, &w)| w + log_lik(problem, &lambda, &g, x)),
                        );
                        crate::numeric::log_sum_exp(&scratch)
                    }
                };
                let term = lp + ll;
                total = log_add_exp(total, term);
                for (u, f) in first.iter_mut().enumerate() {
                    if (assign >> u) & 1 == 0 {
                        *f = log_add_exp(*f, term);
                    }
                }
            }
        }
        if !next_pattern(&mut labels, n_labels) {
            break;
        }
    }
    first.iter().map(|f| (f - total).exp()).collect()
}

fn next_pattern(labels: &mut [usize], base: usize) -> bool {
    for l in labels.iter_mut() {
        *l += 1;
        if *l < base {
            return true;
        }
        *l = 0;
    }
    false
}

fn diagonalize(gram: &DMatrix<f64>, idx: &[usize], c: &[f64], d: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let k = idx.len();
    if k == 0 {
        return (Vec::new(), Vec::new());
    }
    let sd: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let kmat = DMatrix::from_fn(k, k, |a, b| sd[a] * gram[(idx[a], idx[b])] * sd[b]);
    let h = DVector::from_fn(k, |a, _| sd[a] * c[a]);
    let eig = SymmetricEigen::new(symmetrize(&kmat));
    let g = eig.eigenvectors.transpose() * h;
    (eig.eigenvalues.iter().map(|l| l.max(0.0)).collect(), g.iter().copied().collect())
}

fn check_beta(pm: &PointMass, p: usize) -> Result<()> {
    if pm.beta.len() != p {
        return Err(KnockoffError::DimensionMismatch(format!(
            "point-mass β has length {}, p = {p}",
            pm.beta.len()
        )));
    }
    if !(pm.sigma2 > 0.0 && pm.sigma2.is_finite()) {
        return Err(KnockoffError::InvalidInput(format!("σ² = {}", pm.sigma2)));
    }
    Ok(())
}

fn normalize(total: f64, first: &[f64]) -> Vec<f64> {
    first.iter().map(|f| (f - total).exp()).collect()
}

fn point_mass_model_x(view: &ModelXView, pm: &PointMass) -> Result<Vec<f64>> {
    if view.response_kind != ResponseKind::Continuous {
        return Err(KnockoffError::Unsupported("enumeration needs a continuous response".into()));
    }
    check_beta(pm, view.p())?;
    let units = oracle_bases(view, pm.transform);
    let fits: Vec<[DVector<f64>; 2]> = units
        .iter()
        .map(|u| {
            let b = DVector::from_iterator(u.members.len(), u.members.iter().map(|&j| pm.beta[j]));
            [&u.cand[0].phi * &b, &u.cand[1].phi * &b]
        })
        .collect();
    let m = units.len();
    let mut total = f64::NEG_INFINITY;
    let mut first = vec![f64::NEG_INFINITY; m];
    for assign in 0..1usize << m {
        let mut r = view.y.clone();
        for (u, f) in fits.iter().enumerate() {
            r -= &f[(assign >> u) & 1];
        }
        let term = -0.5 * r.norm_squared() / pm.sigma2;
        total = log_add_exp(total, term);
        for (u, f) in first.iter_mut().enumerate() {
            if (assign >> u) & 1 == 0 {
                *f = log_add_exp(*f, term);
            }
        }
    }
    Ok(normalize(total, &first))
}

fn point_mass_fixed_x(view: &FixedXView, pm: &PointMass) -> Result<Vec<f64>> {
    if pm.transform.is_some() {
        return Err(KnockoffError::Unsupported("fixed-X likelihood is linear".into()));
    }
    check_beta(pm, view.p())?;
    let p = view.p();
    let beta = DVector::from_column_slice(&pm.beta);
    let mut total = f64::NEG_INFINITY;
    let mut first = vec![f64::NEG_INFINITY; p];
    for assign in 0..1usize << p {
        let c = DVector::from_fn(p, |j, _| {
            let half = 0.5 * view.s[j] * view.abs_beta_tilde[j];
            if (assign >> j) & 1 == 0 {
                view.xi[j] + half
            } else {
                view.xi[j] - half
            }
        });
        let term = beta.dot(&c) / pm.sigma2;
        total = log_add_exp(total, term);
        for (j, f) in first.iter_mut().enumerate() {
            if (assign >> j) & 1 == 0 {
                *f = log_add_exp(*f, term);
            }
        }
    }
    Ok(normalize(total, &first))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rising_factorial_matches_dirichlet_multinomial() {
        // Beta(1,1) with 2 of 3 in the spike: 1·2·1 / (2·3·4) = 1/12.
        let lp = log_label_prior(&WeightParam::Dirichlet(vec![1.0, 1.0]), &[0, 0, 1]);
        assert!((lp - (1.0f64 / 12.0).ln()).abs() < 1e-14);
    }

    #[test]
    fn patterns_cover_all() {
        let mut l = vec![0; 3];
        let mut count = 1;
        while next_pattern(&mut l, 3) {
            count += 1;
        }
        assert_eq!(count, 27);
    }
}
