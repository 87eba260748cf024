//! Per-unit candidate bases for the model-X samplers.
//!
//! Every unit (a feature, or a group of features) has two candidate design
//! blocks, one for each member of its masked pair. Everything here is a
//! symmetric function of the pair, so the bases depend on the masked view
//! only.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{KnockoffError, Result};
use crate::model::{Basis, ModelXView, Nonlinearity};
use crate::numeric::symmetrize;

/// One candidate block `φ` with the eigendecomposition `φᵀφ = U diag(λ) Uᵀ`.
#[derive(Debug, Clone)]
pub struct CandidateBasis {
    pub phi: DMatrix<f64>,
    /// `ψ = φU`.
    pub psi: DMatrix<f64>,
    pub lambda: DVector<f64>,
    pub u: DMatrix<f64>,
}

impl CandidateBasis {
    pub fn new(phi: DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(symmetrize(&(phi.transpose() * &phi)));
        let lambda = eig.eigenvalues.map(|l| l.max(0.0));
        let psi = &phi * &eig.eigenvectors;
        CandidateBasis { phi, psi, lambda, u: eig.eigenvectors }
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct UnitBasis {
    pub members: Vec<usize>,
    /// Index 0 is the "first" member of the pair, 1 the "second".
    pub cand: [CandidateBasis; 2],
}

impl UnitBasis {
    pub fn dim(&self) -> usize {
        self.cand[0].dim()
    }
}

fn pooled_rms(a: &[f64], b: &[f64]) -> f64 {
    let ss: f64 = a.iter().chain(b).map(|v| v * v).sum();
    (ss / (a.len() + b.len()) as f64).sqrt()
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Cubic truncated-power expansion of one feature pair: `t, t², t³,
/// (t − κ_k)₊³` with `t` the pair-standardized value and knots at pooled
/// quantiles. Columns are centred within each candidate and scaled by the
/// pooled root mean square.
pub fn spline_pair(a: &[f64], b: &[f64], knots: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.len();
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mean = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let var = pooled.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / pooled.len() as f64;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    let std = |x: f64| (x - mean) / sd;
    let mut sorted: Vec<f64> = pooled.iter().map(|&x| std(x)).collect();
    sorted.sort_by(f64::total_cmp);
    let kappa: Vec<f64> = (1..=knots).map(|k| quantile(&sorted, k as f64 / (knots + 1) as f64)).collect();
    let d = 3 + knots;
    let expand = |col: &[f64]| {
        let mut m = DMatrix::zeros(n, d);
        for (i, &x) in col.iter().enumerate() {
            let t = std(x);
            m[(i, 0)] = t;
            m[(i, 1)] = t * t;
            m[(i, 2)] = t * t * t;
            for (k, &kv) in kappa.iter().enumerate() {
                m[(i, 3 + k)] = (t - kv).max(0.0).powi(3);
            }
        }
        for c in 0..d {
            let mu = m.column(c).mean();
            m.column_mut(c).add_scalar_mut(-mu);
        }
        m
    };
    let mut fa = expand(a);
    let mut fb = expand(b);
    for c in 0..d {
        let s = pooled_rms(fa.column(c).as_slice(), fb.column(c).as_slice());
        if s > 0.0 {
            fa.column_mut(c).scale_mut(1.0 / s);
            fb.column_mut(c).scale_mut(1.0 / s);
        }
    }
    (fa, fb)
}

/// Candidate bases for every unit of the view. Identity-basis columns are
/// rescaled so each pair has unit pooled mean square, which makes the prior
/// on coefficients refer to unit-variance features.
pub fn unit_bases(view: &ModelXView, basis: Basis) -> Result<Vec<UnitBasis>> {
    let n = view.n();
    let mut out = Vec::with_capacity(view.units.len());
    for members in view.units.groups() {
        let mut blocks: [Vec<DMatrix<f64>>; 2] = [Vec::new(), Vec::new()];
        for &j in members {
            let a = view.first.column(j);
            let b = view.second.column(j);
            match basis {
                Basis::Identity => {
                    let s = pooled_rms(a.as_slice(), b.as_slice());
                    let s = if s > 0.0 { s } else { 1.0 };
                    blocks[0].push(DMatrix::from_column_slice(n, 1, a.as_slice()) / s);
                    blocks[1].push(DMatrix::from_column_slice(n, 1, b.as_slice()) / s);
                }
                Basis::CubicSpline { knots } => {
                    let (fa, fb) = spline_pair(a.as_slice(), b.as_slice(), knots);
                    blocks[0].push(fa);
                    blocks[1].push(fb);
                }
            }
        }
        let [b0, b1] = blocks;
        out.push(UnitBasis {
            members: members.clone(),
            cand: [CandidateBasis::new(hcat(&b0)), CandidateBasis::new(hcat(&b1))],
        });
    }
    Ok(out)
}

/// Raw (unscaled) candidate columns, optionally transformed, for the oracle.
pub fn oracle_bases(view: &ModelXView, transform: Option<Nonlinearity>) -> Vec<UnitBasis> {
    let n = view.n();
    let map = |x: f64| transform.map_or(x, |h| h.apply(x));
    view.units
        .groups()
        .iter()
        .map(|members| {
            let mk = |m: &DMatrix<f64>| {
                DMatrix::from_fn(n, members.len(), |i, c| map(m[(i, members[c])]))
            };
            UnitBasis {
                members: members.clone(),
                cand: [CandidateBasis::new(mk(&view.first)), CandidateBasis::new(mk(&view.second))],
            }
        })
        .collect()
}

fn hcat(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = blocks[0].nrows();
    let d: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut m = DMatrix::zeros(n, d);
    let mut c = 0;
    for b in blocks {
        m.view_mut((0, c), (n, b.ncols())).copy_from(b);
        c += b.ncols();
    }
    m
}

pub fn check_dims(units: &[UnitBasis], n: usize) -> Result<()> {
    for u in units {
        if u.cand[0].phi.nrows() != n || u.cand[0].dim() != u.cand[1].dim() {
            return Err(KnockoffError::DimensionMismatch("candidate bases disagree".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_is_symmetric_in_the_pair() {
        let a: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() * 2.0).collect();
        let b: Vec<f64> = (0..20).map(|i| (i as f64 * 0.91).cos()).collect();
        let (fa, fb) = spline_pair(&a, &b, 2);
        let (gb, ga) = spline_pair(&b, &a, 2);
        assert!((fa - ga).abs().max() < 1e-12);
        assert!((fb - gb).abs().max() < 1e-12);
    }

    #[test]
    fn eigen_rotation_preserves_fit() {
        let phi = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j * 5) % 7) as f64 - 3.0);
        let c = CandidateBasis::new(phi.clone());
        assert!((&c.psi * c.u.transpose() - phi).abs().max() < 1e-10);
    }
}
