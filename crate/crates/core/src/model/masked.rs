//! The masked view of a knockoff dataset.
//!
//! Every statistic is computed from a [`MaskedView`], which holds only what an
//! analyst is allowed to see: the response and the unordered feature/knockoff
//! pairs (model-X) or the sufficient statistics `ξ`, `|β̃|` (fixed-X). Which
//! member of each pair is the real feature lives in a private record that is
//! used for exactly two things: orienting a pair statistic into a feature
//! statistic, and the unmasking round trip.

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;

use super::data::{Dataset, KnockoffKind, KnockoffModel, Partition, ResponseKind};
use super::stats::FeatureStatVector;
use crate::error::{KnockoffError, Result};
use crate::numeric::{check_finite_vector, column_cmp, rng_stream, tags};

#[derive(Debug, Clone)]
pub struct ModelXView {
    pub y: DVector<f64>,
    pub response_kind: ResponseKind,
    /// First member of every pair, column-aligned with the original features.
    pub first: DMatrix<f64>,
    pub second: DMatrix<f64>,
    /// Units that swap together (singletons unless group knockoffs are used).
    pub units: Partition,
    pub seed: u64,
}

impl ModelXView {
    pub fn n(&self) -> usize {
        self.y.len()
    }
    pub fn p(&self) -> usize {
        self.first.ncols()
    }
    pub fn is_grouped(&self) -> bool {
        !self.units.all_singletons()
    }
}

/// Fixed-X masked data in sufficient-statistic form. The first member of each
/// pair is `ξ_j + S_jj|β̃_j|/2`, the second `ξ_j − S_jj|β̃_j|/2`.
#[derive(Debug, Clone)]
pub struct FixedXView {
    pub sigma: DMatrix<f64>,
    pub s: DVector<f64>,
    pub xi: DVector<f64>,
    pub abs_beta_tilde: DVector<f64>,
    /// `‖y‖²`, independent of which member of each pair is real.
    pub yty: f64,
    pub n: usize,
    pub seed: u64,
}

impl FixedXView {
    pub fn p(&self) -> usize {
        self.xi.len()
    }

    /// `{x_jᵀy, x̃_jᵀy}` in first/second order.
    pub fn pair_inner_products(&self) -> (DVector<f64>, DVector<f64>) {
        let half = self.s.component_mul(&self.abs_beta_tilde) * 0.5;
        (&self.xi + &half, &self.xi - &half)
    }

    /// `A = Σ − S/2`.
    pub fn a_matrix(&self) -> DMatrix<f64> {
        let mut a = self.sigma.clone();
        for j in 0..self.p() {
            a[(j, j)] -= 0.5 * self.s[j];
        }
        a
    }
}

#[derive(Debug, Clone)]
pub enum MaskedView {
    ModelX(ModelXView),
    FixedX(FixedXView),
}

impl MaskedView {
    pub fn seed(&self) -> u64 {
        match self {
            MaskedView::ModelX(v) => v.seed,
            MaskedView::FixedX(v) => v.seed,
        }
    }
    /// Number of pair units (features, or groups for group knockoffs).
    pub fn n_units(&self) -> usize {
        match self {
            MaskedView::ModelX(v) => v.units.len(),
            MaskedView::FixedX(v) => v.p(),
        }
    }
}

#[derive(Debug, Clone)]
struct HiddenTruth {
    first_is_feature: Vec<bool>,
}

/// Reconstruction of the unmasked quantities.
#[derive(Debug, Clone)]
pub enum Unmasked {
    ModelX { x: DMatrix<f64>, x_tilde: DMatrix<f64> },
    FixedX { xty: DVector<f64>, xkty: DVector<f64> },
}

#[derive(Debug, Clone)]
pub struct MaskedDataset {
    view: MaskedView,
    hidden: HiddenTruth,
}

impl MaskedDataset {
    pub fn view(&self) -> &MaskedView {
        &self.view
    }

    pub fn kind(&self) -> KnockoffKind {
        match self.view {
            MaskedView::ModelX(_) => KnockoffKind::ModelXGaussian,
            MaskedView::FixedX(_) => KnockoffKind::FixedX,
        }
    }

    pub fn seed(&self) -> u64 {
        self.view.seed()
    }

    /// Turn a statistic for "first vs second" into one for "feature vs knockoff".
    pub fn orient(&self, pair: FeatureStatVector) -> Result<FeatureStatVector> {
        if pair.w.len() != self.hidden.first_is_feature.len() {
            return Err(KnockoffError::DimensionMismatch(format!(
                "{} statistics for {} pairs",
                pair.w.len(),
                self.hidden.first_is_feature.len()
            )));
        }
        let mut out = pair;
        for (w, &first) in out.w.iter_mut().zip(&self.hidden.first_is_feature) {
            if !first {
                *w = -*w;
            }
        }
        Ok(out)
    }

    /// Turn probabilities of "first is the feature" into `P(X_j = x_j)`.
    pub fn orient_probabilities(&self, first: &[f64]) -> Result<Vec<f64>> {
        if first.len() != self.hidden.first_is_feature.len() {
            return Err(KnockoffError::DimensionMismatch(format!(
                "{} probabilities for {} pairs",
                first.len(),
                self.hidden.first_is_feature.len()
            )));
        }
        Ok(first
            .iter()
            .zip(&self.hidden.first_is_feature)
            .map(|(&q, &f)| if f { q } else { 1.0 - q })
            .collect())
    }

    pub fn unmask(&self) -> Unmasked {
        match &self.view {
            MaskedView::ModelX(v) => {
                let mut x = v.first.clone();
                let mut xk = v.second.clone();
                for (u, members) in v.units.groups().iter().enumerate() {
                    if !self.hidden.first_is_feature[u] {
                        for &j in members {
                            x.set_column(j, &v.second.column(j));
                            xk.set_column(j, &v.first.column(j));
                        }
                    }
                }
                Unmasked::ModelX { x, x_tilde: xk }
            }
            MaskedView::FixedX(v) => {
                let (plus, minus) = v.pair_inner_products();
                let mut xty = plus.clone();
                let mut xkty = minus.clone();
                for j in 0..v.p() {
                    if !self.hidden.first_is_feature[j] {
                        xty[j] = minus[j];
                        xkty[j] = plus[j];
                    }
                }
                Unmasked::FixedX { xty, xkty }
            }
        }
    }
}

/// Build the masked data `D` from a dataset, its knockoffs and the auxiliary
/// seed `U`.
pub fn mask(dataset: &Dataset, knockoffs: &KnockoffModel, seed: u64) -> Result<MaskedDataset> {
    let (n, p) = (dataset.n(), dataset.p());
    if knockoffs.x_tilde.shape() != (n, p) || knockoffs.p() != p {
        return Err(KnockoffError::DimensionMismatch(format!(
            "dataset is {n}x{p}, knockoffs are {:?} with p = {}",
            knockoffs.x_tilde.shape(),
            knockoffs.p()
        )));
    }
    match knockoffs.kind {
        KnockoffKind::ModelXGaussian => mask_model_x(dataset, knockoffs, seed),
        KnockoffKind::FixedX => mask_fixed_x(dataset, knockoffs, seed),
    }
}

fn mask_model_x(ds: &Dataset, ko: &KnockoffModel, seed: u64) -> Result<MaskedDataset> {
    let p = ds.p();
    let units = ko.groups.clone().unwrap_or_else(|| Partition::singletons(p));
    if units.p() != p {
        return Err(KnockoffError::InvalidPartition(format!(
            "partition covers {} features, design has {p}",
            units.p()
        )));
    }
    let x = ds.x();
    let xk = &ko.x_tilde;
    let mut rng = rng_stream(seed, tags::MASK);
    let mut first = x.clone();
    let mut second = xk.clone();
    let mut first_is_feature = Vec::with_capacity(units.len());
    for members in units.groups() {
        let mut ord = std::cmp::Ordering::Equal;
        for &j in members {
            ord = column_cmp(x.column(j).as_slice(), xk.column(j).as_slice());
            if ord != std::cmp::Ordering::Equal {
                break;
            }
        }
        let canonical_x_first = ord != std::cmp::Ordering::Greater;
        let coin: bool = rng.random();
        let fif = canonical_x_first ^ coin;
        if !fif {
            for &j in members {
                first.set_column(j, &xk.column(j));
                second.set_column(j, &x.column(j));
            }
        }
        first_is_feature.push(fif);
    }
    let view = ModelXView {
        y: ds.y().clone(),
        response_kind: ds.response_kind(),
        first,
        second,
        units,
        seed,
    };
    Ok(MaskedDataset {
        view: MaskedView::ModelX(view),
        hidden: HiddenTruth { first_is_feature },
    })
}

fn mask_fixed_x(ds: &Dataset, ko: &KnockoffModel, seed: u64) -> Result<MaskedDataset> {
    let p = ds.p();
    if ds.response_kind() != ResponseKind::Continuous {
        return Err(KnockoffError::Unsupported(
            "fixed-X knockoffs require a continuous response".into(),
        ));
    }
    for i in 0..p {
        for j in 0..p {
            if i != j && ko.s[(i, j)] != 0.0 {
                return Err(KnockoffError::Unsupported(
                    "fixed-X masking needs a diagonal S".into(),
                ));
            }
        }
    }
    let s = ko.s_diag();
    if let Some(j) = s.iter().position(|v| !(*v > 0.0)) {
        return Err(KnockoffError::InvalidInput(format!(
            "S[{j},{j}] = {} but fixed-X masking needs S_jj > 0",
            s[j]
        )));
    }
    let x = ds.x();
    let xk = &ko.x_tilde;
    let y = ds.y();
    let mut xi = DVector::zeros(p);
    let mut beta_tilde = DVector::zeros(p);
    for j in 0..p {
        let (xc, kc) = (x.column(j), xk.column(j));
        let mut sum = 0.0;
        let mut diff = 0.0;
        for i in 0..ds.n() {
            sum += (xc[i] + kc[i]) * y[i];
            diff += (xc[i] - kc[i]) * y[i];
        }
        xi[j] = 0.5 * sum;
        beta_tilde[j] = diff / s[j];
    }
    check_finite_vector(&xi, "xi")?;
    check_finite_vector(&beta_tilde, "beta_tilde")?;
    let first_is_feature = beta_tilde.iter().map(|b| *b >= 0.0).collect();
    let view = FixedXView {
        sigma: ko.sigma.clone(),
        s,
        xi,
        abs_beta_tilde: beta_tilde.abs(),
        yty: y.norm_squared(),
        n: ds.n(),
        seed,
    };
    Ok(MaskedDataset {
        view: MaskedView::FixedX(view),
        hidden: HiddenTruth { first_is_feature },
    })
}
