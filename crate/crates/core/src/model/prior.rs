use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};

/// Per-feature basis expansion used by the model-X samplers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    Identity,
    /// Cubic regression spline with `knots` interior knots.
    CubicSpline { knots: usize },
}

/// Elementwise nonlinearity `h` in `y ~ N(h(X)β, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    Sin,
    Cos,
    Quadratic,
    Cubic,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Sin => x.sin(),
            Nonlinearity::Cos => x.cos(),
            Nonlinearity::Quadratic => x * x,
            Nonlinearity::Cubic => x * x * x,
        }
    }
}

/// A variance hyperparameter: either pinned or given an inverse-gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceParam {
    Fixed(f64),
    InvGamma { shape: f64, rate: f64 },
}

impl VarianceParam {
    /// Prior mean when it exists, otherwise the mode; used for initialization.
    pub fn typical(&self) -> f64 {
        match *self {
            VarianceParam::Fixed(v) => v,
            VarianceParam::InvGamma { shape, rate } if shape > 1.0 => rate / (shape - 1.0),
            VarianceParam::InvGamma { shape, rate } => rate / (shape + 1.0),
        }
    }
}

/// Mixture weights over (spike, slab₁, …, slab_m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightParam {
    Fixed(Vec<f64>),
    Dirichlet(Vec<f64>),
}

impl WeightParam {
    pub fn len(&self) -> usize {
        match self {
            WeightParam::Fixed(w) | WeightParam::Dirichlet(w) => w.len(),
        }
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn typical(&self) -> Vec<f64> {
        match self {
            WeightParam::Fixed(w) => w.clone(),
            WeightParam::Dirichlet(a) => {
                let s: f64 = a.iter().sum();
                a.iter().map(|v| v / s).collect()
            }
        }
    }
}

/// Exact parameters for the oracle statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMass {
    /// One coefficient per feature.
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Nonlinearity applied to each feature column before the linear predictor.
    #[serde(default)]
    pub transform: Option<Nonlinearity>,
}

/// Spike-and-slab / Gaussian-mixture prior with optional hyperpriors.
///
/// Component 0 of `weights` is the spike at zero; component `k ≥ 1` is a
/// centred Gaussian slab with variance `slab_variances[k-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub basis: Basis,
    pub weights: WeightParam,
    pub slab_variances: Vec<VarianceParam>,
    pub sigma2: VarianceParam,
    #[serde(default)]
    pub point_mass: Option<PointMass>,
}

pub const DEFAULT_SHAPE: f64 = 2.0;
pub const DEFAULT_RATE: f64 = 2.0;

impl Default for PriorConfig {
    /// The global default: `p₀ ~ Beta(1, 1)`, `τ² ~ IG(2, 2)`, `σ² ~ IG(2, 2)`.
    fn default() -> Self {
        PriorConfig {
            basis: Basis::Identity,
            weights: WeightParam::Dirichlet(vec![1.0, 1.0]),
            slab_variances: vec![VarianceParam::InvGamma {
                shape: DEFAULT_SHAPE,
                rate: DEFAULT_RATE,
            }],
            sigma2: VarianceParam::InvGamma { shape: DEFAULT_SHAPE, rate: DEFAULT_RATE },
            point_mass: None,
        }
    }
}

impl PriorConfig {
    /// All hyperparameters pinned: spike probability `p0`, slab variances `tau2`.
    pub fn fixed(p0: f64, tau2: &[f64], sigma2: f64) -> Self {
        let m = tau2.len();
        let mut w = vec![p0];
        w.extend(std::iter::repeat_n((1.0 - p0) / m.max(1) as f64, m));
        PriorConfig {
            basis: Basis::Identity,
            weights: WeightParam::Fixed(w),
            slab_variances: tau2.iter().map(|&t| VarianceParam::Fixed(t)).collect(),
            sigma2: VarianceParam::Fixed(sigma2),
            point_mass: None,
        }
    }

    pub fn point_mass(beta: Vec<f64>, sigma2: f64) -> Self {
        PriorConfig {
            point_mass: Some(PointMass { beta, sigma2, transform: None }),
            ..PriorConfig::fixed(0.5, &[1.0], sigma2)
        }
    }

    pub fn with_basis(mut self, basis: Basis) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_sigma2(mut self, sigma2: VarianceParam) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn n_slabs(&self) -> usize {
        self.slab_variances.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KnockoffError::InvalidInput(m));
        if self.slab_variances.is_empty() {
            return bad("prior needs at least one slab component".into());
        }
        if self.weights.len() != self.slab_variances.len() + 1 {
            return bad(format!(
                "{} weights for {} slabs (expected slabs + 1)",
                self.weights.len(),
                self.slab_variances.len()
            ));
        }
        match &self.weights {
            WeightParam::Fixed(w) => {
                if w.iter().any(|v| !(*v >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("fixed weights must be nonnegative and sum to one".into());
                }
            }
            WeightParam::Dirichlet(a) => {
                if a.iter().any(|v| !(*v > 0.0)) {
                    return bad("Dirichlet concentrations must be positive".into());
                }
            }
        }
        for v in &self.slab_variances {
            match *v {
                VarianceParam::Fixed(t) if !(t >= 0.0 && t.is_finite()) => {
                    return bad(format!("slab variance {t} must be finite and ≥ 0"))
                }
                VarianceParam::InvGamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                    return bad("inverse-gamma shape and rate must be positive".into())
                }
                _ => {}
            }
        }
        match self.sigma2 {
            VarianceParam::Fixed(s) if !(s > 0.0 && s.is_finite()) => {
                return bad("fixed σ² must be positive".into())
            }
            VarianceParam::InvGamma { shape, rate } if !(shape > 0.0 && rate > 0.0) => {
                return bad("σ² hyperprior shape and rate must be positive".into())
            }
            _ => {}
        }
        if let Basis::CubicSpline { knots } = self.basis {
            if knots > 20 {
                return bad("at most 20 spline knots are supported".into());
            }
        }
        if let Some(pm) = &self.point_mass {
            if !(pm.sigma2 > 0.0) || pm.beta.iter().any(|b| !b.is_finite()) {
                return bad("point mass needs finite β and positive σ²".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_prior_is_valid() {
        PriorConfig::default().validate().unwrap();
        PriorConfig::fixed(0.7, &[1.0, 4.0], 1.0).validate().unwrap();
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut p = PriorConfig::default();
        p.sigma2 = VarianceParam::InvGamma { shape: 0.0, rate: 1.0 };
        assert!(p.validate().is_err());
        let mut p = PriorConfig::default();
        p.weights = WeightParam::Dirichlet(vec![1.0]);
        assert!(p.validate().is_err());
        let mut p = PriorConfig::default();
        p.slab_variances.clear();
        p.weights = WeightParam::Dirichlet(vec![1.0]);
        assert!(p.validate().is_err());
    }
}
