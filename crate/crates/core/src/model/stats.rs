use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{KnockoffError, Result};
use crate::numeric::{rng_stream, sigmoid, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatMethod {
    Lcd,
    Lsm,
    Mlr,
    OracleMlr,
    /// Statistics read from a file or built by hand.
    Supplied,
}

impl StatMethod {
    pub fn name(self) -> &'static str {
        match self {
            StatMethod::Lcd => "lcd",
            StatMethod::Lsm => "lsm",
            StatMethod::Mlr => "mlr",
            StatMethod::OracleMlr => "oracle_mlr",
            StatMethod::Supplied => "supplied",
        }
    }
}

impl std::str::FromStr for StatMethod {
    type Err = KnockoffError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lcd" => Ok(StatMethod::Lcd),
            "lsm" => Ok(StatMethod::Lsm),
            "mlr" => Ok(StatMethod::Mlr),
            "oracle_mlr" | "oracle" => Ok(StatMethod::OracleMlr),
            "supplied" => Ok(StatMethod::Supplied),
            other => Err(KnockoffError::InvalidInput(format!("unknown statistic `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStatVector {
    pub w: Vec<f64>,
    pub method: StatMethod,
    /// `P(W_j > 0 | D)`, populated by the MLR samplers.
    #[serde(default)]
    pub posterior_sign_prob: Option<Vec<f64>>,
    /// Entries whose value came from the ε tie-break rather than the statistic.
    #[serde(default)]
    pub tie_broken: Vec<bool>,
}

impl FeatureStatVector {
    pub fn new(w: Vec<f64>, method: StatMethod) -> Self {
        let tie_broken = vec![false; w.len()];
        FeatureStatVector { w, method, posterior_sign_prob: None, tie_broken }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    /// Replace exact zeros by `±ε`, `ε` half the smallest nonzero `|W_j|`
    /// (or `1e-10` when every entry is zero), signs drawn from `seed`.
    ///
    /// One sign is drawn per coordinate whether or not it is used, so the
    /// draws do not depend on which coordinates happen to be zero.
    pub fn break_ties(mut self, seed: u64) -> Self {
        let eps = self
            .w
            .iter()
            .filter(|v| **v != 0.0)
            .fold(f64::INFINITY, |a, v| a.min(v.abs()));
        let eps = if eps.is_finite() { 0.5 * eps } else { 1e-10 };
        let mut rng = rng_stream(seed, tags::TIE_BREAK);
        if self.tie_broken.len() != self.w.len() {
            self.tie_broken = vec![false; self.w.len()];
        }
        for (w, flag) in self.w.iter_mut().zip(self.tie_broken.iter_mut()) {
            let positive: bool = rng.random();
            if *w == 0.0 {
                *w = if positive { eps } else { -eps };
                *flag = true;
            }
        }
        self
    }
}

/// `exp(|W|)/(1 + exp(|W|))`.
pub fn sign_prob_from_w(abs_w: f64) -> Result<f64> {
    if !abs_w.is_finite() {
        return Err(KnockoffError::NonFinite(format!("|W| = {abs_w}")));
    }
    if abs_w < 0.0 {
        return Err(KnockoffError::InvalidInput(format!("|W| = {abs_w} is negative")));
    }
    Ok(sigmoid(abs_w))
}

/// Hyperparameter values at one kept iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDraw {
    pub sigma2: f64,
    pub tau2: Vec<f64>,
    /// Mixture weights, spike first (`p₀ = weights[0]`).
    pub weights: Vec<f64>,
}

/// Kept iterations of one or more Gibbs chains, concatenated in chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsTrace {
    /// `eta[i][j]`: log-odds that unit `j` is "first" at kept iteration `i`.
    pub eta: Vec<Vec<f64>>,
    /// `sign_indicators[i][j] = 1` when unit `j` was assigned "first".
    pub sign_indicators: Vec<Vec<u8>>,
    pub param_draws: Vec<ParamDraw>,
    pub burn_in: usize,
    pub chains: usize,
}

impl GibbsTrace {
    pub fn empty(burn_in: usize) -> Self {
        GibbsTrace {
            eta: Vec::new(),
            sign_indicators: Vec::new(),
            param_draws: Vec::new(),
            burn_in,
            chains: 0,
        }
    }

    pub fn n_sample(&self) -> usize {
        self.eta.len()
    }

    pub fn n_units(&self) -> usize {
        self.eta.first().map_or(0, |r| r.len())
    }

    /// Concatenate another chain's trace after this one.
    pub fn append(&mut self, other: GibbsTrace) {
        self.eta.extend(other.eta);
        self.sign_indicators.extend(other.sign_indicators);
        self.param_draws.extend(other.param_draws);
        self.chains += other.chains;
    }

    /// Kept rows belonging to each chain (chains have equal length).
    pub fn chain_rows(&self) -> Vec<std::ops::Range<usize>> {
        let c = self.chains.max(1);
        let per = self.n_sample() / c;
        (0..c).map(|k| k * per..(k + 1) * per).collect()
    }
}
