//! Masked likelihood ratio statistics by Gibbs sampling.
//!
//! Every sampler works on the masked view in pair orientation ("first" vs
//! "second"); the result is oriented into feature-vs-knockoff form only at
//! the end, through [`MaskedDataset::orient`].

pub mod basis;
pub mod conjugate;
pub mod fixed_x;
pub mod model_x;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::max_split_rhat;
use crate::error::{KnockoffError, Result};
use crate::model::{
    FeatureStatVector, GibbsTrace, MaskedDataset, MaskedView, PriorConfig, ResponseKind,
    StatMethod,
};
use crate::numeric::{log_sigmoid, log_sum_exp, sigmoid};

pub use fixed_x::{
    masked_loglik_fixed_x, sigma2_posterior_fixed_x, update_sigma2_fixed_x, FixedXState,
    SigmaUpdate,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsConfig {
    /// Kept sweeps per chain.
    pub n_sample: usize,
    pub burn_in: usize,
    pub chains: usize,
    pub seed: u64,
    pub marginalize_beta_on_x_update: bool,
    /// Full residual recomputation interval, in sweeps.
    pub resync_every: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_sample: 2000,
            burn_in: 500,
            chains: 2,
            seed: 0,
            marginalize_beta_on_x_update: true,
            resync_every: 100,
        }
    }
}

impl GibbsConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_sample == 0 || self.chains == 0 || self.resync_every == 0 {
            return Err(KnockoffError::InvalidInput(
                "Gibbs needs n_sample, chains and resync_every ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// Below this many kept samples per chain the convergence check is skipped.
const RHAT_MIN_SAMPLES: usize = 20;
const RHAT_WARN: f64 = 1.2;

fn run_chains<F>(cfg: &GibbsConfig, run: F) -> Result<GibbsTrace>
where
    F: Fn(usize) -> Result<GibbsTrace> + Sync,
{
    cfg.validate()?;
    let traces: Vec<GibbsTrace> = (0..cfg.chains).into_par_iter().map(&run).collect::<Result<_>>()?;
    let mut merged = GibbsTrace::empty(cfg.burn_in);
    for t in traces {
        merged.append(t);
    }
    if cfg.chains > 1 && cfg.n_sample >= RHAT_MIN_SAMPLES {
        let rhat = max_split_rhat(&merged);
        if rhat > RHAT_WARN {
            log::warn!("chains disagree: max split-R̂ = {rhat:.3} > {RHAT_WARN}");
        }
    }
    Ok(merged)
}

/// `W_j = log Σ_i σ(η_ij) − log Σ_i σ(−η_ij)` in pair orientation, with exact
/// zeros broken by `tie_seed` and `P(W_j > 0 | D) = σ(|W_j|)`.
pub fn finalize_w(trace: &GibbsTrace, tie_seed: u64) -> Result<FeatureStatVector> {
    if trace.n_sample() == 0 {
        return Err(KnockoffError::InvalidInput("empty Gibbs trace".into()));
    }
    let m = trace.n_units();
    let mut pos = Vec::with_capacity(trace.n_sample());
    let mut neg = Vec::with_capacity(trace.n_sample());
    let mut w = Vec::with_capacity(m);
    for j in 0..m {
        pos.clear();
        neg.clear();
        for row in &trace.eta {
            pos.push(log_sigmoid(row[j]));
            neg.push(log_sigmoid(-row[j]));
        }
        w.push(log_sum_exp(&pos) - log_sum_exp(&neg));
    }
    let mut stat = FeatureStatVector::new(w, StatMethod::Mlr).break_ties(tie_seed);
    stat.posterior_sign_prob = Some(stat.w.iter().map(|v| sigmoid(v.abs())).collect());
    Ok(stat)
}

fn model_x_view(masked: &MaskedDataset) -> Result<&crate::model::ModelXView> {
    match masked.view() {
        MaskedView::ModelX(v) => Ok(v),
        MaskedView::FixedX(_) => {
            Err(KnockoffError::Unsupported("expected model-X masked data".into()))
        }
    }
}

/// Model-X MLR statistics; binary responses go to the probit sampler.
pub fn mlr_model_x(
    masked: &MaskedDataset,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<(FeatureStatVector, GibbsTrace)> {
    let view = model_x_view(masked)?;
    if view.response_kind == ResponseKind::Binary {
        return mlr_probit(masked, prior, cfg);
    }
    prior.validate()?;
    let units = basis::unit_bases(view, prior.basis)?;
    basis::check_dims(&units, view.n())?;
    let response = model_x::Response::Continuous(&view.y);
    let trace = run_chains(cfg, |c| model_x::run_chain(&units, prior, &response, cfg, c))?;
    let w = finalize_w(&trace, view.seed)?;
    Ok((masked.orient(w)?, trace))
}

/// Probit data augmentation for binary responses (σ² fixed at 1).
pub fn mlr_probit(
    masked: &MaskedDataset,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<(FeatureStatVector, GibbsTrace)> {
    let view = model_x_view(masked)?;
    if view.response_kind != ResponseKind::Binary {
        return Err(KnockoffError::Unsupported("probit sampler needs a binary response".into()));
    }
    prior.validate()?;
    let units = basis::unit_bases(view, prior.basis)?;
    let response = model_x::Response::Probit(&view.y);
    let trace = run_chains(cfg, |c| model_x::run_chain(&units, prior, &response, cfg, c))?;
    let w = finalize_w(&trace, view.seed)?;
    Ok((masked.orient(w)?, trace))
}

/// Group MLR: one statistic per group of the masked partition.
pub fn mlr_group(
    masked: &MaskedDataset,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<(FeatureStatVector, GibbsTrace)> {
    model_x_view(masked)?;
    mlr_model_x(masked, prior, cfg)
}

/// Fixed-X MLR statistics from `(ξ, |β̃|)`.
pub fn mlr_fixed_x(
    masked: &MaskedDataset,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<(FeatureStatVector, GibbsTrace)> {
    let MaskedView::FixedX(raw) = masked.view() else {
        return Err(KnockoffError::Unsupported("expected fixed-X masked data".into()));
    };
    prior.validate()?;
    if prior.basis != crate::model::Basis::Identity {
        return Err(KnockoffError::Unsupported("fixed-X MLR uses the identity basis".into()));
    }
    let view = fixed_x::standardize_view(raw);
    let trace = run_chains(cfg, |c| fixed_x::run_chain(&view, prior, cfg, c))?;
    let w = finalize_w(&trace, raw.seed)?;
    Ok((masked.orient(w)?, trace))
}

/// MLR statistics for whichever kind of masked data is supplied.
pub fn mlr(
    masked: &MaskedDataset,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<(FeatureStatVector, GibbsTrace)> {
    match masked.view() {
        MaskedView::ModelX(_) => mlr_model_x(masked, prior, cfg),
        MaskedView::FixedX(_) => mlr_fixed_x(masked, prior, cfg),
    }
}

/// Oracle MLR at known `(β, σ²)`, with the trace when sampling was needed.
pub fn oracle_mlr_traced(
    masked: &MaskedDataset,
    truth: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<(FeatureStatVector, Option<GibbsTrace>)> {
    let pm = truth
        .point_mass
        .as_ref()
        .ok_or_else(|| KnockoffError::InvalidInput("oracle needs a point-mass prior".into()))?;
    let (w, trace) = match masked.view() {
        MaskedView::FixedX(v) => {
            if pm.transform.is_some() {
                return Err(KnockoffError::Unsupported(
                    "fixed-X oracle is linear in the features".into(),
                ));
            }
            let w = fixed_x::oracle_fixed_x_pair(v, &pm.beta, pm.sigma2)?;
            let mut stat = FeatureStatVector::new(w, StatMethod::OracleMlr).break_ties(v.seed);
            stat.posterior_sign_prob = Some(stat.w.iter().map(|x| sigmoid(x.abs())).collect());
            (stat, None)
        }
        MaskedView::ModelX(v) => {
            if v.response_kind != ResponseKind::Continuous {
                return Err(KnockoffError::Unsupported(
                    "oracle MLR needs a continuous response".into(),
                ));
            }
            if pm.beta.len() != v.p() {
                return Err(KnockoffError::DimensionMismatch(format!(
                    "oracle β has length {}, p = {}",
                    pm.beta.len(),
                    v.p()
                )));
            }
            let units = basis::oracle_bases(v, pm.transform);
            let beta: Vec<DVector<f64>> = units
                .iter()
                .map(|u| DVector::from_iterator(u.members.len(), u.members.iter().map(|&j| pm.beta[j])))
                .collect();
            let trace = run_chains(cfg, |c| {
                model_x::run_oracle_chain(&units, &beta, pm.sigma2, &v.y, cfg, c)
            })?;
            let mut stat = finalize_w(&trace, v.seed)?;
            stat.method = StatMethod::OracleMlr;
            (stat, Some(trace))
        }
    };
    Ok((masked.orient(w)?, trace))
}

pub fn oracle_mlr(
    masked: &MaskedDataset,
    truth: &PriorConfig,
    cfg: &GibbsConfig,
) -> Result<FeatureStatVector> {
    Ok(oracle_mlr_traced(masked, truth, cfg)?.0)
}
