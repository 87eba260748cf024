//! One entry point for every feature statistic on masked data.

use crate::error::{KnockoffError, Result};
use crate::gibbs::{self, GibbsConfig};
use crate::lasso::{self, LassoConfig};
use crate::model::{FeatureStatVector, GibbsTrace, MaskedDataset, PointMass, PriorConfig, StatMethod};

#[derive(Debug, Clone, Default)]
pub struct StatSettings {
    pub prior: PriorConfig,
    pub gibbs: GibbsConfig,
    pub lasso: LassoConfig,
    /// Known parameters, required by the oracle.
    pub oracle: Option<PointMass>,
}

/// Oriented, tie-broken statistic plus the Gibbs trace when one was produced.
pub fn compute_statistic(
    masked: &MaskedDataset,
    method: StatMethod,
    settings: &StatSettings,
) -> Result<(FeatureStatVector, Option<GibbsTrace>)> {
    let seed = masked.seed();
    match method {
        StatMethod::Lcd => {
            let w = lasso::lcd_pair(masked.view(), &settings.lasso)?.break_ties(seed);
            Ok((masked.orient(w)?, None))
        }
        StatMethod::Lsm => {
            let w = lasso::lsm_pair(masked.view(), &settings.lasso)?.break_ties(seed);
            Ok((masked.orient(w)?, None))
        }
        StatMethod::Mlr => {
            let (w, trace) = gibbs::mlr(masked, &settings.prior, &settings.gibbs)?;
            Ok((w, Some(trace)))
        }
        StatMethod::OracleMlr => {
            let pm = settings.oracle.clone().ok_or_else(|| {
                KnockoffError::InvalidInput("the oracle statistic needs known coefficients".into())
            })?;
            let truth = PriorConfig { point_mass: Some(pm), ..PriorConfig::default() };
            gibbs::oracle_mlr_traced(masked, &truth, &settings.gibbs)
        }
        StatMethod::Supplied => {
            Err(KnockoffError::InvalidInput("supplied statistics cannot be computed".into()))
        }
    }
}
