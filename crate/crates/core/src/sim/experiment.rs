//! Monte Carlo experiment runner.

use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{sample_instance, sample_sigma, CoefDist, CovKind, Instance, ResponseModel};
use crate::error::{KnockoffError, Result};
use crate::filter::{fdp_power, threshold};
use crate::gibbs::GibbsConfig;
use crate::knockoffs::{build_fixed_x, build_model_x, SMatrixSpec, SMethod};
use crate::lasso::LassoConfig;
use crate::model::{mask, KnockoffModel, PointMass, PriorConfig, StatMethod};
use crate::numeric::{rng_stream, tags};
use crate::statistics::{compute_statistic, StatSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Framework {
    FixedX,
    ModelX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnockoffSetting {
    pub framework: Framework,
    pub s_method: SMethod,
}

impl KnockoffSetting {
    pub fn label(&self) -> String {
        let f = match self.framework {
            Framework::FixedX => "fixed_x",
            Framework::ModelX => "model_x",
        };
        let s = match self.s_method {
            SMethod::Equicorrelated => "equi",
            SMethod::Mvr => "mvr",
        };
        format!("{f}_{s}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub p: usize,
    pub cov_kind: CovKind,
    /// Fraction of non-null coefficients.
    pub sparsity: f64,
    pub coef_dist: CoefDist,
    pub tau: f64,
    pub response: ResponseModel,
    pub knockoff: KnockoffSetting,
    pub statistics: Vec<StatMethod>,
    pub q: f64,
    pub n_reps: usize,
    pub seed: u64,
    /// Sampler settings for the MLR statistics.
    #[serde(default)]
    pub gibbs: Option<GibbsConfig>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KnockoffError::InvalidInput(m));
        if !(self.sparsity > 0.0 && self.sparsity < 1.0) {
            return bad(format!("sparsity must lie in (0, 1), got {}", self.sparsity));
        }
        if self.n_reps == 0 {
            return bad("n_reps must be at least 1".into());
        }
        if self.n == 0 || self.p == 0 {
            return bad("n and p must be positive".into());
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be finite and ≥ 0, got {}", self.tau));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q must lie in (0, 1], got {}", self.q));
        }
        if self.statistics.is_empty() {
            return bad("at least one statistic is required".into());
        }
        if self.statistics.contains(&StatMethod::Supplied) {
            return bad("`supplied` is not a computable statistic".into());
        }
        Ok(())
    }
}

/// One row of the result table: one statistic on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub rep: usize,
    pub method: StatMethod,
    pub knockoff: String,
    pub n_rej: Option<usize>,
    pub fdp: Option<f64>,
    pub power: Option<f64>,
    pub seed: u64,
    /// Wall-clock time of the statistic; `None` unless timing was requested,
    /// which keeps the default output reproducible byte for byte.
    pub runtime_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub record_runtime: bool,
}

/// Build the replicate's dataset, its knockoffs and the seed used downstream.
pub fn replicate_instance(cfg: &ExperimentConfig, rep: usize) -> Result<(Instance, KnockoffModel, u64)> {
    let mut rng = rng_stream(cfg.seed, tags::REPLICATE + rep as u64);
    let sigma = sample_sigma(&cfg.cov_kind, cfg.p, &mut rng)?;
    let inst = sample_instance(cfg.n, sigma, cfg.sparsity, cfg.tau, cfg.coef_dist, cfg.response, &mut rng)?;
    // 53 bits, so the seed survives a round trip through any JSON reader.
    let rep_seed: u64 = rng.random::<u64>() >> 11;
    let spec = match cfg.knockoff.s_method {
        SMethod::Equicorrelated => SMatrixSpec::equicorrelated(),
        SMethod::Mvr => SMatrixSpec::mvr(),
    };
    let ko = match cfg.knockoff.framework {
        Framework::FixedX => build_fixed_x(&inst.dataset, &spec)?,
        Framework::ModelX => build_model_x(&inst.dataset, &inst.sigma, &spec, None, rep_seed)?,
    };
    Ok((inst, ko, rep_seed))
}

fn settings_for(cfg: &ExperimentConfig, inst: &Instance, rep_seed: u64) -> StatSettings {
    let transform = match cfg.response {
        ResponseModel::Gam(h) => Some(h),
        _ => None,
    };
    StatSettings {
        prior: PriorConfig::default(),
        gibbs: cfg.gibbs.unwrap_or_default().with_seed(rep_seed),
        lasso: LassoConfig::default(),
        oracle: Some(PointMass { beta: inst.beta.clone(), sigma2: 1.0, transform }),
    }
}

fn run_replicate(cfg: &ExperimentConfig, rep: usize, opts: RunOptions) -> Vec<ResultRecord> {
    let label = cfg.knockoff.label();
    let fail = |method: StatMethod, seed: u64, e: &KnockoffError| ResultRecord {
        rep,
        method,
        knockoff: label.clone(),
        n_rej: None,
        fdp: None,
        power: None,
        seed,
        runtime_ms: None,
        error: Some(format!("{}: {e}", e.kind())),
    };
    let (inst, ko, rep_seed) = match replicate_instance(cfg, rep) {
        Ok(v) => v,
        Err(e) => return cfg.statistics.iter().map(|&m| fail(m, 0, &e)).collect(),
    };
    let masked = match mask(&inst.dataset, &ko, rep_seed) {
        Ok(v) => v,
        Err(e) => return cfg.statistics.iter().map(|&m| fail(m, rep_seed, &e)).collect(),
    };
    let settings = settings_for(cfg, &inst, rep_seed);
    cfg.statistics
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let outcome = compute_statistic(&masked, method, &settings)
                .and_then(|(w, _)| threshold(&w, cfg.q));
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            match outcome {
                Ok(rej) => {
                    let score = fdp_power(&rej.rejected, &inst.truth);
                    ResultRecord {
                        rep,
                        method,
                        knockoff: label.clone(),
                        n_rej: Some(score.n_rej),
                        fdp: Some(score.fdp),
                        power: Some(score.power),
                        seed: rep_seed,
                        runtime_ms: opts.record_runtime.then_some(elapsed),
                        error: None,
                    }
                }
                Err(e) => {
                    log::warn!("replicate {rep}, {}: {e}", method.name());
                    fail(method, rep_seed, &e)
                }
            }
        })
        .collect()
}

/// Every replicate × statistic record, in replicate order. Per-replicate
/// failures are recorded rather than propagated.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    run_experiment_with(cfg, RunOptions::default())
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<Vec<ResultRecord>> {
    cfg.validate()?;
    let per_rep: Vec<Vec<ResultRecord>> =
        (0..cfg.n_reps).into_par_iter().map(|rep| run_replicate(cfg, rep, opts)).collect();
    Ok(per_rep.into_iter().flatten().collect())
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    pub fn of(values: &[f64]) -> MeanSe {
        let n = values.len();
        if n == 0 {
            return MeanSe { mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        if n < 2 {
            return MeanSe { mean, se: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        MeanSe { mean, se: (var / n as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: StatMethod,
    pub knockoff: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub power: MeanSe,
    pub fdp: MeanSe,
    /// Discoveries divided by the number of non-nulls.
    pub normalized_discoveries: MeanSe,
}

/// Per-statistic summaries, in the order the statistics were configured.
pub fn summarize(cfg: &ExperimentConfig, records: &[ResultRecord]) -> Vec<MethodSummary> {
    let k = ((cfg.sparsity * cfg.p as f64).round() as usize).clamp(1, cfg.p);
    cfg.statistics
        .iter()
        .map(|&method| {
            let rows: Vec<&ResultRecord> = records.iter().filter(|r| r.method == method).collect();
            let ok: Vec<&&ResultRecord> = rows.iter().filter(|r| !r.failed()).collect();
            let col = |f: &dyn Fn(&ResultRecord) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
            MethodSummary {
                method,
                knockoff: cfg.knockoff.label(),
                n_ok: ok.len(),
                n_failed: rows.len() - ok.len(),
                power: MeanSe::of(&col(&|r| r.power.unwrap_or(0.0))),
                fdp: MeanSe::of(&col(&|r| r.fdp.unwrap_or(0.0))),
                normalized_discoveries: MeanSe::of(&col(&|r| r.n_rej.unwrap_or(0) as f64 / k as f64)),
            }
        })
        .collect()
}

/// Mean and standard error of the per-replicate difference `a − b` in power,
/// over replicates where both succeeded.
pub fn paired_power_difference(records: &[ResultRecord], a: StatMethod, b: StatMethod) -> MeanSe {
    let lookup = |m: StatMethod| -> std::collections::BTreeMap<usize, f64> {
        records
            .iter()
            .filter(|r| r.method == m && !r.failed())
            .map(|r| (r.rep, r.power.unwrap_or(0.0)))
            .collect()
    };
    let (pa, pb) = (lookup(a), lookup(b));
    let diffs: Vec<f64> = pa.iter().filter_map(|(rep, va)| pb.get(rep).map(|vb| va - vb)).collect();
    MeanSe::of(&diffs)
}
