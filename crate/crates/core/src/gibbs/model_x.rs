//! Gibbs sampler over the masked model-X posterior.
//!
//! State: which member of each pair is the feature, mixture labels,
//! coefficients, σ², slab variances and mixture weights. The residual
//! `r = y − Σ_u φ_u β_u` is kept up to date after every unit update.

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::basis::UnitBasis;
use super::conjugate::{
    draw_categorical_log, draw_inv_gamma, draw_probit_latent, initial_weights, update_tau2,
    update_weights, variance_conditional,
};
use super::GibbsConfig;
use crate::error::{KnockoffError, Result};
use crate::model::{GibbsTrace, ParamDraw, PriorConfig, VarianceParam};
use crate::numeric::{log_sum_exp, rng_stream, sigmoid, tags, Rng};

pub(crate) enum Response<'a> {
    Continuous(&'a DVector<f64>),
    /// Binary labels; the latent Gaussian response is resampled each sweep.
    Probit(&'a DVector<f64>),
}

struct Chain<'a> {
    units: &'a [UnitBasis],
    prior: &'a PriorConfig,
    marginalize: bool,
    assign: Vec<usize>,
    label: Vec<usize>,
    beta: Vec<DVector<f64>>,
    sigma2: f64,
    tau2: Vec<f64>,
    weights: Vec<f64>,
    y: DVector<f64>,
    r: DVector<f64>,
    probit: Option<&'a DVector<f64>>,
    eta: Vec<f64>,
    scratch: [Vec<f64>; 2],
}

impl<'a> Chain<'a> {
    fn new(
        units: &'a [UnitBasis],
        prior: &'a PriorConfig,
        response: &Response<'a>,
        marginalize: bool,
        rng: &mut Rng,
    ) -> Self {
        let (y, probit) = match response {
            Response::Continuous(y) => ((*y).clone(), None),
            Response::Probit(z) => {
                let y = z.map(|_| 0.0);
                (y, Some(*z))
            }
        };
        let tau2: Vec<f64> = prior.slab_variances.iter().map(|v| v.typical()).collect();
        let weights = initial_weights(&prior.weights, rng);
        let sigma2 = if probit.is_some() { 1.0 } else { prior.sigma2.typical() };
        let m = units.len();
        let mut chain = Chain {
            units,
            prior,
            marginalize,
            assign: vec![0; m],
            label: vec![0; m],
            beta: units.iter().map(|u| DVector::zeros(u.dim())).collect(),
            sigma2,
            tau2,
            weights,
            r: y.clone(),
            y,
            probit,
            eta: vec![0.0; m],
            scratch: [Vec::new(), Vec::new()],
        };
        let log_w: Vec<f64> = chain.weights.iter().map(|w| w.ln()).collect();
        for u in 0..m {
            chain.assign[u] = usize::from(rng.random::<bool>());
            chain.label[u] = draw_categorical_log(&log_w, rng);
            if chain.label[u] > 0 {
                let sd = chain.tau2[chain.label[u] - 1].sqrt();
                for v in chain.beta[u].iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sd * z;
                }
            }
        }
        if chain.probit.is_some() {
            chain.resync();
            chain.refresh_latent(rng);
        }
        chain.resync();
        chain
    }

    fn fit(&self) -> DVector<f64> {
        let mut fit = DVector::zeros(self.y.len());
        for (u, unit) in self.units.iter().enumerate() {
            if self.label[u] > 0 {
                fit.gemv(1.0, &unit.cand[self.assign[u]].phi, &self.beta[u], 1.0);
            }
        }
        fit
    }

    fn resync(&mut self) {
        self.r = &self.y - self.fit();
    }

    fn refresh_latent(&mut self, rng: &mut Rng) {
        let z = self.probit.expect("probit response");
        let fit = &self.y - &self.r;
        for i in 0..self.y.len() {
            self.y[i] = draw_probit_latent(fit[i], z[i] > 0.5, rng);
        }
        self.r = &self.y - fit;
    }

    /// `log ∫ N(r; φβ, σ²)/N(r; 0, σ²) dπ_k(β)` for each mixture component.
    fn log_marginals(&mut self, u: usize, c: usize, out: &mut Vec<f64>) {
        let cand = &self.units[u].cand[c];
        let v = &mut self.scratch[c];
        v.clear();
        v.extend((0..cand.dim()).map(|i| cand.psi.column(i).dot(&self.r)));
        out.clear();
        out.push(self.weights[0].ln());
        for (k, &t2) in self.tau2.iter().enumerate() {
            let ck = t2 / self.sigma2;
            let mut lm = 0.0;
            if ck > 0.0 {
                for (i, &vi) in v.iter().enumerate() {
                    let q = 1.0 + ck * cand.lambda[i];
                    lm += -0.5 * q.ln() + 0.5 * ck / self.sigma2 * vi * vi / q;
                }
            }
            out.push(self.weights[k + 1].ln() + lm);
        }
    }

    fn sweep(&mut self, rng: &mut Rng) -> Result<()> {
        let mut lm = [Vec::new(), Vec::new()];
        let units = self.units;
        for u in 0..units.len() {
            let unit = &units[u];
            if self.label[u] > 0 {
                self.r.gemv(1.0, &unit.cand[self.assign[u]].phi, &self.beta[u], 1.0);
            }
            self.log_marginals(u, 0, &mut lm[0]);
            self.log_marginals(u, 1, &mut lm[1]);
            let eta = if self.marginalize || self.label[u] == 0 {
                log_sum_exp(&lm[0]) - log_sum_exp(&lm[1])
            } else {
                let f0 = &unit.cand[0].phi * &self.beta[u];
                let f1 = &unit.cand[1].phi * &self.beta[u];
                (self.r.dot(&(&f0 - &f1)) - 0.5 * (f0.norm_squared() - f1.norm_squared()))
                    / self.sigma2
            };
            if !eta.is_finite() {
                return Err(KnockoffError::Sampler(format!(
                    "non-finite log-odds {eta} for unit {u} (σ² = {}, τ² = {:?})",
                    self.sigma2, self.tau2
                )));
            }
            self.eta[u] = eta;
            let c = if rng.random::<f64>() < sigmoid(eta) { 0 } else { 1 };
            self.assign[u] = c;
            let k = draw_categorical_log(&lm[c], rng);
            self.label[u] = k;
            if k == 0 {
                self.beta[u].fill(0.0);
                continue;
            }
            let cand = &unit.cand[c];
            let t2 = self.tau2[k - 1];
            let ck = t2 / self.sigma2;
            let v = &self.scratch[c];
            let alpha = DVector::from_fn(cand.dim(), |i, _| {
                let q = 1.0 + ck * cand.lambda[i];
                let z: f64 = StandardNormal.sample(rng);
                ck / q * v[i] + (t2 / q).sqrt() * z
            });
            self.beta[u] = &cand.u * alpha;
            self.r.gemv(-1.0, &cand.phi, &self.beta[u], 1.0);
        }
        Ok(())
    }

    fn update_hyper(&mut self, rng: &mut Rng) {
        let dims: Vec<usize> = self.units.iter().map(|u| u.dim()).collect();
        let sq: Vec<f64> = self.beta.iter().map(|b| b.norm_squared()).collect();
        update_tau2(&self.prior.slab_variances, &self.label, &dims, &sq, &mut self.tau2, rng);
        update_weights(&self.prior.weights, &self.label, &mut self.weights, rng);
        if self.probit.is_some() {
            self.refresh_latent(rng);
        } else if let Some((shape, rate)) = sigma2_conditional(&self.prior.sigma2, &self.r) {
            self.sigma2 = draw_inv_gamma(shape, rate, rng);
        }
    }
}

/// `(shape, rate)` of σ² given the residual, or `None` when σ² is fixed.
pub fn sigma2_conditional(prior: &VarianceParam, residual: &DVector<f64>) -> Option<(f64, f64)> {
    variance_conditional(prior, residual.len() as f64, residual.norm_squared())
}

pub(crate) fn run_chain(
    units: &[UnitBasis],
    prior: &PriorConfig,
    response: &Response<'_>,
    cfg: &GibbsConfig,
    chain: usize,
) -> Result<GibbsTrace> {
    let mut rng = rng_stream(cfg.seed, tags::CHAIN + chain as u64);
    let mut st = Chain::new(units, prior, response, cfg.marginalize_beta_on_x_update, &mut rng);
    let mut trace = GibbsTrace::empty(cfg.burn_in);
    trace.chains = 1;
    for it in 0..cfg.burn_in + cfg.n_sample {
        st.sweep(&mut rng)?;
        st.update_hyper(&mut rng);
        if (it + 1) % cfg.resync_every == 0 {
            st.resync();
        }
        if it >= cfg.burn_in {
            trace.eta.push(st.eta.clone());
            trace.sign_indicators.push(st.assign.iter().map(|&a| u8::from(a == 0)).collect());
            trace.param_draws.push(ParamDraw {
                sigma2: st.sigma2,
                tau2: st.tau2.clone(),
                weights: st.weights.clone(),
            });
        }
    }
    Ok(trace)
}

/// Gibbs over assignments only, with coefficients pinned at `beta` (one
/// vector per unit) and known σ².
pub(crate) fn run_oracle_chain(
    units: &[UnitBasis],
    beta: &[DVector<f64>],
    sigma2: f64,
    y: &DVector<f64>,
    cfg: &GibbsConfig,
    chain: usize,
) -> Result<GibbsTrace> {
    let mut rng = rng_stream(cfg.seed, tags::CHAIN + chain as u64);
    let m = units.len();
    let mut assign: Vec<usize> = (0..m).map(|_| usize::from(rng.random::<bool>())).collect();
    let fits: Vec<[DVector<f64>; 2]> = units
        .iter()
        .zip(beta)
        .map(|(u, b)| [&u.cand[0].phi * b, &u.cand[1].phi * b])
        .collect();
    let half_sq: Vec<f64> = fits
        .iter()
        .map(|f| 0.5 * (f[0].norm_squared() - f[1].norm_squared()))
        .collect();
    let resync = |assign: &[usize]| {
        let mut r = y.clone();
        for u in 0..m {
            r -= &fits[u][assign[u]];
        }
        r
    };
    let mut r = resync(&assign);
    let mut eta = vec![0.0; m];
    let mut trace = GibbsTrace::empty(cfg.burn_in);
    trace.chains = 1;
    for it in 0..cfg.burn_in + cfg.n_sample {
        for u in 0..m {
            r += &fits[u][assign[u]];
            let e = (r.dot(&fits[u][0]) - r.dot(&fits[u][1]) - half_sq[u]) / sigma2;
            if !e.is_finite() {
                return Err(KnockoffError::Sampler(format!("non-finite oracle log-odds at unit {u}")));
            }
            eta[u] = e;
            assign[u] = if rng.random::<f64>() < sigmoid(e) { 0 } else { 1 };
            r -= &fits[u][assign[u]];
        }
        if (it + 1) % cfg.resync_every == 0 {
            r = resync(&assign);
        }
        if it >= cfg.burn_in {
            trace.eta.push(eta.clone());
            trace.sign_indicators.push(assign.iter().map(|&a| u8::from(a == 0)).collect());
            trace.param_draws.push(ParamDraw { sigma2, tau2: Vec::new(), weights: Vec::new() });
        }
    }
    Ok(trace)
}
