//! Fixed-X sampler on the sufficient statistics `(ξ, |β̃|)`.
//!
//! In pair orientation the hidden sign of `β̃_j` is `+` when the first member
//! is the feature. Given the signs, `Xᵀy = ξ + S·β̃/2`, so the coordinate
//! conditionals are those of a linear model with Gram matrix Σ.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::conjugate::{
    draw_categorical_log, draw_inv_gamma, initial_weights, update_tau2, update_weights,
    variance_conditional,
};
use super::GibbsConfig;
use crate::error::{KnockoffError, Result};
use crate::model::{FixedXView, GibbsTrace, ParamDraw, PriorConfig};
use crate::numeric::{check_finite_vector, log_cosh, log_sum_exp, rng_stream, sigmoid, tags, Rng};

/// Rescale features to `Σ_jj = n`, so the prior refers to unit-variance
/// features whatever the input scaling.
pub fn standardize_view(view: &FixedXView) -> FixedXView {
    let p = view.p();
    let d = DVector::from_fn(p, |j, _| {
        let v = (view.sigma[(j, j)] / view.n as f64).sqrt();
        if v > 0.0 {
            v
        } else {
            1.0
        }
    });
    FixedXView {
        sigma: DMatrix::from_fn(p, p, |i, j| view.sigma[(i, j)] / (d[i] * d[j])),
        s: view.s.component_div(&d.component_mul(&d)),
        xi: view.xi.component_div(&d),
        abs_beta_tilde: view.abs_beta_tilde.component_mul(&d),
        yty: view.yty,
        n: view.n,
        seed: view.seed,
    }
}

/// Gibbs state; `positive[j]` means the first member is the feature.
#[derive(Debug, Clone)]
pub struct FixedXState {
    pub positive: Vec<bool>,
    pub label: Vec<usize>,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub tau2: Vec<f64>,
    pub weights: Vec<f64>,
    /// `Σβ`, maintained incrementally.
    u: DVector<f64>,
}

impl FixedXState {
    pub fn new(
        view: &FixedXView,
        positive: Vec<bool>,
        label: Vec<usize>,
        beta: DVector<f64>,
        sigma2: f64,
        tau2: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let u = &view.sigma * &beta;
        FixedXState { positive, label, beta, sigma2, tau2, weights, u }
    }

    fn signed_beta_tilde(&self, view: &FixedXView) -> DVector<f64> {
        DVector::from_fn(view.p(), |j, _| {
            if self.positive[j] {
                view.abs_beta_tilde[j]
            } else {
                -view.abs_beta_tilde[j]
            }
        })
    }
}

/// Precomputed pieces of the σ² update.
pub struct SigmaUpdate {
    a_chol: Cholesky<f64, Dyn>,
}

impl SigmaUpdate {
    pub fn new(view: &FixedXView) -> Result<Self> {
        let a = view.a_matrix();
        let a_chol = Cholesky::new(a).ok_or_else(|| {
            KnockoffError::NotPositiveDefinite("Σ − S/2 (requires 2Σ ⪰ S)".into())
        })?;
        Ok(SigmaUpdate { a_chol })
    }

    /// Rate increment `½(‖A^{-1/2}(ξ − Aβ)‖² + ½‖S^{1/2}(β̃ − β)‖²)`.
    pub fn quadratic(&self, view: &FixedXView, state: &FixedXState) -> f64 {
        let a_beta = &state.u - view.s.component_mul(&state.beta) * 0.5;
        let resid = &view.xi - a_beta;
        let solved = self.a_chol.solve(&resid);
        let bt = state.signed_beta_tilde(view);
        let mut second = 0.0;
        for j in 0..view.p() {
            let d = bt[j] - state.beta[j];
            second += view.s[j] * d * d;
        }
        0.5 * (resid.dot(&solved) + 0.5 * second)
    }
}

/// `(shape, rate)` of σ² at a frozen state, or `None` when σ² is fixed.
pub fn sigma2_posterior_fixed_x(
    view: &FixedXView,
    state: &FixedXState,
    prior: &PriorConfig,
    upd: &SigmaUpdate,
) -> Option<(f64, f64)> {
    // p coordinates of ξ plus p of β̃: shape a + p.
    let q = upd.quadratic(view, state);
    variance_conditional(&prior.sigma2, 2.0 * view.p() as f64, 2.0 * q)
}

pub fn update_sigma2_fixed_x(
    view: &FixedXView,
    state: &mut FixedXState,
    prior: &PriorConfig,
    upd: &SigmaUpdate,
    rng: &mut Rng,
) {
    if let Some((shape, rate)) = sigma2_posterior_fixed_x(view, state, prior, upd) {
        state.sigma2 = draw_inv_gamma(shape, rate, rng);
    }
}

/// `log Σ_k w_k M_k(b)` with `M_k(b) = (1+τ_k²P)^{-1/2} exp(τ_k²b²/(2(1+τ_k²P)))`.
fn log_mix(state: &FixedXState, b: f64, prec: f64, out: &mut Vec<f64>) -> f64 {
    out.clear();
    out.push(state.weights[0].ln());
    for (k, &t2) in state.tau2.iter().enumerate() {
        let q = 1.0 + t2 * prec;
        out.push(state.weights[k + 1].ln() - 0.5 * q.ln() + 0.5 * t2 * b * b / q);
    }
    log_sum_exp(out)
}

/// One pass over the coordinates; writes the sign log-odds into `eta`.
fn sweep(
    view: &FixedXView,
    state: &mut FixedXState,
    marginalize: bool,
    eta: &mut [f64],
    rng: &mut Rng,
) -> Result<()> {
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for j in 0..view.p() {
        let sjj = view.sigma[(j, j)];
        let others = state.u[j] - sjj * state.beta[j];
        let half = 0.5 * view.s[j] * view.abs_beta_tilde[j];
        let prec = sjj / state.sigma2;
        let b_plus = (view.xi[j] + half - others) / state.sigma2;
        let b_minus = (view.xi[j] - half - others) / state.sigma2;
        let lp = log_mix(state, b_plus, prec, &mut plus);
        let lm = log_mix(state, b_minus, prec, &mut minus);
        let e = if marginalize || state.label[j] == 0 {
            lp - lm
        } else {
            (b_plus - b_minus) * state.beta[j]
        };
        if !e.is_finite() {
            return Err(KnockoffError::Sampler(format!(
                "non-finite sign log-odds at feature {j} (σ² = {})",
                state.sigma2
            )));
        }
        eta[j] = e;
        let positive = rng.random::<f64>() < sigmoid(e);
        state.positive[j] = positive;
        let (b, comps) = if positive { (b_plus, &plus) } else { (b_minus, &minus) };
        let k = draw_categorical_log(comps, rng);
        state.label[j] = k;
        let new = if k == 0 {
            0.0
        } else {
            let t2 = state.tau2[k - 1];
            let q = 1.0 + t2 * prec;
            let z: f64 = StandardNormal.sample(rng);
            t2 * b / q + (t2 / q).sqrt() * z
        };
        let delta = new - state.beta[j];
        if delta != 0.0 {
            state.u.axpy(delta, &view.sigma.column(j), 1.0);
            state.beta[j] = new;
        }
    }
    Ok(())
}

pub(crate) fn run_chain(
    view: &FixedXView,
    prior: &PriorConfig,
    cfg: &GibbsConfig,
    chain: usize,
) -> Result<GibbsTrace> {
    let p = view.p();
    let upd = SigmaUpdate::new(view)?;
    let mut rng = rng_stream(cfg.seed, tags::CHAIN + chain as u64);
    let tau2: Vec<f64> = prior.slab_variances.iter().map(|v| v.typical()).collect();
    let weights = initial_weights(&prior.weights, &mut rng);
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let mut positive = Vec::with_capacity(p);
    let mut label = Vec::with_capacity(p);
    let mut beta = DVector::zeros(p);
    for j in 0..p {
        positive.push(rng.random::<bool>());
        let k = draw_categorical_log(&log_w, &mut rng);
        label.push(k);
        if k > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            beta[j] = tau2[k - 1].sqrt() * z;
        }
    }
    let mut st =
        FixedXState::new(view, positive, label, beta, prior.sigma2.typical(), tau2, weights);
    let mut eta = vec![0.0; p];
    let mut trace = GibbsTrace::empty(cfg.burn_in);
    trace.chains = 1;
    let dims = vec![1usize; p];
    for it in 0..cfg.burn_in + cfg.n_sample {
        sweep(view, &mut st, cfg.marginalize_beta_on_x_update, &mut eta, &mut rng)?;
        let sq: Vec<f64> = st.beta.iter().map(|b| b * b).collect();
        update_tau2(&prior.slab_variances, &st.label, &dims, &sq, &mut st.tau2, &mut rng);
        update_weights(&prior.weights, &st.label, &mut st.weights, &mut rng);
        update_sigma2_fixed_x(view, &mut st, prior, &upd, &mut rng);
        if (it + 1) % cfg.resync_every == 0 {
            st.u = &view.sigma * &st.beta;
        }
        if it >= cfg.burn_in {
            trace.eta.push(eta.clone());
            trace.sign_indicators.push(st.positive.iter().map(|&b| u8::from(b)).collect());
            trace.param_draws.push(ParamDraw {
                sigma2: st.sigma2,
                tau2: st.tau2.clone(),
                weights: st.weights.clone(),
            });
        }
    }
    Ok(trace)
}

/// Masked log-likelihood of `β` up to an additive constant:
/// `(βᵀξ − ½βᵀAβ − Σ_j S_jjβ_j²/4)/σ² + Σ_j log cosh(S_jjβ_j|β̃_j|/(2σ²))`.
pub fn masked_loglik_fixed_x(beta: &DVector<f64>, view: &FixedXView, sigma2: f64) -> Result<f64> {
    if beta.len() != view.p() {
        return Err(KnockoffError::DimensionMismatch(format!(
            "β has length {}, p = {}",
            beta.len(),
            view.p()
        )));
    }
    check_finite_vector(beta, "beta")?;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(KnockoffError::InvalidInput(format!("σ² = {sigma2}")));
    }
    let a = view.a_matrix();
    let mut value = beta.dot(&view.xi) - 0.5 * beta.dot(&(&a * beta));
    let mut cosh = 0.0;
    for j in 0..view.p() {
        value -= 0.25 * view.s[j] * beta[j] * beta[j];
        cosh += log_cosh(0.5 * view.s[j] * beta[j] * view.abs_beta_tilde[j] / sigma2);
    }
    Ok(value / sigma2 + cosh)
}

/// Exact oracle statistic for known `(β, σ²)`: `S_jj·β_j·|β̃_j|/σ²` for "first".
pub fn oracle_fixed_x_pair(view: &FixedXView, beta: &[f64], sigma2: f64) -> Result<Vec<f64>> {
    if beta.len() != view.p() {
        return Err(KnockoffError::DimensionMismatch(format!(
            "oracle β has length {}, p = {}",
            beta.len(),
            view.p()
        )));
    }
    Ok((0..view.p()).map(|j| view.s[j] * beta[j] * view.abs_beta_tilde[j] / sigma2).collect())
}
