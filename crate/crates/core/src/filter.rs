//! SeqStep threshold with the +1 offset, the ψ/τ discovery count, and scoring.

use crate::error::{KnockoffError, Result};
use crate::model::FeatureStatVector;

#[derive(Debug, Clone, PartialEq)]
pub struct RejectionResult {
    /// `+∞` when nothing is rejected.
    pub threshold: f64,
    /// Rejected feature indices, ascending.
    pub rejected: Vec<usize>,
    pub q: f64,
}

fn check_q(q: f64) -> Result<()> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(KnockoffError::InvalidInput(format!("q = {q} must lie in (0, 1]")));
    }
    Ok(())
}

/// `T = min{t ∈ {|W_j|} : (#{W_j ≤ −t} + 1) / #{W_j ≥ t} ≤ q}`.
pub fn threshold_values(w: &[f64], q: f64) -> Result<RejectionResult> {
    check_q(q)?;
    if let Some(j) = w.iter().position(|v| *v == 0.0 || !v.is_finite()) {
        return Err(KnockoffError::InvalidInput(format!(
            "W[{j}] = {} (statistics must be finite and nonzero)",
            w[j]
        )));
    }
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    let mut best = f64::INFINITY;
    let (mut pos, mut neg) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = w[order[i]].abs();
        while i < order.len() && w[order[i]].abs() == t {
            if w[order[i]] > 0.0 {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        if pos > 0 && (neg as f64 + 1.0) / pos as f64 <= q {
            best = t;
        }
    }
    let rejected = (0..w.len()).filter(|&j| w[j] >= best).collect();
    Ok(RejectionResult { threshold: best, rejected, q })
}

pub fn threshold(w: &FeatureStatVector, q: f64) -> Result<RejectionResult> {
    threshold_values(&w.w, q)
}

/// `ψ_q(η) = max{k : (k − Σ_{i≤k}η_i + 1)/Σ_{i≤k}η_i ≤ q}` and
/// `τ_q = ⌈(ψ_q + 1)/(1 + q)⌉` (0 when `ψ_q = 0`).
///
/// `eta` is in decreasing order of `|W|`; it is padded with zeros past its
/// end, so `k` may exceed its length.
pub fn psi_tau(eta: &[f64], q: f64) -> Result<(usize, usize)> {
    check_q(q)?;
    if let Some(j) = eta.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(KnockoffError::InvalidInput(format!("eta[{j}] = {} outside [0, 1]", eta[j])));
    }
    let mut psi = 0;
    let mut sum = 0.0;
    let mut k = 0usize;
    loop {
        if k < eta.len() {
            sum += eta[k];
        }
        k += 1;
        let qualifies = sum > 0.0 && (k as f64 - sum + 1.0) / sum <= q;
        if qualifies {
            psi = k;
        } else if k >= eta.len() {
            break;
        }
    }
    let tau = if psi == 0 { 0 } else { ((psi as f64 + 1.0) / (1.0 + q)).ceil() as usize };
    Ok((psi, tau))
}

/// Indicators `1{W_j > 0}` in decreasing order of `|W|` (ties by index).
pub fn sorted_sign_indicators(w: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    order.into_iter().map(|j| if w[j] > 0.0 { 1.0 } else { 0.0 }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub fdp: f64,
    pub power: f64,
    pub n_rej: usize,
    /// `|rejected| / |truth|`.
    pub normalized_discoveries: f64,
}

pub fn fdp_power(rejected: &[usize], truth: &[usize]) -> Score {
    let truth_set: std::collections::HashSet<_> = truth.iter().collect();
    let hits = rejected.iter().filter(|j| truth_set.contains(j)).count();
    let n_rej = rejected.len();
    Score {
        fdp: (n_rej - hits) as f64 / n_rej.max(1) as f64,
        power: hits as f64 / truth.len().max(1) as f64,
        n_rej,
        normalized_discoveries: n_rej as f64 / truth.len().max(1) as f64,
    }
}
