//! Trace diagnostics: sign covariance, its decay check, split-R̂ and the
//! bounded display transform of W.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{KnockoffError, Result};
use crate::model::{FeatureStatVector, GibbsTrace};
use crate::numeric::sigmoid;

pub const MIN_COV_SAMPLES: usize = 100;

/// Covariance of the sign indicators across kept iterations, all chains
/// pooled (denominator = number of samples).
pub fn sign_cov(trace: &GibbsTrace) -> Result<DMatrix<f64>> {
    let n = trace.sign_indicators.len();
    if n < MIN_COV_SAMPLES {
        return Err(KnockoffError::InvalidInput(format!(
            "sign covariance needs at least {MIN_COV_SAMPLES} samples, trace has {n}"
        )));
    }
    let p = trace.sign_indicators[0].len();
    let data = DMatrix::from_fn(n, p, |i, j| f64::from(trace.sign_indicators[i][j]));
    let mean = data.row_mean();
    let centered = DMatrix::from_fn(n, p, |i, j| data[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / n as f64;
    Ok((&cov + cov.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayReport {
    pub max_offdiag_abs: f64,
    /// Largest `|cov_ij| / (C·ρ^|i−j|)` over off-diagonal entries.
    pub max_ratio: f64,
    pub pass: bool,
}

/// Check `|cov_ij| ≤ C·ρ^|i−j|` off the diagonal.
pub fn decay_check(cov: &DMatrix<f64>, c: f64, rho: f64) -> DecayReport {
    let p = cov.nrows();
    let mut max_abs = 0.0f64;
    let mut max_ratio = 0.0f64;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let v = cov[(i, j)].abs();
            max_abs = max_abs.max(v);
            let bound = c * rho.powi((i as i64 - j as i64).unsigned_abs() as i32);
            let ratio = if v == 0.0 { 0.0 } else if bound > 0.0 { v / bound } else { f64::INFINITY };
            max_ratio = max_ratio.max(ratio);
        }
    }
    DecayReport { max_offdiag_abs: max_abs, max_ratio, pass: max_ratio <= 1.0 }
}

/// `sign(W_j)·2(σ(|W_j|) − ½)`.
pub fn w_display_transform(w: &FeatureStatVector) -> Vec<f64> {
    w.w.iter().map(|v| v.signum() * 2.0 * (sigmoid(v.abs()) - 0.5)).collect()
}

/// Largest split-R̂ over units, computed on `σ(η)` per chain half.
/// Returns 1 when it cannot be computed.
pub fn max_split_rhat(trace: &GibbsTrace) -> f64 {
    let rows = trace.chain_rows();
    let len = rows.first().map_or(0, |r| r.len()) / 2;
    if len < 2 || trace.n_units() == 0 {
        return 1.0;
    }
    let mut worst = 1.0f64;
    for j in 0..trace.n_units() {
        let mut means = Vec::new();
        let mut vars = Vec::new();
        for r in &rows {
            for half in [r.start..r.start + len, r.start + len..r.start + 2 * len] {
                let xs: Vec<f64> = half.map(|i| sigmoid(trace.eta[i][j])).collect();
                let m = xs.iter().sum::<f64>() / len as f64;
                let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (len - 1) as f64;
                means.push(m);
                vars.push(v);
            }
        }
        let k = means.len() as f64;
        let w = vars.iter().sum::<f64>() / k;
        if !(w > 1e-12) {
            continue;
        }
        let grand = means.iter().sum::<f64>() / k;
        let b = len as f64 * means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (k - 1.0);
        let var_plus = (len as f64 - 1.0) / len as f64 * w + b / len as f64;
        worst = worst.max((var_plus / w).sqrt());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StatMethod;

    fn trace_bits(bits: Vec<Vec<u8>>) -> GibbsTrace {
        let mut t = GibbsTrace::empty(0);
        t.eta = bits.iter().map(|r| vec![0.0; r.len()]).collect();
        t.sign_indicators = bits;
        t.chains = 1;
        t
    }

    #[test]
    fn constant_bits_have_zero_covariance() {
        let t = trace_bits(vec![vec![1, 0, 1]; 150]);
        assert_eq!(sign_cov(&t).unwrap(), DMatrix::zeros(3, 3));
        assert!(sign_cov(&trace_bits(vec![vec![1]; 10])).is_err());
    }

    #[test]
    fn decay_examples() {
        assert!(decay_check(&DMatrix::zeros(4, 4), 0.0, 0.5).pass);
        let mut cov = DMatrix::zeros(5, 5);
        cov[(0, 3)] = 0.5;
        cov[(3, 0)] = 0.5;
        let r = decay_check(&cov, 0.3, 0.5);
        assert!(!r.pass);
        assert!((r.max_ratio - 0.5 / (0.3 * 0.125)).abs() < 1e-12);
    }

    #[test]
    fn display_transform_examples() {
        let w = FeatureStatVector::new(vec![3f64.ln(), -(3f64.ln()), 1e-300], StatMethod::Mlr);
        let t = w_display_transform(&w);
        assert!((t[0] - 0.5).abs() < 1e-15 && (t[1] + 0.5).abs() < 1e-15);
        assert!(t[2].abs() < 1e-15);
    }
}
