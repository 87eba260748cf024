//! Conjugate draws shared by the samplers: inverse-gamma variances, Dirichlet
//! weights, categorical labels and one-sided truncated normals.

use rand::Rng as _;
use rand_distr::{Distribution, Exp, Gamma, StandardNormal};

use crate::model::{VarianceParam, WeightParam};
use crate::numeric::Rng;

/// Draw from `InvGamma(shape, rate)` (density ∝ x^{−shape−1} e^{−rate/x}).
pub fn draw_inv_gamma(shape: f64, rate: f64, rng: &mut Rng) -> f64 {
    let g = Gamma::new(shape, 1.0 / rate).expect("positive shape and rate");
    1.0 / g.sample(rng)
}

pub fn draw_dirichlet(alpha: &[f64], rng: &mut Rng) -> Vec<f64> {
    let draws: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = draws.iter().sum();
    draws.iter().map(|g| g / total).collect()
}

/// Index drawn with probability ∝ `exp(log_w[k])`.
pub fn draw_categorical_log(log_w: &[f64], rng: &mut Rng) -> usize {
    let m = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|l| (l - m).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (k, l) in log_w.iter().enumerate() {
        u -= (l - m).exp();
        if u < 0.0 {
            return k;
        }
    }
    log_w.iter().rposition(|l| *l > f64::NEG_INFINITY).unwrap_or(0)
}

/// Standard normal restricted to `[a, ∞)`.
pub fn draw_std_normal_tail(a: f64, rng: &mut Rng) -> f64 {
    if a <= 0.0 {
        loop {
            let x: f64 = StandardNormal.sample(rng);
            if x >= a {
                return x;
            }
        }
    }
    // Exponential proposal with the optimal rate.
    let alpha = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp = Exp::new(alpha).expect("positive rate");
    loop {
        let x = a + exp.sample(rng);
        let accept = (-0.5 * (x - alpha) * (x - alpha)).exp();
        if rng.random::<f64>() <= accept {
            return x;
        }
    }
}

/// `N(mean, 1)` restricted to `(0, ∞)` when `positive`, else `(−∞, 0)`.
pub fn draw_probit_latent(mean: f64, positive: bool, rng: &mut Rng) -> f64 {
    if positive {
        mean + draw_std_normal_tail(-mean, rng)
    } else {
        mean - draw_std_normal_tail(mean, rng)
    }
}

/// Conditional `(shape, rate)` of a variance with prior `param` after
/// observing `dim` Gaussian coordinates with total squared size `sum_sq`.
pub fn variance_conditional(param: &VarianceParam, dim: f64, sum_sq: f64) -> Option<(f64, f64)> {
    match *param {
        VarianceParam::Fixed(_) => None,
        VarianceParam::InvGamma { shape, rate } => Some((shape + 0.5 * dim, rate + 0.5 * sum_sq)),
    }
}

/// Redraw slab variances given the current labels.
///
/// `labels[u]` is the mixture component of unit `u` (0 = spike), `dims[u]` its
/// coefficient dimension and `sq[u]` its squared coefficient norm.
pub fn update_tau2(
    params: &[VarianceParam],
    labels: &[usize],
    dims: &[usize],
    sq: &[f64],
    tau2: &mut [f64],
    rng: &mut Rng,
) {
    for (k, param) in params.iter().enumerate() {
        let (mut dim, mut total) = (0.0, 0.0);
        for u in 0..labels.len() {
            if labels[u] == k + 1 {
                dim += dims[u] as f64;
                total += sq[u];
            }
        }
        if let Some((shape, rate)) = variance_conditional(param, dim, total) {
            tau2[k] = draw_inv_gamma(shape, rate, rng);
        }
    }
}

/// Dirichlet concentration of the weights given the labels, if not fixed.
pub fn weights_conditional(param: &WeightParam, labels: &[usize]) -> Option<Vec<f64>> {
    match param {
        WeightParam::Fixed(_) => None,
        WeightParam::Dirichlet(alpha) => {
            let mut post = alpha.clone();
            for &l in labels {
                post[l] += 1.0;
            }
            Some(post)
        }
    }
}

pub fn update_weights(param: &WeightParam, labels: &[usize], weights: &mut Vec<f64>, rng: &mut Rng) {
    if let Some(post) = weights_conditional(param, labels) {
        *weights = draw_dirichlet(&post, rng);
    }
}

/// Initial hyperparameters: slab variances and σ² at their typical values,
/// weights drawn from their prior.
pub fn initial_weights(param: &WeightParam, rng: &mut Rng) -> Vec<f64> {
    match param {
        WeightParam::Fixed(w) => w.clone(),
        WeightParam::Dirichlet(a) => draw_dirichlet(a, rng),
    }
}
