//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use knockoff_mlr::knockoffs::{build_fixed_x, build_model_x, SMatrixSpec};
use knockoff_mlr::model::{mask, Dataset, KnockoffModel, MaskedDataset};
use knockoff_mlr::numeric::{rng_stream, Rng};
use knockoff_mlr::sim::dgp::{ar1_sigma, sample_instance, CoefDist, Instance, ResponseModel};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Accelerated proximal gradient with adaptive restart for
/// `½‖y − Zb‖² + pen·‖b‖₁`. Written independently of the library solver.
pub fn fista(z: &DMatrix<f64>, y: &DVector<f64>, pen: f64, iters: usize) -> DVector<f64> {
    let d = z.ncols();
    let gram = z.transpose() * z;
    let zty = z.transpose() * y;
    let lip = gram.clone().symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;
    let objective = |b: &DVector<f64>| {
        0.5 * (y - z * b).norm_squared() + pen * b.iter().map(|v| v.abs()).sum::<f64>()
    };
    let prox = |v: f64| {
        let t = step * pen;
        if v > t {
            v - t
        } else if v < -t {
            v + t
        } else {
            0.0
        }
    };
    let mut b = DVector::zeros(d);
    let mut mom = b.clone();
    let mut t = 1.0f64;
    let mut last = objective(&b);
    for _ in 0..iters {
        let grad = &gram * &mom - &zty;
        let next = (&mom - grad * step).map(prox);
        let f = objective(&next);
        if f > last {
            // Restart the momentum.
            mom = b.clone();
            t = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        mom = &next + (&next - &b) * ((t - 1.0) / t_next);
        b = next;
        t = t_next;
        last = f;
    }
    b
}

/// Columns scaled to unit Euclidean norm.
pub fn unit_columns(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut c in out.column_iter_mut() {
        let n = c.norm();
        c.scale_mut(1.0 / n);
    }
    out
}

/// Largest KKT violation of a lasso solution relative to the penalty.
pub fn relative_kkt(z: &DMatrix<f64>, y: &DVector<f64>, b: &DVector<f64>, pen: f64) -> f64 {
    let corr = z.transpose() * (y - z * b);
    let mut worst = 0.0f64;
    for j in 0..b.len() {
        let v = if b[j] != 0.0 {
            (corr[j] - pen * b[j].signum()).abs()
        } else {
            (corr[j].abs() - pen).max(0.0)
        };
        worst = worst.max(v);
    }
    worst / pen
}

/// A random lasso instance with some correlated columns.
pub fn lasso_instance(rng: &mut Rng) -> (DMatrix<f64>, DVector<f64>) {
    let n = rng.random_range(30..100);
    let d = rng.random_range(4..40);
    let mix = rng.random_range(0.0..0.9);
    let base = DMatrix::<f64>::from_fn(n, d, |_, _| StandardNormal.sample(rng));
    let shared = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
    let z = DMatrix::from_fn(n, d, |i, j| (1.0 - mix) * base[(i, j)] + mix * shared[i]);
    let beta = DVector::from_fn(d, |j, _| if j % 3 == 0 { rng.random_range(-2.0..2.0) } else { 0.0 });
    let noise = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
    let y = &z * beta + noise;
    (unit_columns(&z), y)
}

pub struct Setup {
    pub inst: Instance,
    pub ko: KnockoffModel,
    pub masked: MaskedDataset,
    pub seed: u64,
}

/// AR(1) linear instance with fixed-X or model-X MVR knockoffs, masked.
pub fn ar1_setup(seed: u64, n: usize, p: usize, sparsity: f64, tau: f64, fixed_x: bool) -> Setup {
    let mut rng = rng_stream(seed, 0);
    let sigma = ar1_sigma(p, 5.0, 1.0, 0.99, &mut rng).unwrap();
    let inst =
        sample_instance(n, sigma, sparsity, tau, CoefDist::Uniform, ResponseModel::Linear, &mut rng).unwrap();
    let ko = knockoffs_for(&inst, fixed_x, seed);
    let masked = mask(&inst.dataset, &ko, seed).unwrap();
    Setup { inst, ko, masked, seed }
}

pub fn knockoffs_for(inst: &Instance, fixed_x: bool, seed: u64) -> KnockoffModel {
    if fixed_x {
        build_fixed_x(&inst.dataset, &SMatrixSpec::mvr()).unwrap()
    } else {
        build_model_x(&inst.dataset, &inst.sigma, &SMatrixSpec::mvr(), None, seed).unwrap()
    }
}

/// Random subset of `0..p`.
pub fn random_subset(p: usize, rng: &mut Rng) -> Vec<usize> {
    (0..p).filter(|_| rng.random::<bool>()).collect()
}

pub fn remask(ds: &Dataset, ko: &KnockoffModel, seed: u64) -> MaskedDataset {
    mask(ds, ko, seed).unwrap()
}
