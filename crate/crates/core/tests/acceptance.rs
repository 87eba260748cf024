//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any
//! failure. Pass criterion numbers as arguments to run a subset.

mod common;

use std::time::Instant;

use common::{ar1_setup, fista, lasso_instance, random_subset, relative_kkt};
use knockoff_mlr::diagnostics::sign_cov;
use knockoff_mlr::filter::{psi_tau, sorted_sign_indicators, threshold_values};
use knockoff_mlr::gibbs::conjugate::{draw_inv_gamma, update_tau2, update_weights};
use knockoff_mlr::gibbs::model_x::sigma2_conditional;
use knockoff_mlr::gibbs::{masked_loglik_fixed_x, mlr, update_sigma2_fixed_x, FixedXState, GibbsConfig, SigmaUpdate};
use knockoff_mlr::knockoffs::{build_fixed_x, SMatrixSpec, SMethod};
use knockoff_mlr::lasso::{lasso_fit, lasso_objective, GramProblem};
use knockoff_mlr::model::{
    mask, swap_dataset, MaskedDataset, MaskedView, PointMass, PriorConfig, StatMethod, VarianceParam, WeightParam,
};
use knockoff_mlr::numeric::{log_sum_exp, rng_stream, sigmoid, Rng};
use knockoff_mlr::sim::dgp::{ar1_sigma, sample_instance, CoefDist, CovKind, ResponseModel};
use knockoff_mlr::sim::{
    brute_force_posterior, paired_power_difference, run_experiment, summarize, ExperimentConfig, Framework,
    KnockoffSetting, ResultRecord,
};
use knockoff_mlr::statistics::{compute_statistic, StatSettings};
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Beta, ContinuousCDF, InverseGamma};

type Outcome = (bool, String);

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 10] = [
        (1, "FDR control", fdr_control),
        (2, "Gibbs vs enumeration", gibbs_vs_enumeration),
        (3, "magnitude identity", magnitude_identity),
        (4, "flip-sign", flip_sign),
        (5, "power ordering", power_ordering),
        (6, "misspecified prior", misspecification),
        (7, "local dependence", local_dependence),
        (8, "conjugate updates", conjugate_updates),
        (9, "lasso solver", lasso_solver),
        (10, "filter and masked likelihood", filter_agreement),
    ];
    let mut failed = 0;
    for (k, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&k) {
            continue;
        }
        let start = Instant::now();
        let (ok, detail) = run();
        let secs = start.elapsed().as_secs_f64();
        println!("criterion {k:>2} {}: {name}: {detail} ({secs:.1}s)", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ar1_config(framework: Framework, n: usize, p: usize, sparsity: f64, tau: f64, reps: usize, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n,
        p,
        cov_kind: CovKind::ar1(),
        sparsity,
        coef_dist: CoefDist::Uniform,
        tau,
        response: ResponseModel::Linear,
        knockoff: KnockoffSetting { framework, s_method: SMethod::Mvr },
        statistics: vec![StatMethod::Lcd, StatMethod::Lsm, StatMethod::Mlr],
        q: 0.2,
        n_reps: reps,
        seed,
        gibbs: None,
    }
}

fn failures(records: &[ResultRecord]) -> usize {
    records.iter().filter(|r| r.failed()).count()
}

fn fdr_control() -> Outcome {
    let mut ok = true;
    let mut worst = (f64::NEG_INFINITY, String::new());
    let mut failed = 0;
    for framework in [Framework::FixedX, Framework::ModelX] {
        for (dgp, tau) in [("ar1", 0.5), ("null", 0.0)] {
            let cfg = ar1_config(framework, 200, 30, 0.2, tau, 500, 1000);
            let records = run_experiment(&cfg).expect("experiment runs");
            failed += failures(&records);
            for s in summarize(&cfg, &records) {
                let margin = s.fdp.mean - (cfg.q + 3.0 * s.fdp.se);
                if margin > 0.0 {
                    ok = false;
                }
                if margin > worst.0 {
                    worst = (
                        margin,
                        format!("{}/{}/{dgp} FDR {:.3} (SE {:.3})", s.method.name(), s.knockoff, s.fdp.mean, s.fdp.se),
                    );
                }
            }
        }
    }
    (ok && failed == 0, format!("closest cell {}, bound q + 3SE, {failed} failed reps", worst.1))
}

fn identity_prior() -> PriorConfig {
    PriorConfig { weights: WeightParam::Dirichlet(vec![1.0, 1.0]), ..PriorConfig::fixed(0.5, &[1.0], 1.0) }
}

fn small_instance(seed: u64, p: usize, fixed_x: bool) -> MaskedDataset {
    let mut rng = rng_stream(seed, 0);
    let sigma = ar1_sigma(p, 5.0, 1.0, 0.9, &mut rng).unwrap();
    let inst =
        sample_instance(60, sigma, 0.5, 0.8, CoefDist::Uniform, ResponseModel::Linear, &mut rng).unwrap();
    let ko = common::knockoffs_for(&inst, fixed_x, seed);
    mask(&inst.dataset, &ko, seed + 1).unwrap()
}

fn gibbs_vs_enumeration() -> Outcome {
    let prior = identity_prior();
    let cfg = GibbsConfig { n_sample: 4000, burn_in: 500, chains: 4, ..GibbsConfig::default() };
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let p = 2 + (seed as usize % 4);
        let masked = small_instance(200 + seed, p, seed % 2 == 1);
        let exact = brute_force_posterior(&masked, &prior).unwrap();
        let (w, _) = mlr(&masked, &prior, &cfg.with_seed(seed)).unwrap();
        for j in 0..p {
            worst = worst.max((sigmoid(w.w[j]) - exact[j]).abs());
        }
    }
    (worst <= 0.02, format!("max |ΔP| = {worst:.4} over 20 instances (bound 0.02)"))
}

fn magnitude_identity() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut runs = Vec::new();
    for (seed, fixed_x) in [(1u64, false), (2, true), (3, false), (4, true)] {
        runs.push((small_instance(300 + seed, 5, fixed_x), PriorConfig::default()));
        runs.push((ar1_setup(seed, 120, 20, 0.3, 0.8, fixed_x).masked, PriorConfig::default()));
    }
    for (i, (masked, prior)) in runs.iter().enumerate() {
        let settings = StatSettings {
            prior: prior.clone(),
            gibbs: GibbsConfig::default().with_seed(i as u64),
            ..StatSettings::default()
        };
        let (w, trace) = compute_statistic(masked, StatMethod::Mlr, &settings).unwrap();
        let trace = trace.expect("MLR keeps its trace");
        for j in 0..w.w.len() {
            if w.tie_broken[j] {
                continue;
            }
            let first: f64 = trace.eta.iter().map(|row| sigmoid(row[j])).sum();
            let second: f64 = trace.eta.iter().map(|row| sigmoid(-row[j])).sum();
            let logit = (first.ln() - second.ln()).abs();
            let mag = w.w[j].abs();
            worst = worst.max((logit - mag).abs() / mag.max(1.0));
            checked += 1;
        }
    }
    (worst <= 1e-12, format!("{checked} entries, max scaled deviation {worst:.2e} (bound 1e-12)"))
}

fn flip_sign() -> Outcome {
    let methods = [StatMethod::Lcd, StatMethod::Lsm, StatMethod::Mlr, StatMethod::OracleMlr];
    let mut mismatches = 0;
    let mut sets = 0;
    for fixed_x in [false, true] {
        let setup = ar1_setup(40, 100, 12, 0.3, 0.8, fixed_x);
        let settings = StatSettings {
            gibbs: GibbsConfig { n_sample: 300, burn_in: 100, ..GibbsConfig::default() }.with_seed(41),
            oracle: Some(PointMass { beta: setup.inst.beta.clone(), sigma2: 1.0, transform: None }),
            ..StatSettings::default()
        };
        let base: Vec<Vec<f64>> =
            methods.iter().map(|&m| compute_statistic(&setup.masked, m, &settings).unwrap().0.w).collect();
        let mut rng = rng_stream(42, u64::from(fixed_x));
        for _ in 0..100 {
            let j_set = random_subset(12, &mut rng);
            let (ds, ko) = swap_dataset(&setup.inst.dataset, &setup.ko, &j_set).unwrap();
            let masked = mask(&ds, &ko, setup.seed).unwrap();
            for (k, &m) in methods.iter().enumerate() {
                let w = compute_statistic(&masked, m, &settings).unwrap().0.w;
                for j in 0..12 {
                    let want = if j_set.contains(&j) { -base[k][j] } else { base[k][j] };
                    if w[j].to_bits() != want.to_bits() {
                        mismatches += 1;
                    }
                }
            }
            sets += 1;
        }
    }
    (mismatches == 0, format!("{sets} swap sets × 4 statistics × 2 frameworks, {mismatches} mismatches"))
}

fn power_ordering() -> Outcome {
    let mut cfg = ar1_config(Framework::FixedX, 300, 60, 0.5, 0.5, 200, 2000);
    cfg.q = 0.1;
    cfg.statistics = vec![StatMethod::Lcd, StatMethod::Mlr, StatMethod::OracleMlr];
    let records = run_experiment(&cfg).expect("experiment runs");
    let failed = failures(&records);
    let summary = summarize(&cfg, &records);
    let power = |m: StatMethod| summary.iter().find(|s| s.method == m).unwrap().power.mean;
    let gain = paired_power_difference(&records, StatMethod::Mlr, StatMethod::Lcd);
    let (mlr, lcd, oracle) = (power(StatMethod::Mlr), power(StatMethod::Lcd), power(StatMethod::OracleMlr));
    let ok = failed == 0 && gain.mean >= 2.0 * gain.se && mlr >= 0.85 * oracle;
    (
        ok,
        format!(
            "power MLR {mlr:.3}, LCD {lcd:.3}, oracle {oracle:.3}; paired gain {:.3} (SE {:.3}); {failed} failed reps",
            gain.mean, gain.se
        ),
    )
}

fn misspecification() -> Outcome {
    let mut cfg = ar1_config(Framework::FixedX, 300, 60, 0.3, 0.5, 200, 3000);
    cfg.q = 0.1;
    cfg.coef_dist = CoefDist::Laplace;
    cfg.statistics = vec![StatMethod::Lcd, StatMethod::Mlr];
    let records = run_experiment(&cfg).expect("experiment runs");
    let failed = failures(&records);
    let diff = paired_power_difference(&records, StatMethod::Mlr, StatMethod::Lcd);
    let ok = failed == 0 && diff.mean >= -2.0 * diff.se;
    (ok, format!("paired power MLR − LCD {:.3} (SE {:.3}); {failed} failed reps", diff.mean, diff.se))
}

fn local_dependence() -> Outcome {
    let mut rng = rng_stream(7, 0);
    let sigma = ar1_sigma(50, 50.0, 1.0, 0.99, &mut rng).unwrap();
    let inst = sample_instance(300, sigma, 1.0, 0.5, CoefDist::Uniform, ResponseModel::Linear, &mut rng).unwrap();
    let ko = build_fixed_x(&inst.dataset, &SMatrixSpec::mvr()).unwrap();
    let masked = mask(&inst.dataset, &ko, 8).unwrap();
    let settings = StatSettings { gibbs: GibbsConfig::default().with_seed(9), ..StatSettings::default() };
    let (_, trace) = compute_statistic(&masked, StatMethod::Mlr, &settings).unwrap();
    let cov = sign_cov(&trace.unwrap()).unwrap();
    let mut worst = 0.0f64;
    for i in 0..50 {
        for j in 0..50 {
            if i != j {
                worst = worst.max(cov[(i, j)].abs());
            }
        }
    }
    (worst <= 0.15, format!("max off-diagonal |cov| = {worst:.4} (bound 0.15)"))
}

/// Kolmogorov–Smirnov p-value of a sample against a continuous CDF.
fn ks_pvalue(mut draws: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in draws.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs()).max((f - i as f64 / n).abs());
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        p += 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
    }
    p.clamp(0.0, 1.0)
}

const KS_DRAWS: usize = 100_000;

fn ks_inv_gamma(label: &str, draws: Vec<f64>, shape: f64, rate: f64) -> (f64, String) {
    let law = InverseGamma::new(shape, rate).unwrap();
    let p = ks_pvalue(draws, |x| law.cdf(x));
    (p, format!("{label} p = {p:.3}"))
}

fn conjugate_updates() -> Outcome {
    let mut rng = rng_stream(80, 0);
    let mut results = Vec::new();

    // σ², model-X: IG(a + n/2, b + ‖r‖²/2).
    let r = DVector::<f64>::from_fn(50, |_, _| 1.3 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let prior = VarianceParam::InvGamma { shape: 2.0, rate: 2.0 };
    let (shape, rate) = sigma2_conditional(&prior, &r).unwrap();
    let draws = (0..KS_DRAWS).map(|_| draw_inv_gamma(shape, rate, &mut rng)).collect();
    results.push(ks_inv_gamma("σ² model-X", draws, 2.0 + 25.0, 2.0 + 0.5 * r.norm_squared()));

    // σ², fixed-X, at a frozen state of a real masked view.
    let setup = ar1_setup(81, 80, 6, 0.5, 0.8, true);
    let MaskedView::FixedX(view) = setup.masked.view() else { unreachable!() };
    let beta = DVector::from_fn(6, |j, _| if j % 2 == 0 { 0.4 } else { -0.2 });
    let positive = vec![true, false, true, true, false, false];
    let prior = PriorConfig::default();
    let mut state = FixedXState::new(view, positive.clone(), vec![1; 6], beta.clone(), 1.0, vec![1.0], vec![0.5, 0.5]);
    let upd = SigmaUpdate::new(view).unwrap();
    let a = view.a_matrix();
    let resid = &view.xi - &a * &beta;
    let mut quad = resid.dot(&a.clone().lu().solve(&resid).unwrap());
    for j in 0..6 {
        let bt = if positive[j] { view.abs_beta_tilde[j] } else { -view.abs_beta_tilde[j] };
        quad += 0.5 * view.s[j] * (bt - beta[j]).powi(2);
    }
    let draws = (0..KS_DRAWS)
        .map(|_| {
            update_sigma2_fixed_x(view, &mut state, &prior, &upd, &mut rng);
            state.sigma2
        })
        .collect();
    results.push(ks_inv_gamma("σ² fixed-X", draws, 2.0 + 6.0, 2.0 + 0.5 * quad));

    // τ²: IG(a + d/2, b + ‖β_slab‖²/2) over the slab units only.
    let labels = [1, 0, 1, 1, 0, 1, 0];
    let dims = [1, 1, 2, 1, 1, 3, 1];
    let sq = [0.3, 9.0, 1.1, 0.05, 4.0, 2.2, 7.0];
    let params = [VarianceParam::InvGamma { shape: 2.0, rate: 2.0 }];
    let mut tau2 = vec![1.0];
    let draws = (0..KS_DRAWS)
        .map(|_| {
            update_tau2(&params, &labels, &dims, &sq, &mut tau2, &mut rng);
            tau2[0]
        })
        .collect();
    results.push(ks_inv_gamma("τ²", draws, 2.0 + 3.5, 2.0 + 0.5 * (0.3 + 1.1 + 0.05 + 2.2)));

    // p₀: Beta(a₀ + #spike, b₀ + #slab).
    let param = WeightParam::Dirichlet(vec![1.0, 1.0]);
    let mut weights = vec![0.5, 0.5];
    let draws: Vec<f64> = (0..KS_DRAWS)
        .map(|_| {
            update_weights(&param, &labels, &mut weights, &mut rng);
            weights[0]
        })
        .collect();
    let law = Beta::new(1.0 + 3.0, 1.0 + 4.0).unwrap();
    let p = ks_pvalue(draws, |x| law.cdf(x));
    results.push((p, format!("p₀ p = {p:.3}")));

    let ok = results.iter().all(|(p, _)| *p > 0.01);
    (ok, results.into_iter().map(|(_, s)| s).collect::<Vec<_>>().join(", "))
}

fn lasso_solver() -> Outcome {
    let mut rng = rng_stream(90, 0);
    let (mut kkt, mut gap) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let (z, y) = lasso_instance(&mut rng);
        let n = y.len() as f64;
        let lmax = GramProblem::from_design(&z, &y).unwrap().lambda_max();
        let lambda = lmax * rng.random_range(0.02..0.8);
        let fit = lasso_fit(&z, &y, lambda, 1e-12, 1_000_000).unwrap();
        kkt = kkt.max(relative_kkt(&z, &y, &fit.coefficients, lambda * n));
        let reference = fista(&z, &y, lambda * n, 20_000);
        let a = lasso_objective(&z, &y, &fit.coefficients, lambda);
        let b = lasso_objective(&z, &y, &reference, lambda);
        gap = gap.max((a - b).abs() / b);
    }
    (kkt <= 1e-6 && gap <= 1e-8, format!("max relative KKT {kkt:.1e} (bound 1e-6), max objective gap {gap:.1e} (bound 1e-8)"))
}

fn fuzz_w(rng: &mut Rng) -> Vec<f64> {
    let len = rng.random_range(1..80);
    let signal = rng.random_range(0.0..4.0);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            let v = if rng.random::<f64>() < 0.4 { z + signal } else { z };
            if v == 0.0 { 1e-300 } else { v }
        })
        .collect()
}

/// Log of the full Gaussian likelihood of (ξ, β̃) summed over the 2^p hidden signs.
fn enumerated_loglik(beta: &DVector<f64>, xi: &DVector<f64>, a: &DMatrix<f64>, s: &DVector<f64>, abs_bt: &DVector<f64>, sigma2: f64) -> f64 {
    let p = beta.len();
    let resid = xi - a * beta;
    let gauss = -0.5 * resid.dot(&a.clone().lu().solve(&resid).unwrap()) / sigma2;
    let terms: Vec<f64> = (0..1usize << p)
        .map(|mask| {
            let mut v = gauss;
            for j in 0..p {
                let bt = if mask >> j & 1 == 1 { abs_bt[j] } else { -abs_bt[j] };
                v -= s[j] * (bt - beta[j]).powi(2) / (4.0 * sigma2);
            }
            v
        })
        .collect();
    log_sum_exp(&terms)
}

fn filter_agreement() -> Outcome {
    let mut rng = rng_stream(100, 0);
    let mut disagreements = 0;
    for _ in 0..10_000 {
        let w = fuzz_w(&mut rng);
        let q = rng.random_range(0.05..=1.0);
        let rejected = threshold_values(&w, q).unwrap().rejected.len();
        let (_, tau) = psi_tau(&sorted_sign_indicators(&w), q).unwrap();
        if tau != rejected {
            disagreements += 1;
        }
    }
    let mut worst = 0.0f64;
    for (seed, p) in [(101u64, 1usize), (102, 2), (103, 3), (104, 3)] {
        let setup = ar1_setup(seed, 30, p, 0.5, 0.8, true);
        let MaskedView::FixedX(view) = setup.masked.view() else { unreachable!() };
        let a = view.a_matrix();
        for sigma2 in [0.5, 1.0, 2.5] {
            let mut diffs = Vec::new();
            for _ in 0..20 {
                let beta = DVector::from_fn(p, |_, _| rng.random_range(-2.0..2.0));
                let masked = masked_loglik_fixed_x(&beta, view, sigma2).unwrap();
                let full = enumerated_loglik(&beta, &view.xi, &a, &view.s, &view.abs_beta_tilde, sigma2);
                diffs.push(masked - full);
            }
            let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            worst = worst.max(hi - lo);
        }
    }
    (
        disagreements == 0 && worst <= 1e-8,
        format!("{disagreements} of 10000 fuzzed W disagree; masked likelihood spread {worst:.1e} (bound 1e-8)"),
    )
}
