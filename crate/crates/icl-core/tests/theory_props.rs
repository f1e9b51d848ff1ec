mod common;

use common::{gaussian, random_spd, rel_err};
use icl_core::designs::{Covariance, DesignSpec};
use icl_core::estimators::{mc_risk, numeric_optimal_scalar, numeric_optimal_w, PgdWeights, ScalarOracle};
use icl_core::numerics::{Matrix, RngStream, SpdMatrix};
use icl_core::theory::*;
use proptest::prelude::*;

fn iso(d: usize) -> SpdMatrix {
    SpdMatrix::identity(d)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_alpha_reduces_to_isotropic(d in 1usize..30, n in 0usize..60, sigma in 0.0f64..2.0) {
        let base = optimal_independent(&iso(d), &iso(d), sigma, n).unwrap();
        let c = 1.0 / (n as f64 + 1.0 + d as f64 + sigma * sigma);
        prop_assert!((base.scalar().unwrap() - c).abs() < 1e-14);
        for t in [rag_exact_default(0.0, sigma, d, n), task_feature_exact_default(0.0, sigma, d, n)] {
            prop_assert!((t.risk - base.risk).abs() < 1e-10 * base.risk);
            prop_assert!((t.scalar().unwrap() - c).abs() < 1e-14);
        }
    }

    #[test]
    fn risks_decrease_with_context(d in 1usize..20, n in 0usize..60, alpha in 0.0f64..1.0, sigma in 0.0f64..1.5) {
        let m = d as f64 + sigma * sigma;
        let curves: [fn(f64, f64, usize, usize) -> TheoryResult; 4] =
            [rag_exact_default, task_feature_exact_default, rag_approx, task_feature_approx];
        for f in curves {
            let (a, b) = (f(alpha, sigma, d, n), f(alpha, sigma, d, n + 1));
            prop_assert!(b.risk <= a.risk + 1e-12 * m);
        }
        let df = d as f64;
        let kappa = alpha * alpha * df + 1.0;
        let tf_label_var = (alpha * alpha * df * (df + 2.0) + df) / kappa + sigma * sigma;
        let exact: [(fn(f64, f64, usize, usize) -> TheoryResult, f64); 2] =
            [(rag_exact_default, m), (task_feature_exact_default, tf_label_var)];
        for (f, label_var) in exact {
            let t = f(alpha, sigma, d, n);
            prop_assert!(t.risk <= label_var * (1.0 + 1e-12) && t.risk >= sigma * sigma - 1e-12);
            if n == 0 {
                prop_assert!((t.risk - label_var).abs() <= 1e-12 * label_var);
            }
            prop_assert!((t.normalized_risk - t.risk / d as f64).abs() < 1e-15);
        }
        let iid = optimal_independent(&iso(d), &iso(d), sigma, n).unwrap();
        let next = optimal_independent(&iso(d), &iso(d), sigma, n + 1).unwrap();
        prop_assert!(next.risk <= iid.risk);
    }

    #[test]
    fn optimum_is_stationary(seed in any::<u64>(), d in 1usize..6, n in 0usize..20, sigma in 0.0f64..1.0) {
        let mut rng = RngStream::new(seed, 0);
        let (sx, sb) = (random_spd(&mut rng, d, 0.2), random_spd(&mut rng, d, 0.2));
        let t = optimal_independent(&sx, &sb, sigma, n).unwrap();
        let w = t.weight_matrix(d);
        let loss = IndependentLoss::new(&sx, &sb, sigma, n).unwrap();
        prop_assert!((loss.loss(&w).unwrap() - t.risk).abs() < 1e-9 * t.risk.max(1.0));
        let g = loss.gradient(&w).unwrap().frobenius_norm();
        prop_assert!(g < 1e-8 * (1.0 + loss.gradient(&Matrix::zeros(d, d)).unwrap().frobenius_norm()));
        let bumped = w.add(&gaussian(&mut rng, d, d).scale(1e-3)).unwrap();
        prop_assert!(loss.loss(&bumped).unwrap() >= t.risk - 1e-12 * t.risk.max(1.0));
    }

    #[test]
    fn numeric_w_matches_closed_form(seed in any::<u64>(), d in 1usize..6, n in 1usize..20, sigma in 0.0f64..1.0) {
        let mut rng = RngStream::new(seed, 1);
        let (sx, sb) = (random_spd(&mut rng, d, 0.2), random_spd(&mut rng, d, 0.2));
        let w = numeric_optimal_w(&sx, &sb, sigma, n).unwrap();
        let target = optimal_independent(&sx, &sb, sigma, n).unwrap().weight_matrix(d);
        prop_assert!(rel_err(&w, &target) < 1e-6);
    }

    #[test]
    fn low_rank_risk_decreases_with_rank(seed in any::<u64>(), d in 1usize..7, n in 0usize..30) {
        let mut rng = RngStream::new(seed, 2);
        let (sx, sb) = (random_spd(&mut rng, d, 0.2), random_spd(&mut rng, d, 0.2));
        let mut prev = f64::INFINITY;
        for r in 1..=d {
            let (t, w) = low_rank_risk(&sx, &sb, 0.3, n, r).unwrap();
            prop_assert!(t.risk <= prev + 1e-12);
            let loss = population_loss(&w, &sx, &sb, 0.3, n).unwrap();
            prop_assert!((loss - t.risk).abs() < 1e-9 * t.risk);
            prev = t.risk;
        }
        let full = optimal_independent(&sx, &sb, 0.3, n).unwrap();
        prop_assert!((prev - full.risk).abs() < 1e-9 * full.risk);
    }

    #[test]
    fn lora_values_decrease_with_rank(d in 1usize..10, n in 1usize..40, g in 0.1f64..0.9) {
        let old = vec![1.0; d];
        let new = icl_core::designs::normalized_spectrum(d, |i| g.powi(i as i32));
        let pair = SpectrumPair::new(old, new.clone(), d as f64, n).unwrap();
        let (mut pb, mut pa) = (f64::INFINITY, f64::INFINITY);
        for r in 0..=d {
            let (b, a) = (lora_bound(&pair, r).unwrap(), lora_adapted_risk(&pair, r).unwrap());
            prop_assert!(b.value <= pb + 1e-12 && a.value <= pa + 1e-12);
            prop_assert!(b.chosen.len() <= r && a.chosen.len() <= r);
            pb = b.value;
            pa = a.value;
        }
        let all_new: f64 = new.iter().map(|&l| pair.optimal_term(l)).sum();
        prop_assert!((pa - all_new).abs() < 1e-9 * all_new);
        prop_assert!(lora_bound(&pair, d + 1).is_err());
    }
}

#[test]
fn rag_approximation_tracks_exact_in_high_dimension() {
    let d = 64;
    let alpha = 1.0 / (d as f64).sqrt();
    for n in [4, 16, 64, 256] {
        let (e, a) = (rag_exact_default(alpha, 0.0, d, n), rag_approx(alpha, 0.0, d, n));
        assert!((a.risk - e.risk).abs() <= 0.10 * e.risk, "n={n}: {} vs {}", a.risk, e.risk);
    }
}

#[test]
fn moment_identities_against_monte_carlo() {
    let mut rng = RngStream::new(21, 0);
    for d in [1usize, 2, 4] {
        for draw in 0..3 {
            let (w, w2) = (gaussian(&mut rng, d, d), gaussian(&mut rng, d, d));
            let queries = [
                MomentQuery::EvenScalar { sigma: 1.3, order: 2 * (draw as u32 + 1) },
                MomentQuery::Quartic { w: w.clone(), w2: w2.clone() },
                MomentQuery::Sextic { w: w.clone(), w2: w2.clone() },
                MomentQuery::Octic { w: w.clone(), w2: w2.clone() },
            ];
            for (i, q) in queries.iter().enumerate() {
                let exact = moment_identity(q).unwrap();
                let (mean, se) = mc_moment_oracle(q, 200_000, &RngStream::new(d as u64, (draw * 10 + i) as u64)).unwrap();
                assert!((mean - exact).abs() <= 4.0 * se, "{} d={d}: {exact} vs {mean} ± {se}", q.kind());
            }
            let cond = cross_quartic_by_conditioning(&w).unwrap();
            let q = MomentQuery::CrossQuartic { w: w.clone() };
            let (mean, se) = mc_moment_oracle(&q, 200_000, &RngStream::new(d as u64, 99 + draw as u64)).unwrap();
            assert!((mean - cond).abs() <= 4.0 * se, "cross d={d}: {cond} vs {mean} ± {se}");
        }
    }
}

#[test]
fn closed_form_cross_quartic_at_identity() {
    let q = MomentQuery::CrossQuartic { w: Matrix::identity(2) };
    assert_eq!(moment_identity(&q).unwrap(), 20.0);
    assert_eq!(cross_quartic_by_conditioning(&Matrix::identity(2)).unwrap(), 24.0);
    let odd = MomentQuery::EvenScalar { sigma: 1.0, order: 3 };
    assert!(moment_identity(&odd).is_err());
}

#[test]
fn strong_convexity_for_every_design() {
    let specs = [
        DesignSpec::isotropic(2, 4, 0.5).unwrap(),
        DesignSpec::rag(2, 4, 0.6, 0.2).unwrap(),
        DesignSpec::task_feature(2, 4, 0.6, 0.2).unwrap(),
    ];
    for spec in &specs {
        let min = check_strong_convexity(spec, 200_000, &RngStream::new(4, 0)).unwrap();
        assert!(min > 0.0, "{:?}: {min}", spec.design().tag());
    }
    assert!(check_strong_convexity(&DesignSpec::isotropic(5, 2, 0.0).unwrap(), 10, &RngStream::new(0, 0)).is_err());
}

#[test]
fn monte_carlo_risk_matches_population_loss() {
    let mut rng = RngStream::new(8, 0);
    let d = 3;
    let (sx, sb) = (random_spd(&mut rng, d, 0.3), random_spd(&mut rng, d, 0.3));
    let spec = DesignSpec::independent(sx.clone(), sb.clone(), 0.4, 6).unwrap();
    for k in 0..3 {
        let w = gaussian(&mut rng, d, d).scale(0.05);
        let exact = population_loss(&w, &sx, &sb, 0.4, 6).unwrap();
        let est = mc_risk(&PgdWeights::new(w).unwrap(), &spec, 100_000, &RngStream::new(8, 1 + k)).unwrap();
        assert!(est.within(exact, 4.0), "{exact} vs {} ± {}", est.mean, est.stderr);
    }
}

#[test]
fn closed_loss_scalar_fit_recovers_isotropic_optimum() {
    let (d, n) = (6, 10);
    let spec = DesignSpec::isotropic(d, n, 0.0).unwrap();
    let fit = numeric_optimal_scalar(&spec, (0.0, 0.2), ScalarOracle::ClosedLoss).unwrap();
    assert!((fit.c_star - 1.0 / (n + d + 1) as f64).abs() < 1e-12);
    let expect = d as f64 - (n * d) as f64 / (n + d + 1) as f64;
    assert!((fit.min_risk - expect).abs() < 1e-10);
    let rag = DesignSpec::rag(d, n, 0.3, 0.0).unwrap();
    assert!(numeric_optimal_scalar(&rag, (0.0, 0.2), ScalarOracle::ClosedLoss).is_err());
}

#[test]
fn harmonic_and_geometric_spectra_have_trace_d() {
    for cov in [Covariance::Harmonic, Covariance::Geometric] {
        let m = cov.build(8).unwrap();
        assert!((m.trace() - 8.0).abs() < 1e-12);
        let diag = m.matrix().diag();
        assert!(diag.windows(2).all(|w| w[0] > w[1]));
    }
}
