mod common;

use common::{gaussian, positive, random_flow, rng};
use flowgan_core::evaluation::{
    gmm_logpdf, inception_score_from_probs, kde_estimate, mode_score_from_probs, spectral_report, AisSchedule,
};
use flowgan_core::flow::FlowSpec;
use flowgan_core::{AisConfig, CouplingKind, PriorKind, Tensor};
use proptest::prelude::*;

/// Random row-stochastic `[n, k]` table.
fn probs(seed: u64, n: usize, k: usize) -> Tensor {
    let raw = positive(&mut rng(seed), &[n, k]);
    let mut data = raw.into_data();
    for row in data.chunks_exact_mut(k) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    Tensor::matrix(n, k, data).unwrap()
}

fn shuffled(t: &Tensor, seed: u64) -> Tensor {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..t.rows()).collect();
    idx.shuffle(&mut rng(seed));
    t.select_rows(&idx)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn scores_ignore_sample_order(seed in any::<u64>(), n in 1usize..40, k in 2usize..12) {
        let p = probs(seed, n, k);
        let q = shuffled(&p, seed ^ 1);
        let p_star = probs(seed ^ 2, 1, k).into_data();
        let (a, b) = (inception_score_from_probs(&p).unwrap(), inception_score_from_probs(&q).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        let (a, b) = (mode_score_from_probs(&p, &p_star).unwrap(), mode_score_from_probs(&q, &p_star).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn scores_are_one_when_conditionals_equal_the_marginal(seed in any::<u64>(), n in 1usize..40, k in 2usize..12) {
        let row = probs(seed, 1, k).into_data();
        let table = Tensor::matrix(n, k, row.iter().copied().cycle().take(n * k).collect()).unwrap();
        prop_assert!((inception_score_from_probs(&table).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((mode_score_from_probs(&table, &row).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inception_score_lies_between_one_and_k(seed in any::<u64>(), n in 1usize..40, k in 2usize..12) {
        let s = inception_score_from_probs(&probs(seed, n, k)).unwrap();
        prop_assert!((1.0 - 1e-12..=k as f64 + 1e-12).contains(&s), "{s}");
    }

    #[test]
    fn kde_on_training_points_is_the_gmm(seed in any::<u64>(), m in 1usize..30, d in 1usize..4, sigma in 0.005f64..1.0) {
        let centers = gaussian(&mut rng(seed), &[m, d]);
        let x = gaussian(&mut rng(seed ^ 1), &[7, d]);
        let a = kde_estimate(&centers, &x, sigma).unwrap();
        let b = gmm_logpdf(&centers, sigma, &x).unwrap();
        prop_assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn gmm_density_is_finite_far_from_the_centers(seed in any::<u64>(), m in 1usize..20, far in 1.0f64..1e6, sigma in 0.005f64..1.0) {
        let centers = gaussian(&mut rng(seed), &[m, 2]);
        let x = Tensor::matrix(2, 2, vec![far, -far, 0.0, far]).unwrap();
        prop_assert!(gmm_logpdf(&centers, sigma, &x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn one_dimensional_gmm_integrates_to_one(seed in any::<u64>(), m in 1usize..10, sigma in 0.05f64..1.0) {
        let centers = gaussian(&mut rng(seed), &[m, 1]);
        let lo = centers.data().iter().copied().fold(f64::INFINITY, f64::min) - 10.0 * sigma;
        let hi = centers.data().iter().copied().fold(f64::NEG_INFINITY, f64::max) + 10.0 * sigma;
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let grid = Tensor::matrix(n + 1, 1, (0..=n).map(|i| lo + i as f64 * h).collect()).unwrap();
        let dens: Vec<f64> = gmm_logpdf(&centers, sigma, &grid).unwrap().iter().map(|v| v.exp()).collect();
        let trapezoid = h * (dens.iter().sum::<f64>() - 0.5 * (dens[0] + dens[n]));
        prop_assert!((trapezoid - 1.0).abs() < 1e-6, "{trapezoid}");
    }

    #[test]
    fn ais_schedules_increase_strictly(t in 1usize..2000, delta in 0.1f64..20.0, linear in any::<bool>()) {
        let cfg = AisConfig {
            n_temperatures: t,
            schedule: if linear { AisSchedule::Linear } else { AisSchedule::Sigmoid { delta } },
            ..AisConfig::default()
        };
        let b = cfg.betas();
        prop_assert_eq!(b.len(), t + 1);
        prop_assert_eq!((b[0], b[t]), (0.0, 1.0));
        prop_assert!(b.windows(2).all(|w| w[0] < w[1]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn spectral_report_agrees_with_the_flow(seed in any::<u64>(), d in 2usize..5, layers in 1usize..4, additive in any::<bool>()) {
        let kind = if additive { CouplingKind::Additive } else { CouplingKind::Affine };
        let mut s = FlowSpec::new(d, layers, kind, PriorKind::IsotropicGaussian);
        s.conditioner_widths = vec![8];
        let m = random_flow(&s, seed, 0.4);
        let r = spectral_report(&m, 6, seed).unwrap();
        for sv in &r.singular_values {
            prop_assert!(sv.iter().all(|&v| v >= 0.0));
            prop_assert!(sv.windows(2).all(|w| w[0] >= w[1]));
        }
        for (a, b) in r.log_determinants.iter().zip(&r.flow_log_determinants) {
            prop_assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        prop_assert_eq!(r.cdf.len(), 6 * d);
        prop_assert!(r.cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        prop_assert_eq!(r.cdf.last().unwrap().1, 1.0);
        prop_assert!(r.cdf[0].1 > 0.0);
    }
}
