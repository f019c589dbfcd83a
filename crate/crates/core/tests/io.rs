mod common;

use std::collections::HashSet;
use std::path::Path;

use common::random_flow;
use flowgan_core::flow::FlowSpec;
use flowgan_core::io::{make_synthetic, Checkpoint};
use flowgan_core::training::MetricRow;
use flowgan_core::{CouplingKind, ExperimentConfig, MetricLog, Parameterized, PriorKind};
use proptest::prelude::*;

fn special_values() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        Just(-0.0),
        Just(f64::MIN_POSITIVE / 4.0),
        Just(f64::MAX),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), d in 2usize..5, extras in prop::collection::vec(special_values(), 4)) {
        let mut s = FlowSpec::new(d, 2, CouplingKind::Affine, PriorKind::StandardLogistic);
        s.conditioner_widths = vec![5];
        let mut m = random_flow(&s, seed, 1.0);
        let mut theta = m.flat_parameters();
        theta[..4].copy_from_slice(&extras);
        m.set_flat_parameters(&theta).unwrap();

        let mut ck = Checkpoint { iteration: seed, config_text: "seed = 1\n".into(), ..Checkpoint::default() };
        ck.push_params("flow", &m);
        let back = Checkpoint::from_bytes(&ck.to_bytes(), Path::new("mem")).unwrap();
        prop_assert_eq!(back.iteration, seed);
        prop_assert_eq!(&back.config_text, &ck.config_text);
        let mut restored = random_flow(&s, seed.wrapping_add(1), 1.0);
        back.load_params("flow", &mut restored).unwrap();
        let (a, b) = (m.flat_parameters(), restored.flat_parameters());
        prop_assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn synthetic_splits_are_disjoint(n in 10usize..2000, seed in any::<u64>(), which in 0usize..3) {
        let name = ["ring8", "grid25", "two_moons"][which];
        let ds = make_synthetic(name, n, seed).unwrap();
        prop_assert_eq!(ds.train.len() + ds.val.len() + ds.test.len(), n);
        let mut seen = HashSet::new();
        for split in [&ds.train, &ds.val, &ds.test] {
            prop_assert_eq!(split.x.cols(), 2);
            for i in 0..split.len() {
                let key: Vec<u64> = split.x.row(i).iter().map(|v| v.to_bits()).collect();
                prop_assert!(seen.insert(key), "row shared between splits");
            }
        }
    }

    #[test]
    fn unknown_config_keys_are_rejected(key in "[a-z_]{3,12}") {
        let known = ExperimentConfig::parse_str(&format!("{key} = 1\n"), Path::new("."), "t");
        let valid_keys = ["lambda", "seed", "n_iters", "n_critic", "batch_size", "eval_every", "n_layers",
            "n_samples", "sample_n", "ais_points", "spectral_nz", "kde_samples", "critic_width", "critic_depth",
            "conditioner_width", "conditioner_depth", "score_samples", "train_eval_size", "classifier_steps",
            "gmm_grid_size", "ais_chains", "ais_temperatures", "ais_sweeps", "checkpoint_every", "lr", "critic_lr",
            "ais_step", "ais_sigma_obs", "log_scale_clamp", "penalty_coeff", "gmm_sigma_max", "out_dir",
            "checkpoint", "adam_eps", "gmm_sigma_min", "classifier", "pool14", "scale_layer", "log_wallclock",
            "ais_fixed_step", "idx_images", "idx_labels", "objective", "divergence", "dataset", "coupling", "mask",
            "prior", "critic_activation", "critic_beta1", "critic_beta2", "beta1", "beta2"];
        if !valid_keys.contains(&key.as_str()) {
            let err = known.unwrap_err().to_string();
            prop_assert!(err.contains("unknown key") && err.contains(":1"), "{err}");
        }
    }

    #[test]
    fn config_numbers_survive_parsing(lambda in 0.0f64..1e6, seed in any::<u64>(), iters in 1usize..1_000_000) {
        let text = format!("objective = hybrid\nlambda = {lambda}\nseed = {seed}\nn_iters = {iters}\n");
        let c = ExperimentConfig::parse_str(&text, Path::new("."), "t").unwrap();
        prop_assert_eq!(c.lambda.to_bits(), lambda.to_bits());
        prop_assert_eq!((c.seed, c.n_iters), (seed, iters));
    }

    #[test]
    fn metric_log_csv_round_trip(steps in prop::collection::vec((1usize..50, prop::option::of(-1e3f64..1e3), prop::option::of(0.0f64..10.0)), 1..20)) {
        let mut log = MetricLog::new();
        let mut it = 0;
        for (gap, nll, score) in steps {
            it += gap;
            let nll = nll.or(Some(0.5));
            log.push(MetricRow {
                iteration: it,
                train_nll: nll,
                val_nll: nll.map(|v| v + 1.0),
                train_bpd: nll.map(|v| v / 2.0),
                val_bpd: nll.map(|v| (v + 1.0) / 2.0),
                adv_loss: score.map(|v| -v),
                mode_score: score,
                inception_score: score,
                wallclock_s: 0.0,
            }).unwrap();
        }
        let csv = log.to_csv();
        let back = MetricLog::from_csv(&csv).unwrap();
        prop_assert_eq!(back.to_csv(), csv);
        prop_assert!(back.rows().windows(2).all(|w| w[0].iteration < w[1].iteration));
    }
}
