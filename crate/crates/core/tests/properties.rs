mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use loadcast::data::{
    aggregate_machine_usage, apply_scaler, fit_scaler_matrix, interpolate_missing, invert_scaler,
    split_dataset, windows_from_matrix, MachineSeries, TraceRecord,
};
use loadcast::eval::{mae, rmse};
use loadcast::matrix::{mac_counter, Matrix};
use loadcast::model::{CellKind, ForecastModel, Network};
use loadcast::online::{batch_count, prequential_run, OnlineConfig};
use loadcast::prune::{compact, prune_network, PruneMethod, PruneSpec};
use loadcast::train::{gd_step_slice, lbfgs_minimize, LbfgsOptions};

fn cell_strategy() -> impl Strategy<Value = CellKind> {
    prop_oneof![Just(CellKind::Gru), Just(CellKind::Lstm)]
}

fn random_net(cell: CellKind, n: usize, h: usize, l: usize, k: usize, seed: u64) -> Network {
    let mut net = Network::new(cell, n, h, l, k, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..net.param_count())
        .map(|_| rand::Rng::gen_range(&mut rng, -0.7..0.7))
        .collect();
    net.set_flat(&flat).unwrap();
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregation_ignores_record_order(
        recs in prop::collection::vec((0i64..3000, 0usize..3, 0.0f64..1.0, 0.0f64..1.0, prop::option::of(0.0f64..1.0)), 1..60),
        seed in any::<u64>(),
    ) {
        let machines = ["a", "b", "c"];
        let mut records: Vec<TraceRecord> = recs
            .iter()
            .map(|&(t, m, cpu, mem, io)| TraceRecord {
                window_start: t,
                machine_id: machines[m].into(),
                cpu_rate: cpu,
                memory: mem,
                disk_io_time: io,
                disk_space: cpu * mem,
            })
            .collect();
        let target = records[0].machine_id.clone();
        let first = aggregate_machine_usage(&records, &target, 300).unwrap();
        records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let second = aggregate_machine_usage(&records, &target, 300).unwrap();
        prop_assert_eq!(first.values.as_slice().len(), second.values.as_slice().len());
        for (x, y) in first.values.as_slice().iter().zip(second.values.as_slice()) {
            prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
        }
    }

    #[test]
    fn interpolation_fills_everything_and_is_idempotent(
        vals in prop::collection::vec(prop::option::weighted(0.6, -5.0f64..5.0), 1..40),
    ) {
        prop_assume!(vals.iter().any(Option::is_some));
        let m = Matrix::from_vec(vals.len(), 1, vals.iter().map(|v| v.unwrap_or(f64::NAN)).collect()).unwrap();
        let s = MachineSeries::new("m".into(), 300, 0, m, vec!["cpu_rate".into()]).unwrap();
        let once = interpolate_missing(&s).unwrap();
        prop_assert!(once.values.as_slice().iter().all(|v| v.is_finite()));
        for (i, v) in vals.iter().enumerate() {
            if let Some(x) = v {
                prop_assert_eq!(once.values.get(i, 0), *x);
            }
        }
        prop_assert_eq!(interpolate_missing(&once).unwrap(), once);
    }

    #[test]
    fn scaler_round_trip(rows in 2usize..20, cols in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(rows, cols, |_, _| rand::Rng::gen_range(&mut rng, -1e3..1e3));
        let p = fit_scaler_matrix(&x, 0..rows).unwrap();
        let scaled = apply_scaler(&x, &p).unwrap();
        prop_assert!(scaled.as_slice().iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let back = invert_scaler(&scaled, &p).unwrap();
        for (a, b) in x.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn window_count_and_order(t in 2usize..40, k in 1usize..8, m in 1usize..5) {
        let x = Matrix::from_fn(t, 2, |r, c| (r * 2 + c) as f64);
        let names = vec!["a".to_string(), "b".to_string()];
        match windows_from_matrix(&x, &names, k, m) {
            Ok(ds) => {
                prop_assert!(t >= k + m);
                prop_assert_eq!(ds.len(), t - k - m + 1);
                for (j, s) in ds.samples.iter().enumerate() {
                    prop_assert_eq!(s.input.get(0, 0), (2 * j) as f64);
                    prop_assert_eq!(s.target.get(0, 0), s.input.get(k - 1, 0) + 2.0);
                }
            }
            Err(_) => prop_assert!(t < k + m),
        }
    }

    #[test]
    fn split_preserves_samples(t in 3usize..40, frac in 0.05f64..0.95) {
        let x = Matrix::from_fn(t, 1, |r, _| r as f64);
        let ds = windows_from_matrix(&x, &["a".to_string()], 1, 1).unwrap();
        let (train, test) = split_dataset(&ds, frac).unwrap();
        prop_assert_eq!(train.len(), (ds.len() as f64 * frac).floor() as usize);
        let joined: Vec<_> = train.samples.iter().chain(&test.samples).cloned().collect();
        prop_assert_eq!(joined, ds.samples);
    }

    #[test]
    fn metric_invariants(
        pairs in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..50),
        c in -10.0f64..10.0,
        seed in any::<u64>(),
    ) {
        let (a, p): (Vec<f64>, Vec<f64>) = pairs.iter().cloned().unzip();
        let (m, r) = (mae(&a, &p).unwrap(), rmse(&a, &p).unwrap());
        prop_assert!(r >= m * (1.0 - 1e-12));
        prop_assert!((m - common::brute_mae(&a, &p)).abs() <= 1e-12 * m.max(1.0));
        prop_assert!((r - common::brute_rmse(&a, &p)).abs() <= 1e-12 * r.max(1.0));
        let mut idx: Vec<usize> = (0..a.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let ap: Vec<f64> = idx.iter().map(|&i| a[i]).collect();
        let pp: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        prop_assert!((mae(&ap, &pp).unwrap() - m).abs() <= 1e-12 * m.max(1.0));
        prop_assert!((rmse(&ap, &pp).unwrap() - r).abs() <= 1e-12 * r.max(1.0));
        let ca: Vec<f64> = a.iter().map(|v| c * v).collect();
        let cp: Vec<f64> = p.iter().map(|v| c * v).collect();
        prop_assert!((mae(&ca, &cp).unwrap() - c.abs() * m).abs() <= 1e-9 * (c.abs() * m).max(1.0));
    }

    #[test]
    fn flops_closed_form_matches_counter(
        cell in cell_strategy(), n in 1usize..4, h in 1usize..7, l in 1usize..4, k in 1usize..6, seed in any::<u64>(),
    ) {
        let net = random_net(cell, n, h, l, k, seed);
        let w = Matrix::from_fn(k, n, |t, c| (t + c) as f64 * 0.1);
        mac_counter::reset();
        net.forward(&w).unwrap();
        prop_assert_eq!(mac_counter::total(), net.flop_count_per_forecast());
    }

    #[test]
    fn model_bytes_round_trip(cell in cell_strategy(), n in 1usize..4, h in 1usize..6, l in 1usize..3, k in 1usize..5, seed in any::<u64>()) {
        let model = ForecastModel {
            network: random_net(cell, n, h, l, k, seed),
            feature_names: (0..n).map(|i| format!("f{i}")).collect(),
            target_feature: n - 1,
            interval_seconds: 300,
            scaler: None,
        };
        let bytes = model.to_bytes().unwrap();
        let back = ForecastModel::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
        prop_assert_eq!(back, model);
    }

    #[test]
    fn compaction_equals_masking(
        cell in cell_strategy(), n in 1usize..4, h in 2usize..9, l in 1usize..4, k in 1usize..5,
        amount in 0.0f64..0.9, random in any::<bool>(), seed in any::<u64>(),
    ) {
        let net = random_net(cell, n, h, l, k, seed);
        let spec = PruneSpec {
            method: if random { PruneMethod::Random } else { PruneMethod::L1 },
            amount,
            seed,
        };
        let (pruned, report) = prune_network(&net, &spec).unwrap();
        let expected = spec.removal_count(h);
        prop_assert!(report.removed.iter().all(|r| r.len() == expected));
        prop_assert_eq!(report.params_after, pruned.param_count());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for _ in 0..5 {
            let w = common::random_matrix(&mut rng, k, n);
            let a = pruned.forward(&w).unwrap();
            let b = common::masked_forward(&net, &w, &report.removed);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn flops_strictly_decrease_with_removed_units(cell in cell_strategy(), h in 2usize..10, l in 1usize..3, seed in any::<u64>()) {
        let net = random_net(cell, 3, h, l, 4, seed);
        let mut prev = net.flop_count_per_forecast();
        for removed in 1..h {
            let sets: Vec<Vec<usize>> = vec![(0..removed).collect(); l];
            let flops = compact(&net, &sets).unwrap().flop_count_per_forecast();
            prop_assert!(flops < prev);
            prev = flops;
        }
    }

    #[test]
    fn gd_strictly_decreases_convex_quadratic(
        diag in prop::collection::vec(0.1f64..10.0, 1..8), start in prop::collection::vec(-5.0f64..5.0, 8), frac in 0.05f64..0.95,
    ) {
        let d = diag.len();
        let lmax = diag.iter().cloned().fold(0.0, f64::max) * 2.0;
        let alpha = frac * 2.0 / lmax;
        let f = |w: &[f64]| w.iter().zip(&diag).map(|(x, a)| a * x * x).sum::<f64>();
        let mut w = start[..d].to_vec();
        prop_assume!(f(&w) > 1e-6);
        for _ in 0..5 {
            let before = f(&w);
            let g: Vec<f64> = w.iter().zip(&diag).map(|(x, a)| 2.0 * a * x).collect();
            gd_step_slice(&mut w, &g, alpha);
            prop_assert!(f(&w) < before);
        }
    }

    #[test]
    fn lbfgs_trace_non_increasing(diag in prop::collection::vec(0.1f64..50.0, 2..10), memory in 1usize..6) {
        let d = diag.clone();
        let obj = move |w: &[f64]| -> loadcast::Result<(f64, Vec<f64>)> {
            let f = w.iter().zip(&d).map(|(x, a)| a * (x - 1.0) * (x - 1.0)).sum();
            Ok((f, w.iter().zip(&d).map(|(x, a)| 2.0 * a * (x - 1.0)).collect()))
        };
        let opts = LbfgsOptions { memory, max_iters: 200, tol: 1e-9, ..LbfgsOptions::default() };
        if let Ok(out) = lbfgs_minimize(obj, vec![0.0; diag.len()], &opts) {
            prop_assert!(out.trace.windows(2).all(|p| p[1] <= p[0]));
            prop_assert!(out.x.iter().all(|x| (x - 1.0).abs() < 1e-6));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn online_batch_count_closed_form(t in 5usize..120, k in 1usize..6, b in 1usize..40) {
        let net = Network::new(CellKind::Gru, 1, 2, 1, k, 1).unwrap();
        let stream = Matrix::from_fn(t, 1, |r, _| (r as f64 * 0.3).sin());
        let cfg = OnlineConfig { batch_size: b, ..OnlineConfig::default() };
        let expected = (t.saturating_sub(k)) / b;
        prop_assert_eq!(batch_count(t, k, b), expected);
        match prequential_run(&net, &stream, &cfg) {
            Ok((_, rep)) => prop_assert_eq!(rep.batches.len(), expected),
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }

    #[test]
    fn online_batch_error_precedes_its_adaptation(b in 4usize..16, seed in any::<u64>()) {
        let net = random_net(CellKind::Gru, 2, 3, 1, 3, seed);
        let stream = Matrix::from_fn(3 + 5 * b, 2, |r, c| 0.5 + 0.4 * ((r + 3 * c) as f64 * 0.4).sin());
        let cfg = OnlineConfig { batch_size: b, learning_rate: 0.3, ..OnlineConfig::default() };
        let (_, full) = prequential_run(&net, &stream, &cfg).unwrap();
        for n in 1..full.batches.len() {
            // Model state after exactly n adaptations, then scored statically on batch n.
            let prefix = Matrix::from_vec(3 + n * b, 2, stream.as_slice()[..(3 + n * b) * 2].to_vec()).unwrap();
            let (state, _) = prequential_run(&net, &prefix, &cfg).unwrap();
            let tail_rows = 3 + (n + 1) * b;
            let upto = Matrix::from_vec(tail_rows, 2, stream.as_slice()[..tail_rows * 2].to_vec()).unwrap();
            let static_cfg = OnlineConfig { adapt_epochs: 0, ..cfg.clone() };
            let (_, scored) = prequential_run(&state, &upto, &static_cfg).unwrap();
            prop_assert_eq!(scored.batches[n].sum_sq_error, full.batches[n].sum_sq_error);
        }
    }
}
