mod common;

use std::collections::BTreeMap;

use dash::anomaly::{moving_threshold, slice_error};
use dash::normalize::{normalize_tensor, ColumnStats, StatsPolicy};
use dash::replay::init_boundary;
use dash::{replay, IrregularTensor, SliceMatrix};
use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;

fn tensor_strategy() -> impl Strategy<Value = IrregularTensor> {
    (1usize..6, 1usize..5, 4usize..40).prop_flat_map(|(slices, cols, duration)| {
        prop::collection::vec((0..duration / 2, 1usize..duration), slices).prop_map(move |spans| {
            let slices = spans
                .into_iter()
                .enumerate()
                .map(|(k, (start, len))| {
                    let len = len.min(duration - start).max(1);
                    let rows = Array2::from_shape_fn((len, cols), |(i, j)| {
                        (k * 1000 + (start + i) * 10 + j) as f64
                    });
                    SliceMatrix::new(format!("s{k}"), rows, start)
                })
                .collect();
            IrregularTensor::new(slices).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_partitions_every_row(
        tensor in tensor_strategy(),
        fraction in 0.05f64..0.95,
        cycle in 1usize..8,
    ) {
        let boundary = init_boundary(tensor.duration(), fraction);
        let Ok((initial, batches)) = replay(&tensor, fraction, cycle) else {
            // only an empty initial window may be rejected
            prop_assert!(tensor.slices().iter().all(|s| s.first_time_step >= boundary));
            return Ok(());
        };
        let mut rebuilt: BTreeMap<String, Vec<Array2<f64>>> = BTreeMap::new();
        for s in initial.slices() {
            prop_assert!(s.end_time_step() <= boundary);
            rebuilt.entry(s.id.clone()).or_default().push(s.rows.clone());
        }
        for (n, b) in batches.iter().enumerate() {
            prop_assert_eq!(b.update_index, n + 1);
            let (first, last) = b.cycle_span;
            prop_assert!(last - first < cycle);
            for s in &b.new_slices {
                prop_assert!(!rebuilt.contains_key(&s.id));
            }
            for s in b.slices() {
                prop_assert!(s.first_time_step >= first && s.end_time_step() <= last + 1);
                rebuilt.entry(s.id.clone()).or_default().push(s.rows.clone());
            }
        }
        prop_assert_eq!(rebuilt.len(), tensor.num_slices());
        for s in tensor.slices() {
            let blocks = &rebuilt[&s.id];
            let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
            let joined = ndarray::concatenate(Axis(0), &views).unwrap();
            prop_assert_eq!(&joined, &s.rows);
        }
    }

    #[test]
    fn normalization_ignores_positive_affine_maps(
        seed in 0u64..1000,
        rows in 2usize..10,
        cols in 1usize..5,
        scale in 0.1f64..100.0,
        shift in -50.0f64..50.0,
    ) {
        let mut rng = common::rng(seed);
        let x = common::normal(&mut rng, rows, cols);
        let y = x.mapv(|v| scale * v + shift);
        let norm = |m: Array2<f64>| {
            let t = IrregularTensor::new(vec![SliceMatrix::new("a", m, 0)]).unwrap();
            let (scaled, _) = normalize_tensor(&t, &ColumnStats::default(), StatsPolicy::CausalFrozen);
            scaled.slices()[0].rows.clone()
        };
        let (nx, ny) = (norm(x), norm(y));
        prop_assert!(common::dist(&nx, &ny) < 1e-9);
        prop_assert!(nx.iter().all(|&v| (-1e-12..=1.0 + 1e-12).contains(&v)));
    }

    #[test]
    fn slice_error_ignores_row_order_and_scales_linearly(
        seed in 0u64..1000,
        rows in 1usize..12,
        cols in 1usize..6,
        rank in 1usize..4,
        c in 0.01f64..100.0,
    ) {
        let mut rng = common::rng(seed);
        let x = common::normal(&mut rng, rows, cols);
        let u = common::normal(&mut rng, rows, rank);
        let v = common::normal(&mut rng, cols, rank);
        let s: Array1<f64> = common::uniform_vec(&mut rng, rank, 0.5, 2.0);
        let base = slice_error(x.view(), u.view(), s.view(), v.view());

        let order: Vec<usize> = (0..rows).rev().collect();
        let xp = x.select(Axis(0), &order);
        let up = u.select(Axis(0), &order);
        let permuted = slice_error(xp.view(), up.view(), s.view(), v.view());
        prop_assert!((base - permuted).abs() <= 1e-12 * base.max(1.0));

        let scaled = slice_error(
            (&x * c).view(),
            (&u * c).view(),
            s.view(),
            v.view(),
        );
        prop_assert!((scaled - c * base).abs() <= 1e-9 * (c * base).max(1.0));
    }

    #[test]
    fn threshold_never_below_trailing_mean(
        series in prop::collection::vec(0.0f64..10.0, 2..40),
        window in 2usize..8,
    ) {
        let th = moving_threshold(&series, window);
        for (t, value) in th.iter().enumerate() {
            match value {
                None => prop_assert!(t < 2),
                Some(v) => {
                    let prior = &series[t.saturating_sub(window)..t];
                    let mean = prior.iter().sum::<f64>() / prior.len() as f64;
                    prop_assert!(*v >= mean - 1e-12);
                }
            }
        }
    }
}
