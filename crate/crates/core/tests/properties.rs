use pcbgen_core::classifier::evaluate_predictions;
use pcbgen_core::dim_select::{export_stats, DimensionStats};
use pcbgen_core::geometry::{clip_to_space, random_model, Rect};
use pcbgen_core::placement::{batch_stats, DatasetStore};
use pcbgen_core::prelude::*;
use pcbgen_core::raster::{pixel_center_x, pixel_center_y, METAL_CODE, PORT_CODE, SUBSTRATE_CODE};
use pcbgen_core::seed::rng;
use pcbgen_core::stats::{median, Histogram};
use proptest::prelude::*;

fn example1_space() -> DesignSpace {
    DesignSpace::new(30.0, 6.0)
}

fn set1() -> DimensionSet {
    DimensionSet::from_pairs(
        "set1",
        &[(0.75, 5.49), (16.87, 1.7), (11.38, 3.0), (18.63, 0.56), (0.99, 2.43)],
    )
}

/// Pixel code by direct point-in-rectangle tests on the unclipped model.
fn oracle_code(model: &AntennaModel, cx: f64, cy: f64) -> u8 {
    let inside = |r: &Rect| cx >= r.x && cx < r.x + r.w && cy >= r.y && cy < r.y + r.h;
    if inside(&model.port) {
        PORT_CODE
    } else if model.rects().any(|r| inside(&r)) || model.space.keepouts.iter().any(inside) {
        METAL_CODE
    } else {
        SUBSTRATE_CODE
    }
}

fn dims_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.2f64..20.0, 0.2f64..5.5), 1..7)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raster_matches_point_oracle(pairs in dims_strategy(), seed in any::<u64>(), res in prop::sample::select(vec![0.1, 0.25, 0.5])) {
        let space = example1_space();
        let dims = DimensionSet::from_pairs("p", &pairs);
        let model = random_model(&space, &dims, &mut rng(seed)).unwrap();
        let img = rasterize(&model, res).unwrap();
        for r in 0..img.height() {
            for c in 0..img.width() {
                let want = oracle_code(&model, pixel_center_x(c, res), pixel_center_y(r, img.height(), res));
                prop_assert_eq!(img.codes()[r * img.width() + c], want, "pixel ({}, {})", r, c);
            }
        }
    }

    #[test]
    fn clipping_is_idempotent_and_inside(pairs in dims_strategy(), seed in any::<u64>()) {
        let space = example1_space();
        let dims = DimensionSet::from_pairs("p", &pairs);
        let model = random_model(&space, &dims, &mut rng(seed)).unwrap();
        let clipped = clip_to_space(&model);
        prop_assert_eq!(clipped.reclip(&space.bounds()), clipped.clone());
        let total: f64 = model.rects().map(|r| r.area()).sum();
        prop_assert!(clipped.metal_area() <= total + 1e-9);
        for r in &clipped.metal {
            prop_assert!(r.x >= 0.0 && r.y >= 0.0 && r.right() <= 30.0 && r.top() <= 6.0);
        }
    }

    #[test]
    fn anchor_fixes_component_one(pairs in dims_strategy(), seed in any::<u64>(), anchor in 0.0f64..3.0) {
        let space = example1_space().with_anchor(anchor, AnchorMode::Center);
        let dims = DimensionSet::from_pairs("p", &pairs);
        if let Ok(model) = random_model(&space, &dims, &mut rng(seed)) {
            // (a - h/2) + h/2 is exact only up to rounding
            prop_assert!((model.anchor_center() - anchor).abs() <= 1e-12);
            prop_assert_eq!(model.port.y, 0.0);
        }
    }

    #[test]
    fn score_monotone_in_band_samples(vals in prop::collection::vec(-40.0f64..0.0, 61), idx in 0usize..61, bump in 0.0f64..10.0) {
        let freqs: Vec<f64> = (0..61).map(|i| 2.0 + 0.1 * i as f64).collect();
        let target = TargetSpec::wifi_dual_band();
        let base = score(&FrequencyResponse::new(freqs.clone(), vals.clone()).unwrap(), &target).unwrap();
        let mut raised = vals.clone();
        raised[idx] = (raised[idx] + bump).min(0.5);
        let after = score(&FrequencyResponse::new(freqs.clone(), raised.clone()).unwrap(), &target).unwrap();
        prop_assert!(after.0 >= base.0);
        let in_band = target.bands.iter().any(|b| b.contains(freqs[idx]));
        if !in_band {
            prop_assert_eq!(after, base);
        }
    }

    #[test]
    fn score_translates_with_threshold(vals in prop::collection::vec(-40.0f64..0.0, 61), delta in -5.0f64..5.0) {
        let freqs: Vec<f64> = (0..61).map(|i| 2.0 + 0.1 * i as f64).collect();
        let resp = FrequencyResponse::new(freqs, vals).unwrap();
        let target = TargetSpec::wifi_dual_band();
        let a = score(&resp, &target).unwrap().0;
        let b = score(&resp, &target.shifted(-delta)).unwrap().0;
        prop_assert!((b - (a + delta)).abs() < 1e-12);
    }

    #[test]
    fn median_matches_selection_oracle(vals in prop::collection::vec(-20.0f64..20.0, 1..60)) {
        let mut v = vals.clone();
        let n = v.len();
        let want = if n % 2 == 1 {
            *v.select_nth_unstable_by(n / 2, f64::total_cmp).1
        } else {
            let hi = *v.select_nth_unstable_by(n / 2, f64::total_cmp).1;
            let lo = *v.select_nth_unstable_by(n / 2 - 1, f64::total_cmp).1;
            (lo + hi) / 2.0
        };
        prop_assert_eq!(median(&vals), Some(want));
    }

    #[test]
    fn histogram_counts_every_value(vals in prop::collection::vec(-20.0f64..20.0, 1..200), width in prop::sample::select(vec![0.25, 0.5, 1.0])) {
        let h = Histogram::new(&vals, width).unwrap();
        prop_assert_eq!(h.total(), vals.len());
        prop_assert!(h.lo <= vals.iter().cloned().fold(f64::INFINITY, f64::min));
    }

    #[test]
    fn exported_curves_are_sorted(vals in prop::collection::vec(-20.0f64..20.0, 1..50)) {
        let s = DimensionStats::from_scores("c", vals.iter().map(|&v| Score(v)).collect()).unwrap();
        let csv = export_stats(&[s]);
        let sorted: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        prop_assert_eq!(sorted.len(), vals.len());
        prop_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn positives_grow_with_threshold(preds in prop::collection::vec(-10.0f64..10.0, 1..80), t in -10.0f64..10.0, dt in 0.0f64..5.0) {
        let count = |th: f64| preds.iter().filter(|&&p| p <= th).count();
        prop_assert!(count(t + dt) >= count(t));
        let e = evaluate_predictions(&preds, &preds, t);
        // perfect predictions: every positive found, no false positive
        prop_assert!(e.tp_rate.is_none_or(|r| r == 1.0));
        prop_assert!(e.fp_rate.is_none_or(|r| r == 0.0));
    }
}

#[test]
fn no_metal_outside_space_over_many_seeds() {
    let space = example1_space();
    let dims = set1();
    for seed in 0..10_000u64 {
        let model = random_model(&space, &dims, &mut rng(seed)).unwrap();
        for r in clip_to_space(&model).metal {
            assert!(r.x >= 0.0 && r.y >= 0.0 && r.right() <= 30.0 && r.top() <= 6.0, "seed {seed}");
        }
    }
}

#[test]
fn histogram_sums_in_batch_stats() {
    use pcbgen_core::classifier::DatasetRecord;
    let space = DesignSpace::new(6.0, 3.0);
    let dims = DimensionSet::from_pairs("d", &[(1.0, 1.0), (2.0, 1.0)]);
    let mut store = DatasetStore::new();
    let scores = [(1, 4.0), (1, 6.0), (2, 1.0), (2, 3.0)];
    for (i, &(k, s)) in scores.iter().enumerate() {
        let pos = vec![ComponentPos::new(i as f64, 0.0), ComponentPos::new(1.0, 1.5)];
        let m = pcbgen_core::geometry::assemble_model(&space, &dims, &pos).unwrap();
        let resp = FrequencyResponse::new(vec![2.45, 6.0], vec![s - 6.0, s - 6.0]).unwrap();
        let mut rec = DatasetRecord::from_model(&m, resp, &TargetSpec::wifi_dual_band(), 0.25, k).unwrap();
        rec.score = Score(s);
        store.append(rec).unwrap();
    }
    let stats = batch_stats(&store, 0.5);
    let medians: Vec<f64> = stats.iter().map(|b| b.median).collect();
    assert_eq!(medians, [5.0, 2.0]);
    for b in &stats {
        assert_eq!(b.histogram.total(), b.n);
    }
}
