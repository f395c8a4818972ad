use pcbgen_core::dim_select::select;
use pcbgen_core::geometry::{assemble_model, clip_to_space, Edge};
use pcbgen_core::prelude::*;
use pcbgen_core::tuner::{StopReason, MIN_SIZE};

fn one_band(lo: f64, hi: f64) -> TargetSpec {
    TargetSpec::new(vec![Band::new(lo, hi, -6.0)]).unwrap()
}

fn freqs() -> Vec<f64> {
    FrequencyGrid::default().freqs().unwrap()
}

fn table4() -> (DimensionSet, Vec<ComponentPos>) {
    let w = [1.2, 21.1, 7.6, 17.8, 0.8, 0.4];
    let h = [4.2, 2.2, 3.2, 0.7, 2.3, 2.9];
    let x = [20.8, 1.4, 2.4, 12.3, 12.9, 1.9];
    let y = [0.5, 4.0, 4.1, 1.6, 2.6, 2.8];
    let pairs: Vec<(f64, f64)> = w.iter().copied().zip(h).collect();
    let pos = x.iter().zip(y).map(|(&x, y)| ComponentPos::new(x, y)).collect();
    (DimensionSet::from_pairs("final", &pairs), pos)
}

#[test]
fn final_layout_needs_a_wider_extended_area() {
    let (dims, pos) = table4();
    // C2 and C3 reach above the 5 mm top edge, C4 past the right edge
    let tight = DesignSpace::new(22.0, 5.0);
    assert_eq!(
        assemble_model(&tight, &dims, &pos).unwrap_err(),
        Error::IllegalPlacement {
            index: 1,
            edge: Edge::Top
        }
    );

    let wide = DesignSpace::new(22.0, 5.0)
        .with_margin(8.5)
        .with_top_margin(2.5)
        .with_anchor(0.5, AnchorMode::LowerEdge);
    let m = assemble_model(&wide, &dims, &pos).unwrap();
    assert_eq!(m.positions[0].y, 0.5);
    assert_eq!(m.port.h, 0.5);
    for r in clip_to_space(&m).metal {
        assert!(r.x >= 0.0 && r.y >= 0.0 && r.right() <= 22.0 + 1e-12 && r.top() <= 5.0 + 1e-12);
    }
    let f = freqs();
    let resp = Surrogate::default().simulate(&SimRequest::new(&m, &f).unwrap()).unwrap();
    assert_eq!(resp.freqs(), &f[..]);
    assert!(resp.s11_db().iter().all(|v| v.is_finite() && (-40.0..=0.0).contains(v)));
}

fn three_part_model() -> AntennaModel {
    let space = DesignSpace::new(30.0, 6.0);
    let dims = DimensionSet::from_pairs("t", &[(1.0, 4.0), (12.0, 1.0), (2.0, 2.0)]);
    let pos = [
        ComponentPos::new(3.0, 0.0),
        ComponentPos::new(3.5, 3.0),
        ComponentPos::new(20.0, 1.0),
    ];
    assemble_model(&space, &dims, &pos).unwrap()
}

#[test]
fn trust_region_finds_bowl_center() {
    let start = three_part_model();
    let pv = ParamVector::from_model(&start, false);
    let offsets = [0.6, -0.8, 1.5, 2.0, 0.3, -1.1, 0.4, -0.7, 0.5, 2.5, 0.9];
    let center: Vec<f64> = pv.values.iter().zip(offsets).map(|(v, o)| v + o).collect();
    for (i, c) in center.iter().enumerate() {
        assert!(*c > pv.lo[i] && *c < pv.hi[i]);
    }
    let bowl = QuadraticBowl::new(center, false);
    let target = TargetSpec::new(vec![Band::new(2.0, 8.0, -40.0)]).unwrap();
    let cfg = TrustRegionConfig {
        budget: 300,
        ..TrustRegionConfig::default()
    };
    let res = optimize(&start, &cfg, &bowl, &target, &freqs()).unwrap();
    assert!(res.evaluations <= 300);
    assert_eq!(res.evaluations, res.trace.len());
    assert!(bowl.distance(&res.best) < 1e-2, "{}", bowl.distance(&res.best));
    assert!(res.trace.windows(2).all(|w| w[1].best <= w[0].best));
    for e in &res.trace {
        for (i, v) in e.x.iter().enumerate() {
            assert!(*v >= pv.lo[i] - 1e-9 && *v <= pv.hi[i] + 1e-9);
        }
    }
    let again = optimize(&start, &cfg, &bowl, &target, &freqs()).unwrap();
    assert_eq!(again.trace, res.trace);
}

fn detuned_strip() -> AntennaModel {
    // the path length equals the strip width: 20.6 mm puts f1 about 5% above 2.45 GHz
    let space = DesignSpace::new(30.0, 6.0);
    let dims = DimensionSet::from_pairs("strip", &[(1.0, 1.0), (20.6, 1.0)]);
    let pos = [ComponentPos::new(2.0, 0.0), ComponentPos::new(2.0, 0.0)];
    assemble_model(&space, &dims, &pos).unwrap()
}

#[test]
fn trust_region_retunes_detuned_strip() {
    let start = detuned_strip();
    let target = one_band(2.4, 2.5);
    let f = freqs();
    let s0 = score(
        &Surrogate::default().simulate(&SimRequest::new(&start, &f).unwrap()).unwrap(),
        &target,
    )
    .unwrap();
    let cfg = TrustRegionConfig {
        budget: 150,
        min_fd_step: 0.1,
        ..TrustRegionConfig::default()
    };
    let res = optimize(&start, &cfg, &Surrogate::default(), &target, &f).unwrap();
    assert!(res.score.0 < s0.0, "start {} best {}", s0.0, res.score.0);
    assert!(res.evaluations <= 150);
    if res.score.meets_target() {
        assert_eq!(res.stop, StopReason::TargetMet);
    }
    assert!(res.best.dims.dims.iter().all(|d| d.width >= MIN_SIZE && d.height >= MIN_SIZE));
}

#[test]
fn tolerance_runs_stay_near_baseline_resonance() {
    // an L shape whose joint survives any 10% perturbation
    let space = DesignSpace::new(30.0, 6.0);
    let dims = DimensionSet::from_pairs("l", &[(1.0, 4.0), (15.0, 1.0)]);
    let pos = [ComponentPos::new(10.0, 0.0), ComponentPos::new(5.0, 1.5)];
    let m = assemble_model(&space, &dims, &pos).unwrap();
    let sur = Surrogate::default();
    let l0 = sur.path_length(&m).unwrap().unwrap();
    let cfg = ToleranceConfig {
        n_runs: 20,
        seed: 7,
        ..ToleranceConfig::default()
    };
    let res = tolerance_study(&m, &cfg, &sur, &one_band(2.4, 2.5), &freqs()).unwrap();
    let p0 = ParamVector::from_model(&m, false).values;
    for run in &res.runs {
        let p = ParamVector::from_model(&run.model, false).values;
        let shift: f64 = p.iter().zip(&p0).map(|(a, b)| (a - b).abs()).sum();
        let dl = 2.0 * shift + 2.0 * sur.cfg.resolution;
        let l = sur.path_length(&run.model).unwrap().expect("joint broke");
        assert!((l - l0).abs() <= dl, "L {l} vs {l0}, bound {dl}");
        let (f0, f1) = (sur.resonances(l0)[0], sur.resonances(l)[0]);
        assert!((f1 - f0).abs() / f0 <= dl / (l0 - dl));
    }
}

#[test]
fn selector_prefers_tuned_strip() {
    let space = DesignSpace::new(50.0, 4.0);
    let small = [(0.3, 0.3); 4];
    let cand = |id: &str, w1: f64| {
        let mut pairs = vec![(w1, 1.0)];
        pairs.extend_from_slice(&small);
        DimensionSet::from_pairs(id, &pairs)
    };
    let cands = vec![cand("a", 36.0), cand("b", 39.0), cand("planted", 42.3), cand("d", 46.0), cand("e", 50.0)];
    let cfg = SelectorConfig {
        n_p: 12,
        seed: 3,
        target: one_band(2.4, 2.5),
        resolution: 0.5,
        ..SelectorConfig::default()
    };
    let sel = select(&space, &cands, &cfg, &Surrogate::default()).unwrap();
    assert_eq!(sel.chosen.id, "planted");
    assert_eq!(sel.stats.len(), 5);
    assert_eq!(sel.records.len(), 60);
}

#[test]
fn single_iteration_is_plain_random_sampling() {
    let space = DesignSpace::new(30.0, 6.0);
    let dims = DimensionSet::from_pairs("d", &[(1.0, 4.0), (12.0, 1.0), (6.0, 1.0)]);
    let cfg = GeneratorConfig {
        n_batch: 20,
        n_iter: 1,
        resolution: 0.5,
        seed: 11,
        ..GeneratorConfig::default()
    };
    let target = one_band(2.4, 2.5);
    let a = run_generation(&space, &dims, &cfg, &Surrogate::default(), &target, None).unwrap();
    assert_eq!(a.store.len(), 20);
    assert!(a.classifier.is_none());
    assert!(a.store.records().iter().all(|r| r.iteration == 1 && r.predicted.is_none()));
    let b = run_generation(&space, &dims, &cfg, &Surrogate::default(), &target, None).unwrap();
    let ids = |g: &GenerationResult| g.store.records().iter().map(|r| r.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&a), ids(&b));
    assert!(a.best.windows(2).all(|w| w[0].score.0 <= w[1].score.0));
}
