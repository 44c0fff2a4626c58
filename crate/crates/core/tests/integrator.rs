mod common;

use common::{instance, quadrature_compensator, rel_err};
use markhawk::{
    compensator, hidden_breakpoints, integrate_kernel_exp, integrate_kernel_exp_over,
    integrated_ground_intensity_nnnh, integrated_ground_intensity_snh, EventSequence, KernelNet,
    Link, MarkedEvent, ModelKind, ScalingTransform,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_quadrature_on_random_instances() {
    for kind in [ModelKind::LinearSnh, ModelKind::NonLinearNnnh] {
        for seed in 0..25 {
            let (model, seq) = instance(seed, kind);
            for d in 0..model.dims() {
                let exact = compensator(&model, d, &seq, 0.0, seq.horizon()).unwrap();
                let quad = quadrature_compensator(
                    &model,
                    d,
                    seq.events(),
                    0.0,
                    seq.horizon(),
                    1e-11 * exact.max(1.0),
                );
                assert!(
                    rel_err(exact, quad, 1e-300) < 1e-8,
                    "{kind:?} seed {seed} dim {d}: {exact} vs {quad}"
                );
            }
        }
    }
}

#[test]
fn kind_specific_entry_points() {
    let (snh, seq) = instance(3, ModelKind::LinearSnh);
    assert!(integrated_ground_intensity_snh(&snh, 0, &seq).is_ok());
    assert!(integrated_ground_intensity_nnnh(&snh, 0, &seq).is_err());
    let (nnnh, seq) = instance(3, ModelKind::NonLinearNnnh);
    assert!(integrated_ground_intensity_nnnh(&nnnh, 0, &seq).is_ok());
    assert!(integrated_ground_intensity_snh(&nnnh, 0, &seq).is_err());
}

#[test]
fn kernel_integral_matches_quadrature() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let p = rng.gen_range(1..=8);
        let net = KernelNet::new(
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            rng.gen_range(-1.0..1.0),
            Link::Exponential,
        )
        .unwrap();
        let m = rng.gen_range(0.0..3.0);
        let len = rng.gen_range(0.1..8.0);
        let exact = integrate_kernel_exp(&net, m, len).unwrap();
        let quad = common::adaptive_simpson(
            &|t| common::kernel_value(&net, t, m),
            0.0,
            len,
            1e-12 * exact,
        );
        assert!(rel_err(exact, quad, 1e-300) < 1e-9, "{exact} vs {quad}");
    }
}

#[test]
fn breakpoints_sorted_within_interval() {
    let net = KernelNet::new(
        vec![1.0, -2.0, 0.5],
        vec![0.0, 1.0, 0.0],
        vec![-1.0, 3.0, 4.0],
        vec![1.0; 3],
        0.0,
        Link::Exponential,
    )
    .unwrap();
    let b = hidden_breakpoints(&net, 1.0, 5.0).unwrap();
    // crossings: 1, 2, -8 (outside)
    assert_eq!(b.points(), &[0.0, 1.0, 2.0, 5.0]);
    assert!(hidden_breakpoints(&net, 1.0, 0.0).is_err());
}

#[test]
fn scaled_model_is_unit_invariant() {
    let (model, seq) = instance(9, ModelKind::LinearSnh);
    let ts = 2.5;
    let scaling = ScalingTransform {
        time_scale: ts,
        mark_scale: vec![0.5; model.dims()],
    };
    let scaled_model = model.clone().with_scaling(scaling.clone()).unwrap();
    let scaled_seq = scaling.apply(&seq).unwrap();
    for d in 0..model.dims() {
        let raw = compensator(&scaled_model, d, &seq, 0.5, seq.horizon()).unwrap();
        let model_space =
            compensator(&model, d, &scaled_seq, 0.5 * ts, seq.horizon() * ts).unwrap();
        assert!(
            rel_err(raw, model_space, 1e-300) < 1e-12,
            "{raw} vs {model_space}"
        );
    }
}

fn arb_kind() -> impl Strategy<Value = ModelKind> {
    prop_oneof![Just(ModelKind::LinearSnh), Just(ModelKind::NonLinearNnnh)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn additive_over_partitions(seed in any::<u64>(), kind in arb_kind(), cuts in prop::collection::vec(0.0f64..1.0, 1..5)) {
        let (model, seq) = instance(seed, kind);
        let t = seq.horizon();
        let mut pts: Vec<f64> = cuts.iter().map(|c| c * t).collect();
        pts.push(0.0);
        pts.push(t);
        pts.sort_by(f64::total_cmp);
        for d in 0..model.dims() {
            let whole = compensator(&model, d, &seq, 0.0, t).unwrap();
            let parts: f64 = pts.windows(2).map(|w| compensator(&model, d, &seq, w[0], w[1]).unwrap()).sum();
            prop_assert!(rel_err(whole, parts, 1e-300) < 1e-10, "{} vs {}", whole, parts);
        }
    }

    #[test]
    fn monotone_in_horizon(seed in any::<u64>(), kind in arb_kind(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (model, seq) = instance(seed, kind);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let t = seq.horizon();
        for d in 0..model.dims() {
            let c_lo = compensator(&model, d, &seq, 0.0, lo * t).unwrap();
            let c_hi = compensator(&model, d, &seq, 0.0, hi * t).unwrap();
            prop_assert!(c_lo >= 0.0);
            prop_assert!(c_hi >= c_lo * (1.0 - 1e-12));
        }
    }

    #[test]
    fn refinement_leaves_integral_unchanged(seed in any::<u64>(), extra in prop::collection::vec(0.0f64..1.0, 0..10), len in 0.1f64..10.0, m in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.gen_range(1..=8);
        let net = KernelNet::new(
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            common::uniform_vec(&mut rng, -1.0, 1.0, p),
            rng.gen_range(-1.0..1.0),
            Link::Exponential,
        ).unwrap();
        let base = hidden_breakpoints(&net, m, len).unwrap();
        let pts: Vec<f64> = extra.iter().map(|x| x * len).collect();
        let refined = base.refined(&pts);
        let a = integrate_kernel_exp_over(&net, m, &base).unwrap();
        let b = integrate_kernel_exp_over(&net, m, &refined).unwrap();
        prop_assert!(rel_err(a, b, 1e-300) < 1e-12, "{} vs {}", a, b);
        prop_assert!(rel_err(a, integrate_kernel_exp(&net, m, len).unwrap(), 1e-300) < 1e-12);
    }
}

#[test]
fn history_after_interval_is_ignored() {
    let (model, seq) = instance(5, ModelKind::NonLinearNnnh);
    let t = seq.horizon();
    let head: Vec<MarkedEvent> = seq
        .events()
        .iter()
        .copied()
        .filter(|e| e.time < 0.5 * t)
        .collect();
    let short = EventSequence::new(seq.dims(), t, head).unwrap();
    for d in 0..model.dims() {
        let a = compensator(&model, d, &seq, 0.0, 0.5 * t).unwrap();
        let b = compensator(&model, d, &short, 0.0, 0.5 * t).unwrap();
        assert!(rel_err(a, b, 1e-300) < 1e-14);
    }
}
