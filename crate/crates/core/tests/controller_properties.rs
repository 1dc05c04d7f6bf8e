//! Controller decision properties: the W1 = 0 reduction to Efficient-MP, the
//! sign rule behind keep/switch, and end-to-end decision-sequence equality.

use atc_core::control::{
    advanced_mp_decide, efficient_mp_decide, run_policy, ControllerConfig, ControllerKind,
    SignalController,
};
use atc_core::network::{generate_grid, generate_poisson_flow, GridSpec, PoissonFlowConfig};
use atc_core::observer::IntersectionObservation;
use atc_core::sim::SimConfig;
use proptest::prelude::*;
use std::sync::Arc;

fn obs(pressures: [f64; 4], demand: [u32; 4], current: usize) -> IntersectionObservation {
    IntersectionObservation {
        node: 0,
        current_phase: current,
        phase_elapsed: 0,
        movements: Vec::new(),
        phase_pressure: pressures.to_vec(),
        classic_phase_pressure: vec![0; 4],
        phase_demand: demand.to_vec(),
        intersection_pressure: 0,
        incoming_queue: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 512, ..ProptestConfig::default() })]

    /// With W1 = 0 the keep branch compares 0 > max{p(s)}, which can only
    /// fire when every phase pressure is strictly negative. Whenever
    /// max{p(s)} >= 0 (always true when downstream queues cannot exceed
    /// upstream everywhere, e.g. single intersections feeding sinks) the
    /// decision is exactly Efficient-MP's.
    #[test]
    fn w1_zero_reduces_to_efficient_mp(
        p in prop::array::uniform4(-10.0f64..10.0),
        d in prop::array::uniform4(0u32..20),
        current in 0usize..4,
    ) {
        let cfg = ControllerConfig { w1: 0.0, ..Default::default() };
        let o = obs(p, d, current);
        let max_p = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let adv = advanced_mp_decide(&o, current, &cfg);
        if max_p >= 0.0 {
            let emp = efficient_mp_decide(&o, &cfg);
            prop_assert_eq!(adv.target, emp.target);
            prop_assert!(!adv.diag.kept_by_demand);
        } else {
            prop_assert!(adv.diag.kept_by_demand, "0 > max p fires only below zero");
            prop_assert_eq!(adv.target, current);
        }
    }

    /// The keep/switch outcome depends only on the sign of
    /// d(current) * W1 - max{p(s)} and on the argmax of p(s).
    #[test]
    fn keep_switch_depends_only_on_sign(
        p in prop::array::uniform4(-10.0f64..10.0),
        d in prop::array::uniform4(0u32..20),
        current in 0usize..4,
        w1 in 0.0f64..4.0,
    ) {
        let cfg = ControllerConfig { w1, ..Default::default() };
        let o = obs(p, d, current);
        let max_p = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let decision = advanced_mp_decide(&o, current, &cfg);
        if d[current] as f64 * w1 - max_p > 0.0 {
            prop_assert_eq!(decision.target, current);
            prop_assert!(decision.keep_current);
        } else {
            let emp = efficient_mp_decide(&o, &cfg);
            prop_assert_eq!(decision.target, emp.target);
        }
    }

    /// Scaling every pressure and the weighted demand together never changes
    /// the outcome.
    #[test]
    fn decision_is_scale_invariant(
        p in prop::array::uniform4(-8.0f64..8.0),
        d in prop::array::uniform4(0u32..16),
        current in 0usize..4,
        scale_pow in -2i32..3,
    ) {
        let scale = 2.0f64.powi(scale_pow);
        let cfg = ControllerConfig { w1: 1.0, ..Default::default() };
        let scaled_cfg = ControllerConfig { w1: scale, ..Default::default() };
        let base = advanced_mp_decide(&obs(p, d, current), current, &cfg);
        let mut sp = p;
        for v in &mut sp {
            *v *= scale;
        }
        // Demand is integral, so scale through W1 instead.
        let scaled = advanced_mp_decide(&obs(sp, d, current), current, &scaled_cfg);
        prop_assert_eq!(base.target, scaled.target);
        prop_assert_eq!(base.diag.kept_by_demand, scaled.diag.kept_by_demand);
    }
}

/// End to end on a single intersection: every outgoing road feeds a sink, so
/// downstream queues are zero, pressures never go negative, and Advanced-MP
/// with W1 = 0 replays Efficient-MP exactly.
#[test]
fn w1_zero_episode_matches_efficient_mp_bit_exact() {
    let net = Arc::new(
        generate_grid(&GridSpec {
            rows: 1,
            cols: 1,
            ew_length: 300.0,
            ns_length: 300.0,
            lanes_per_road: 3,
            max_speed: 11.0,
        })
        .unwrap(),
    );
    for seed in [1u64, 2, 3] {
        let flow = generate_poisson_flow(&net, &PoissonFlowConfig::new(0.12, 600.0, seed)).unwrap();
        let sim = SimConfig { horizon: 600, seed, ..Default::default() };
        let adv = SignalController::new(
            ControllerKind::AdvancedMp,
            ControllerConfig { w1: 0.0, ..Default::default() },
        );
        let emp = SignalController::new(ControllerKind::EfficientMp, ControllerConfig::default());
        let a = run_policy(net.clone(), &flow, &adv, &sim).unwrap();
        let b = run_policy(net.clone(), &flow, &emp, &sim).unwrap();
        assert_eq!(a.decisions, b.decisions, "seed {seed}");
        assert_eq!(a.final_digest, b.final_digest, "seed {seed}");
        assert_eq!(
            a.metrics.average_travel_time.to_bits(),
            b.metrics.average_travel_time.to_bits(),
            "seed {seed}"
        );
    }
}

/// Classic and efficient pressure can rank phases differently; build the
/// textbook case where averaging flips the argmax.
#[test]
fn classic_and_efficient_argmax_can_differ() {
    let cfg = ControllerConfig::default();
    // Phase 0: classic 4, efficient 4/1 - 0/3 = 4.0
    // Phase 1: classic 5, efficient 5/3 - 0/3 ~ 1.67 if its queue spreads
    // over three used lanes. Efficient picks 0, classic picks 1.
    let o = IntersectionObservation {
        node: 0,
        current_phase: 2,
        phase_elapsed: 0,
        movements: Vec::new(),
        phase_pressure: vec![4.0, 5.0 / 3.0, 0.0, 0.0],
        classic_phase_pressure: vec![4, 5, 0, 0],
        phase_demand: vec![0; 4],
        intersection_pressure: 0,
        incoming_queue: 0,
    };
    let emp = efficient_mp_decide(&o, &cfg);
    let mp = atc_core::control::max_pressure_decide(&o, &cfg);
    assert_eq!(emp.target, 0);
    assert_eq!(mp.target, 1);
}
