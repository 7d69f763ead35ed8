use mrgp_core::fitness::{fitness_value, FitnessConfig};
use mrgp_core::mrprog::{crossover, mutate, TreeLimits};
use mrgp_core::stats::{mann_whitney_u, r_squared};
use mrgp_core::trace::distance;
use mrgp_core::{rng_from_seed, AmplitudeRange, Program, Trace, TraceGrid};
use proptest::prelude::*;

fn grid() -> TraceGrid {
    let range = AmplitudeRange::new(vec![(-2.0, 2.0), (1.0, 3.0)]).unwrap();
    TraceGrid::new(10.0, 3.0, 0.02, vec![0.2, 0.1], range).unwrap()
}

fn trace_strategy(n_dim: usize, k_max: usize) -> impl Strategy<Value = Trace> {
    prop::collection::vec(-5.0f64..5.0, n_dim * k_max)
        .prop_map(move |s| Trace::new(n_dim, 0.1, s).unwrap())
}

proptest! {
    #[test]
    fn distance_is_a_metric(
        (a, b, c) in (trace_strategy(2, 12), trace_strategy(2, 12), trace_strategy(2, 12))
    ) {
        let ab = distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(distance(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - distance(&b, &a).unwrap()).abs() < 1e-12);
        let via = distance(&a, &c).unwrap() + distance(&c, &b).unwrap();
        prop_assert!(ab <= via + 1e-12);
    }

    #[test]
    fn scaling_scales_distance(a in trace_strategy(3, 9), s in -4.0f64..4.0) {
        let zero = Trace::zeros(3, 9, 0.1).unwrap();
        let d = distance(&a.scale(s), &zero).unwrap();
        prop_assert!((d - s.abs() * distance(&a, &zero).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn shift_pads_and_keeps_length(a in trace_strategy(2, 10), steps in 0usize..10) {
        let s = a.shift(steps).unwrap();
        prop_assert_eq!(s.shape(), a.shape());
        for d in 0..2 {
            for k in 0..10 {
                let want = if k < steps { 0.0 } else { a.get(d, k - steps) };
                prop_assert_eq!(s.get(d, k), want);
            }
        }
    }

    #[test]
    fn fitness_is_monotone(
        mu in 0.0f64..10.0, dmu in 0.0f64..10.0,
        ec in 0.0f64..2.0, dec in 0.0f64..2.0,
        base in 1.01f64..20.0, c in 0.1f64..40.0,
    ) {
        let cfg = FitnessConfig { base, exponent_scale: c, control_error_threshold: 0.15 };
        prop_assert!(fitness_value(mu + dmu, ec, &cfg) >= fitness_value(mu, ec, &cfg));
        prop_assert!(fitness_value(mu, ec + dec, &cfg) <= fitness_value(mu, ec, &cfg));
    }

    #[test]
    fn fitness_identities(mu in 0.0f64..10.0, base in 1.01f64..20.0, c in 0.1f64..40.0, th in 0.01f64..100.0) {
        let cfg = FitnessConfig { base, exponent_scale: c, control_error_threshold: th };
        let at = fitness_value(mu, th, &cfg);
        prop_assert!((at - mu).abs() <= 1e-12 * mu.max(f64::MIN_POSITIVE));
        let above = fitness_value(mu, th + 1.0 / c, &cfg);
        prop_assert!((above - mu / base).abs() <= 1e-12 * (mu / base).max(f64::MIN_POSITIVE));
    }

    #[test]
    fn u_statistics_sum_to_product(
        x in prop::collection::vec(0u8..20, 1..40),
        y in prop::collection::vec(0u8..20, 1..40),
    ) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let r = mann_whitney_u(&x, &y).unwrap();
        prop_assert_eq!(r.u + r.u_other, (x.len() * y.len()) as f64);
        prop_assert!(r.p > 0.0 && r.p <= 1.0);
        let mut pairs = 0.0;
        for a in &x {
            for b in &y {
                pairs += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
        prop_assert_eq!(r.u, pairs);
    }

    #[test]
    fn r_squared_is_affine_invariant(
        pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
        a in 0.1f64..5.0, b in -5.0f64..5.0, c in 0.1f64..5.0, d in -5.0f64..5.0,
    ) {
        let base = r_squared(&pts);
        let moved: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (a * x + b, c * y + d)).collect();
        match (base, r_squared(&moved)) {
            (Some(r0), Some(r1)) => {
                prop_assert!((0.0..=1.0).contains(&r0));
                prop_assert!((r0 - r1).abs() < 1e-8);
            }
            (None, None) => {}
            // Degenerate x variance can flip under rounding; both sides must be near it.
            (l, r) => prop_assert!(l.unwrap_or(0.0) < 1e-6 || r.unwrap_or(0.0) < 1e-6),
        }
    }

    #[test]
    fn program_text_round_trips(seed in any::<u64>()) {
        let g = grid();
        let p = Program::random(&mut rng_from_seed(seed), &g, &TreeLimits::default());
        let parsed: Program = p.to_string().parse().unwrap();
        prop_assert_eq!(parsed.to_string(), p.to_string());
        let a = p.realize(&g).unwrap();
        let b = parsed.realize(&g).unwrap();
        prop_assert!(distance(&a.input, &b.input).unwrap() < 1e-9);
    }
}

/// Generation, mutation and crossover always yield programs that satisfy the grammar and the
/// size limits, and every realization stays inside the range and replays exactly.
#[test]
fn breeding_is_closed_over_1000_iterations() {
    let g = grid();
    let limits = TreeLimits::default();
    let mut rng = rng_from_seed(42);
    let mut a = Program::random(&mut rng, &g, &limits);
    let mut b = Program::random(&mut rng, &g, &limits);
    for i in 0..1000 {
        let m = mutate(&a, &mut rng, &g, &limits);
        let (x, y) = crossover(&m, &b, &mut rng, &limits);
        for p in [&m, &x, &y] {
            p.validate(&g, &limits).unwrap_or_else(|e| panic!("iteration {i}: {e}: {p}"));
            assert!(p.node_count() <= limits.max_nodes);
            let r = p.realize(&g).unwrap();
            assert!(g.range.contains_deviation(&r.input), "iteration {i}: out of range");
            let replayed = r.recipe.replay(&r.terminals).unwrap();
            assert!(distance(&replayed, &r.input).unwrap() < 1e-12);
        }
        if i % 50 == 0 {
            a = Program::random(&mut rng, &g, &limits);
            b = Program::random(&mut rng, &g, &limits);
        } else {
            a = x;
            b = y;
        }
    }
}
