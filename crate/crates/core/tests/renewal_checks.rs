use avail_bound_core::renewal::{
    availability_curve, simulate_trajectory, stationary_start_curve, time_average_availability,
    CurveSpec,
};
use avail_bound_core::stats::ks_test;
use avail_bound_core::{validate, ModelParams, RawParams, Regime, RngStreams, SystemState};

fn canonical() -> ModelParams {
    validate(&RawParams::canonical()).unwrap()
}

#[test]
fn period_lengths_follow_laws() {
    let m = canonical();
    let mut rng = RngStreams::new(7).stream("periods", 0);
    let tr = simulate_trajectory(&m, SystemState::working(3.0), 40_000.0, &mut rng).unwrap();
    let (mut w, mut r) = (Vec::new(), Vec::new());
    for (reg, len) in tr.complete_periods() {
        match reg {
            Regime::Working => w.push(len),
            Regime::Repair => r.push(len),
        }
    }
    assert!(w.len() > 20_000 && r.len() > 20_000);
    assert!(ks_test(&w, |s| m.cdf(Regime::Working, s)).passes(0.01));
    assert!(ks_test(&r, |s| m.cdf(Regime::Repair, s)).passes(0.01));
}

#[test]
fn first_period_is_residual() {
    let m = canonical();
    let streams = RngStreams::new(8);
    let x = 2.5;
    let firsts: Vec<f64> = (0..20_000)
        .map(|i| {
            let mut rng = streams.stream("first", i);
            let tr = simulate_trajectory(&m, SystemState::repair(x), 1e3, &mut rng).unwrap();
            tr.events[0].switch_time
        })
        .collect();
    assert!(ks_test(&firsts, |s| m.residual_cdf(Regime::Repair, x, s)).passes(0.01));
}

#[test]
fn long_run_fraction_approaches_limit() {
    let m = canonical();
    let mut rng = RngStreams::new(9).stream("long", 0);
    let a = time_average_availability(&m, SystemState::repair(0.0), 2e5, &mut rng).unwrap();
    assert!((a - 0.5).abs() < 0.01, "{a}");
}

#[test]
fn unequal_tails_shift_limit() {
    let m = validate(&RawParams::pareto(4.0, 5.0, 5.0)).unwrap();
    let a = m.limiting_availability();
    assert!((a - 4.0 / 7.0).abs() < 1e-12);
    let grid: Vec<f64> = vec![200.0];
    let c = availability_curve(
        &m,
        SystemState::working(0.0),
        &grid,
        CurveSpec {
            n_traj: 20_000,
            ci_level: 0.99,
        },
        &RngStreams::new(10),
    )
    .unwrap();
    assert!(c.interval(0).lo - 0.005 <= a && a <= c.interval(0).hi + 0.005);
}

#[test]
fn stationary_start_is_flat() {
    let m = canonical();
    let grid: Vec<f64> = (0..10).map(|i| i as f64 * 3.0).collect();
    let c = stationary_start_curve(
        &m,
        &grid,
        CurveSpec {
            n_traj: 20_000,
            ci_level: 0.99,
        },
        &RngStreams::new(11),
    )
    .unwrap();
    let inside = (0..grid.len())
        .filter(|&i| c.interval(i).contains(0.5))
        .count();
    assert!(inside >= 9, "{inside}");
}
