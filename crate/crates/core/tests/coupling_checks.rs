use avail_bound_core::bound::kappa;
use avail_bound_core::bound::Theta0Mode;
use avail_bound_core::coupling::{
    coupling_stats, meet_rate_audit, paired_periods, step_paired, AuditSpec, CouplingSpec,
    MinDensityKit, PairedState, DEFAULT_EVENT_CAP,
};
use avail_bound_core::stats::{ks_test, wilson};
use avail_bound_core::{validate, ModelParams, RawParams, Regime, RngStreams, SystemState};
use rand::Rng;

fn canonical() -> ModelParams {
    validate(&RawParams::canonical()).unwrap()
}

#[test]
fn spliced_draws_have_residual_marginals() {
    let m = canonical();
    let streams = RngStreams::new(41);
    for (x, y) in [(0.0, 1.0), (2.0, 5.0)] {
        let kit = MinDensityKit::new(&m, x, y).unwrap();
        let mut rng = streams.stream("splice", (10.0 * x + y) as u64);
        let (mut first, mut second) = (Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let (a, b) = kit.draw_pair(rng.random::<f64>()).unwrap();
            first.push(a);
            second.push(b);
        }
        let k1 = ks_test(&first, |s| m.residual_cdf(Regime::Working, x, s));
        let k2 = ks_test(&second, |s| m.residual_cdf(Regime::Working, y, s));
        assert!(k1.passes(0.01), "{x},{y}: {k1:?}");
        assert!(k2.passes(0.01), "{x},{y}: {k2:?}");
    }
}

#[test]
fn equal_draw_frequency_matches_overlap() {
    let m = canonical();
    let streams = RngStreams::new(42);
    let grid = [0.0, 5.0 / 3.0, 10.0 / 3.0, 5.0];
    let n = 20_000u64;
    for (i, &x) in grid.iter().enumerate() {
        for (j, &y) in grid.iter().enumerate() {
            let kit = MinDensityKit::new(&m, x, y).unwrap();
            let mut rng = streams.stream("overlap", (4 * i + j) as u64);
            let equal = (0..n)
                .filter(|_| {
                    let (a, b) = kit.draw_pair(rng.random::<f64>()).unwrap();
                    a == b
                })
                .count() as f64;
            let f = equal / n as f64;
            let k = kit.kappa();
            let sd = (k * (1.0 - k) / n as f64).sqrt();
            assert!((f - k).abs() <= 3.0 * sd + 1e-12, "({x},{y}): {f} vs {k}");
            let lower = kappa(&m, x.max(y)).unwrap();
            assert!(f >= lower - 3.0 * sd, "({x},{y}): {f} < {lower}");
        }
    }
}

#[test]
fn paired_period_lengths_follow_marginal_laws() {
    let m = canonical();
    let p = paired_periods(
        &m,
        SystemState::working(0.0),
        SystemState::repair(0.0),
        2000,
        100,
        &RngStreams::new(43),
    )
    .unwrap();
    for c in 0..2 {
        assert_eq!(p.working[c].len() + p.repair[c].len(), 200_000);
        let kw = ks_test(&p.working[c], |s| m.cdf(Regime::Working, s));
        let kr = ks_test(&p.repair[c], |s| m.cdf(Regime::Repair, s));
        assert!(kw.passes(0.01), "component {c}: {kw:?}");
        assert!(kr.passes(0.01), "component {c}: {kr:?}");
    }
}

/// The spliced pair has the right marginals, but once the copy with the
/// smaller draw has switched, the other one is redrawn from its residual
/// law although its spliced draw was known to exceed the crossing point.
/// The copy with the larger elapsed time therefore switches too early on
/// its first period after a splice.
#[test]
fn redraw_after_splice_hurries_older_copy() {
    let m = canonical();
    let streams = RngStreams::new(44);
    let (x, y) = (0.0, 5.0);
    let n = 20_000u64;
    let mut firsts = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut rng = streams.stream("older", i);
        let mut st = PairedState::new(SystemState::working(x), SystemState::working(y));
        loop {
            let o = step_paired(&m, &st, &mut rng).unwrap();
            st = o.state;
            if o.jumped[1] {
                firsts.push(st.clock);
                break;
            }
        }
    }
    let ks = ks_test(&firsts, |s| m.residual_cdf(Regime::Working, y, s));
    let mean = firsts.iter().sum::<f64>() / n as f64;
    // E ξ^(5) = 6/3 = 2 for the canonical law
    assert!(!ks.passes(0.01));
    assert!(mean < 1.2, "{mean}");
}

#[test]
fn coupling_succeeds_and_moment_is_finite() {
    let m = canonical();
    let spec = CouplingSpec {
        runs: 2000,
        alpha: 2.0,
        cap: DEFAULT_EVENT_CAP,
        ci_level: 0.99,
    };
    let stats = coupling_stats(
        &m,
        SystemState::working(0.0),
        SystemState::repair(0.0),
        spec,
        &RngStreams::new(45),
    )
    .unwrap();
    assert_eq!(stats.sigma.len(), 2000);
    assert!(stats.sigma.iter().all(|s| s.is_finite() && *s > 0.0));
    assert!(stats.moment.mean >= 1.0);
    assert!(stats.max_events < DEFAULT_EVENT_CAP);
}

#[test]
fn meet_rate_exceeds_lower_bound() {
    let m = canonical();
    let spec = AuditSpec {
        r: 1.0,
        n: 3.0,
        theta0_mode: Theta0Mode::Exact,
        cycles: 20_000,
        cap: DEFAULT_EVENT_CAP,
        ci_level: 0.99,
    };
    let audit = meet_rate_audit(
        &m,
        SystemState::working(0.0),
        SystemState::repair(0.0),
        spec,
        &RngStreams::new(46),
    )
    .unwrap();
    assert!(audit.cycles >= 20_000);
    let sd = |p: f64| (p * (1.0 - p) / audit.cycles as f64).sqrt();
    assert!(audit.merge_rate >= audit.bound.p - 3.0 * sd(audit.bound.p));
    assert!(audit.window_rate >= audit.bound.pi_rn - 3.0 * sd(audit.bound.pi_rn));
    let ci = wilson(audit.merges, audit.cycles, 0.99);
    assert_eq!(ci, audit.merge_ci);
}
