use avail_bound_core::bound::{psi_series, BoundParams, Theta0Mode};
use avail_bound_core::coupling::{step_paired, MinDensityKit, PairedState};
use avail_bound_core::numerics::{invert_monotone, sum_affine_power_series};
use avail_bound_core::{bound, validate, ModelParams, RawParams, Regime, RngStreams, SystemState};
use proptest::prelude::*;
use std::sync::OnceLock;

fn canonical() -> &'static ModelParams {
    static M: OnceLock<ModelParams> = OnceLock::new();
    M.get_or_init(|| validate(&RawParams::canonical()).unwrap())
}

fn regime() -> impl Strategy<Value = Regime> {
    prop_oneof![Just(Regime::Working), Just(Regime::Repair)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn residual_law_is_conditional_law(reg in regime(), x in 0.0..50.0f64, s in 0.0..50.0f64, t in 0.0..50.0f64) {
        let m = canonical();
        // S^(x)(s+t) = S^(x)(s) S^(x+s)(t)
        let lhs = m.residual_survival(reg, x, s + t);
        let rhs = m.residual_survival(reg, x, s) * m.residual_survival(reg, x + s, t);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.max(1e-300) + 1e-300);
        prop_assert!((m.residual_survival(reg, 0.0, s) - m.survival(reg, s)).abs() < 1e-14);
    }

    #[test]
    fn quantile_inverts_cdf(reg in regime(), x in 0.0..20.0f64, u in 0.0..0.999_999f64) {
        let m = canonical();
        let s = m.residual_quantile(reg, x, u).unwrap();
        prop_assert!(s >= 0.0);
        prop_assert!((m.residual_cdf(reg, x, s) - u).abs() < 1e-10);
    }

    #[test]
    fn generic_inverse_matches_closed_form(x in 0.0..20.0f64, u in 0.0..0.9999f64) {
        let m = canonical();
        let closed = m.residual_quantile(Regime::Working, x, u).unwrap();
        let generic = invert_monotone(|s| m.residual_cdf(Regime::Working, x, s), u, 0.0, 1.0, 1e-13).unwrap();
        prop_assert!((closed - generic).abs() < 1e-8 * (1.0 + closed));
    }

    #[test]
    fn series_matches_brute_force(alpha in 0.0..3.0f64, q in 0.0..0.9f64, a in 0.5..20.0f64, b in 0.0..5.0f64) {
        let fast = sum_affine_power_series(alpha, q, a, b, 0, 1e-12).unwrap();
        let mut brute = 0.0;
        for i in 0..5000 {
            let i = i as f64;
            brute += (2.0 * i + 4.0).powf(alpha) * q.powf(i) * (a + b * i);
        }
        prop_assert!((fast / brute - 1.0).abs() < 1e-9, "{fast} vs {brute}");
    }

    #[test]
    fn psi_increases_with_q(q1 in 0.01..0.99f64, dq in 0.0001..0.5f64, c in 1.0..10.0f64) {
        let q2 = (q1 + dq).min(0.999);
        prop_assume!(q2 > q1);
        let m = 1.0 / 3.0;
        let a = psi_series(2.0, q1, c, m, m, 1e-10).unwrap();
        let b = psi_series(2.0, q2, c, m, m, 1e-10).unwrap();
        prop_assert!(b > a);
    }

    #[test]
    fn splice_decomposition(x in 0.0..10.0f64, y in 0.0..10.0f64, s in 0.0..100.0f64) {
        let m = canonical();
        let kit = MinDensityKit::new(m, x, y).unwrap();
        let phi = kit.big_phi(s).unwrap();
        prop_assert!((phi + kit.big_phi_hat(s).unwrap() - m.residual_cdf(Regime::Working, x, s)).abs() < 1e-10);
        prop_assert!((phi + kit.big_phi_hat_swapped(s).unwrap() - m.residual_cdf(Regime::Working, y, s)).abs() < 1e-10);
        prop_assert!(kit.kappa() <= 1.0 + 1e-15);
        prop_assert!(kit.kappa() >= bound::kappa(m, x.max(y)).unwrap());
    }

    #[test]
    fn splice_draws_are_quantiles(x in 0.0..10.0f64, y in 0.0..10.0f64, u in 0.0..0.9999f64) {
        let m = canonical();
        let kit = MinDensityKit::new(m, x, y).unwrap();
        let (t1, t2) = kit.draw_pair(u).unwrap();
        prop_assert!(t1 >= 0.0 && t2 >= 0.0);
        prop_assert_eq!(t1 == t2, u < kit.kappa() || x == y);
    }

    #[test]
    fn coupled_flag_is_absorbing(seed in any::<u64>(), x in 0.0..5.0f64, y in 0.0..5.0f64, second_repair in any::<bool>()) {
        let m = canonical();
        let z2 = if second_repair { SystemState::repair(y) } else { SystemState::working(y) };
        let mut st = PairedState::new(SystemState::working(x), z2);
        let mut rng = RngStreams::new(seed).stream("prop", 0);
        let mut was = st.coupled;
        for _ in 0..300 {
            st = step_paired(m, &st, &mut rng).unwrap().state;
            prop_assert!(!was || st.coupled);
            if st.coupled {
                prop_assert_eq!(st.z1, st.z2);
            }
            was = st.coupled;
        }
    }

    #[test]
    fn bound_shrinks_with_time(t in 0.0..1e3f64, dt in 0.001..1e3f64) {
        let m = canonical();
        let rep = bound::psi(m, SystemState::working(0.0), BoundParams { alpha: 2.0, r: 1.0, n: 3.0 }, Theta0Mode::Exact).unwrap();
        prop_assert!(rep.bound_at(t + dt) < rep.bound_at(t));
    }
}
