use std::f64::consts::PI;

use esperiod::finder::MapImage;
use esperiod::finder::ReturnMap;
use esperiod::flow::{flow, flow_with_sensitivity, IntegratorConfig, TimePeriodicSystem};
use proptest::prelude::*;

/// `ẋ = −a x − c x³ + b sin t + d x cos t`
fn family(a: f64, b: f64, c: f64, d: f64) -> TimePeriodicSystem {
    TimePeriodicSystem::scalar(
        2.0 * PI,
        move |t, x| -a * x - c * x * x * x + b * t.sin() + d * x * t.cos(),
        move |t, x| -a - 3.0 * c * x * x + d * t.cos(),
    )
    .unwrap()
}

fn coeffs() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.1..2.0f64, -2.0..2.0f64, 0.0..0.5f64, -0.5..0.5f64)
}

fn end(sys: &TimePeriodicSystem, t0: f64, x0: f64, t1: f64) -> f64 {
    let tr = flow(sys, t0, &[x0], t1, &IntegratorConfig::default()).unwrap();
    assert!(!tr.escaped);
    tr.endpoint()[0]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn semigroup((a, b, c, d) in coeffs(), x0 in -3.0..3.0f64, t0 in 0.0..5.0f64, s in 0.0..1.0f64, len in 0.1..8.0f64) {
        let sys = family(a, b, c, d);
        let t1 = t0 + len;
        let tau = t0 + s * len;
        let direct = end(&sys, t0, x0, t1);
        let split = end(&sys, tau, end(&sys, t0, x0, tau), t1);
        prop_assert!((direct - split).abs() <= 1e-8, "{direct} vs {split}");
    }

    #[test]
    fn period_shift((a, b, c, d) in coeffs(), x0 in -3.0..3.0f64, t0 in 0.0..2.0f64, len in 0.1..7.0f64, k in 1usize..4) {
        let sys = family(a, b, c, d);
        let shift = 2.0 * PI * k as f64;
        let base = end(&sys, t0, x0, t0 + len);
        let shifted = end(&sys, t0 + shift, x0, t0 + len + shift);
        prop_assert!((base - shifted).abs() <= 1e-8, "{base} vs {shifted}");
    }

    #[test]
    fn scalar_order_preserved((a, b, c, d) in coeffs(), x in -3.0..3.0f64, gap in 1e-6..2.0f64, len in 0.1..10.0f64) {
        let sys = family(a, b, c, d);
        prop_assert!(end(&sys, 0.0, x, len) < end(&sys, 0.0, x + gap, len));
    }

    #[test]
    fn sensitivity_matches_central_difference((a, b, c, d) in coeffs(), x0 in -2.0..2.0f64, len in 0.5..7.0f64) {
        let sys = family(a, b, c, d);
        let cfg = IntegratorConfig::adaptive(1e-12, 1e-12);
        let sens = flow_with_sensitivity(&sys, 0.0, x0, len, &cfg).unwrap();
        let delta = 1e-5;
        let rk4 = IntegratorConfig::fixed_rk4(1e-3);
        let hi = flow(&sys, 0.0, &[x0 + delta], len, &rk4).unwrap().endpoint()[0];
        let lo = flow(&sys, 0.0, &[x0 - delta], len, &rk4).unwrap().endpoint()[0];
        let fd = (hi - lo) / (2.0 * delta);
        prop_assert!((fd - sens.dphi_dx0).abs() <= 1e-4 * sens.dphi_dx0.abs(), "{fd} vs {}", sens.dphi_dx0);
    }

    #[test]
    fn return_map_strictly_increasing((a, b, c, d) in coeffs(), x in -3.0..3.0f64, gap in 1e-6..2.0f64) {
        let rm = ReturnMap::new(family(a, b, c, d), 0.0, IntegratorConfig::default());
        match (rm.eval(&[x]).unwrap(), rm.eval(&[x + gap]).unwrap()) {
            (MapImage::Point(gx), MapImage::Point(gy)) => prop_assert!(gx[0] < gy[0]),
            other => prop_assert!(false, "escaped: {other:?}"),
        }
    }
}

#[test]
fn blowup_is_reported_not_raised() {
    let sys = TimePeriodicSystem::scalar(1.0, |_, x| x * x, |_, x| 2.0 * x).unwrap();
    let tr = flow(&sys, 0.0, &[2.0], 5.0, &IntegratorConfig::default()).unwrap();
    assert!(tr.escaped);
    let t = tr.escape_time.unwrap();
    assert!((t - 0.5).abs() < 1e-3, "{t}");
}
