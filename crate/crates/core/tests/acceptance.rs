//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use esperiod::cascade::{run_cascade, CascadeParams};
use esperiod::es::{
    analyze, build_es_system, es_certificate, simulate_basin, solve_even_map_fixed_point, EsParams, StaticMap,
};
use esperiod::finder::{
    convergence_envelope, find_periodic_contraction, find_periodic_scalar, Direction, MapImage, ReturnMap,
    ScalarOutcome, ScalarSearch,
};
use esperiod::flow::{flow, flow_with_sensitivity, IntegratorConfig, TimePeriodicSystem};
use esperiod::lognorm::{mu, mu_of_integral, operator_norm, MatrixFamilySample, NormKind};
use esperiod::planar::{find_planar_periodic, PlanarOutcome, PlanarSystem};
use esperiod::quadrature::linspace;
use esperiod::region::GridSpec;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 20_240_917;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn linear_test() -> TimePeriodicSystem {
    TimePeriodicSystem::scalar(2.0 * PI, |t, x| -x + t.sin(), |_, _| -1.0).unwrap()
}

fn image(rm: &ReturnMap, x: f64) -> f64 {
    match rm.eval(&[x]).unwrap() {
        MapImage::Point(y) => y[0],
        MapImage::Escaped { time } => panic!("return map escaped at t={time}"),
    }
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let rm = ReturnMap::new(linear_test(), 0.0, IntegratorConfig::default());
    let search = ScalarSearch::new(100, 1e-10);
    let mut worst = 0.0f64;
    for x0 in [-10.0, 0.0, 10.0] {
        let (outcome, _) = find_periodic_scalar(&rm, x0, &search).map_err(|e| e.to_string())?;
        let anchor = outcome
            .solution()
            .ok_or(format!("x0={x0}: {}", outcome.label()))?
            .anchor[0];
        worst = worst.max((anchor + 0.5).abs());
    }
    let factor = (image(&rm, 10.0) - image(&rm, -10.0)) / 20.0;
    let factor_err = (factor - (-2.0 * PI).exp()).abs();
    let elapsed = start.elapsed();
    check(
        worst <= 1e-7 && factor_err <= 1e-6 && elapsed < Duration::from_secs(1),
        format!("anchor error {worst:.2e}, contraction factor error {factor_err:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Verdict {
    let cfg = IntegratorConfig::default();
    let search = ScalarSearch::new(200, 1e-10);
    let zero = TimePeriodicSystem::scalar(2.0 * PI, |_, _| 0.0, |_, _| 0.0).unwrap();
    let growth = TimePeriodicSystem::scalar(2.0 * PI, |_, x| x, |_, _| 1.0).unwrap();

    let lin_rm = ReturnMap::new(linear_test(), 0.0, cfg.clone());
    let (lin, trace) = find_periodic_scalar(&lin_rm, 10.0, &search).map_err(|e| e.to_string())?;
    let monotone = matches!(lin, ScalarOutcome::Periodic(_))
        && matches!(trace.direction, Direction::Increasing | Direction::Decreasing);
    let (z, zt) =
        find_periodic_scalar(&ReturnMap::new(zero, 0.0, cfg.clone()), 0.7, &search).map_err(|e| e.to_string())?;
    let fixed = matches!(z, ScalarOutcome::Periodic(_)) && zt.direction == Direction::Fixed;
    let (g, gt) =
        find_periodic_scalar(&ReturnMap::new(growth, 0.0, cfg.clone()), 1.0, &search).map_err(|e| e.to_string())?;
    let unbounded = matches!(g, ScalarOutcome::Unbounded { .. }) && gt.direction == Direction::Unbounded;

    // Exact periodic solution (sin t − cos t)/2.
    let horizon = 2.0 * PI * (trace.y_seq.len() - 1) as f64;
    let times = linspace(0.0, horizon, 63);
    let envelope = convergence_envelope(&trace, &times).map_err(|e| e.to_string())?;
    let tr = flow(
        &linear_test(),
        0.0,
        &[10.0],
        horizon,
        &IntegratorConfig::adaptive(1e-12, 1e-12),
    )
    .unwrap();
    let mut dominated = 0;
    for (t, env) in times.iter().zip(&envelope) {
        let dev = (tr.interpolate(*t).unwrap()[0] - 0.5 * (t.sin() - t.cos())).abs();
        if dev <= *env + 1e-9 {
            dominated += 1;
        }
    }
    check(
        monotone && fixed && unbounded && dominated == times.len(),
        format!(
            "outcomes {}/{}/{}, envelope dominates {dominated}/{} samples",
            lin.label(),
            z.label(),
            g.label(),
            times.len()
        ),
    )
}

fn criterion_3() -> Verdict {
    let map = StaticMap::quadratic(1.0, 1.0);
    let params = EsParams::new(0.01, 0.1, 1.0).with_b(0.05);
    let cert = es_certificate(&map, &params, &GridSpec::default())
        .map_err(|e| e.to_string())?
        .valid()
        .ok_or("certificate rejected")?;
    let expected = -0.002 * PI + 0.004;
    let integral_err = (cert.p_integral - expected).abs();
    let sys = build_es_system(&map, &params).unwrap();
    let mut anchors = Vec::new();
    let mut slowest = Duration::ZERO;
    for x in [-0.04, 0.04] {
        let start = Instant::now();
        let (sol, _) = find_periodic_contraction(&sys, &cert, 0.0, &[x], 1e-10, 100_000).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        anchors.push(sol.anchor[0]);
    }
    let spread = (anchors[0] - anchors[1]).abs();
    check(
        integral_err <= 1e-9 && spread <= 1e-8 && slowest < Duration::from_secs(5),
        format!("p_integral error {integral_err:.2e}, anchor spread {spread:.2e}, slowest run {slowest:.2?}"),
    )
}

fn criterion_4() -> Verdict {
    let map = StaticMap::quadratic(1.0, 1.0);
    let params = EsParams::new(0.01, 0.1, 1.0).with_b(0.05);
    let even = solve_even_map_fixed_point(&map, &params, 1024, 1e-13).map_err(|e| e.to_string())?;
    let sys = build_es_system(&map, &params).unwrap();
    let cert = es_certificate(&map, &params, &GridSpec::default())
        .map_err(|e| e.to_string())?
        .valid()
        .ok_or("certificate rejected")?;
    let (banach, _) = find_periodic_contraction(&sys, &cert, 0.0, &[0.0], 1e-10, 100_000).map_err(|e| e.to_string())?;
    let times = linspace(0.0, 2.0 * PI, 1024);
    let values: Vec<f64> = times.iter().map(|&t| even.solution.value_at(t)[0]).collect();
    let sup_diff = times
        .iter()
        .zip(&values)
        .map(|(&t, v)| (v - banach.value_at(t)[0]).abs())
        .fold(0.0, f64::max);
    let sign_change = values.iter().any(|v| *v > 0.0) && values.iter().any(|v| *v < 0.0);
    let antisym = (even.solution.value_at(0.0)[0] + even.solution.value_at(PI)[0]).abs();
    // max_{|z|≤1.1} (1 + z²) = 2.21
    let bound = 0.01 * PI / 2.0 * 2.21;
    let sup = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(
        sup_diff <= 1e-6 && sign_change && antisym <= 1e-9 && sup <= bound,
        format!(
            "method gap {sup_diff:.2e}, sign change {sign_change}, x(0)+x(π) = {antisym:.2e}, sup {sup:.4e} vs bound {bound:.4e}"
        ),
    )
}

fn basin_initial_conditions() -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    (0..20).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let map = StaticMap::quadratic(1.0, 1.0);
    let params = EsParams::new(0.001, 0.1, 1.0);
    let an = analyze(&map, &params).map_err(|e| e.to_string())?;
    let conds = [
        ("slope", &an.slope_condition),
        ("drift", &an.drift_condition),
        ("radius", &an.radius_condition),
    ];
    let failed: Vec<String> = conds
        .iter()
        .filter(|(_, c)| !c.holds)
        .map(|(n, c)| format!("({n}) lhs {:.4} rhs {:.4}", c.lhs, c.rhs))
        .collect();
    let samples = simulate_basin(
        &map,
        &params,
        &basin_initial_conditions(),
        200,
        None,
        &IntegratorConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let violations = samples
        .iter()
        .filter(|s| s.escaped || s.last_period_sup > an.residual_bound)
        .count();
    let elapsed = start.elapsed();
    check(
        failed.is_empty() && violations == 0 && elapsed < Duration::from_secs(30),
        format!(
            "conditions failing: [{}], bound {:.4}, violations {violations}/20, {elapsed:.2?}",
            failed.join(", "),
            an.residual_bound
        ),
    )
}

fn criterion_6() -> Verdict {
    let map = StaticMap::quadratic(1.0, 1.0);
    let params = EsParams::new(0.001, 0.1, 1.0);
    let even = solve_even_map_fixed_point(&map, &params, 1024, 1e-13).map_err(|e| e.to_string())?;
    let samples = simulate_basin(
        &map,
        &params,
        &basin_initial_conditions(),
        150,
        Some(&even.solution),
        &IntegratorConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let worst = samples
        .iter()
        .map(|s| s.distance_to_reference.unwrap_or(f64::INFINITY))
        .fold(0.0, f64::max);
    let converged = samples
        .iter()
        .filter(|s| s.distance_to_reference.is_some_and(|d| d <= 1e-5))
        .count();
    // 8ε(6R + 4 + a)/a · (|G| + 4E(R + 1)²) with G = E = 1
    let ppp = 8.0 * 0.001 * (6.0 + 4.0 + 0.1) / 0.1 * (1.0 + 4.0 * 4.0);
    let sup = even.sup_norm;
    check(
        converged == samples.len() && sup <= ppp,
        format!(
            "converged {converged}/{}, worst distance {worst:.3e}, max|x**| {sup:.3e} vs {ppp:.4}",
            samples.len()
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0))
}

fn random_weight(rng: &mut ChaCha8Rng, n: usize) -> NormKind {
    let m = random_matrix(rng, n);
    NormKind::weighted(&m * m.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
}

fn criterion_7() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut failures = Vec::new();
    for kind in 0..4 {
        let mut bad = 0usize;
        for _ in 0..1000 {
            let n = rng.random_range(1..=4usize);
            let norm = match kind {
                0 => NormKind::One,
                1 => NormKind::Two,
                2 => NormKind::Inf,
                _ => random_weight(&mut rng, n),
            };
            let a = random_matrix(&mut rng, n);
            let b = random_matrix(&mut rng, n);
            let gamma = rng.random_range(0.01..20.0);
            let (ma, mb) = (mu(&a, &norm).unwrap(), mu(&b, &norm).unwrap());
            let mut ok = mu(&(&a + &b), &norm).unwrap() <= ma + mb + 1e-10;
            ok &= (mu(&(&a * gamma), &norm).unwrap() - gamma * ma).abs() <= 1e-12 * (1.0 + (gamma * ma).abs());
            ok &= ma <= operator_norm(&a, &norm).unwrap() + 1e-12;
            if kind == 0 || kind == 2 {
                let h = 1e-7;
                let shifted = DMatrix::identity(n, n) + &a * h;
                let quotient = (operator_norm(&shifted, &norm).unwrap() - 1.0) / h;
                ok &= (quotient - ma).abs() <= 1e-5 * (1.0 + ma.abs());
            }
            bad += usize::from(!ok);
        }
        if bad > 0 {
            failures.push(format!("kind {kind}: {bad} failures"));
        }
    }
    let mut integral_bad = 0;
    for i in 0..200 {
        let n = rng.random_range(1..=4usize);
        let norm = match i % 4 {
            0 => NormKind::One,
            1 => NormKind::Two,
            2 => NormKind::Inf,
            _ => random_weight(&mut rng, n),
        };
        let (a, b, c) = (
            random_matrix(&mut rng, n),
            random_matrix(&mut rng, n),
            random_matrix(&mut rng, n),
        );
        let freq = rng.random_range(0.5..4.0);
        let family =
            MatrixFamilySample::uniform(128, |l| &a * (1.0 - l) + &b * (l * l) + &c * (freq * PI * l).sin()).unwrap();
        if !mu_of_integral(&family, &norm).unwrap().holds(1e-8) {
            integral_bad += 1;
        }
    }
    check(
        failures.is_empty() && integral_bad == 0,
        format!(
            "4000 matrices: [{}], integral bound failures {integral_bad}/200",
            failures.join(", ")
        ),
    )
}

fn planar_orbit(ps: &PlanarSystem, z0: f64) -> Result<(f64, esperiod::planar::PlanarOrbit), String> {
    let (outcome, _) = find_planar_periodic(
        ps,
        z0,
        (-2.0, 2.0),
        &ScalarSearch::new(500, 1e-12),
        &IntegratorConfig::adaptive(1e-13, 1e-13),
    )
    .map_err(|e| e.to_string())?;
    match outcome {
        PlanarOutcome::Orbit { orbit, .. } => Ok((orbit.z_solution.anchor[0], *orbit)),
        other => Err(format!("{}: {}", ps.name, other.label())),
    }
}

fn criterion_8() -> Verdict {
    let circle = PlanarSystem::hopf_circle();
    let mut reduction_err = 0.0f64;
    for theta in linspace(0.0, 2.0 * PI, 32) {
        for z in linspace(-1.5, 1.5, 32) {
            reduction_err = reduction_err.max((circle.reduced_rhs(theta, z) - (1.0 - (2.0 * z).exp())).abs());
        }
    }
    let (z_star, orbit) = planar_orbit(&circle, 0.7)?;
    let (_, ellipse) = planar_orbit(&PlanarSystem::hopf(2.0, 1.0).unwrap(), 0.7)?;
    let radius_err = orbit
        .xy_samples
        .states
        .iter()
        .map(|x| (x[0].hypot(x[1]) - 1.0).abs())
        .fold(0.0, f64::max);
    check(
        reduction_err <= 1e-12
            && z_star.abs() <= 1e-8
            && (orbit.period - 2.0 * PI).abs() <= 1e-6
            && radius_err <= 1e-6
            && orbit.closure_residual <= 1e-8
            && (ellipse.period - PI).abs() <= 1e-6
            && ellipse.closure_residual <= 1e-8,
        format!(
            "z* {z_star:.2e}, period error {:.2e}, radius error {radius_err:.2e}, closure {:.2e}; ellipse period error {:.2e}, closure {:.2e}",
            (orbit.period - 2.0 * PI).abs(),
            orbit.closure_residual,
            (ellipse.period - PI).abs(),
            ellipse.closure_residual
        ),
    )
}

/// Van der Pol period from a fixed-step RK4 with crossing refinement.
fn vdp_period_oracle(mu: f64) -> f64 {
    let field = |x: [f64; 2]| [x[1], mu * (1.0 - x[0] * x[0]) * x[1] - x[0]];
    let step = |x: [f64; 2], h: f64| {
        let k1 = field(x);
        let k2 = field([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]]);
        let k3 = field([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]]);
        let k4 = field([x[0] + h * k3[0], x[1] + h * k3[1]]);
        [
            x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };
    let h = 1e-3;
    let mut x = [2.0, 0.0];
    let mut t = 0.0;
    let mut crossings = Vec::new();
    while crossings.len() < 25 {
        let next = step(x, h);
        if x[1] > 0.0 && next[1] <= 0.0 && x[0] > 0.0 {
            let (mut lo, mut hi) = (0.0, h);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if step(x, mid)[1] > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            crossings.push(t + 0.5 * (lo + hi));
        }
        x = next;
        t += h;
    }
    let n = crossings.len();
    crossings[n - 1] - crossings[n - 2]
}

fn criterion_9() -> Verdict {
    let oracle = vdp_period_oracle(1.0);
    let params = CascadeParams {
        periods: 30,
        ..CascadeParams::default()
    };
    let (report, _) = run_cascade(&params, &IntegratorConfig::default()).map_err(|e| e.to_string())?;
    let settled = report.periods_to_tolerance;
    check(
        (report.period - oracle).abs() <= 1e-3 && settled.is_some_and(|k| k <= 30),
        format!(
            "period {:.7} vs oracle {oracle:.7}, y residual below 1e-4 from window {} of {}",
            report.period,
            settled.map_or("none".to_string(), |k| k.to_string()),
            report.y_period_residuals.len()
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let cfg = IntegratorConfig::default();
    let system = |rng: &mut ChaCha8Rng| {
        let (a, b, c, d) = (
            rng.random_range(0.1..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(0.0..0.5),
            rng.random_range(-0.5..0.5),
        );
        TimePeriodicSystem::scalar(
            2.0 * PI,
            move |t: f64, x: f64| -a * x - c * x * x * x + b * t.sin() + d * x * t.cos(),
            move |t: f64, x: f64| -a - 3.0 * c * x * x + d * t.cos(),
        )
        .unwrap()
    };
    let end = |sys: &TimePeriodicSystem, t0: f64, x0: f64, t1: f64, cfg: &IntegratorConfig| {
        flow(sys, t0, &[x0], t1, cfg).unwrap().endpoint()[0]
    };
    let (mut semigroup, mut shift, mut order, mut sens) = (0, 0, 0, 0);
    let mut worst_rel = 0.0f64;
    for _ in 0..100 {
        let sys = system(&mut rng);
        let x0 = rng.random_range(-3.0..3.0);
        let t0 = rng.random_range(0.0..5.0);
        let len = rng.random_range(0.1..8.0);
        let tau = t0 + rng.random_range(0.0..1.0) * len;
        let direct = end(&sys, t0, x0, t0 + len, &cfg);
        let split = end(&sys, tau, end(&sys, t0, x0, tau, &cfg), t0 + len, &cfg);
        semigroup += usize::from((direct - split).abs() <= 1e-8);

        let k = rng.random_range(1..=3) as f64;
        let shifted = end(&sys, t0 + 2.0 * PI * k, x0, t0 + len + 2.0 * PI * k, &cfg);
        shift += usize::from((direct - shifted).abs() <= 1e-8);

        let gap = rng.random_range(1e-6..2.0);
        order += usize::from(end(&sys, t0, x0, t0 + len, &cfg) < end(&sys, t0, x0 + gap, t0 + len, &cfg));

        let tight = IntegratorConfig::adaptive(1e-12, 1e-12);
        let s = flow_with_sensitivity(&sys, t0, x0, t0 + len, &tight).unwrap();
        let delta = 1e-5;
        let rk4 = IntegratorConfig::fixed_rk4(1e-3);
        let fd =
            (end(&sys, t0, x0 + delta, t0 + len, &rk4) - end(&sys, t0, x0 - delta, t0 + len, &rk4)) / (2.0 * delta);
        sens += usize::from((fd - s.dphi_dx0).abs() <= 1e-4 * s.dphi_dx0.abs());
        worst_rel = worst_rel.max((fd - s.dphi_dx0).abs() / s.dphi_dx0.abs());
    }
    check(
        semigroup == 100 && shift == 100 && order == 100 && sens == 100,
        format!("semigroup {semigroup}/100, period shift {shift}/100, order {order}/100, sensitivity {sens}/100 (worst relative error {worst_rel:.2e})"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("linear oracle", criterion_1),
        ("trichotomy and envelope", criterion_2),
        ("contraction certificate", criterion_3),
        ("cross-method uniqueness", criterion_4),
        ("asymptotic bound", criterion_5),
        ("basin attraction", criterion_6),
        ("logarithmic norms", criterion_7),
        ("planar pipeline", criterion_8),
        ("cascade demo", criterion_9),
        ("flow correctness", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let verdict = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match verdict {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
