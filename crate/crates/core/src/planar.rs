//! Planar systems `ẋ₁ = f(x)x₁ − ω(x)x₂`, `ẋ₂ = β²ω(x)x₁ + f(x)x₂` and their
//! reduction to a scalar equation in the angle of elliptic coordinates
//! `x₁ = e^z cos θ`, `x₂ = β e^z sin θ`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finder::{
    find_periodic_scalar, FinderError, MonotoneIterationTrace, PeriodicSolution, ReturnMap, ScalarOutcome, ScalarSearch,
};
use crate::flow::{flow, fmt_sig17, FlowError, IntegratorConfig, TimePeriodicSystem, Trajectory};
use crate::quadrature::adaptive_simpson;

pub type PlaneFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type PlaneGrad = Arc<dyn Fn(f64, f64) -> (f64, f64) + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanarError {
    #[error("invalid planar system: {0}")]
    InvalidSystem(String),
    #[error("reduction invalid: ω({x1}, {x2}) = {value} does not have the declared sign")]
    OmegaSign { x1: f64, x2: f64, value: f64 },
    #[error("lift failed: {0}")]
    LiftFailure(String),
    #[error("z0 = {z0} lies outside the bounds [{lo}, {hi}]")]
    OutOfBounds { z0: f64, lo: f64, hi: f64 },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Finder(#[from] FinderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OmegaSign {
    Positive,
    Negative,
}

impl OmegaSign {
    fn factor(self) -> f64 {
        match self {
            Self::Positive => 1.0,
            Self::Negative => -1.0,
        }
    }
}

#[derive(Clone)]
pub struct PlanarSystem {
    pub name: String,
    pub f: PlaneFn,
    pub omega: PlaneFn,
    pub beta: f64,
    pub omega_sign: OmegaSign,
    pub f_grad: Option<PlaneGrad>,
    pub omega_grad: Option<PlaneGrad>,
}

impl fmt::Debug for PlanarSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlanarSystem")
            .field("name", &self.name)
            .field("beta", &self.beta)
            .field("omega_sign", &self.omega_sign)
            .finish_non_exhaustive()
    }
}

impl PlanarSystem {
    pub fn new<F, W>(
        name: impl Into<String>,
        f: F,
        omega: W,
        beta: f64,
        omega_sign: OmegaSign,
    ) -> Result<Self, PlanarError>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        W: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(PlanarError::InvalidSystem(format!("beta must be positive, got {beta}")));
        }
        Ok(Self {
            name: name.into(),
            f: Arc::new(f),
            omega: Arc::new(omega),
            beta,
            omega_sign,
            f_grad: None,
            omega_grad: None,
        })
    }

    pub fn with_partials<G, H>(mut self, f_grad: G, omega_grad: H) -> Self
    where
        G: Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
        H: Fn(f64, f64) -> (f64, f64) + Send + Sync + 'static,
    {
        self.f_grad = Some(Arc::new(f_grad));
        self.omega_grad = Some(Arc::new(omega_grad));
        self
    }

    /// `f = 1 − x₁² − x₂²/β²`, `ω ≡ omega`: the ellipse `x₁² + x₂²/β² = 1`
    /// is a periodic orbit of period `2π/(β|ω|)`.
    pub fn hopf(beta: f64, omega: f64) -> Result<Self, PlanarError> {
        let sign = if omega > 0.0 {
            OmegaSign::Positive
        } else {
            OmegaSign::Negative
        };
        let b2 = beta * beta;
        Ok(Self::new(
            format!("hopf(beta={beta}, omega={omega})"),
            move |x1, x2| 1.0 - x1 * x1 - x2 * x2 / b2,
            move |_, _| omega,
            beta,
            sign,
        )?
        .with_partials(move |x1, x2| (-2.0 * x1, -2.0 * x2 / b2), |_, _| (0.0, 0.0)))
    }

    /// Unit-circle instance: `f = 1 − |x|²`, `ω ≡ 1`, `β = 1`.
    pub fn hopf_circle() -> Self {
        let mut s = Self::hopf(1.0, 1.0).expect("valid constants");
        s.name = "hopf_circle".into();
        s
    }

    /// `f ≡ −1`, `ω ≡ 1`: every orbit spirals into the origin.
    pub fn spiral_in() -> Self {
        Self::new("spiral_in", |_, _| -1.0, |_, _| 1.0, 1.0, OmegaSign::Positive)
            .expect("valid constants")
            .with_partials(|_, _| (0.0, 0.0), |_, _| (0.0, 0.0))
    }

    pub fn vector_field(&self, x1: f64, x2: f64) -> [f64; 2] {
        let f = (self.f)(x1, x2);
        let w = (self.omega)(x1, x2);
        [f * x1 - w * x2, self.beta * self.beta * w * x1 + f * x2]
    }

    /// The planar system as an autonomous (trivially periodic) system.
    pub fn as_system(&self) -> TimePeriodicSystem {
        let me = self.clone();
        TimePeriodicSystem::with_fd_jacobian(2, 2.0 * PI, move |_, x, out| {
            let v = me.vector_field(x[0], x[1]);
            out.copy_from_slice(&v);
        })
        .expect("dimension 2 and period 2π are valid")
    }

    pub fn from_polar(&self, z: f64, theta: f64) -> (f64, f64) {
        let r = z.exp();
        (r * theta.cos(), self.beta * r * theta.sin())
    }

    /// `(r, θ)` with `θ ∈ (−π, π]`.
    pub fn to_elliptic(&self, x1: f64, x2: f64) -> (f64, f64) {
        let y = x2 / self.beta;
        (x1.hypot(y), y.atan2(x1))
    }

    /// `F(θ, z) = f(p)/(β ω(p))`, `p = (e^z cos θ, β e^z sin θ)`.
    pub fn reduced_rhs(&self, theta: f64, z: f64) -> f64 {
        let (x1, x2) = self.from_polar(z, theta);
        (self.f)(x1, x2) / (self.beta * (self.omega)(x1, x2))
    }

    fn reduced_dz(&self, theta: f64, z: f64) -> f64 {
        match (&self.f_grad, &self.omega_grad) {
            (Some(fg), Some(wg)) => {
                // ∂p/∂z = p
                let (x1, x2) = self.from_polar(z, theta);
                let (fx, fy) = fg(x1, x2);
                let (wx, wy) = wg(x1, x2);
                let f = (self.f)(x1, x2);
                let w = (self.omega)(x1, x2);
                let df = fx * x1 + fy * x2;
                let dw = wx * x1 + wy * x2;
                (df * w - f * dw) / (self.beta * w * w)
            }
            _ => {
                let h = 1e-6 * (1.0 + z.abs());
                (self.reduced_rhs(theta, z + h) - self.reduced_rhs(theta, z - h)) / (2.0 * h)
            }
        }
    }

    /// Checks the sign of `ω` on the annulus `e^{lo} ≤ r ≤ e^{hi}` (128 × 128).
    pub fn scan_omega(&self, z_bounds: (f64, f64)) -> Result<(), PlanarError> {
        const N: usize = 128;
        let (lo, hi) = z_bounds;
        let s = self.omega_sign.factor();
        for i in 0..N {
            let z = lo + (hi - lo) * i as f64 / (N - 1) as f64;
            for j in 0..N {
                let theta = 2.0 * PI * j as f64 / N as f64;
                let (x1, x2) = self.from_polar(z, theta);
                let value = (self.omega)(x1, x2);
                if !(s * value > 0.0) {
                    return Err(PlanarError::OmegaSign { x1, x2, value });
                }
            }
        }
        Ok(())
    }
}

/// Scalar `2π`-periodic equation `dz/dθ = F(θ, z)`.
pub fn reduce(ps: &PlanarSystem, z_bounds: (f64, f64)) -> Result<TimePeriodicSystem, PlanarError> {
    if !(z_bounds.0 <= z_bounds.1) {
        return Err(PlanarError::InvalidSystem(format!("bad z bounds {z_bounds:?}")));
    }
    ps.scan_omega(z_bounds)?;
    let (a, b) = (ps.clone(), ps.clone());
    Ok(TimePeriodicSystem::scalar(
        2.0 * PI,
        move |theta, z| a.reduced_rhs(theta, z),
        move |theta, z| b.reduced_dz(theta, z),
    )?)
}

/// Planar periodic orbit reconstructed from a periodic solution of the
/// reduced equation.
#[derive(Debug, Clone)]
pub struct PlanarOrbit {
    pub z_solution: PeriodicSolution,
    /// Clock `θ(t)` over one period.
    pub theta_of_t: Trajectory,
    pub period: f64,
    /// `(x₁, x₂)` at the clock nodes.
    pub xy_samples: Trajectory,
    /// `|θ(T)| − 2π`.
    pub theta_defect: f64,
    /// `|x(T) − x(0)|` along the lifted curve.
    pub closure_residual: f64,
    /// Sup distance between the lifted curve and a direct integration of the
    /// planar system from `x(0)`.
    pub ode_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRecord {
    pub period: f64,
    pub z_anchor: f64,
    pub z_residual: f64,
    pub theta_defect: f64,
    pub closure_residual: f64,
    pub ode_residual: f64,
    pub x0: [f64; 2],
}

impl PlanarOrbit {
    /// CSV `t,theta,z,x1,x2` at the clock nodes.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,theta,z,x1,x2")?;
        for (i, &t) in self.theta_of_t.times.iter().enumerate() {
            let theta = self.theta_of_t.states[i][0];
            let z = self.z_solution.value_at(theta)[0];
            let xy = &self.xy_samples.states[i];
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_sig17(t),
                fmt_sig17(theta),
                fmt_sig17(z),
                fmt_sig17(xy[0]),
                fmt_sig17(xy[1])
            )?;
        }
        Ok(())
    }

    pub fn record(&self) -> OrbitRecord {
        let x0 = &self.xy_samples.states[0];
        OrbitRecord {
            period: self.period,
            z_anchor: self.z_solution.anchor[0],
            z_residual: self.z_solution.residual,
            theta_defect: self.theta_defect,
            closure_residual: self.closure_residual,
            ode_residual: self.ode_residual,
            x0: [x0[0], x0[1]],
        }
    }
}

const CLOCK_FLOOR: f64 = 1e-12;

/// Reconstructs the planar orbit: the period is `∫₀^{2π} dθ/(β|ω|)` along the
/// solution, the clock `θ̇ = βω(x(θ))` is integrated over `[0, T]` from
/// `θ(0) = 0`, and the lifted curve is compared with a direct integration.
pub fn lift(ps: &PlanarSystem, z_sol: &PeriodicSolution, cfg: &IntegratorConfig) -> Result<PlanarOrbit, PlanarError> {
    let zs = z_sol.clone();
    let point = move |theta: f64| -> (f64, f64) {
        let z = zs.value_at(theta)[0];
        let r = z.exp();
        (r * theta.cos(), r * theta.sin())
    };
    let beta = ps.beta;
    let clock_speed = {
        let ps = ps.clone();
        let point = point.clone();
        move |theta: f64| {
            let (c, s) = point(theta);
            beta * (ps.omega)(c, beta * s)
        }
    };
    let sign = ps.omega_sign.factor();
    let mut min_speed = f64::INFINITY;
    for i in 0..=1024 {
        let v = sign * clock_speed(2.0 * PI * i as f64 / 1024.0);
        min_speed = min_speed.min(v);
    }
    if !(min_speed > CLOCK_FLOOR) {
        return Err(PlanarError::LiftFailure(format!(
            "clock speed {min_speed:e} along the orbit is below the floor"
        )));
    }
    let period = adaptive_simpson(|th| 1.0 / (sign * clock_speed(sign * th)), 0.0, 2.0 * PI, 1e-13);

    let clock_sys = {
        let speed = clock_speed.clone();
        TimePeriodicSystem::scalar(period, move |_, th| speed(th), |_, _| 0.0)?
    };
    let theta_of_t = flow(&clock_sys, 0.0, &[0.0], period, cfg)?;
    if theta_of_t.escaped {
        return Err(PlanarError::LiftFailure("clock integration escaped".into()));
    }
    let monotone = theta_of_t.states.windows(2).all(|w| sign * (w[1][0] - w[0][0]) > 0.0);
    if !monotone {
        return Err(PlanarError::LiftFailure("θ(t) is not strictly monotone".into()));
    }
    let theta_defect = (theta_of_t.endpoint()[0].abs() - 2.0 * PI).abs();

    let states: Vec<Vec<f64>> = theta_of_t
        .states
        .iter()
        .map(|th| {
            let (c, s) = point(th[0]);
            vec![c, beta * s]
        })
        .collect();
    let derivatives = states.iter().map(|x| ps.vector_field(x[0], x[1]).to_vec()).collect();
    let xy_samples = Trajectory {
        t0: 0.0,
        times: theta_of_t.times.clone(),
        states,
        derivatives,
        escaped: false,
        escape_time: None,
    };
    let first = &xy_samples.states[0];
    let last = xy_samples.endpoint();
    let closure_residual = (last[0] - first[0]).abs().max((last[1] - first[1]).abs());

    let direct = flow(&ps.as_system(), 0.0, first, period, cfg)?;
    if direct.escaped {
        return Err(PlanarError::LiftFailure("direct planar integration escaped".into()));
    }
    let ode_residual = xy_samples
        .times
        .iter()
        .zip(&xy_samples.states)
        .map(|(&t, x)| {
            let y = direct.interpolate(t).expect("same span");
            (y[0] - x[0]).abs().max((y[1] - x[1]).abs())
        })
        .fold(0.0, f64::max);

    Ok(PlanarOrbit {
        z_solution: z_sol.clone(),
        theta_of_t,
        period,
        xy_samples,
        theta_defect,
        closure_residual,
        ode_residual,
    })
}

/// Outcome of the planar pipeline.
#[derive(Debug, Clone)]
pub enum PlanarOutcome {
    Orbit {
        orbit: Box<PlanarOrbit>,
        /// `max_θ |F(θ, z*)|` with `z*` the anchor.
        max_abs_rhs: f64,
        /// The reduced solution is an equilibrium (a trivial orbit in `z`).
        equilibrium: bool,
    },
    Unbounded {
        last: f64,
        iterations: usize,
    },
    Inconclusive {
        last: f64,
        gap: f64,
        iterations: usize,
    },
}

impl PlanarOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Orbit { .. } => "periodic",
            Self::Unbounded { .. } => "unbounded",
            Self::Inconclusive { .. } => "inconclusive",
        }
    }
}

pub const EQUILIBRIUM_THRESHOLD: f64 = 1e-10;

/// Monotone iteration of the reduced return map from `z0`, lifting on success.
pub fn find_planar_periodic(
    ps: &PlanarSystem,
    z0: f64,
    bounds: (f64, f64),
    search: &ScalarSearch,
    cfg: &IntegratorConfig,
) -> Result<(PlanarOutcome, MonotoneIterationTrace), PlanarError> {
    let (lo, hi) = bounds;
    if !(lo <= z0 && z0 <= hi) {
        return Err(PlanarError::OutOfBounds { z0, lo, hi });
    }
    let reduced = reduce(ps, bounds)?;
    let rm = ReturnMap::new(reduced, 0.0, cfg.clone());
    let search = ScalarSearch {
        bounds: Some(bounds),
        ..*search
    };
    let (outcome, trace) = find_periodic_scalar(&rm, z0, &search)?;
    let out = match outcome {
        ScalarOutcome::Periodic(sol) => {
            let z_star = sol.anchor[0];
            let max_abs_rhs = (0..256)
                .map(|i| ps.reduced_rhs(2.0 * PI * i as f64 / 256.0, z_star).abs())
                .fold(0.0, f64::max);
            let orbit = lift(ps, &sol, cfg)?;
            PlanarOutcome::Orbit {
                orbit: Box::new(orbit),
                max_abs_rhs,
                equilibrium: max_abs_rhs < EQUILIBRIUM_THRESHOLD,
            }
        }
        ScalarOutcome::Unbounded { last, iterations, .. } => PlanarOutcome::Unbounded { last, iterations },
        ScalarOutcome::Inconclusive { last, gap, iterations } => PlanarOutcome::Inconclusive { last, gap, iterations },
    };
    Ok((out, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> IntegratorConfig {
        IntegratorConfig::adaptive(1e-12, 1e-12)
    }

    #[test]
    fn circle_reduces_to_logistic_form() {
        let ps = PlanarSystem::hopf_circle();
        let sys = reduce(&ps, (-3.0, 2.0)).unwrap();
        for (th, z) in [(0.0, 0.3), (1.1, -0.7), (4.0, 1.2)] {
            assert!((sys.rhs(th, &[z])[0] - (1.0 - (2.0 * z).exp())).abs() < 1e-14);
            assert!((sys.jacobian(th, &[z])[(0, 0)] + 2.0 * (2.0 * z).exp()).abs() < 1e-13);
            assert!((sys.rhs(th + 2.0 * PI, &[z])[0] - sys.rhs(th, &[z])[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn finite_difference_partials_agree() {
        let with = PlanarSystem::hopf(2.0, 1.5).unwrap();
        let mut without = with.clone();
        without.f_grad = None;
        without.omega_grad = None;
        for (th, z) in [(0.4, 0.2), (2.5, -0.3)] {
            assert!((with.reduced_dz(th, z) - without.reduced_dz(th, z)).abs() < 1e-7);
        }
    }

    #[test]
    fn vanishing_omega_is_rejected() {
        let ps = PlanarSystem::new("bad", |_, _| 0.0, |x1, _| x1, 1.0, OmegaSign::Positive).unwrap();
        assert!(matches!(reduce(&ps, (-1.0, 1.0)), Err(PlanarError::OmegaSign { .. })));
        assert!(PlanarSystem::new("b", |_, _| 0.0, |_, _| 1.0, 0.0, OmegaSign::Positive).is_err());
    }

    #[test]
    fn coordinate_round_trip() {
        let ps = PlanarSystem::hopf(2.0, 1.0).unwrap();
        for (r, th) in [(0.5f64, 0.3), (2.0, -2.9), (1e-3, 3.0), (7.0, PI)] {
            let (x1, x2) = ps.from_polar(r.ln(), th);
            let (r2, th2) = ps.to_elliptic(x1, x2);
            assert!((r2 - r).abs() <= 1e-12 * r.max(1.0));
            assert!((th2 - th).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_from_outside_lifts_to_unit_circle() {
        let ps = PlanarSystem::hopf_circle();
        let (out, trace) =
            find_planar_periodic(&ps, 0.7, (-5.0, 5.0), &ScalarSearch::new(50, 1e-12), &tight()).unwrap();
        assert_eq!(trace.direction, crate::finder::Direction::Decreasing);
        match out {
            PlanarOutcome::Orbit { orbit, equilibrium, .. } => {
                assert!(equilibrium);
                assert!(orbit.z_solution.anchor[0].abs() < 1e-8);
                assert!((orbit.period - 2.0 * PI).abs() < 1e-6);
                assert!(orbit.closure_residual <= 1e-8);
                assert!(orbit.ode_residual <= 1e-6);
                for x in &orbit.xy_samples.states {
                    assert!((x[0].hypot(x[1]) - 1.0).abs() < 1e-8);
                }
            }
            other => panic!("{}", other.label()),
        }
    }

    #[test]
    fn faster_clock_halves_the_period() {
        let ps = PlanarSystem::hopf(1.0, 2.0).unwrap();
        let (out, _) = find_planar_periodic(&ps, 0.0, (-2.0, 2.0), &ScalarSearch::new(5, 1e-12), &tight()).unwrap();
        let PlanarOutcome::Orbit { orbit, .. } = out else {
            panic!("no orbit")
        };
        assert_eq!(orbit.z_solution.anchor[0], 0.0);
        assert!((orbit.period - PI).abs() < 1e-10);
    }

    #[test]
    fn negative_clock_runs_backwards() {
        let ps = PlanarSystem::hopf(1.0, -1.0).unwrap();
        // In θ the circle now repels: dz/dθ = e^{2z} − 1.
        let (away, _) = find_planar_periodic(&ps, 0.2, (-2.0, 2.0), &ScalarSearch::new(50, 1e-12), &tight()).unwrap();
        assert_eq!(away.label(), "unbounded");
        let (out, _) = find_planar_periodic(&ps, 0.0, (-2.0, 2.0), &ScalarSearch::new(50, 1e-12), &tight()).unwrap();
        let PlanarOutcome::Orbit { orbit, .. } = out else {
            panic!("no orbit")
        };
        assert!((orbit.period - 2.0 * PI).abs() < 1e-6);
        assert!((orbit.theta_of_t.endpoint()[0] + 2.0 * PI).abs() < 1e-6);
    }

    #[test]
    fn spiral_is_unbounded() {
        let (out, trace) = find_planar_periodic(
            &PlanarSystem::spiral_in(),
            0.0,
            (-10.0, 2.0),
            &ScalarSearch::new(50, 1e-10),
            &tight(),
        )
        .unwrap();
        assert_eq!(out.label(), "unbounded");
        assert_eq!(trace.direction, crate::finder::Direction::Unbounded);
        assert!(matches!(
            find_planar_periodic(
                &PlanarSystem::spiral_in(),
                3.0,
                (-1.0, 1.0),
                &ScalarSearch::new(5, 1e-9),
                &tight()
            ),
            Err(PlanarError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn orbit_csv_header() {
        let ps = PlanarSystem::hopf_circle();
        let (out, _) = find_planar_periodic(&ps, 0.0, (-1.0, 1.0), &ScalarSearch::new(3, 1e-12), &tight()).unwrap();
        let PlanarOutcome::Orbit { orbit, .. } = out else {
            panic!("no orbit")
        };
        let mut buf = Vec::new();
        orbit.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,theta,z,x1,x2\n"));
        assert_eq!(text.lines().count(), orbit.theta_of_t.len() + 1);
    }
}
