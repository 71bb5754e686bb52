//! Van der Pol oscillator driving a scalar equation:
//! `ẋ₁ = x₂`, `ẋ₂ = μ(1 − x₁²)x₂ − x₁`, `ẏ = −x₂² y + x₂³`.
//!
//! The limit cycle of the `x` subsystem makes the `y` equation a periodic
//! scalar equation, so bounded `y` converges to a periodic signal.

use std::io::{self, Write};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finder::{find_periodic_scalar, FinderError, ReturnMap, ScalarOutcome, ScalarSearch};
use crate::flow::{flow, fmt_sig17, FlowError, IntegratorConfig, TimePeriodicSystem, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CascadeError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Finder(#[from] FinderError),
    #[error("invalid cascade parameters: {0}")]
    InvalidParams(String),
    #[error("no limit cycle detected: {0}")]
    NoCycle(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeParams {
    pub mu: f64,
    pub x0: [f64; 2],
    pub y0: f64,
    /// Section crossings to simulate.
    pub periods: usize,
    /// Tolerance for the period-to-period sup difference of `y`.
    pub y_tol: f64,
}

impl Default for CascadeParams {
    fn default() -> Self {
        Self {
            mu: 1.0,
            x0: [2.0, 0.0],
            y0: 1.0,
            periods: 40,
            y_tol: 1e-4,
        }
    }
}

pub fn cascade_system(mu: f64) -> Result<TimePeriodicSystem, CascadeError> {
    Ok(TimePeriodicSystem::with_fd_jacobian(3, 1.0, move |_, s, out| {
        let (x1, x2, y) = (s[0], s[1], s[2]);
        out[0] = x2;
        out[1] = mu * (1.0 - x1 * x1) * x2 - x1;
        out[2] = -x2 * x2 * y + x2 * x2 * x2;
    })?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeReport {
    pub params: CascadeParams,
    /// Final section-to-section time.
    pub period: f64,
    /// Times of downward crossings of `x₂ = 0` with `x₁ > 0`.
    pub crossing_times: Vec<f64>,
    /// `x₁` at those crossings (the section return map iterates).
    pub section_x1: Vec<f64>,
    /// `|x₁_k − x₁_{k−1}|` at the last crossing.
    pub section_gap: f64,
    /// `sup_{s∈[0,T]} |y(c_k + s + T) − y(c_k + s)|` for each full window.
    pub y_period_residuals: Vec<f64>,
    /// First window index whose residual is at most `y_tol`.
    pub periods_to_tolerance: Option<usize>,
    /// Periodic solution of the driven `y` equation, from monotone iteration.
    pub y_periodic_anchor: Option<f64>,
    /// Sup distance between the simulated `y` and that periodic solution over
    /// the last window.
    pub y_distance_to_periodic: Option<f64>,
}

impl CascadeReport {
    pub fn y_residual_final(&self) -> f64 {
        self.y_period_residuals.last().copied().unwrap_or(f64::INFINITY)
    }
}

const CHUNK: f64 = 10.0;
const WINDOW_SAMPLES: usize = 256;

/// Simulates the cascade until `periods + 2` section crossings are recorded
/// and evaluates the period and the convergence of `y`.
pub fn run_cascade(
    params: &CascadeParams,
    cfg: &IntegratorConfig,
) -> Result<(CascadeReport, Trajectory), CascadeError> {
    if !(params.mu > 0.0) || params.periods < 2 || !(params.y_tol > 0.0) {
        return Err(CascadeError::InvalidParams(
            "mu > 0, periods ≥ 2 and y_tol > 0 are required".into(),
        ));
    }
    if params.x0 == [0.0, 0.0] {
        return Err(CascadeError::InvalidParams("x0 = 0 is the unstable equilibrium".into()));
    }
    let sys = cascade_system(params.mu)?;
    let target = params.periods + 2;
    let horizon = CHUNK * (target as f64 + 10.0) * (1.0 + params.mu);

    let mut traj = flow(&sys, 0.0, &[params.x0[0], params.x0[1], params.y0], CHUNK, cfg)?;
    let mut crossings = section_crossings(&traj, 0);
    while crossings.len() < target {
        if traj.escaped {
            return Err(CascadeError::NoCycle("trajectory escaped".into()));
        }
        let t = traj.t_end();
        if t > horizon {
            return Err(CascadeError::NoCycle(format!(
                "only {} section crossings by t = {t}",
                crossings.len()
            )));
        }
        let next = flow(&sys, t, traj.endpoint(), t + CHUNK, cfg)?;
        let from = traj.len() - 1;
        append(&mut traj, next);
        crossings.extend(section_crossings(&traj, from));
    }

    let crossing_times: Vec<f64> = crossings.iter().map(|c| c.0).collect();
    let section_x1: Vec<f64> = crossings.iter().map(|c| c.1).collect();
    let n = crossing_times.len();
    let period = crossing_times[n - 1] - crossing_times[n - 2];
    let section_gap = (section_x1[n - 1] - section_x1[n - 2]).abs();

    let y_at = |t: f64| traj.interpolate(t).expect("inside the simulated span")[2];
    let y_period_residuals: Vec<f64> = crossing_times[..n - 2]
        .iter()
        .map(|&c| {
            (0..=WINDOW_SAMPLES)
                .map(|i| {
                    let t = c + period * i as f64 / WINDOW_SAMPLES as f64;
                    (y_at(t + period) - y_at(t)).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect();
    let periods_to_tolerance = y_period_residuals.iter().position(|r| *r <= params.y_tol);

    // The y equation driven by the last simulated cycle.
    let c_last = crossing_times[n - 2];
    let x2_cycle = {
        let samples: Vec<f64> = (0..FOURIER_SAMPLES)
            .map(|i| {
                let s = period * i as f64 / FOURIER_SAMPLES as f64;
                traj.interpolate(c_last + s).expect("inside span")[1]
            })
            .collect();
        TrigInterpolant::new(&samples, period)
    };
    let x2_cycle = move |s: f64| x2_cycle.eval(s);
    let (f_cycle, d_cycle) = (x2_cycle.clone(), x2_cycle);
    let driven = TimePeriodicSystem::scalar(
        period,
        move |s, y| {
            let x2 = f_cycle(s);
            -x2 * x2 * y + x2 * x2 * x2
        },
        move |s, _| -d_cycle(s).powi(2),
    )?;
    let rm = ReturnMap::new(driven, 0.0, cfg.clone());
    let y_start = y_at(c_last);
    let (outcome, _) = find_periodic_scalar(&rm, y_start, &ScalarSearch::new(200, 1e-10))?;
    let (y_periodic_anchor, y_distance_to_periodic) = match outcome {
        ScalarOutcome::Periodic(sol) => {
            let dist = (0..=WINDOW_SAMPLES)
                .map(|i| {
                    let s = period * i as f64 / WINDOW_SAMPLES as f64;
                    (y_at(c_last + s) - sol.value_at(s)[0]).abs()
                })
                .fold(0.0, f64::max);
            (Some(sol.anchor[0]), Some(dist))
        }
        _ => (None, None),
    };

    Ok((
        CascadeReport {
            params: *params,
            period,
            crossing_times,
            section_x1,
            section_gap,
            y_period_residuals,
            periods_to_tolerance,
            y_periodic_anchor,
            y_distance_to_periodic,
        },
        traj,
    ))
}

const FOURIER_SAMPLES: usize = 256;

/// Trigonometric interpolant of equally spaced samples over one period.
#[derive(Clone)]
struct TrigInterpolant {
    omega: f64,
    a0: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl TrigInterpolant {
    fn new(samples: &[f64], period: f64) -> Self {
        let n = samples.len();
        let mut spectrum: Vec<Complex<f64>> = samples.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut spectrum);
        let scale = 2.0 / n as f64;
        let harmonics = &spectrum[1..n / 2];
        Self {
            omega: 2.0 * std::f64::consts::PI / period,
            a0: spectrum[0].re / n as f64,
            a: harmonics.iter().map(|c| scale * c.re).collect(),
            b: harmonics.iter().map(|c| -scale * c.im).collect(),
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let (s1, c1) = (self.omega * s).sin_cos();
        let (mut sk, mut ck) = (s1, c1);
        let mut acc = self.a0;
        for (a, b) in self.a.iter().zip(&self.b) {
            acc += a * ck + b * sk;
            (sk, ck) = (sk * c1 + ck * s1, ck * c1 - sk * s1);
        }
        acc
    }
}

fn append(traj: &mut Trajectory, next: Trajectory) {
    traj.times.extend_from_slice(&next.times[1..]);
    traj.states.extend(next.states.into_iter().skip(1));
    traj.derivatives.extend(next.derivatives.into_iter().skip(1));
    traj.escaped = next.escaped;
    traj.escape_time = next.escape_time;
}

/// Downward crossings of `x₂ = 0` (so `x₁ > 0`) between stored nodes
/// `from..`, located by bisection on the Hermite interpolant.
fn section_crossings(traj: &Trajectory, from: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in from..traj.len().saturating_sub(1) {
        let (a, b) = (traj.states[i][1], traj.states[i + 1][1]);
        if !(a > 0.0 && b <= 0.0) {
            continue;
        }
        let (mut lo, mut hi) = (traj.times[i], traj.times[i + 1]);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if traj.interpolate(mid).expect("inside span")[1] > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        out.push((t, traj.interpolate(t).expect("inside span")[0]));
    }
    out
}

/// CSV `t,x1,x2,y` sampled uniformly, `samples` rows per detected period.
pub fn write_cascade_csv<W: Write>(traj: &Trajectory, period: f64, samples: usize, mut w: W) -> io::Result<()> {
    writeln!(w, "t,x1,x2,y")?;
    let t_end = traj.t_end();
    let step = period / samples.max(1) as f64;
    let n = (t_end / step).floor() as usize;
    for i in 0..=n {
        let t = (i as f64 * step).min(t_end);
        let s = traj.interpolate(t).expect("inside span");
        writeln!(
            w,
            "{},{},{},{}",
            fmt_sig17(t),
            fmt_sig17(s[0]),
            fmt_sig17(s[1]),
            fmt_sig17(s[2])
        )?;
    }
    Ok(())
}
