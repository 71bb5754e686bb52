//! Time-periodic ODE systems and their flow map `φ(t, t0, x0)`.
//!
//! Integration uses either a fixed-step classical RK4 or an adaptive
//! Dormand–Prince 5(4) pair. Every accepted node is stored together with the
//! vector field at that node so that [`Trajectory::interpolate`] can provide
//! cubic Hermite dense output between nodes.
//!
//! Blow-up is not an error: when the state leaves the max-norm ball of radius
//! `blowup_threshold` the trajectory is truncated at the last state inside the
//! ball and flagged `escaped`.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Right-hand side `f(t, x)` written into the output slice.
pub type RhsFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// Jacobian `∂f/∂x(t, x)`.
pub type JacobianFn = dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("vector field is not finite at t = {t}, x = {x:?}")]
    NonFinite { t: f64, x: Vec<f64> },
    #[error("state has length {got}, system dimension is {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid time interval: t1 = {t1} < t0 = {t0}")]
    Interval { t0: f64, t1: f64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("maximum number of steps ({0}) exceeded")]
    MaxSteps(usize),
    #[error("solution escaped the blow-up threshold at t = {time}")]
    Escaped { time: f64 },
}

/// A `T`-periodic system `ẋ = f(t, x)` with its Jacobian.
#[derive(Clone)]
pub struct TimePeriodicSystem {
    dim: usize,
    period: f64,
    rhs: Arc<RhsFn>,
    jacobian: Arc<JacobianFn>,
}

impl fmt::Debug for TimePeriodicSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TimePeriodicSystem")
            .field("dim", &self.dim)
            .field("period", &self.period)
            .finish_non_exhaustive()
    }
}

impl TimePeriodicSystem {
    pub fn new<R, J>(dim: usize, period: f64, rhs: R, jacobian: J) -> Result<Self, FlowError>
    where
        R: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        J: Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(FlowError::InvalidSystem("dimension must be positive".into()));
        }
        if !(period > 0.0 && period.is_finite()) {
            return Err(FlowError::InvalidSystem(format!(
                "period must be positive and finite, got {period}"
            )));
        }
        Ok(Self {
            dim,
            period,
            rhs: Arc::new(rhs),
            jacobian: Arc::new(jacobian),
        })
    }

    /// Scalar system from `f(t, x)` and `∂f/∂x(t, x)`.
    pub fn scalar<F, D>(period: f64, f: F, dfdx: D) -> Result<Self, FlowError>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            1,
            period,
            move |t, x, out| out[0] = f(t, x[0]),
            move |t, x| DMatrix::from_element(1, 1, dfdx(t, x[0])),
        )
    }

    /// System whose Jacobian is taken by central finite differences of `rhs`.
    pub fn with_fd_jacobian<R>(dim: usize, period: f64, rhs: R) -> Result<Self, FlowError>
    where
        R: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let rhs = Arc::new(rhs);
        let jac_rhs = Arc::clone(&rhs);
        Self::new(
            dim,
            period,
            move |t, x, out| rhs(t, x, out),
            move |t, x| fd_jacobian(&*jac_rhs, dim, t, x),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn rhs_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.rhs)(t, x, out)
    }

    pub fn rhs(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.rhs)(t, x, &mut out);
        out
    }

    pub fn jacobian(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(t, x)
    }

    /// Largest `|f(t + T, x) − f(t, x)|` over the given sample points.
    pub fn periodicity_defect(&self, points: &[(f64, Vec<f64>)]) -> f64 {
        points
            .iter()
            .map(|(t, x)| {
                let a = self.rhs(*t, x);
                let b = self.rhs(*t + self.period, x);
                max_abs_diff(&a, &b)
            })
            .fold(0.0, f64::max)
    }

    /// Largest entrywise gap between the Jacobian and central differences of
    /// the right-hand side, relative to `1 + |entry|`.
    pub fn jacobian_defect(&self, points: &[(f64, Vec<f64>)]) -> f64 {
        points
            .iter()
            .map(|(t, x)| {
                let exact = self.jacobian(*t, x);
                let approx = fd_jacobian(&*self.rhs, self.dim, *t, x);
                exact
                    .iter()
                    .zip(approx.iter())
                    .map(|(e, a)| (e - a).abs() / (1.0 + e.abs()))
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn check_state(&self, x: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.dim {
            return Err(FlowError::Dimension {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

fn fd_jacobian(rhs: &RhsFn, dim: usize, t: f64, x: &[f64]) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(dim, dim);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    for j in 0..dim {
        let h = 1e-6 * (1.0 + x[j].abs());
        xp[j] = x[j] + h;
        rhs(t, &xp, &mut fp);
        xp[j] = x[j] - h;
        rhs(t, &xp, &mut fm);
        xp[j] = x[j];
        for i in 0..dim {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub(crate) fn max_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedRk4,
    AdaptiveRk45,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorConfig {
    pub method: Method,
    /// Fixed step, or the initial step for the adaptive method.
    pub step: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Max-norm radius beyond which the solution is reported as escaped.
    pub blowup_threshold: f64,
    /// Upper bound on the adaptive step.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            method: Method::AdaptiveRk45,
            step: 1e-2,
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            blowup_threshold: 1e8,
            max_step: f64::MAX,
            max_steps: 10_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn fixed_rk4(step: f64) -> Self {
        Self {
            method: Method::FixedRk4,
            step,
            ..Self::default()
        }
    }

    pub fn adaptive(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FlowError> {
        let positive = |v: f64| v > 0.0 && !v.is_nan();
        if !(positive(self.step) && self.step.is_finite()) {
            return Err(FlowError::InvalidConfig(format!(
                "step must be positive, got {}",
                self.step
            )));
        }
        if !positive(self.abs_tol) || !positive(self.rel_tol) {
            return Err(FlowError::InvalidConfig("tolerances must be positive".into()));
        }
        if !positive(self.blowup_threshold) || !positive(self.max_step) {
            return Err(FlowError::InvalidConfig(
                "blow-up threshold and max_step must be positive".into(),
            ));
        }
        if self.max_steps == 0 {
            return Err(FlowError::InvalidConfig("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Stored nodes of one integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Vector field at each node, used for Hermite interpolation.
    pub derivatives: Vec<Vec<f64>>,
    pub escaped: bool,
    /// End of the step on which the threshold was crossed.
    pub escape_time: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one node")
    }

    /// Largest max-norm of any stored state.
    pub fn max_abs(&self) -> f64 {
        self.states.iter().map(|s| max_norm(s)).fold(0.0, f64::max)
    }

    /// Cubic Hermite dense output; `None` outside the stored time span.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let first = *self.times.first()?;
        let last = self.t_end();
        let span_tol = 1e-12 * (1.0 + last.abs());
        if t < first - span_tol || t > last + span_tol {
            return None;
        }
        if self.times.len() == 1 {
            return Some(self.states[0].clone());
        }
        let t = t.clamp(first, last);
        let i = match self.times.partition_point(|&s| s <= t) {
            0 => 0,
            k if k >= self.times.len() => self.times.len() - 2,
            k => k - 1,
        };
        let (ta, tb) = (self.times[i], self.times[i + 1]);
        let h = tb - ta;
        let s = (t - ta) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (ya, yb) = (&self.states[i], &self.states[i + 1]);
        let (da, db) = (&self.derivatives[i], &self.derivatives[i + 1]);
        Some(
            (0..ya.len())
                .map(|k| h00 * ya[k] + h10 * h * da[k] + h01 * yb[k] + h11 * h * db[k])
                .collect(),
        )
    }

    /// CSV with header `t,x1,...,xn`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let n = self.dim();
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=n).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in self.times.iter().zip(&self.states) {
            write!(w, "{}", fmt_sig17(*t))?;
            for v in x {
                write!(w, ",{}", fmt_sig17(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Decimal floating point with 17 significant digits.
pub fn fmt_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Integrates `sys` from `(t0, x0)` to `t1`.
pub fn flow(
    sys: &TimePeriodicSystem,
    t0: f64,
    x0: &[f64],
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Trajectory, FlowError> {
    sys.check_state(x0)?;
    cfg.validate()?;
    if !(t1 >= t0) {
        return Err(FlowError::Interval { t0, t1 });
    }
    let mut traj = Trajectory {
        t0,
        times: vec![t0],
        states: vec![x0.to_vec()],
        derivatives: vec![eval_checked(sys, t0, x0)?],
        escaped: false,
        escape_time: None,
    };
    if max_norm(x0) > cfg.blowup_threshold {
        traj.escaped = true;
        traj.escape_time = Some(t0);
        return Ok(traj);
    }
    if t1 == t0 {
        return Ok(traj);
    }
    match cfg.method {
        Method::FixedRk4 => integrate_rk4(sys, &mut traj, t1, cfg)?,
        Method::AdaptiveRk45 => integrate_dopri(sys, &mut traj, t1, cfg)?,
    }
    Ok(traj)
}

fn eval_checked(sys: &TimePeriodicSystem, t: f64, x: &[f64]) -> Result<Vec<f64>, FlowError> {
    let d = sys.rhs(t, x);
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(FlowError::NonFinite { t, x: x.to_vec() })
    }
}

fn axpy(y: &[f64], terms: &[(f64, &[f64])], h: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    for &(c, k) in terms {
        if c != 0.0 {
            for (o, kv) in out.iter_mut().zip(k) {
                *o += h * c * kv;
            }
        }
    }
    out
}

/// Pushes an accepted node, or marks escape. Returns `false` when escaped.
fn accept_node(traj: &mut Trajectory, t: f64, x: Vec<f64>, dx: Vec<f64>, cfg: &IntegratorConfig) -> bool {
    if max_norm(&x) > cfg.blowup_threshold || x.iter().any(|v| !v.is_finite()) {
        traj.escaped = true;
        traj.escape_time = Some(t);
        return false;
    }
    traj.times.push(t);
    traj.states.push(x);
    traj.derivatives.push(dx);
    true
}

fn integrate_rk4(
    sys: &TimePeriodicSystem,
    traj: &mut Trajectory,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<(), FlowError> {
    let t0 = traj.t0;
    let n = ((t1 - t0) / cfg.step).ceil().max(1.0) as usize;
    if n > cfg.max_steps {
        return Err(FlowError::MaxSteps(cfg.max_steps));
    }
    let h = (t1 - t0) / n as f64;
    let mut x = traj.states[0].clone();
    let mut k1 = traj.derivatives[0].clone();
    for i in 0..n {
        let t = t0 + h * i as f64;
        let k2 = eval_checked(sys, t + 0.5 * h, &axpy(&x, &[(0.5, &k1)], h))?;
        let k3 = eval_checked(sys, t + 0.5 * h, &axpy(&x, &[(0.5, &k2)], h))?;
        let k4 = eval_checked(sys, t + h, &axpy(&x, &[(1.0, &k3)], h))?;
        let xn = axpy(
            &x,
            &[(1.0 / 6.0, &k1), (1.0 / 3.0, &k2), (1.0 / 3.0, &k3), (1.0 / 6.0, &k4)],
            h,
        );
        let tn = if i + 1 == n { t1 } else { t0 + h * (i + 1) as f64 };
        if max_norm(&xn) > cfg.blowup_threshold || xn.iter().any(|v| !v.is_finite()) {
            traj.escaped = true;
            traj.escape_time = Some(tn);
            return Ok(());
        }
        let dn = eval_checked(sys, tn, &xn)?;
        accept_node(traj, tn, xn.clone(), dn.clone(), cfg);
        x = xn;
        k1 = dn;
    }
    Ok(())
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th and embedded 4th order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn integrate_dopri(
    sys: &TimePeriodicSystem,
    traj: &mut Trajectory,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<(), FlowError> {
    let mut t = traj.t0;
    let mut x = traj.states[0].clone();
    let mut k1 = traj.derivatives[0].clone();
    let mut h = cfg.step.min(cfg.max_step).min(t1 - t);
    let mut steps = 0usize;
    while t < t1 {
        if steps >= cfg.max_steps {
            return Err(FlowError::MaxSteps(cfg.max_steps));
        }
        steps += 1;
        let last = t + h >= t1 || (t1 - (t + h)) <= 1e-14 * t1.abs().max(1.0);
        if last {
            h = t1 - t;
        }
        let k2 = eval_checked(sys, t + C2 * h, &axpy(&x, &[(A21, &k1)], h))?;
        let k3 = eval_checked(sys, t + C3 * h, &axpy(&x, &[(A31, &k1), (A32, &k2)], h))?;
        let k4 = eval_checked(sys, t + C4 * h, &axpy(&x, &[(A41, &k1), (A42, &k2), (A43, &k3)], h))?;
        let k5 = eval_checked(
            sys,
            t + C5 * h,
            &axpy(&x, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], h),
        )?;
        let k6 = eval_checked(
            sys,
            t + h,
            &axpy(&x, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], h),
        )?;
        let xn = axpy(&x, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)], h);
        let tn = if last { t1 } else { t + h };
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite { t: tn, x: xn });
        }
        let k7 = sys.rhs(tn, &xn);
        let k7_finite = k7.iter().all(|v| v.is_finite());
        let err = if k7_finite {
            let mut e = 0.0f64;
            for i in 0..x.len() {
                let est = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = cfg.abs_tol + cfg.rel_tol * x[i].abs().max(xn[i].abs());
                e = e.max((est / sc).abs());
            }
            e
        } else {
            f64::INFINITY
        };
        if err <= 1.0 {
            if max_norm(&xn) > cfg.blowup_threshold {
                traj.escaped = true;
                traj.escape_time = Some(tn);
                return Ok(());
            }
            if !k7_finite {
                return Err(FlowError::NonFinite { t: tn, x: xn });
            }
            accept_node(traj, tn, xn.clone(), k7.clone(), cfg);
            t = tn;
            x = xn;
            k1 = k7;
            if last {
                break;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h = (h * factor).min(cfg.max_step);
        } else {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            h *= factor;
        }
        if h <= 1e-14 * t.abs().max(1.0) {
            // A shrinking step while the state or its rate is still growing
            // is the numerical signature of a finite escape time.
            if max_norm(&x) > 1e-3 * cfg.blowup_threshold || max_norm(&sys.rhs(t, &x)) > cfg.blowup_threshold {
                traj.escaped = true;
                traj.escape_time = Some(t);
                return Ok(());
            }
            return Err(FlowError::StepUnderflow { t, h });
        }
    }
    Ok(())
}

/// Endpoint of a scalar flow and its derivative with respect to the initial value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    pub endpoint: f64,
    pub dphi_dx0: f64,
    /// `∫ ∂f/∂x(s, φ(s)) ds` along the solution.
    pub log_derivative: f64,
}

/// Scalar flow with `∂φ/∂x0 = exp(∫ ∂f/∂x(s, φ(s)) ds)`, obtained by
/// integrating the exponent alongside the state.
pub fn flow_with_sensitivity(
    sys: &TimePeriodicSystem,
    t0: f64,
    x0: f64,
    t1: f64,
    cfg: &IntegratorConfig,
) -> Result<Sensitivity, FlowError> {
    if sys.dim() != 1 {
        return Err(FlowError::Dimension {
            expected: 1,
            got: sys.dim(),
        });
    }
    let inner = sys.clone();
    let augmented = TimePeriodicSystem::new(
        2,
        sys.period(),
        move |t, y, out| {
            let mut f = [0.0];
            inner.rhs_into(t, &y[..1], &mut f);
            out[0] = f[0];
            out[1] = inner.jacobian(t, &y[..1])[(0, 0)];
        },
        |_, _| DMatrix::zeros(2, 2),
    )?;
    // The exponent must not trip the blow-up test on the state component.
    let traj = flow(&augmented, t0, &[x0, 0.0], t1, cfg)?;
    if traj.escaped {
        return Err(FlowError::Escaped {
            time: traj.escape_time.unwrap_or(traj.t_end()),
        });
    }
    let end = traj.endpoint();
    Ok(Sensitivity {
        endpoint: end[0],
        dphi_dx0: end[1].exp(),
        log_derivative: end[1],
    })
}

/// `|φ(t0 + T, t0, x) − x|` in the max norm; `f64::INFINITY` when the flow escapes.
pub fn check_periodicity_residual(
    sys: &TimePeriodicSystem,
    x: &[f64],
    t0: f64,
    cfg: &IntegratorConfig,
) -> Result<f64, FlowError> {
    let traj = flow(sys, t0, x, t0 + sys.period(), cfg)?;
    if traj.escaped {
        return Ok(f64::INFINITY);
    }
    Ok(max_abs_diff(traj.endpoint(), x))
}
