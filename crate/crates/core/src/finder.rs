//! Periodic solutions as fixed points of the return map `g(x) = φ(t0 + T, t0, x)`.
//!
//! Two constructions are provided:
//!
//! * scalar systems: the monotone iteration `y_{k+1} = g(y_k)`. Because scalar
//!   flows preserve order, the iterates are monotone and either converge to a
//!   fixed point or leave every bounded set.
//! * systems with a contraction certificate `μ(∂f/∂z) ≤ p(t)`, `∫₀ᵀ p < 0` on a
//!   convex box: Banach iteration of `g`, which contracts by `exp(−c)`,
//!   `c = −∫₀ᵀ p`.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::{flow, fmt_sig17, max_abs_diff, FlowError, IntegratorConfig, TimePeriodicSystem, Trajectory};
use crate::lognorm::{check_mu_bound, mu, vector_norm, ConditionReport, LognormError, NormDescriptor, NormKind};
use crate::quadrature::adaptive_simpson;
use crate::region::{BoxRegion, GridSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FinderError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Lognorm(#[from] LognormError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "return-map iterates stopped being monotone at k = {k} ({prev} -> {next}); integrator accuracy is insufficient"
    )]
    MonotonicityViolated { k: usize, prev: f64, next: f64 },
    #[error("iterate {iteration} left the trapping box: {iterate:?}")]
    TrapViolated { iteration: usize, iterate: Vec<f64> },
    #[error("return map escaped at t = {time}")]
    Escaped { time: f64 },
    #[error("no fixed point recorded in the iteration trace")]
    MissingFixedPoint,
    #[error("Banach iteration did not reach the tolerance in {iterations} iterations (last gap {gap:e})")]
    NotConverged { iterations: usize, gap: f64 },
}

/// Return (Poincaré) map of a periodic system at section time `t0`.
#[derive(Debug, Clone)]
pub struct ReturnMap {
    pub sys: TimePeriodicSystem,
    pub t0: f64,
    pub cfg: IntegratorConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapImage {
    Point(Vec<f64>),
    Escaped { time: f64 },
}

impl ReturnMap {
    pub fn new(sys: TimePeriodicSystem, t0: f64, cfg: IntegratorConfig) -> Self {
        Self { sys, t0, cfg }
    }

    pub fn period(&self) -> f64 {
        self.sys.period()
    }

    /// One period of the flow starting at `x`.
    pub fn trajectory(&self, x: &[f64]) -> Result<Trajectory, FlowError> {
        flow(&self.sys, self.t0, x, self.t0 + self.sys.period(), &self.cfg)
    }

    pub fn eval(&self, x: &[f64]) -> Result<MapImage, FlowError> {
        let tr = self.trajectory(x)?;
        Ok(if tr.escaped {
            MapImage::Escaped {
                time: tr.escape_time.unwrap_or(tr.t_end()),
            }
        } else {
            MapImage::Point(tr.endpoint().to_vec())
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    MonotoneIteration,
    BanachIteration,
    DirectFixedPoint,
}

/// A sampled `T`-periodic solution anchored at `x(t0) = anchor`.
#[derive(Debug, Clone)]
pub struct PeriodicSolution {
    pub anchor: Vec<f64>,
    pub t0: f64,
    pub period: f64,
    /// Dense trajectory over `[t0, t0 + T]`.
    pub samples: Trajectory,
    /// `|φ(t0 + T, t0, anchor) − anchor|` in the max norm.
    pub residual: f64,
    pub method: SolveMethod,
}

/// JSON form of a [`PeriodicSolution`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub t0: f64,
    pub period: f64,
    pub anchor: Vec<f64>,
    pub residual: f64,
    pub method: SolveMethod,
    pub samples_csv_path: Option<String>,
}

impl PeriodicSolution {
    pub(crate) fn from_trajectory(samples: Trajectory, method: SolveMethod, period: f64) -> Self {
        let anchor = samples.states[0].clone();
        let residual = if samples.escaped {
            f64::INFINITY
        } else {
            max_abs_diff(samples.endpoint(), &anchor)
        };
        Self {
            anchor,
            t0: samples.t0,
            period,
            samples,
            residual,
            method,
        }
    }

    /// Value of the periodic extension at any time.
    pub fn value_at(&self, t: f64) -> Vec<f64> {
        let tau = (t - self.t0).rem_euclid(self.period);
        self.samples
            .interpolate(self.t0 + tau)
            .expect("samples span one full period")
    }

    /// Largest max-norm of the solution over one period, from the stored nodes.
    pub fn sup_norm(&self) -> f64 {
        self.samples.max_abs()
    }

    pub fn record(&self, samples_csv_path: Option<String>) -> SolutionRecord {
        SolutionRecord {
            t0: self.t0,
            period: self.period,
            anchor: self.anchor.clone(),
            residual: self.residual,
            method: self.method,
            samples_csv_path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Fixed,
    Increasing,
    Decreasing,
    Unbounded,
}

/// Record of a scalar monotone iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneIterationTrace {
    pub t0: f64,
    pub period: f64,
    /// `y_k = φ(t0 + kT, t0, x0)`.
    pub y_seq: Vec<f64>,
    /// `|g(y_k) − y_k|`, infinite where the map escaped.
    pub gaps: Vec<f64>,
    pub direction: Direction,
    pub y_star: Option<f64>,
    /// Largest `|φ|` seen along the computed trajectories.
    pub trajectory_bound: f64,
    /// Grid estimate of `max |∂f/∂x|` over one period and `|z| ≤ trajectory_bound`.
    pub lipschitz: f64,
    /// `exp(L T)`.
    pub envelope_constant: f64,
}

impl MonotoneIterationTrace {
    /// CSV `k,y_k,gap`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k,y_k,gap")?;
        for (k, y) in self.y_seq.iter().enumerate() {
            let gap = self.gaps.get(k).copied().unwrap_or(f64::NAN);
            writeln!(w, "{k},{},{}", fmt_sig17(*y), fmt_sig17(gap))?;
        }
        Ok(())
    }
}

/// Terminal state of a scalar monotone iteration.
#[derive(Debug, Clone)]
pub enum ScalarOutcome {
    Periodic(PeriodicSolution),
    /// The iterates left every bounded set considered (blow-up threshold,
    /// finite escape, or the caller's bounds).
    Unbounded {
        last: f64,
        escape_time: Option<f64>,
        iterations: usize,
    },
    /// `max_iters` exhausted without reaching the tolerance.
    Inconclusive {
        last: f64,
        gap: f64,
        iterations: usize,
    },
}

impl ScalarOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Periodic(_) => "periodic",
            Self::Unbounded { .. } => "unbounded",
            Self::Inconclusive { .. } => "inconclusive",
        }
    }

    pub fn solution(&self) -> Option<&PeriodicSolution> {
        match self {
            Self::Periodic(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ScalarOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Periodic(s) => write!(f, "periodic solution through {:?}", s.anchor),
            Self::Unbounded { last, .. } => write!(f, "unbounded (last iterate {last})"),
            Self::Inconclusive { last, gap, .. } => {
                write!(f, "inconclusive (last iterate {last}, gap {gap:e})")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarSearch {
    pub max_iters: usize,
    pub tol: f64,
    /// Iterates leaving `[lo, hi]` are treated as unbounded.
    pub bounds: Option<(f64, f64)>,
}

impl ScalarSearch {
    pub fn new(max_iters: usize, tol: f64) -> Self {
        Self {
            max_iters,
            tol,
            bounds: None,
        }
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }
}

/// Monotone iteration of a scalar return map from `x0`.
///
/// Stops when `|g(y_k) − y_k| ≤ tol`, anchoring the solution at `y_k`. A step
/// against the established direction larger than the tolerance is reported as
/// [`FinderError::MonotonicityViolated`].
pub fn find_periodic_scalar(
    rm: &ReturnMap,
    x0: f64,
    search: &ScalarSearch,
) -> Result<(ScalarOutcome, MonotoneIterationTrace), FinderError> {
    if rm.sys.dim() != 1 {
        return Err(FinderError::InvalidArgument(format!(
            "monotone iteration needs a scalar system, got dimension {}",
            rm.sys.dim()
        )));
    }
    if search.max_iters == 0 || !(search.tol > 0.0) {
        return Err(FinderError::InvalidArgument(
            "max_iters must be at least 1 and tol positive".into(),
        ));
    }
    let in_bounds = |y: f64| match search.bounds {
        Some((lo, hi)) => y >= lo && y <= hi,
        None => true,
    };
    let reverse_tol = search.tol.max(1e-12);

    let mut y_seq = vec![x0];
    let mut gaps = Vec::new();
    let mut direction = Direction::Fixed;
    let mut bound = x0.abs();
    let mut outcome = None;

    if !in_bounds(x0) {
        return Err(FinderError::InvalidArgument(format!(
            "x0 = {x0} lies outside the search bounds"
        )));
    }

    for k in 0..search.max_iters {
        let y = y_seq[k];
        let tr = rm.trajectory(&[y])?;
        bound = bound.max(tr.max_abs());
        if tr.escaped {
            gaps.push(f64::INFINITY);
            direction = Direction::Unbounded;
            outcome = Some(ScalarOutcome::Unbounded {
                last: y,
                escape_time: tr.escape_time,
                iterations: k + 1,
            });
            break;
        }
        let next = tr.endpoint()[0];
        let step = next - y;
        gaps.push(step.abs());
        if step.abs() <= search.tol {
            let sol = PeriodicSolution::from_trajectory(tr, SolveMethod::MonotoneIteration, rm.period());
            outcome = Some(ScalarOutcome::Periodic(sol));
            break;
        }
        match direction {
            Direction::Fixed => {
                direction = if step > 0.0 {
                    Direction::Increasing
                } else {
                    Direction::Decreasing
                }
            }
            Direction::Increasing if step < -reverse_tol => {
                return Err(FinderError::MonotonicityViolated { k, prev: y, next });
            }
            Direction::Decreasing if step > reverse_tol => {
                return Err(FinderError::MonotonicityViolated { k, prev: y, next });
            }
            _ => {}
        }
        y_seq.push(next);
        if !in_bounds(next) || next.abs() > rm.cfg.blowup_threshold {
            gaps.push(f64::INFINITY);
            direction = Direction::Unbounded;
            outcome = Some(ScalarOutcome::Unbounded {
                last: next,
                escape_time: None,
                iterations: k + 1,
            });
            break;
        }
    }

    let outcome = outcome.unwrap_or_else(|| ScalarOutcome::Inconclusive {
        last: *y_seq.last().unwrap(),
        gap: *gaps.last().unwrap(),
        iterations: search.max_iters,
    });
    let y_star = match &outcome {
        ScalarOutcome::Periodic(s) => Some(s.anchor[0]),
        _ => None,
    };
    let lipschitz = estimate_lipschitz(&rm.sys, rm.t0, bound);
    let trace = MonotoneIterationTrace {
        t0: rm.t0,
        period: rm.period(),
        y_seq,
        gaps,
        direction,
        y_star,
        trajectory_bound: bound,
        lipschitz,
        envelope_constant: (lipschitz * rm.period()).exp(),
    };
    Ok((outcome, trace))
}

/// `max |∂f/∂x(s, z)|` over a 256 × 65 grid of `[t0, t0 + T] × [−r, r]`.
fn estimate_lipschitz(sys: &TimePeriodicSystem, t0: f64, r: f64) -> f64 {
    let nt = 256;
    let nz = 64;
    let mut best = 0.0f64;
    for i in 0..=nt {
        let t = t0 + sys.period() * i as f64 / nt as f64;
        for j in 0..=nz {
            let z = -r + 2.0 * r * j as f64 / nz as f64;
            best = best.max(sys.jacobian(t, &[z])[(0, 0)].abs());
        }
    }
    best
}

/// Upper bound `exp(LT) |y_{⌊(t−t0)/T⌋} − y*|` on the distance between the
/// traced solution and the periodic solution through `y*`.
///
/// Beyond the recorded iterates the last one is used; the distance of a
/// monotone sequence to its limit does not increase.
pub fn convergence_envelope(trace: &MonotoneIterationTrace, t_grid: &[f64]) -> Result<Vec<f64>, FinderError> {
    let y_star = trace.y_star.ok_or(FinderError::MissingFixedPoint)?;
    let last = trace.y_seq.len() - 1;
    Ok(t_grid
        .iter()
        .map(|&t| {
            let k = ((t - trace.t0) / trace.period).floor().max(0.0) as usize;
            let gap = (trace.y_seq[k.min(last)] - y_star).abs();
            if gap == 0.0 {
                0.0
            } else {
                trace.envelope_constant * gap
            }
        })
        .collect())
}

pub type BoundFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Source of the bound function `p(t)` of a certificate.
#[derive(Clone)]
pub enum BoundSpec {
    Given(BoundFn),
    /// `p(t) = max_z μ(∂f/∂z(t, z))` on the grid, interpolated linearly in `t`.
    EmpiricalEnvelope,
}

impl fmt::Debug for BoundSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Given(_) => f.write_str("Given(..)"),
            Self::EmpiricalEnvelope => f.write_str("EmpiricalEnvelope"),
        }
    }
}

/// A validated bound `μ(∂f/∂z(t, z)) ≤ p(t)` on a box with `∫₀ᵀ p < 0`.
#[derive(Clone)]
pub struct ContractionCertificate {
    pub region: BoxRegion,
    pub p_fn: BoundFn,
    pub p_integral: f64,
    /// `−∫₀ᵀ p`.
    pub c: f64,
    /// `max_{t∈[0,T]} ∫₀ᵗ p`.
    pub beta: f64,
    pub norm: NormKind,
    pub period: f64,
    pub grid_report: ConditionReport,
}

impl fmt::Debug for ContractionCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContractionCertificate")
            .field("region", &self.region)
            .field("p_integral", &self.p_integral)
            .field("c", &self.c)
            .field("beta", &self.beta)
            .field("norm", &self.norm.label())
            .finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub region: BoxRegion,
    pub period: f64,
    pub p_integral: f64,
    pub c: f64,
    pub beta: f64,
    pub contraction_factor: f64,
    pub norm: NormDescriptor,
    pub grid_report: ConditionReport,
}

impl ContractionCertificate {
    /// `exp(−c)`, the return-map Lipschitz constant on the box.
    pub fn contraction_factor(&self) -> f64 {
        (-self.c).exp()
    }

    /// Right-hand side of the transient estimate
    /// `|φ(t) − x*(t)| ≤ |φ(mT) − x*(0)| exp(β + (m+1)c − ct/T)`.
    pub fn transient_bound(&self, initial_gap: f64, m: usize, t: f64) -> f64 {
        initial_gap * (self.beta + (m as f64 + 1.0) * self.c - self.c * t / self.period).exp()
    }

    pub fn record(&self) -> CertificateRecord {
        CertificateRecord {
            region: self.region.clone(),
            period: self.period,
            p_integral: self.p_integral,
            c: self.c,
            beta: self.beta,
            contraction_factor: self.contraction_factor(),
            norm: self.norm.descriptor(),
            grid_report: self.grid_report.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// The sampled measure exceeds `p(t)` somewhere on the grid.
    BoundViolated,
    /// `∫₀ᵀ p ≥ 0`.
    IntegralNonNegative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRejection {
    pub reasons: Vec<RejectReason>,
    pub p_integral: f64,
    pub grid_report: ConditionReport,
}

#[derive(Debug, Clone)]
pub enum CertificateOutcome {
    Valid(ContractionCertificate),
    Rejected(CertificateRejection),
}

impl CertificateOutcome {
    pub fn valid(self) -> Option<ContractionCertificate> {
        match self {
            Self::Valid(c) => Some(c),
            Self::Rejected(_) => None,
        }
    }
}

const INTEGRAL_TOL: f64 = 1e-14;
const BETA_PIECES: usize = 2048;

/// Validates a contraction certificate: the grid check of the measure bound
/// and the sign of `∫₀ᵀ p` (adaptive quadrature).
pub fn build_certificate(
    sys: &TimePeriodicSystem,
    region: &BoxRegion,
    bound: BoundSpec,
    norm: NormKind,
    grid: &GridSpec,
) -> Result<CertificateOutcome, FinderError> {
    if region.dim() != sys.dim() {
        return Err(FinderError::InvalidArgument(format!(
            "box has dimension {}, system {}",
            region.dim(),
            sys.dim()
        )));
    }
    let period = sys.period();
    let p_fn: BoundFn = match bound {
        BoundSpec::Given(f) => f,
        BoundSpec::EmpiricalEnvelope => empirical_envelope(sys, region, &norm, grid)?,
    };
    let report = {
        let p = Arc::clone(&p_fn);
        check_mu_bound(sys, region, &norm, move |t| p(t), grid)?
    };
    let p_integral = adaptive_simpson(|t| p_fn(t), 0.0, period, INTEGRAL_TOL);

    let mut reasons = Vec::new();
    if !report.holds {
        reasons.push(RejectReason::BoundViolated);
    }
    if !(p_integral < 0.0) {
        reasons.push(RejectReason::IntegralNonNegative);
    }
    if !reasons.is_empty() {
        return Ok(CertificateOutcome::Rejected(CertificateRejection {
            reasons,
            p_integral,
            grid_report: report,
        }));
    }

    let h = period / BETA_PIECES as f64;
    let mut acc = 0.0f64;
    let mut beta = 0.0f64;
    for i in 0..BETA_PIECES {
        let a = h * i as f64;
        acc += adaptive_simpson(|t| p_fn(t), a, a + h, INTEGRAL_TOL / BETA_PIECES as f64);
        beta = beta.max(acc);
    }

    Ok(CertificateOutcome::Valid(ContractionCertificate {
        region: region.clone(),
        p_fn,
        p_integral,
        c: -p_integral,
        beta,
        norm,
        period,
        grid_report: report,
    }))
}

fn empirical_envelope(
    sys: &TimePeriodicSystem,
    region: &BoxRegion,
    norm: &NormKind,
    grid: &GridSpec,
) -> Result<BoundFn, FinderError> {
    let period = sys.period();
    let times = grid.times(period);
    let points = region.grid_points(grid.axis_samples);
    let mut values = Vec::with_capacity(times.len());
    for &t in &times {
        let mut best = f64::NEG_INFINITY;
        for z in &points {
            best = best.max(mu(&sys.jacobian(t, z), norm)?);
        }
        values.push(best);
    }
    let n = values.len();
    Ok(Arc::new(move |t: f64| {
        let s = t.rem_euclid(period) / period * n as f64;
        let i = (s.floor() as usize).min(n - 1);
        let frac = s - i as f64;
        values[i] * (1.0 - frac) + values[(i + 1) % n] * frac
    }))
}

/// Iterates and gaps of a Banach run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanachTrace {
    pub iterates: Vec<Vec<f64>>,
    /// `|y_{k+1} − y_k|` in the certificate norm.
    pub gaps: Vec<f64>,
    pub contraction_factor: f64,
    /// Stopping threshold `tol · (1 − exp(−c))`.
    pub threshold: f64,
}

impl BanachTrace {
    /// Number of return-map evaluations.
    pub fn iterations(&self) -> usize {
        self.gaps.len()
    }
}

/// Banach iteration of the return map under a valid certificate.
///
/// Stops once `|y_{k+1} − y_k| ≤ tol (1 − e^{−c})`, so the distance of the
/// anchor to the fixed point is at most `e^{−c} tol` in the certificate norm.
pub fn find_periodic_contraction(
    sys: &TimePeriodicSystem,
    cert: &ContractionCertificate,
    t0: f64,
    x_init: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(PeriodicSolution, BanachTrace), FinderError> {
    let rm = ReturnMap::new(sys.clone(), t0, IntegratorConfig::default());
    find_periodic_contraction_with(&rm, cert, x_init, tol, max_iters)
}

/// [`find_periodic_contraction`] with the integrator settings of `rm`.
pub fn find_periodic_contraction_with(
    rm: &ReturnMap,
    cert: &ContractionCertificate,
    x_init: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<(PeriodicSolution, BanachTrace), FinderError> {
    const TRAP_SLACK: f64 = 1e-12;
    if !(tol > 0.0) || !(cert.c > 0.0) {
        return Err(FinderError::InvalidArgument(
            "tolerance and contraction rate must be positive".into(),
        ));
    }
    if x_init.len() != rm.sys.dim() || !cert.region.contains(x_init, TRAP_SLACK) {
        return Err(FinderError::TrapViolated {
            iteration: 0,
            iterate: x_init.to_vec(),
        });
    }
    let q = cert.contraction_factor();
    let mut trace = BanachTrace {
        iterates: vec![x_init.to_vec()],
        gaps: Vec::new(),
        contraction_factor: q,
        threshold: tol * (1.0 - q),
    };
    let mut y = x_init.to_vec();
    for k in 1..=max_iters {
        let tr = rm.trajectory(&y)?;
        if tr.escaped {
            return Err(FinderError::Escaped {
                time: tr.escape_time.unwrap_or(tr.t_end()),
            });
        }
        let next = tr.endpoint().to_vec();
        let diff: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
        let gap = vector_norm(&diff, &cert.norm);
        trace.gaps.push(gap);
        trace.iterates.push(next.clone());
        if !cert.region.contains(&next, TRAP_SLACK) {
            return Err(FinderError::TrapViolated {
                iteration: k,
                iterate: next,
            });
        }
        if gap <= trace.threshold {
            let samples = rm.trajectory(&next)?;
            let sol = PeriodicSolution::from_trajectory(samples, SolveMethod::BanachIteration, rm.period());
            return Ok((sol, trace));
        }
        y = next;
    }
    Err(FinderError::NotConverged {
        iterations: max_iters,
        gap: trace.gaps.last().copied().unwrap_or(f64::INFINITY),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn forced_linear() -> TimePeriodicSystem {
        TimePeriodicSystem::scalar(2.0 * PI, |t, x| -x + t.sin(), |_, _| -1.0).unwrap()
    }

    fn rm(sys: TimePeriodicSystem) -> ReturnMap {
        ReturnMap::new(sys, 0.0, IntegratorConfig::default())
    }

    #[test]
    fn linear_monotone_iteration_converges_from_both_sides() {
        let map = rm(forced_linear());
        for (x0, dir) in [(-10.0, Direction::Increasing), (10.0, Direction::Decreasing)] {
            let (out, trace) = find_periodic_scalar(&map, x0, &ScalarSearch::new(50, 1e-10)).unwrap();
            let sol = out.solution().expect("periodic");
            assert!((sol.anchor[0] + 0.5).abs() < 1e-9, "{:?}", sol.anchor);
            assert!(sol.residual <= 1e-10);
            assert_eq!(trace.direction, dir);
            assert_eq!(trace.gaps.len(), trace.y_seq.len());
            assert!((trace.lipschitz - 1.0).abs() < 1e-12);
            let v = sol.value_at(1.0 + 4.0 * PI);
            assert!((v[0] - 0.5 * (1.0f64.sin() - 1.0f64.cos())).abs() < 1e-8);
        }
    }

    #[test]
    fn start_on_fixed_point_is_fixed() {
        let map = rm(TimePeriodicSystem::scalar(1.0, |_, x| x, |_, _| 1.0).unwrap());
        let (out, trace) = find_periodic_scalar(&map, 0.0, &ScalarSearch::new(5, 1e-12)).unwrap();
        assert_eq!(out.label(), "periodic");
        assert_eq!(trace.direction, Direction::Fixed);
        assert_eq!(trace.y_seq, vec![0.0]);
    }

    #[test]
    fn growth_is_unbounded() {
        let map = rm(TimePeriodicSystem::scalar(1.0, |_, x| x, |_, _| 1.0).unwrap());
        let (out, trace) = find_periodic_scalar(&map, 1.0, &ScalarSearch::new(200, 1e-10)).unwrap();
        assert_eq!(out.label(), "unbounded");
        assert_eq!(trace.direction, Direction::Unbounded);
        assert!(trace.y_star.is_none());

        let drift = rm(TimePeriodicSystem::scalar(2.0 * PI, |_, _| 1.0, |_, _| 0.0).unwrap());
        let search = ScalarSearch::new(100, 1e-10).with_bounds(-20.0, 20.0);
        let (out, _) = find_periodic_scalar(&drift, 0.0, &search).unwrap();
        match out {
            ScalarOutcome::Unbounded { last, iterations, .. } => {
                assert!(last > 20.0);
                assert_eq!(iterations, 4);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn finite_escape_reports_time() {
        let map = rm(TimePeriodicSystem::scalar(2.0 * PI, |_, x| x * x + 1.0, |_, x| 2.0 * x).unwrap());
        let (out, _) = find_periodic_scalar(&map, 0.0, &ScalarSearch::new(10, 1e-10)).unwrap();
        match out {
            ScalarOutcome::Unbounded {
                escape_time: Some(t),
                iterations: 1,
                ..
            } => {
                assert!((t - PI / 2.0).abs() < 1e-2, "{t}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn iteration_budget_gives_inconclusive() {
        let slow = TimePeriodicSystem::scalar(2.0 * PI, |t, x| -0.01 * x + t.sin(), |_, _| -0.01).unwrap();
        let (out, trace) = find_periodic_scalar(&rm(slow), 5.0, &ScalarSearch::new(3, 1e-10)).unwrap();
        assert_eq!(out.label(), "inconclusive");
        assert_eq!(trace.y_seq.len(), 4);
        assert!(convergence_envelope(&trace, &[0.0]).is_err());
    }

    #[test]
    fn rejects_vector_systems() {
        let sys = TimePeriodicSystem::with_fd_jacobian(2, 1.0, |_, x, o| o.copy_from_slice(x)).unwrap();
        assert!(matches!(
            find_periodic_scalar(&rm(sys), 0.0, &ScalarSearch::new(3, 1e-9)),
            Err(FinderError::InvalidArgument(_))
        ));
    }

    #[test]
    fn envelope_dominates_linear_transient() {
        let map = rm(forced_linear());
        let x0 = 3.0;
        let (_, trace) = find_periodic_scalar(&map, x0, &ScalarSearch::new(50, 1e-12)).unwrap();
        let ts: Vec<f64> = (0..64).map(|i| 4.0 * 2.0 * PI * i as f64 / 64.0).collect();
        let env = convergence_envelope(&trace, &ts).unwrap();
        for (t, e) in ts.iter().zip(env) {
            let actual = (x0 + 0.5) * (-t).exp();
            assert!(actual <= e + 1e-12, "t={t}: {actual} > {e}");
        }
    }

    #[test]
    fn trace_csv_layout() {
        let (_, trace) = find_periodic_scalar(&rm(forced_linear()), 0.0, &ScalarSearch::new(20, 1e-10)).unwrap();
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("k,y_k,gap"));
        assert_eq!(lines.count(), trace.y_seq.len());
    }

    #[test]
    fn constant_certificate_for_forced_linear() {
        let sys = forced_linear();
        let region = BoxRegion::interval(2.0);
        let out = build_certificate(
            &sys,
            &region,
            BoundSpec::Given(Arc::new(|_| -1.0)),
            NormKind::Inf,
            &GridSpec::new(64, 9),
        )
        .unwrap();
        let cert = out.valid().expect("valid");
        assert!((cert.c - 2.0 * PI).abs() < 1e-12);
        assert_eq!(cert.beta, 0.0);

        let tol = 1e-10;
        let (sol, trace) = find_periodic_contraction(&sys, &cert, 0.0, &[1.5], tol, 50).unwrap();
        assert!((sol.anchor[0] + 0.5).abs() < tol);
        assert_eq!(sol.method, SolveMethod::BanachIteration);
        // A priori count: q^k/(1-q) |y1 - y0| ≤ tol.
        let q = cert.contraction_factor();
        let first = trace.gaps[0];
        let bound = ((tol * (1.0 - q) / first).ln() / q.ln()).ceil() as usize + 1;
        assert!(trace.iterations() <= bound, "{} > {bound}", trace.iterations());
    }

    #[test]
    fn rejection_names_the_failed_condition() {
        let grow = TimePeriodicSystem::scalar(1.0, |_, x| 0.5 * x, |_, _| 0.5).unwrap();
        let region = BoxRegion::interval(1.0);
        let grid = GridSpec::new(16, 5);
        match build_certificate(
            &grow,
            &region,
            BoundSpec::Given(Arc::new(|_| -1.0)),
            NormKind::Two,
            &grid,
        )
        .unwrap()
        {
            CertificateOutcome::Rejected(r) => {
                assert_eq!(r.reasons, vec![RejectReason::BoundViolated]);
                assert!((r.grid_report.worst.margin - 1.5).abs() < 1e-12);
            }
            CertificateOutcome::Valid(_) => panic!("accepted"),
        }
        match build_certificate(
            &grow,
            &region,
            BoundSpec::Given(Arc::new(|_| 0.5)),
            NormKind::Two,
            &grid,
        )
        .unwrap()
        {
            CertificateOutcome::Rejected(r) => assert_eq!(r.reasons, vec![RejectReason::IntegralNonNegative]),
            CertificateOutcome::Valid(_) => panic!("accepted"),
        }
    }

    #[test]
    fn empirical_envelope_tracks_sampled_measure() {
        let sys = TimePeriodicSystem::scalar(
            2.0 * PI,
            |t, x| -(1.0 + 0.5 * t.sin()) * x,
            |t, _| -(1.0 + 0.5 * t.sin()),
        )
        .unwrap();
        let cert = build_certificate(
            &sys,
            &BoxRegion::interval(1.0),
            BoundSpec::EmpiricalEnvelope,
            NormKind::One,
            &GridSpec::new(256, 3),
        )
        .unwrap()
        .valid()
        .unwrap();
        assert!((cert.p_integral + 2.0 * PI).abs() < 1e-3, "{}", cert.p_integral);
        // ∫₀ᵗ p = −t − 0.5(1 − cos t) < 0 for t > 0.
        assert!(cert.beta < 1e-12);
        let (sol, _) = find_periodic_contraction(&sys, &cert, 0.0, &[0.9], 1e-10, 50).unwrap();
        assert!(sol.anchor[0].abs() < 1e-10);
    }

    #[test]
    fn trap_violation_is_reported() {
        let sys = TimePeriodicSystem::scalar(2.0 * PI, |t, x| -x + 5.0 * t.sin(), |_, _| -1.0).unwrap();
        let cert = build_certificate(
            &sys,
            &BoxRegion::interval(1.0),
            BoundSpec::Given(Arc::new(|_| -1.0)),
            NormKind::Two,
            &GridSpec::new(16, 3),
        )
        .unwrap()
        .valid()
        .unwrap();
        // The periodic solution has anchor -2.5, outside the box.
        assert!(matches!(
            find_periodic_contraction(&sys, &cert, 0.0, &[0.0], 1e-10, 20),
            Err(FinderError::TrapViolated { iteration: 1, .. })
        ));
        assert!(matches!(
            find_periodic_contraction(&sys, &cert, 0.0, &[3.0], 1e-10, 20),
            Err(FinderError::TrapViolated { iteration: 0, .. })
        ));
    }
}
