//! Extremum seeking for a static map: `ẋ = −ε sin(t) h(x + a sin t)`.
//!
//! Provides the system itself, the explicit sufficient conditions for
//! boundedness, contraction and existence of the attracting periodic
//! solution, the averaging change of variables, and a direct solver for the
//! periodic solution when `h` is even.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::finder::{
    build_certificate, BoundFn, BoundSpec, CertificateOutcome, FinderError, PeriodicSolution, SolveMethod,
};
use crate::flow::{flow, FlowError, IntegratorConfig, TimePeriodicSystem, Trajectory};
use crate::lognorm::{check_mu_bound, ConditionReport, LognormError, NormKind};
use crate::poly::Polynomial;
use crate::quadrature::{adaptive_simpson, cumulative_trapezoid, linspace, GaussLegendre};
use crate::region::{BoxRegion, GridSpec};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("bad map specification: {0}")]
    MapSpec(String),
    #[error("σ is not positive: ∫₀¹ h''(λw) dλ = {value} at w = {w}")]
    SigmaNonPositive { w: f64, value: f64 },
    #[error("map is not even: |h({x}) − h(−{x})| = {defect:e}")]
    NotEven { x: f64, defect: f64 },
    #[error("precondition failed: {}", describe_failures(.0))]
    Precondition(Vec<(String, CheckResult)>),
    #[error("internal inconsistency: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Finder(#[from] FinderError),
    #[error(transparent)]
    Lognorm(#[from] LognormError),
}

fn describe_failures(items: &[(String, CheckResult)]) -> String {
    items
        .iter()
        .map(|(name, c)| format!("{name}: lhs {} vs rhs {} (margin {:e})", c.lhs, c.rhs, c.margin))
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapKind {
    Polynomial { coeffs: Vec<f64> },
    Generic,
}

/// `h` with its first three derivatives.
#[derive(Clone)]
pub struct StaticMap {
    pub name: String,
    pub h: ScalarFn,
    pub h1: ScalarFn,
    pub h2: ScalarFn,
    pub h3: ScalarFn,
    pub kind: MapKind,
    polys: Option<[Polynomial; 4]>,
}

impl fmt::Debug for StaticMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StaticMap")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

/// Result of the sign assumptions `h'(x)x > 0`, `h'(0) = 0`, `h''(0) > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub holds: bool,
    pub sign_condition: bool,
    /// Sample where `h'(x)x` was smallest.
    pub worst_x: f64,
    pub h1_at_zero: f64,
    pub h2_at_zero: f64,
}

const BUILTINS: &[&str] = &["quadratic", "es_quadratic", "quartic", "es_quartic", "half_square"];

impl StaticMap {
    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self, EsError> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(EsError::MapSpec("coefficients must be finite and non-empty".into()));
        }
        let p0 = Polynomial::new(coeffs);
        let p1 = p0.derivative();
        let p2 = p1.derivative();
        let p3 = p2.derivative();
        let name = format!("polynomial{:?}", p0.coeffs());
        let wrap = |p: &Polynomial| -> ScalarFn {
            let p = p.clone();
            Arc::new(move |x| p.eval(x))
        };
        Ok(Self {
            name,
            h: wrap(&p0),
            h1: wrap(&p1),
            h2: wrap(&p2),
            h3: wrap(&p3),
            kind: MapKind::Polynomial {
                coeffs: p0.coeffs().to_vec(),
            },
            polys: Some([p0, p1, p2, p3]),
        })
    }

    /// `h(x) = g + e x²`.
    pub fn quadratic(g: f64, e: f64) -> Self {
        let mut m = Self::polynomial(vec![g, 0.0, e]).expect("finite coefficients");
        m.name = format!("quadratic(G={g}, E={e})");
        m
    }

    /// `h(x) = x² + x⁴`.
    pub fn quartic() -> Self {
        let mut m = Self::polynomial(vec![0.0, 0.0, 1.0, 0.0, 1.0]).expect("finite coefficients");
        m.name = "quartic".into();
        m
    }

    pub fn generic<H, H1, H2, H3>(name: impl Into<String>, h: H, h1: H1, h2: H2, h3: H3) -> Self
    where
        H: Fn(f64) -> f64 + Send + Sync + 'static,
        H1: Fn(f64) -> f64 + Send + Sync + 'static,
        H2: Fn(f64) -> f64 + Send + Sync + 'static,
        H3: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            h: Arc::new(h),
            h1: Arc::new(h1),
            h2: Arc::new(h2),
            h3: Arc::new(h3),
            kind: MapKind::Generic,
            polys: None,
        }
    }

    /// Parses `c0 c1 c2 ...` (whitespace or comma separated) or a builtin name:
    /// `quadratic`/`es_quadratic` (`1 + x²`), `quartic`/`es_quartic`
    /// (`x² + x⁴`), `half_square` (`x²/2`).
    pub fn parse(spec: &str) -> Result<Self, EsError> {
        let s = spec.trim();
        match s {
            "quadratic" | "es_quadratic" => return Ok(Self::quadratic(1.0, 1.0)),
            "quartic" | "es_quartic" => return Ok(Self::quartic()),
            "half_square" => {
                let mut m = Self::polynomial(vec![0.0, 0.0, 0.5])?;
                m.name = "half_square".into();
                return Ok(m);
            }
            _ => {}
        }
        let coeffs: Result<Vec<f64>, _> = s
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::parse::<f64>)
            .collect();
        match coeffs {
            Ok(c) if !c.is_empty() => Self::polynomial(c),
            _ => Err(EsError::MapSpec(format!(
                "expected coefficients `c0 c1 ...` or one of {BUILTINS:?}, got {s:?}"
            ))),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.h)(x)
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        self.polys.as_ref().map(|p| &p[0])
    }

    /// `(𝒢, E)` when `h = 𝒢 + E x²` with `E > 0`.
    pub fn quadratic_coefficients(&self) -> Option<(f64, f64)> {
        let p = self.as_polynomial()?;
        match p.coeffs() {
            [g, b, e] if *b == 0.0 && *e > 0.0 => Some((*g, *e)),
            _ => None,
        }
    }

    /// `max_{|z| ≤ r} |h^{(order)}(z)|`.
    pub fn max_abs(&self, order: usize, r: f64) -> f64 {
        assert!(order <= 3, "derivatives up to third order are available");
        match &self.polys {
            Some(p) => p[order].max_abs_on(-r, r),
            None => {
                let g = match order {
                    0 => &self.h,
                    1 => &self.h1,
                    2 => &self.h2,
                    _ => &self.h3,
                };
                scan_max_abs(g.as_ref(), -r, r)
            }
        }
    }

    /// Largest relative mismatch between `h1, h2, h3` and central differences.
    pub fn derivative_defect(&self, points: &[f64]) -> f64 {
        let pairs: [(&ScalarFn, &ScalarFn); 3] = [(&self.h, &self.h1), (&self.h1, &self.h2), (&self.h2, &self.h3)];
        let mut worst = 0.0f64;
        for &x in points {
            let d = 1e-5 * (1.0 + x.abs());
            for (f, df) in pairs {
                let fd = (f(x + d) - f(x - d)) / (2.0 * d);
                let exact = df(x);
                worst = worst.max((fd - exact).abs() / (1.0 + exact.abs()));
            }
        }
        worst
    }

    pub fn check_assumptions(&self, radius: f64, samples: usize) -> AssumptionReport {
        let mut worst_x = 0.0;
        let mut worst_val = f64::INFINITY;
        for x in linspace(-radius, radius, samples.max(2)) {
            if x == 0.0 {
                continue;
            }
            let v = (self.h1)(x) * x;
            if v < worst_val {
                worst_val = v;
                worst_x = x;
            }
        }
        let h1_at_zero = (self.h1)(0.0);
        let h2_at_zero = (self.h2)(0.0);
        let sign_condition = worst_val > 0.0;
        AssumptionReport {
            holds: sign_condition && h1_at_zero.abs() <= 1e-12 && h2_at_zero > 0.0,
            sign_condition,
            worst_x,
            h1_at_zero,
            h2_at_zero,
        }
    }

    /// Sampled check `|h(x) − h(−x)| ≤ 1e−12 (1 + |h(x)|)` on `(0, radius]`.
    pub fn check_even(&self, radius: f64, samples: usize) -> Result<(), EsError> {
        for i in 1..=samples {
            let x = radius * i as f64 / samples as f64;
            let hx = self.eval(x);
            let defect = (hx - self.eval(-x)).abs();
            if defect > 1e-12 * (1.0 + hx.abs()) {
                return Err(EsError::NotEven { x, defect });
            }
        }
        Ok(())
    }
}

/// `max |g|` on `[lo, hi]` by a 4096-cell scan with three Newton refinements
/// of each interior local maximum.
fn scan_max_abs(g: &(dyn Fn(f64) -> f64 + Send + Sync), lo: f64, hi: f64) -> f64 {
    const CELLS: usize = 4096;
    let xs = linspace(lo, hi, CELLS);
    let vals: Vec<f64> = xs.iter().map(|&x| g(x).abs()).collect();
    let mut best = vals.iter().copied().fold(0.0, f64::max);
    let h = (hi - lo) / CELLS as f64;
    let d = 1e-3 * h.max(f64::EPSILON);
    for i in 1..CELLS {
        if vals[i] < vals[i - 1] || vals[i] < vals[i + 1] {
            continue;
        }
        let mut x = xs[i];
        for _ in 0..3 {
            let (gp, g0, gm) = (g(x + d).abs(), g(x).abs(), g(x - d).abs());
            let slope = (gp - gm) / (2.0 * d);
            let curv = (gp - 2.0 * g0 + gm) / (d * d);
            if !(curv < 0.0) {
                break;
            }
            let next = x - slope / curv;
            if (next - xs[i]).abs() > h {
                break;
            }
            x = next;
        }
        best = best.max(g(x).abs());
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsParams {
    pub epsilon: f64,
    /// Dither amplitude.
    pub a: f64,
    /// Initial-condition radius `R`.
    pub radius: f64,
    /// Half-width of the certificate box.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
}

impl EsParams {
    pub fn new(epsilon: f64, a: f64, radius: f64) -> Self {
        Self {
            epsilon,
            a,
            radius,
            b: None,
        }
    }

    pub fn with_b(mut self, b: f64) -> Self {
        self.b = Some(b);
        self
    }

    pub fn validate(&self) -> Result<(), EsError> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.epsilon) || !pos(self.a) || !pos(self.radius) || self.b.is_some_and(|b| !pos(b)) {
            return Err(EsError::InvalidParams(format!(
                "epsilon, a, radius and b must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    fn require_b(&self) -> Result<f64, EsError> {
        self.b
            .ok_or_else(|| EsError::InvalidParams("the certificate box half-width b is required".into()))
    }

    fn require_small_dither(&self) -> Result<(), EsError> {
        if self.a > 1.0 {
            return Err(EsError::InvalidParams(format!(
                "this path requires a ≤ 1, got {}",
                self.a
            )));
        }
        Ok(())
    }
}

pub fn build_es_system(map: &StaticMap, params: &EsParams) -> Result<TimePeriodicSystem, EsError> {
    params.validate()?;
    let (eps, a) = (params.epsilon, params.a);
    let (h, h1) = (Arc::clone(&map.h), Arc::clone(&map.h1));
    Ok(TimePeriodicSystem::scalar(
        2.0 * PI,
        move |t, x| -eps * t.sin() * h(x + a * t.sin()),
        move |t, x| -eps * t.sin() * h1(x + a * t.sin()),
    )?)
}

/// `min_{|w| ≤ 2R+1} ∫₀¹ h''(λw) dλ` on `n_points` equally spaced `w`
/// (odd counts include `w = 0`), inner integral by 65-point Gauss–Legendre.
pub fn compute_sigma(map: &StaticMap, radius: f64, n_points: usize) -> Result<f64, EsError> {
    if !(radius > 0.0) || n_points < 2 {
        return Err(EsError::InvalidParams(
            "sigma needs R > 0 and at least two grid points".into(),
        ));
    }
    let b = 2.0 * radius + 1.0;
    let gl = GaussLegendre::new(65);
    let (w, value) = linspace(-b, b, n_points - 1)
        .into_par_iter()
        .map(|w| (w, gl.integrate(|l| (map.h2)(l * w), 0.0, 1.0)))
        .reduce(
            || (0.0, f64::INFINITY),
            |x, y| if y.1 < x.1 || (y.1 == x.1 && y.0 < x.0) { y } else { x },
        );
    if !(value > 0.0) {
        return Err(EsError::SigmaNonPositive { w, value });
    }
    Ok(value)
}

pub const SIGMA_POINTS: usize = 4097;

/// One evaluated inequality; `margin = lhs − rhs`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub strict: bool,
}

impl CheckResult {
    pub fn less(lhs: f64, rhs: f64) -> Self {
        Self {
            holds: lhs < rhs,
            lhs,
            rhs,
            margin: lhs - rhs,
            strict: true,
        }
    }

    pub fn less_eq(lhs: f64, rhs: f64) -> Self {
        Self {
            holds: lhs <= rhs,
            lhs,
            rhs,
            margin: lhs - rhs,
            strict: false,
        }
    }
}

/// Interval maxima entering the conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsMaxima {
    /// `max_{|z|≤2R+1} |h|`
    pub h_2r1: f64,
    /// `max_{|z|≤2R+2} |h|`
    pub h_2r2: f64,
    /// `max_{|z|≤2R+2} |h'|`
    pub h1_2r2: f64,
    /// `max_{|z|≤3R+2} |h'|`
    pub h1_3r2: f64,
    /// `max_{|z|≤2R+2} |h'''|`, the constant γ.
    pub h3_2r2: f64,
    /// `max_{|z|≤R+a} |h|`
    pub h_ra: f64,
    /// `max_{|z|≤R+a} |h'|`
    pub h1_ra: f64,
    /// `max_{|s|≤b+a} |h'''|`, when `b` is given.
    pub h3_ba: Option<f64>,
}

impl EsMaxima {
    pub fn compute(map: &StaticMap, p: &EsParams) -> Self {
        let r = p.radius;
        Self {
            h_2r1: map.max_abs(0, 2.0 * r + 1.0),
            h_2r2: map.max_abs(0, 2.0 * r + 2.0),
            h1_2r2: map.max_abs(1, 2.0 * r + 2.0),
            h1_3r2: map.max_abs(1, 3.0 * r + 2.0),
            h3_2r2: map.max_abs(3, 2.0 * r + 2.0),
            h_ra: map.max_abs(0, r + p.a),
            h1_ra: map.max_abs(1, r + p.a),
            h3_ba: p.b.map(|b| map.max_abs(3, b + p.a)),
        }
    }
}

/// Every explicit condition and bound for one `(h, ε, a, R, b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsAnalysis {
    pub map: String,
    pub params: EsParams,
    pub sigma: f64,
    pub sigma_grid_points: usize,
    pub gamma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub h2_at_zero: f64,
    pub maxima: EsMaxima,
    pub assumptions: AssumptionReport,
    /// `4b + 2(b+a)²·max_{|z|≤b+a}|h‴|/h''(0) < aπ`: the certificate integral on `[−b, b]` is negative.
    pub box_contraction: Option<CheckResult>,
    /// `8ε·max_{|z|≤2R+2}|h'| < 1`
    pub slope_condition: CheckResult,
    /// `8ε·max_{|z|≤2R+1}|h| ≤ R`
    pub drift_condition: CheckResult,
    /// `a²γ/(6σ) + 16ε/(aσ)·max_{|z|≤2R+2}|h|·max_{|z|≤3R+2}|h'| ≤ R`
    pub radius_condition: CheckResult,
    /// `aγ(12σh''(0) + (γ+6σ)²) < 18σ²h''(0)π`
    pub dither_contraction: CheckResult,
    /// `a²γ < 6σR`
    pub dither_radius: CheckResult,
    /// `επ/2·max_{|z|≤R+a}|h| ≤ R`
    pub short_time_drift: CheckResult,
    /// `επ/2·max_{|z|≤R+a}|h'| < 1`
    pub short_time_slope: CheckResult,
    /// `a²γ/(6σ) + εK < b`, when `b` is given.
    pub periodic_bound_in_box: Option<CheckResult>,
    /// Conditions for the asymptotic bound hold and `a ≤ 1`.
    pub asymptotic_bound_applies: bool,
    /// `a²γ/(6σ) + εK`, eventual bound on trajectories starting in `[−R, R]`.
    pub residual_bound: f64,
    /// `a²γ/(6σ) + εK`, the size bound of the attracting periodic solution.
    pub periodic_bound: f64,
    #[serde(rename = "quadratic_bound_Ppp")]
    pub quadratic_bound_ppp: Option<f64>,
    /// Largest ε (by bisection) for which the `b`-dependent conditions all hold.
    pub epsilon_star_empirical: Option<f64>,
}

struct Fixed {
    sigma: f64,
    h2_0: f64,
    m: EsMaxima,
}

impl Fixed {
    fn k(&self, a: f64) -> f64 {
        8.0 * self.m.h_2r2 * (2.0 / (a * self.sigma) * self.m.h1_3r2 + 1.0)
    }

    fn box_contraction(&self, a: f64, b: f64) -> CheckResult {
        let h3 = self.m.h3_ba.unwrap_or(0.0);
        CheckResult::less(4.0 * b + 2.0 * (b + a).powi(2) / self.h2_0 * h3, a * PI)
    }

    fn slope_condition(&self, eps: f64) -> CheckResult {
        CheckResult::less(8.0 * eps * self.m.h1_2r2, 1.0)
    }

    fn drift_condition(&self, eps: f64, r: f64) -> CheckResult {
        CheckResult::less_eq(8.0 * eps * self.m.h_2r1, r)
    }

    fn radius_condition(&self, eps: f64, a: f64, r: f64) -> CheckResult {
        let s = self.sigma;
        CheckResult::less_eq(
            a * a / (6.0 * s) * self.m.h3_2r2 + 16.0 * eps / (a * s) * self.m.h_2r2 * self.m.h1_3r2,
            r,
        )
    }

    fn periodic_bound(&self, eps: f64, a: f64) -> f64 {
        a * a * self.m.h3_2r2 / (6.0 * self.sigma) + eps * self.k(a)
    }

    fn all_b_conditions(&self, eps: f64, a: f64, r: f64, b: f64) -> bool {
        self.box_contraction(a, b).holds
            && self.slope_condition(eps).holds
            && self.drift_condition(eps, r).holds
            && self.radius_condition(eps, a, r).holds
            && self.periodic_bound(eps, a) < b
    }
}

pub fn analyze(map: &StaticMap, params: &EsParams) -> Result<EsAnalysis, EsError> {
    params.validate()?;
    let (eps, a, r) = (params.epsilon, params.a, params.radius);
    let sigma = compute_sigma(map, r, SIGMA_POINTS)?;
    let m = EsMaxima::compute(map, params);
    let h2_0 = (map.h2)(0.0);
    let fx = Fixed { sigma, h2_0, m };
    let gamma = m.h3_2r2;
    let k = fx.k(a);

    let dither_contraction = CheckResult::less(
        a * gamma * (12.0 * sigma * h2_0 + (gamma + 6.0 * sigma).powi(2)),
        18.0 * sigma * sigma * h2_0 * PI,
    );
    let dither_radius = CheckResult::less(a * a * gamma, 6.0 * sigma * r);
    let short_time_drift = CheckResult::less_eq(eps * PI / 2.0 * m.h_ra, r);
    let short_time_slope = CheckResult::less(eps * PI / 2.0 * m.h1_ra, 1.0);
    let slope_condition = fx.slope_condition(eps);
    let drift_condition = fx.drift_condition(eps, r);
    let radius_condition = fx.radius_condition(eps, a, r);
    let periodic_bound = fx.periodic_bound(eps, a);
    let residual_bound = a * a / (6.0 * sigma) * gamma + 8.0 * eps * m.h_2r2 * (2.0 / (a * sigma) * m.h1_3r2 + 1.0);

    let quadratic_bound_ppp = map
        .quadratic_coefficients()
        .map(|(g, e)| 8.0 * eps * (6.0 * r + 4.0 + a) / a * (g.abs() + 4.0 * e * (r + 1.0).powi(2)));

    let (box_contraction, periodic_bound_in_box, epsilon_star_empirical) = match params.b {
        Some(b) => (
            Some(fx.box_contraction(a, b)),
            Some(CheckResult::less(periodic_bound, b)),
            empirical_epsilon_star(&fx, a, r, b),
        ),
        None => (None, None, None),
    };

    Ok(EsAnalysis {
        map: map.name.clone(),
        params: *params,
        sigma,
        sigma_grid_points: SIGMA_POINTS,
        gamma,
        k,
        h2_at_zero: h2_0,
        maxima: m,
        assumptions: map.check_assumptions(2.0 * r + 1.0, 4097),
        box_contraction,
        slope_condition,
        drift_condition,
        radius_condition,
        dither_contraction,
        dither_radius,
        short_time_drift,
        short_time_slope,
        periodic_bound_in_box,
        asymptotic_bound_applies: a <= 1.0 && slope_condition.holds && drift_condition.holds && radius_condition.holds,
        residual_bound,
        periodic_bound,
        quadratic_bound_ppp,
        epsilon_star_empirical,
    })
}

/// Bisection on ε; every condition involved is monotone in ε.
fn empirical_epsilon_star(fx: &Fixed, a: f64, r: f64, b: f64) -> Option<f64> {
    if a > 1.0 || !fx.all_b_conditions(f64::MIN_POSITIVE, a, r, b) {
        return None;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    while fx.all_b_conditions(hi, a, r, b) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Some(f64::INFINITY);
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if fx.all_b_conditions(mid, a, r, b) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// The bound function
/// `p(t) = −εa h''(0) sin²t + εb|sin t| h''(0) + (ε/2)|sin t|(b+a)² max_{|s|≤b+a}|h'''|`
/// and its closed-form integral over one period.
pub fn certificate_p_fn(map: &StaticMap, params: &EsParams) -> Result<(BoundFn, f64), EsError> {
    params.validate()?;
    let b = params.require_b()?;
    let (eps, a) = (params.epsilon, params.a);
    let h2_0 = (map.h2)(0.0);
    let m3 = map.max_abs(3, b + a);
    let p: BoundFn = Arc::new(move |t: f64| {
        let s = t.sin();
        -eps * a * h2_0 * s * s + eps * b * s.abs() * h2_0 + 0.5 * eps * s.abs() * (b + a).powi(2) * m3
    });
    let integral = -eps * a * h2_0 * PI + 4.0 * eps * b * h2_0 + 2.0 * eps * (b + a).powi(2) * m3;
    Ok((p, integral))
}

/// Grid check of `−ε sin t h'(z + a sin t) ≤ p(t)` on `[0, 2π] × [−b, b]`.
pub fn verify_jacobian_bound(map: &StaticMap, params: &EsParams, grid: &GridSpec) -> Result<ConditionReport, EsError> {
    let b = params.require_b()?;
    let sys = build_es_system(map, params)?;
    let (p, _) = certificate_p_fn(map, params)?;
    Ok(check_mu_bound(
        &sys,
        &BoxRegion::interval(b),
        &NormKind::Two,
        move |t| p(t),
        grid,
    )?)
}

/// Contraction certificate on `[−b, b]` with the bound function above.
pub fn es_certificate(map: &StaticMap, params: &EsParams, grid: &GridSpec) -> Result<CertificateOutcome, EsError> {
    let b = params.require_b()?;
    let sys = build_es_system(map, params)?;
    let (p, _) = certificate_p_fn(map, params)?;
    Ok(build_certificate(
        &sys,
        &BoxRegion::interval(b),
        BoundSpec::Given(p),
        NormKind::Two,
        grid,
    )?)
}

/// The averaging change of variables `x = Φ(t, w) = w + ε q(t, w)`.
#[derive(Clone)]
pub struct AveragingProbe {
    map: StaticMap,
    params: EsParams,
    /// `B = 2R + 1`.
    pub b_radius: f64,
    pub report: ProbeReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    /// `Φ(t, ·)` increasing on `[−B, B]` at every sampled `t`.
    pub phi_monotone: bool,
    pub slope_condition_holds: bool,
    /// Largest sampled `|q(t, w)|`.
    pub q_max: f64,
    /// `8 max_{|z|≤B+1} |h|`.
    pub q_bound: f64,
    pub q_bound_holds: bool,
    pub time_samples: usize,
    pub w_samples: usize,
}

const QUAD_TOL: f64 = 1e-13;

impl AveragingProbe {
    fn integrand(&self, w: f64) -> impl Fn(f64) -> f64 + '_ {
        let a = self.params.a;
        move |s: f64| s.sin() * self.map.eval(w + a * s.sin())
    }

    /// `h̄(w) = (1/2π) ∫₀^{2π} sin t h(w + a sin t) dt`.
    pub fn hbar(&self, w: f64) -> f64 {
        adaptive_simpson(self.integrand(w), 0.0, 2.0 * PI, QUAD_TOL) / (2.0 * PI)
    }

    /// `q(t, w) = t h̄(w) − ∫₀ᵗ sin s h(w + a sin s) ds`.
    pub fn q(&self, t: f64, w: f64) -> f64 {
        t * self.hbar(w) - adaptive_simpson(self.integrand(w), 0.0, t, QUAD_TOL)
    }

    pub fn phi(&self, t: f64, w: f64) -> f64 {
        w + self.params.epsilon * self.q(t, w)
    }
}

/// Builds the probe and checks monotonicity of `Φ(t, ·)` on `[−B, B]` and the
/// bound `|q| ≤ 8 max_{|z|≤B+1}|h|` on a 256 × 129 grid of `[0, 2π] × [−B, B]`.
pub fn averaging_probe(map: &StaticMap, params: &EsParams) -> Result<AveragingProbe, EsError> {
    params.validate()?;
    params.require_small_dither()?;
    const NT: usize = 256;
    const NW: usize = 129;
    let (eps, a) = (params.epsilon, params.a);
    let big_b = 2.0 * params.radius + 1.0;
    let ws = linspace(-big_b, big_b, NW - 1);
    let gl = GaussLegendre::new(8);
    let dt = 2.0 * PI / NT as f64;

    // phi[i][j] = Φ(t_j, w_i), q_abs[i] = max_j |q(t_j, w_i)|
    let rows: Vec<(Vec<f64>, f64)> = ws
        .par_iter()
        .map(|&w| {
            let f = |s: f64| s.sin() * map.eval(w + a * s.sin());
            let mut cum = vec![0.0; NT + 1];
            for j in 0..NT {
                let t = j as f64 * dt;
                cum[j + 1] = cum[j] + gl.integrate(f, t, t + dt);
            }
            let hbar = cum[NT] / (2.0 * PI);
            let mut q_max = 0.0f64;
            let phi: Vec<f64> = (0..=NT)
                .map(|j| {
                    let q = j as f64 * dt * hbar - cum[j];
                    q_max = q_max.max(q.abs());
                    w + eps * q
                })
                .collect();
            (phi, q_max)
        })
        .collect();

    let phi_monotone = (0..=NT).all(|j| rows.windows(2).all(|r| r[1].0[j] > r[0].0[j]));
    let q_max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let q_bound = 8.0 * map.max_abs(0, big_b + 1.0);
    let slope_condition_holds = 8.0 * eps * map.max_abs(1, 2.0 * params.radius + 2.0) < 1.0;
    if slope_condition_holds && !phi_monotone {
        return Err(EsError::Inconsistent(
            "Φ(t, ·) is not increasing although 8ε max|h'| < 1".into(),
        ));
    }
    Ok(AveragingProbe {
        map: map.clone(),
        params: *params,
        b_radius: big_b,
        report: ProbeReport {
            phi_monotone,
            slope_condition_holds,
            q_max,
            q_bound,
            q_bound_holds: q_max <= q_bound,
            time_samples: NT,
            w_samples: NW,
        },
    })
}

/// Periodic solution of the even-map case from the half-period fixed point.
#[derive(Debug, Clone)]
pub struct EvenMapSolution {
    pub solution: PeriodicSolution,
    pub iterations: usize,
    /// `επ/2 max_{|z|≤R+a}|h'|`.
    pub contraction_factor: f64,
    /// Richardson estimate of the trapezoid error.
    pub discretization_error: f64,
    /// Sup distance to a tight integration of the flow from `x(0)` over one period.
    pub flow_residual: f64,
    pub sup_norm: f64,
    /// `επ/2 max_{|z|≤R+a}|h|`.
    pub sup_bound: f64,
    /// `|x(0) + x(π)|`.
    pub antisymmetry_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvenMapRecord {
    pub anchor: f64,
    pub iterations: usize,
    pub grid_n: usize,
    pub contraction_factor: f64,
    pub discretization_error: f64,
    pub flow_residual: f64,
    pub period_residual: f64,
    pub sup_norm: f64,
    pub sup_bound: f64,
    pub antisymmetry_defect: f64,
}

impl EvenMapSolution {
    pub fn record(&self, grid_n: usize) -> EvenMapRecord {
        EvenMapRecord {
            anchor: self.solution.anchor[0],
            iterations: self.iterations,
            grid_n,
            contraction_factor: self.contraction_factor,
            discretization_error: self.discretization_error,
            flow_residual: self.flow_residual,
            period_residual: self.solution.residual,
            sup_norm: self.sup_norm,
            sup_bound: self.sup_bound,
            antisymmetry_defect: self.antisymmetry_defect,
        }
    }
}

const PICARD_MAX_ITERS: usize = 100_000;

/// Picard iteration of `(Px)(t) = ε/2 [∫ₜ^π − ∫₀ᵗ] sin s h(x(s) + a sin s) ds`
/// on `[0, π]`, with trapezoid quadrature on `grid_n` cells.
fn picard(map: &StaticMap, eps: f64, a: f64, grid_n: usize, stop: f64) -> (Vec<f64>, Vec<f64>, usize) {
    let ts = linspace(0.0, PI, grid_n);
    let sines: Vec<f64> = ts.iter().map(|t| t.sin()).collect();
    let mut x = vec![0.0; ts.len()];
    let mut vals = vec![0.0; ts.len()];
    for it in 1..=PICARD_MAX_ITERS {
        for j in 0..ts.len() {
            vals[j] = sines[j] * map.eval(x[j] + a * sines[j]);
        }
        let c = cumulative_trapezoid(&ts, &vals);
        let total = c[grid_n];
        let mut gap = 0.0f64;
        for j in 0..ts.len() {
            let next = 0.5 * eps * (total - 2.0 * c[j]);
            gap = gap.max((next - x[j]).abs());
            x[j] = next;
        }
        if gap <= stop {
            return (ts, x, it);
        }
    }
    (ts, x, PICARD_MAX_ITERS)
}

/// Periodic solution for even `h` with `x(t + π) = −x(t)`.
///
/// Requires `επ/2 max_{|z|≤R+a}|h| ≤ R` and `επ/2 max_{|z|≤R+a}|h'| < 1`.
/// The iteration stops at sup-gap `tol (1 − κ)`; the solution is the
/// Richardson combination of the `grid_n` and `2 grid_n` runs.
pub fn solve_even_map_fixed_point(
    map: &StaticMap,
    params: &EsParams,
    grid_n: usize,
    tol: f64,
) -> Result<EvenMapSolution, EsError> {
    params.validate()?;
    if grid_n < 2 || !(tol > 0.0) {
        return Err(EsError::InvalidParams("grid_n ≥ 2 and tol > 0 are required".into()));
    }
    let (eps, a, r) = (params.epsilon, params.a, params.radius);
    map.check_even(2.0 * r + 2.0, 128)?;
    let h_ra = map.max_abs(0, r + a);
    let h1_ra = map.max_abs(1, r + a);
    let c14a = CheckResult::less_eq(eps * PI / 2.0 * h_ra, r);
    let c14b = CheckResult::less(eps * PI / 2.0 * h1_ra, 1.0);
    if !c14a.holds || !c14b.holds {
        return Err(EsError::Precondition(vec![
            ("short_time_drift".into(), c14a),
            ("short_time_slope".into(), c14b),
        ]));
    }
    let kappa = c14b.lhs;
    let stop = tol * (1.0 - kappa);
    let (ts, coarse, iterations) = picard(map, eps, a, grid_n, stop);
    let (_, fine, _) = picard(map, eps, a, 2 * grid_n, stop);

    let mut disc = 0.0f64;
    let half: Vec<f64> = coarse
        .iter()
        .enumerate()
        .map(|(j, &xc)| {
            let xf = fine[2 * j];
            disc = disc.max((xf - xc).abs() / 3.0);
            (4.0 * xf - xc) / 3.0
        })
        .collect();

    // Antisymmetric extension to [0, 2π].
    let rhs = |t: f64, x: f64| -eps * t.sin() * map.eval(x + a * t.sin());
    let mut times = ts.clone();
    let mut states: Vec<Vec<f64>> = half.iter().map(|&x| vec![x]).collect();
    for j in 1..ts.len() {
        times.push(ts[j] + PI);
        states.push(vec![-half[j]]);
    }
    let derivatives = times.iter().zip(&states).map(|(&t, x)| vec![rhs(t, x[0])]).collect();
    let samples = Trajectory {
        t0: 0.0,
        times,
        states,
        derivatives,
        escaped: false,
        escape_time: None,
    };

    let sys = build_es_system(map, params)?;
    let tight = IntegratorConfig {
        max_step: PI / grid_n as f64,
        ..IntegratorConfig::adaptive(1e-13, 1e-13)
    };
    let check = flow(&sys, 0.0, &[half[0]], 2.0 * PI, &tight)?;
    let flow_residual = samples
        .times
        .iter()
        .zip(&samples.states)
        .map(|(&t, x)| (check.interpolate(t).expect("within span")[0] - x[0]).abs())
        .fold(0.0, f64::max);
    let period_residual = (check.endpoint()[0] - half[0]).abs();

    let sup_norm = half.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let antisymmetry_defect = (half[0] + half[grid_n]).abs();
    let mut solution = PeriodicSolution::from_trajectory(samples, SolveMethod::DirectFixedPoint, 2.0 * PI);
    solution.residual = period_residual;

    Ok(EvenMapSolution {
        solution,
        iterations,
        contraction_factor: kappa,
        discretization_error: disc,
        flow_residual,
        sup_norm,
        sup_bound: c14a.lhs,
        antisymmetry_defect,
    })
}

/// Per-trajectory result of a long simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinSample {
    pub x0: f64,
    /// `max |x(t)|` over the last period.
    pub last_period_sup: f64,
    /// Sup distance to the reference periodic solution over the last period.
    pub distance_to_reference: Option<f64>,
    pub escaped: bool,
}

/// Simulates `ẋ = −ε sin t h(x + a sin t)` from each `x0` over `periods` periods.
pub fn simulate_basin(
    map: &StaticMap,
    params: &EsParams,
    x0s: &[f64],
    periods: usize,
    reference: Option<&PeriodicSolution>,
    cfg: &IntegratorConfig,
) -> Result<Vec<BasinSample>, EsError> {
    const CHECK_POINTS: usize = 512;
    let sys = build_es_system(map, params)?;
    let t_end = 2.0 * PI * periods as f64;
    let t_start = t_end - 2.0 * PI;
    x0s.par_iter()
        .map(|&x0| {
            let tr = flow(&sys, 0.0, &[x0], t_end, cfg)?;
            if tr.escaped {
                return Ok(BasinSample {
                    x0,
                    last_period_sup: f64::INFINITY,
                    distance_to_reference: reference.map(|_| f64::INFINITY),
                    escaped: true,
                });
            }
            let mut sup = 0.0f64;
            let mut dist = 0.0f64;
            let mut probe = |t: f64| {
                let x = tr.interpolate(t).expect("within span")[0];
                sup = sup.max(x.abs());
                if let Some(sol) = reference {
                    dist = dist.max((x - sol.value_at(t)[0]).abs());
                }
            };
            for i in 0..=CHECK_POINTS {
                probe(t_start + 2.0 * PI * i as f64 / CHECK_POINTS as f64);
            }
            for (&t, x) in tr.times.iter().zip(&tr.states) {
                if t >= t_start {
                    sup = sup.max(x[0].abs());
                }
            }
            Ok(BasinSample {
                x0,
                last_period_sup: sup,
                distance_to_reference: reference.map(|_| dist),
                escaped: false,
            })
        })
        .collect()
}
