use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use esperiod::cascade::{cascade_system, run_cascade, write_cascade_csv, CascadeReport};
use esperiod::es::{
    analyze, averaging_probe, build_es_system, es_certificate, simulate_basin, solve_even_map_fixed_point, BasinSample,
    EsAnalysis, EsParams, EvenMapRecord, ProbeReport, StaticMap,
};
use esperiod::finder::{
    build_certificate, find_periodic_contraction_with, find_periodic_scalar, BoundSpec, CertificateOutcome,
    CertificateRecord, CertificateRejection, Direction, PeriodicSolution, ReturnMap, ScalarOutcome, ScalarSearch,
    SolutionRecord,
};
use esperiod::flow::{flow, fmt_sig17, IntegratorConfig, TimePeriodicSystem};
use esperiod::lognorm::NormKind;
use esperiod::planar::{find_planar_periodic, OrbitRecord, PlanarOutcome, PlanarSystem};
use esperiod::quadrature::linspace;
use esperiod::region::{BoxRegion, GridSpec};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{BoundChoice, Builtin, Command, EsMethod, NormChoice, RunConfig, SearchMethod};
use crate::error::CliError;
use crate::output::OutputDir;

/// Result of a completed run whose report was written.
#[derive(Debug)]
pub struct RunSummary {
    pub status: String,
    pub exit_code: u8,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    command: &'static str,
    status: &'a str,
    config: &'a RunConfig,
    result: T,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    out: OutputDir,
    integrator: IntegratorConfig,
}

impl Run<'_> {
    fn finish<T: Serialize>(mut self, status: &str, exit_code: u8, result: T) -> Result<RunSummary, CliError> {
        let report = Report {
            command: self.cfg.command().name(),
            status,
            config: self.cfg,
            result,
        };
        self.out.write_json("report.json", &report)?;
        Ok(RunSummary {
            status: status.to_string(),
            exit_code,
            files: self.out.written().to_vec(),
        })
    }
}

/// Executes a resolved configuration, writing its artifacts into the output directory.
pub fn run(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let run = Run {
        cfg,
        out: OutputDir::create(cfg.output_dir())?,
        integrator: cfg.integrator.to_config(),
    };
    match cfg.command() {
        Command::Simulate => simulate(run),
        Command::FindPeriodic => find_periodic(run),
        Command::Certify => certify(run),
        Command::EsAnalyze => es_analyze(run),
        Command::EsSolve => es_solve(run),
        Command::Planar => planar(run),
        Command::DemoCascade => demo_cascade(run),
    }
}

fn es_map(cfg: &RunConfig) -> Result<StaticMap, CliError> {
    match cfg.system() {
        Builtin::EsQuadratic => Ok(StaticMap::quadratic(1.0, 1.0)),
        Builtin::EsQuartic => Ok(StaticMap::quartic()),
        Builtin::EsPolynomial => Ok(StaticMap::parse(cfg.es.map.as_deref().unwrap_or_default())?),
        other => Err(CliError::Config(format!(
            "`{}` needs an extremum-seeking system, got {other:?}",
            cfg.command().name()
        ))),
    }
}

fn es_params(cfg: &RunConfig) -> EsParams {
    let es = &cfg.es;
    let p = EsParams::new(es.epsilon, es.a, es.radius);
    match es.b {
        Some(b) => p.with_b(b),
        None => p,
    }
}

fn planar_system(cfg: &RunConfig) -> Result<PlanarSystem, CliError> {
    match cfg.system() {
        Builtin::HopfCircle => Ok(PlanarSystem::hopf_circle()),
        Builtin::SpiralIn => Ok(PlanarSystem::spiral_in()),
        Builtin::Ellipse => {
            let mut ps = PlanarSystem::hopf(cfg.planar.beta.unwrap_or(2.0), cfg.planar.omega.unwrap_or(1.0))?;
            ps.name = "ellipse".into();
            Ok(ps)
        }
        other => Err(CliError::Config(format!(
            "`planar` needs a planar system, got {other:?}"
        ))),
    }
}

fn build_system(cfg: &RunConfig) -> Result<TimePeriodicSystem, CliError> {
    let system = cfg.system();
    let scalar = |f: fn(f64, f64) -> f64, df: fn(f64, f64) -> f64| TimePeriodicSystem::scalar(2.0 * PI, f, df);
    Ok(match system {
        Builtin::LinearTest => scalar(|t, x| -x + t.sin(), |_, _| -1.0)?,
        Builtin::Zero => scalar(|_, _| 0.0, |_, _| 0.0)?,
        Builtin::ExpGrowth => scalar(|_, x| x, |_, _| 1.0)?,
        Builtin::VdpCascade => cascade_system(cfg.cascade.mu)?,
        s if s.is_es() => build_es_system(&es_map(cfg)?, &es_params(cfg))?,
        _ => planar_system(cfg)?.as_system(),
    })
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Serialize)]
struct SimulateResult {
    dim: usize,
    period: f64,
    rows: usize,
    t_end: f64,
    endpoint: Vec<f64>,
    escaped: bool,
    escape_time: Option<f64>,
    csv: &'static str,
}

fn simulate(mut run: Run) -> Result<RunSummary, CliError> {
    let cfg = run.cfg;
    let sys = build_system(cfg)?;
    let sim = &cfg.simulate;
    let x0 = sim.x0.clone().unwrap_or_default();
    if x0.len() != sys.dim() {
        return Err(config_err(format!(
            "simulate.x0 has {} entries, {:?} has dimension {}",
            x0.len(),
            cfg.system(),
            sys.dim()
        )));
    }
    let n = sim.periods * sim.samples_per_period;
    if n == 0 {
        return Err(config_err(
            "simulate.periods and simulate.samples_per_period must be positive",
        ));
    }
    let dt = sys.period() / sim.samples_per_period as f64;

    let mut rows: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n);
    let (mut t, mut x) = (sim.t0, x0);
    let mut escape_time = None;
    for k in 1..=n {
        let t1 = sim.t0 + k as f64 * dt;
        let tr = flow(&sys, t, &x, t1, &run.integrator)?;
        if tr.escaped {
            escape_time = Some(tr.escape_time.unwrap_or(tr.t_end()));
            break;
        }
        x = tr.endpoint().to_vec();
        t = t1;
        rows.push((t, x.clone()));
    }

    run.out.write_with("trajectory.csv", |w| {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((1..=sys.dim()).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (t, x) in &rows {
            write!(w, "{}", fmt_sig17(*t))?;
            for v in x {
                write!(w, ",{}", fmt_sig17(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let status = if escape_time.is_some() { "escaped" } else { "ok" };
    let result = SimulateResult {
        dim: sys.dim(),
        period: sys.period(),
        rows: rows.len(),
        t_end: t,
        endpoint: x,
        escaped: escape_time.is_some(),
        escape_time,
        csv: "trajectory.csv",
    };
    run.finish(status, 0, result)
}

fn norm_kind(cfg: &RunConfig, dim: usize) -> Result<NormKind, CliError> {
    let c = &cfg.certificate;
    Ok(match c.norm {
        NormChoice::One => NormKind::One,
        NormChoice::Two => NormKind::Two,
        NormChoice::Inf => NormKind::Inf,
        NormChoice::Weighted => {
            let rows = c
                .weight
                .as_ref()
                .ok_or_else(|| config_err("certificate.norm = \"weighted\" needs certificate.weight"))?;
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(config_err(format!("certificate.weight must be {dim}x{dim}")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            NormKind::weighted(DMatrix::from_row_slice(dim, dim, &flat))?
        }
    })
}

fn certificate(cfg: &RunConfig, sys: &TimePeriodicSystem) -> Result<CertificateOutcome, CliError> {
    let c = &cfg.certificate;
    let grid = GridSpec {
        time_samples: c.time_samples,
        axis_samples: c.axis_samples,
        slack: c.slack,
    };
    if c.bound == BoundChoice::Es {
        if c.norm != NormChoice::Two || c.lower.is_some() || c.upper.is_some() {
            return Err(config_err(
                "certificate.bound = \"es\" uses the two-norm on [-es.b, es.b]; drop norm/lower/upper",
            ));
        }
        return Ok(es_certificate(&es_map(cfg)?, &es_params(cfg), &grid)?);
    }
    let region = match (&c.lower, &c.upper) {
        (Some(lo), Some(hi)) => BoxRegion::new(lo.clone(), hi.clone())
            .ok_or_else(|| config_err("certificate.lower/upper must have equal length with lower ≤ upper"))?,
        (None, None) => BoxRegion::cube(sys.dim(), c.half_width),
        _ => return Err(config_err("certificate.lower and certificate.upper go together")),
    };
    let bound = match c.bound {
        BoundChoice::Envelope => BoundSpec::EmpiricalEnvelope,
        BoundChoice::Constant => {
            let p =
                c.p.ok_or_else(|| config_err("certificate.bound = \"constant\" needs certificate.p"))?;
            BoundSpec::Given(Arc::new(move |_| p))
        }
        BoundChoice::Es => unreachable!(),
    };
    Ok(build_certificate(
        sys,
        &region,
        bound,
        norm_kind(cfg, sys.dim())?,
        &grid,
    )?)
}

#[derive(Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
enum CertifyResult {
    Valid(CertificateRecord),
    Rejected(CertificateRejection),
}

fn certify(run: Run) -> Result<RunSummary, CliError> {
    let sys = build_system(run.cfg)?;
    match certificate(run.cfg, &sys)? {
        CertificateOutcome::Valid(c) => run.finish("valid", 0, CertifyResult::Valid(c.record())),
        CertificateOutcome::Rejected(r) => run.finish("rejected", 4, CertifyResult::Rejected(r)),
    }
}

#[derive(Serialize)]
struct MonotoneResult {
    outcome: &'static str,
    direction: Direction,
    iterations: usize,
    y_star: Option<f64>,
    last: f64,
    last_gap: f64,
    escape_time: Option<f64>,
    lipschitz: f64,
    envelope_constant: f64,
    solution: Option<SolutionRecord>,
    trace_csv: &'static str,
}

#[derive(Serialize)]
struct ContractionResult {
    certificate: Option<CertificateRecord>,
    rejection: Option<CertificateRejection>,
    iterations: usize,
    threshold: f64,
    solution: Option<SolutionRecord>,
    trace_csv: Option<&'static str>,
}

fn write_solution(out: &mut OutputDir, sol: &PeriodicSolution) -> Result<SolutionRecord, CliError> {
    out.write_with("solution.csv", |w| sol.samples.write_csv(w))?;
    Ok(sol.record(Some("solution.csv".into())))
}

fn find_periodic(mut run: Run) -> Result<RunSummary, CliError> {
    let cfg = run.cfg;
    let sys = build_system(cfg)?;
    let s = &cfg.search;
    let rm = ReturnMap::new(sys.clone(), s.t0, run.integrator.clone());
    match s.method {
        SearchMethod::Monotone => {
            if sys.dim() != 1 {
                return Err(config_err(
                    "monotone iteration needs a scalar system; use search.method = \"contraction\"",
                ));
            }
            let mut search = ScalarSearch::new(s.max_iters, s.tol);
            if s.lower.is_some() || s.upper.is_some() {
                search = search.with_bounds(s.lower.unwrap_or(f64::NEG_INFINITY), s.upper.unwrap_or(f64::INFINITY));
            }
            let (outcome, trace) = find_periodic_scalar(&rm, s.x0, &search)?;
            run.out.write_with("trace.csv", |w| trace.write_csv(w))?;
            let solution = match &outcome {
                ScalarOutcome::Periodic(sol) => Some(write_solution(&mut run.out, sol)?),
                _ => None,
            };
            let (last, last_gap, escape_time) = match &outcome {
                ScalarOutcome::Periodic(sol) => (sol.anchor[0], sol.residual, None),
                ScalarOutcome::Unbounded { last, escape_time, .. } => (*last, f64::INFINITY, *escape_time),
                ScalarOutcome::Inconclusive { last, gap, .. } => (*last, *gap, None),
            };
            let label = outcome.label();
            let result = MonotoneResult {
                outcome: label,
                direction: trace.direction,
                iterations: trace.y_seq.len().saturating_sub(1),
                y_star: trace.y_star,
                last,
                last_gap,
                escape_time,
                lipschitz: trace.lipschitz,
                envelope_constant: trace.envelope_constant,
                solution,
                trace_csv: "trace.csv",
            };
            let code = if matches!(outcome, ScalarOutcome::Inconclusive { .. }) {
                5
            } else {
                0
            };
            run.finish(label, code, result)
        }
        SearchMethod::Contraction => match certificate(cfg, &sys)? {
            CertificateOutcome::Rejected(r) => run.finish(
                "rejected",
                4,
                ContractionResult {
                    certificate: None,
                    rejection: Some(r),
                    iterations: 0,
                    threshold: f64::NAN,
                    solution: None,
                    trace_csv: None,
                },
            ),
            CertificateOutcome::Valid(cert) => {
                let x_init = match &s.x_init {
                    Some(x) => x.clone(),
                    None => cert
                        .region
                        .lower
                        .iter()
                        .zip(&cert.region.upper)
                        .map(|(a, b)| 0.5 * (a + b))
                        .collect(),
                };
                let (sol, trace) = find_periodic_contraction_with(&rm, &cert, &x_init, s.tol, s.max_iters)?;
                run.out.write_with("trace.csv", |w| {
                    writeln!(w, "k,gap")?;
                    for (k, g) in trace.gaps.iter().enumerate() {
                        writeln!(w, "{},{}", k + 1, fmt_sig17(*g))?;
                    }
                    Ok(())
                })?;
                let record = write_solution(&mut run.out, &sol)?;
                run.finish(
                    "periodic",
                    0,
                    ContractionResult {
                        certificate: Some(cert.record()),
                        rejection: None,
                        iterations: trace.iterations(),
                        threshold: trace.threshold,
                        solution: Some(record),
                        trace_csv: Some("trace.csv"),
                    },
                )
            }
        },
    }
}

#[derive(Serialize)]
struct AnalyzeResult {
    analysis: EsAnalysis,
    probe: Option<ProbeReport>,
}

fn es_analyze(run: Run) -> Result<RunSummary, CliError> {
    let map = es_map(run.cfg)?;
    let params = es_params(run.cfg);
    let analysis = analyze(&map, &params)?;
    let probe = if run.cfg.es.probe {
        Some(averaging_probe(&map, &params)?.report)
    } else {
        None
    };
    run.finish("ok", 0, AnalyzeResult { analysis, probe })
}

#[derive(Serialize)]
struct BasinSummary {
    count: usize,
    periods: usize,
    escaped: usize,
    max_last_period_sup: f64,
    max_distance: f64,
    csv: &'static str,
}

#[derive(Serialize)]
struct SolveResult {
    even_map: Option<EvenMapRecord>,
    contraction: Option<SolutionRecord>,
    certificate: Option<CertificateRecord>,
    rejection: Option<CertificateRejection>,
    /// Sup distance between the two solutions over one period.
    method_gap: Option<f64>,
    /// The reported solution changes sign within one period.
    crosses_zero: bool,
    basin: Option<BasinSummary>,
}

fn es_solve(mut run: Run) -> Result<RunSummary, CliError> {
    let cfg = run.cfg;
    let es = &cfg.es;
    let map = es_map(cfg)?;
    let params = es_params(cfg);
    let sys = build_es_system(&map, &params)?;

    let even = match es.method {
        EsMethod::EvenMap | EsMethod::Both => Some(solve_even_map_fixed_point(&map, &params, es.grid_n, es.tol)?),
        EsMethod::Contraction => None,
    };
    let mut certificate = None;
    let mut rejection = None;
    let mut banach = None;
    if matches!(es.method, EsMethod::Contraction | EsMethod::Both) {
        if es.b.is_none() {
            return Err(config_err("the contraction route needs es.b"));
        }
        let grid = GridSpec {
            time_samples: cfg.certificate.time_samples,
            axis_samples: cfg.certificate.axis_samples,
            slack: cfg.certificate.slack,
        };
        match es_certificate(&map, &params, &grid)? {
            CertificateOutcome::Valid(cert) => {
                let rm = ReturnMap::new(sys.clone(), 0.0, run.integrator.clone());
                let (sol, _) = find_periodic_contraction_with(&rm, &cert, &[0.0], es.banach_tol, es.max_iters)?;
                certificate = Some(cert.record());
                banach = Some(sol);
            }
            CertificateOutcome::Rejected(r) => rejection = Some(r),
        }
    }

    let reference = even.as_ref().map(|e| &e.solution).or(banach.as_ref());
    let times = linspace(0.0, 2.0 * PI, 512);
    let method_gap = match (&even, &banach) {
        (Some(e), Some(b)) => Some(
            times
                .iter()
                .map(|&t| (e.solution.value_at(t)[0] - b.value_at(t)[0]).abs())
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    let crosses_zero = reference.is_some_and(|sol| {
        let v: Vec<f64> = times.iter().map(|&t| sol.value_at(t)[0]).collect();
        v.iter().any(|x| *x > 0.0) && v.iter().any(|x| *x < 0.0)
    });

    if let Some(sol) = reference {
        run.out.write_with("solution.csv", |w| sol.samples.write_csv(w))?;
    }
    let mut contraction = None;
    if let Some(b) = &banach {
        let name = if even.is_some() {
            "contraction_solution.csv"
        } else {
            "solution.csv"
        };
        if even.is_some() {
            run.out.write_with(name, |w| b.samples.write_csv(w))?;
        }
        contraction = Some(b.record(Some(name.into())));
    }

    let basin = if es.basin_count > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let x0s: Vec<f64> = (0..es.basin_count)
            .map(|_| rng.random_range(-es.radius..=es.radius))
            .collect();
        let samples = simulate_basin(&map, &params, &x0s, es.basin_periods, reference, &run.integrator)?;
        run.out.write_with("basin.csv", |w| write_basin_csv(&samples, w))?;
        Some(BasinSummary {
            count: samples.len(),
            periods: es.basin_periods,
            escaped: samples.iter().filter(|s| s.escaped).count(),
            max_last_period_sup: samples.iter().map(|s| s.last_period_sup).fold(0.0, f64::max),
            max_distance: samples
                .iter()
                .filter_map(|s| s.distance_to_reference)
                .fold(0.0, f64::max),
            csv: "basin.csv",
        })
    } else {
        None
    };

    let rejected = rejection.is_some();
    let result = SolveResult {
        even_map: even.as_ref().map(|e| e.record(es.grid_n)),
        contraction,
        certificate,
        rejection,
        method_gap,
        crosses_zero,
        basin,
    };
    if rejected {
        run.finish("rejected", 4, result)
    } else {
        run.finish("periodic", 0, result)
    }
}

fn write_basin_csv(samples: &[BasinSample], w: &mut dyn Write) -> std::io::Result<()> {
    writeln!(w, "x0,last_period_sup,distance_to_reference,escaped")?;
    for s in samples {
        let d = s.distance_to_reference.map(fmt_sig17).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{}",
            fmt_sig17(s.x0),
            fmt_sig17(s.last_period_sup),
            d,
            s.escaped
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct PlanarResult {
    system: String,
    outcome: &'static str,
    orbit: Option<OrbitRecord>,
    max_abs_rhs: Option<f64>,
    equilibrium: Option<bool>,
    last: Option<f64>,
    iterations: usize,
    trace_csv: &'static str,
}

fn planar(mut run: Run) -> Result<RunSummary, CliError> {
    let p = &run.cfg.planar;
    let ps = planar_system(run.cfg)?;
    let (outcome, trace) = find_planar_periodic(
        &ps,
        p.z0,
        (p.z_min, p.z_max),
        &ScalarSearch::new(p.max_iters, p.tol),
        &run.integrator,
    )?;
    run.out.write_with("trace.csv", |w| trace.write_csv(w))?;
    let label = outcome.label();
    let mut result = PlanarResult {
        system: ps.name.clone(),
        outcome: label,
        orbit: None,
        max_abs_rhs: None,
        equilibrium: None,
        last: None,
        iterations: trace.y_seq.len().saturating_sub(1),
        trace_csv: "trace.csv",
    };
    let code = match &outcome {
        PlanarOutcome::Orbit {
            orbit,
            max_abs_rhs,
            equilibrium,
        } => {
            run.out.write_with("orbit.csv", |w| orbit.write_csv(w))?;
            result.orbit = Some(orbit.record());
            result.max_abs_rhs = Some(*max_abs_rhs);
            result.equilibrium = Some(*equilibrium);
            0
        }
        PlanarOutcome::Unbounded { last, .. } => {
            result.last = Some(*last);
            0
        }
        PlanarOutcome::Inconclusive { last, .. } => {
            result.last = Some(*last);
            5
        }
    };
    run.finish(label, code, result)
}

const CASCADE_CSV_SAMPLES: usize = 128;

fn demo_cascade(mut run: Run) -> Result<RunSummary, CliError> {
    let (report, traj): (CascadeReport, _) = run_cascade(&run.cfg.cascade, &run.integrator)?;
    run.out.write_with("cascade.csv", |w| {
        write_cascade_csv(&traj, report.period, CASCADE_CSV_SAMPLES, w)
    })?;
    let (status, code) = match report.periods_to_tolerance {
        Some(_) => ("converged", 0),
        None => ("inconclusive", 5),
    };
    run.finish(status, code, report)
}
