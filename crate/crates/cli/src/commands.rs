use std::path::{Path, PathBuf};

use avail_bound_core::bound::{
    coupling_constant, optimize_window, psi, BoundError, BoundParams, BoundReport, Theta0Mode,
};
use avail_bound_core::coupling::{
    coupling_stats, meet_rate_audit, paired_periods, AuditSpec, CouplingError, CouplingSpec,
    MeetAudit, MinDensityKit,
};
use avail_bound_core::model::{validate_with, ModelError};
use avail_bound_core::renewal::{
    availability_curve, stationary_start_curve, AvailabilityCurve, CurveSpec, SimError,
};
use avail_bound_core::stats::{ks_test, MeanEstimate};
use avail_bound_core::{ModelParams, Regime, RngStreams, SystemState};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::artifacts::{ArtifactWriter, Manifest};
use crate::config::{ConfigError, RunConfig, Window};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("model assumptions: {0}")]
    Model(#[from] ModelError),
    #[error("bound: {0}")]
    Bound(#[from] BoundError),
    #[error("simulation: {0}")]
    Sim(#[from] SimError),
    #[error("coupling: {0}")]
    Coupling(#[from] CouplingError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("threads: {0}")]
    Threads(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Bound,
    Simulate,
    Couple,
    Stationary,
    Verify,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Bound => "bound",
            Command::Simulate => "simulate",
            Command::Couple => "couple",
            Command::Stationary => "stationary",
            Command::Verify => "verify",
        }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    /// Present for `verify`.
    pub verdict: Option<Verdict>,
}

pub const THREADS_ENV: &str = "AVAIL_BOUND_THREADS";

/// `--threads` if given, else the environment fallback.
pub fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            v.trim().parse::<usize>().map(Some).map_err(|_| {
                CliError::Threads(format!("{THREADS_ENV}=`{v}` is not a thread count"))
            })
        }
        Err(_) => Ok(None),
    }
}

/// Runs `command` with its own worker pool and writes its artifacts.
pub fn execute(
    command: Command,
    config: &RunConfig,
    out: Option<&Path>,
    threads: Option<usize>,
) -> Result<Outcome, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Threads("thread count must be positive".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Threads(e.to_string()))?;
    let model = validate_with(&config.model, config.tolerances)?;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.output.dir.clone());
    pool.install(|| {
        let mut w = ArtifactWriter::create(&dir)?;
        let verdict = match command {
            Command::Bound => {
                let b = compute_bounds(&model, config)?;
                w.write_json("bound_report.json", &b)?;
                None
            }
            Command::Simulate => {
                for curve in simulate_curves(&model, config)? {
                    write_curve(
                        &mut w,
                        config,
                        &format!("availability_{}", state_tag(curve_start(&curve))),
                        &curve,
                    )?;
                }
                None
            }
            Command::Couple => {
                let summary = run_coupling(&model, config)?;
                if config.output.csv {
                    w.write("sigma.csv", summary.sigma_csv.as_bytes())?;
                }
                w.write_json("coupling.json", &summary)?;
                None
            }
            Command::Stationary => {
                let s = run_stationary(&model, config)?;
                write_curve(&mut w, config, "stationary", &s.curve)?;
                w.write_json("stationary_summary.json", &s.summary)?;
                None
            }
            Command::Verify => {
                let v = run_verify(&model, config, &mut w)?;
                w.write_json("verify.json", &v)?;
                Some(v)
            }
        };
        let manifest = w.finish(command.name(), &config.config_sha256, config.sim.seed)?;
        Ok(Outcome {
            out_dir: dir.clone(),
            manifest,
            verdict,
        })
    })
}

fn write_curve(
    w: &mut ArtifactWriter,
    config: &RunConfig,
    stem: &str,
    curve: &AvailabilityCurve,
) -> Result<(), CliError> {
    if config.output.csv {
        w.write(&format!("{stem}.csv"), curve.to_csv().as_bytes())?;
    }
    if config.output.json {
        w.write_json(&format!("{stem}.json"), curve)?;
    }
    Ok(())
}

pub fn state_tag(z: SystemState) -> String {
    format!("{}_{}", z.regime.index(), z.elapsed)
}

fn curve_start(c: &AvailabilityCurve) -> SystemState {
    match c.start {
        avail_bound_core::renewal::StartLaw::Fixed(z) => z,
        avail_bound_core::renewal::StartLaw::Stationary => unreachable!("fixed-start curves only"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowSummary {
    pub mode: &'static str,
    pub r: f64,
    pub n: f64,
    pub cells_searched: Option<usize>,
    pub cells_feasible: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSummary {
    pub alpha: f64,
    pub theta0_mode: Theta0Mode,
    pub window: WindowSummary,
    pub limiting_availability: f64,
    /// One report per configured initial state.
    pub reports: Vec<BoundReport>,
}

/// `Ψ(α, X₀)` for every configured initial state, at the configured or
/// optimized window. The optimal window does not depend on `X₀`.
pub fn compute_bounds(model: &ModelParams, config: &RunConfig) -> Result<BoundSummary, CliError> {
    let b = &config.bound;
    let window = match &b.window {
        Window::Fixed { r, n } => WindowSummary {
            mode: "fixed",
            r: *r,
            n: *n,
            cells_searched: None,
            cells_feasible: None,
        },
        Window::Search(spec) => {
            let choice = optimize_window(model, b.alpha, config.sim.x0[0], spec, b.theta0_mode)?;
            WindowSummary {
                mode: "search",
                r: choice.r,
                n: choice.n,
                cells_searched: Some(choice.cells_searched),
                cells_feasible: Some(choice.cells_feasible),
            }
        }
    };
    let params = BoundParams {
        alpha: b.alpha,
        r: window.r,
        n: window.n,
    };
    let reports = config
        .sim
        .x0
        .iter()
        .map(|&x0| psi(model, x0, params, b.theta0_mode))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(BoundSummary {
        alpha: b.alpha,
        theta0_mode: b.theta0_mode,
        window,
        limiting_availability: model.limiting_availability(),
        reports,
    })
}

fn curve_spec(config: &RunConfig) -> CurveSpec {
    CurveSpec {
        n_traj: config.sim.n_traj,
        ci_level: config.sim.ci_level,
    }
}

pub fn simulate_curves(
    model: &ModelParams,
    config: &RunConfig,
) -> Result<Vec<AvailabilityCurve>, CliError> {
    let root = RngStreams::new(config.sim.seed).child("simulate");
    config
        .sim
        .x0
        .iter()
        .map(|&x0| {
            let streams = root.child(&state_tag(x0));
            Ok(availability_curve(
                model,
                x0,
                &config.sim.grid,
                curve_spec(config),
                &streams,
            )?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSummary {
    pub z1: SystemState,
    pub z2: SystemState,
    pub runs: usize,
    pub alpha: f64,
    pub cap: u64,
    pub mean_sigma: f64,
    pub max_sigma: f64,
    pub max_events: u64,
    /// Estimate of `E(1+ς)^α` with its confidence interval.
    pub moment: MeanEstimate,
    pub ci_level: f64,
    pub window: WindowSummary,
    /// Constant bounding `E(1+ς)^α` for this pair of initial states.
    pub pair_constant: f64,
    pub audit: Option<MeetAudit>,
    #[serde(skip)]
    pub sigma_csv: String,
}

pub fn run_coupling(model: &ModelParams, config: &RunConfig) -> Result<CouplingSummary, CliError> {
    let c = &config.couple;
    let alpha = config.bound.alpha;
    let bounds = compute_bounds(model, config)?;
    let root = RngStreams::new(config.sim.seed).child("couple");
    let spec = CouplingSpec {
        runs: c.runs,
        alpha,
        cap: c.cap,
        ci_level: config.sim.ci_level,
    };
    let stats = coupling_stats(model, c.z1, c.z2, spec, &root)?;
    let pair_constant = coupling_constant(
        model,
        alpha,
        c.z1,
        c.z2,
        bounds.window.r,
        bounds.window.n,
        config.bound.theta0_mode,
    )?;
    let audit = if c.audit_cycles > 0 {
        let spec = AuditSpec {
            r: bounds.window.r,
            n: bounds.window.n,
            theta0_mode: config.bound.theta0_mode,
            cycles: c.audit_cycles,
            cap: c.cap,
            ci_level: config.sim.ci_level,
        };
        Some(meet_rate_audit(
            model,
            c.z1,
            c.z2,
            spec,
            &root.child("audit"),
        )?)
    } else {
        None
    };
    Ok(CouplingSummary {
        z1: c.z1,
        z2: c.z2,
        runs: c.runs,
        alpha,
        cap: c.cap,
        mean_sigma: stats.mean_sigma,
        max_sigma: stats.max_sigma,
        max_events: stats.max_events,
        moment: stats.moment,
        ci_level: config.sim.ci_level,
        window: bounds.window,
        pair_constant,
        audit,
        sigma_csv: stats.sigma_csv(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySummary {
    pub limiting_availability: f64,
    pub points: usize,
    pub points_covering_limit: usize,
    pub coverage: f64,
}

pub struct StationaryRun {
    pub curve: AvailabilityCurve,
    pub summary: StationarySummary,
}

pub fn run_stationary(model: &ModelParams, config: &RunConfig) -> Result<StationaryRun, CliError> {
    let streams = RngStreams::new(config.sim.seed).child("stationary");
    let curve = stationary_start_curve(model, &config.sim.grid, curve_spec(config), &streams)?;
    let a = model.limiting_availability();
    let covered = (0..curve.grid.len())
        .filter(|&i| curve.interval(i).contains(a))
        .count();
    let summary = StationarySummary {
        limiting_availability: a,
        points: curve.grid.len(),
        points_covering_limit: covered,
        coverage: covered as f64 / curve.grid.len() as f64,
    };
    Ok(StationaryRun { curve, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCheck {
    pub t: f64,
    pub a_hat: f64,
    pub ci_half_width: f64,
    /// `|â(t) − A|`
    pub discrepancy: f64,
    /// `|â(t) − A| − half_width`
    pub adjusted: f64,
    /// `scale · Ψ/(1+t)^α`
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveCheck {
    pub x0: SystemState,
    pub psi: f64,
    pub points: Vec<PointCheck>,
    pub failing_t: Vec<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentCheck {
    pub z1: SystemState,
    pub z2: SystemState,
    pub runs: usize,
    pub estimate: f64,
    pub upper_ci: f64,
    pub constant: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsCheck {
    pub name: String,
    pub n: usize,
    pub statistic: f64,
    pub p_value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub overall: &'static str,
    pub rule: &'static str,
    pub alpha: f64,
    pub limiting_availability: f64,
    pub bound_scale: f64,
    pub ci_level: f64,
    pub ks_level: f64,
    pub window: WindowSummary,
    pub curves: Vec<CurveCheck>,
    pub coupling: MomentCheck,
    pub ks: Vec<KsCheck>,
    pub failing_t: Vec<f64>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.overall == "PASS"
    }
}

const VERIFY_RULE: &str = "|a_hat(t) - A| - ci_half_width <= bound_scale * Psi / (1 + t)^alpha; \
the Wilson half-width is subtracted so that Monte Carlo noise alone cannot fail a point";

fn check_curve(curve: &AvailabilityCurve, report: &BoundReport, a: f64, scale: f64) -> CurveCheck {
    let points: Vec<PointCheck> = curve
        .grid
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let discrepancy = (curve.a_hat[i] - a).abs();
            let adjusted = discrepancy - curve.ci_half_width[i];
            let bound = scale * report.bound_at(t);
            PointCheck {
                t,
                a_hat: curve.a_hat[i],
                ci_half_width: curve.ci_half_width[i],
                discrepancy,
                adjusted,
                bound,
                pass: adjusted <= bound,
            }
        })
        .collect();
    let failing_t: Vec<f64> = points.iter().filter(|p| !p.pass).map(|p| p.t).collect();
    CurveCheck {
        x0: report.x0,
        psi: report.psi,
        pass: failing_t.is_empty(),
        failing_t,
        points,
    }
}

fn ks_check<F: Fn(f64) -> f64>(name: String, samples: &[f64], cdf: F, level: f64) -> KsCheck {
    let r = ks_test(samples, cdf);
    KsCheck {
        name,
        n: r.n,
        statistic: r.statistic,
        p_value: r.p_value,
        pass: r.passes(level),
    }
}

/// Marginal checks of the paired process: spliced draws against the
/// residual laws, and complete periods of each copy against `F₁`, `F₂`.
pub fn marginal_suite(model: &ModelParams, config: &RunConfig) -> Result<Vec<KsCheck>, CliError> {
    let c = &config.couple;
    let level = config.verify.ks_level;
    let root = RngStreams::new(config.sim.seed).child("marginals");
    let mut out = Vec::new();
    for (i, &(x, y)) in c.splice_pairs.iter().enumerate() {
        let kit = MinDensityKit::new(model, x, y)?;
        let mut rng = root.stream("splice", i as u64);
        let mut first = Vec::with_capacity(c.splice_draws);
        let mut second = Vec::with_capacity(c.splice_draws);
        for _ in 0..c.splice_draws {
            let (a, b) = kit.draw_pair(rng.random::<f64>())?;
            first.push(a);
            second.push(b);
        }
        out.push(ks_check(
            format!("splice ({x}, {y}): first draw vs F1^({x})"),
            &first,
            |s| model.residual_cdf(Regime::Working, x, s),
            level,
        ));
        out.push(ks_check(
            format!("splice ({x}, {y}): second draw vs F1^({y})"),
            &second,
            |s| model.residual_cdf(Regime::Working, y, s),
            level,
        ));
    }
    let periods = paired_periods(
        model,
        c.z1,
        c.z2,
        c.period_runs,
        c.periods,
        &root.child("periods"),
    )?;
    for comp in 0..2 {
        out.push(ks_check(
            format!("paired copy {}: working periods vs F1", comp + 1),
            &periods.working[comp],
            |s| model.cdf(Regime::Working, s),
            level,
        ));
        out.push(ks_check(
            format!("paired copy {}: repair periods vs F2", comp + 1),
            &periods.repair[comp],
            |s| model.cdf(Regime::Repair, s),
            level,
        ));
    }
    Ok(out)
}

/// Bound, simulation, coupling moment and marginal checks in one verdict.
/// Intermediate artifacts are written through `w`.
pub fn run_verify(
    model: &ModelParams,
    config: &RunConfig,
    w: &mut ArtifactWriter,
) -> Result<Verdict, CliError> {
    let bounds = compute_bounds(model, config)?;
    w.write_json("bound_report.json", &bounds)?;
    let curves = simulate_curves(model, config)?;
    let a = model.limiting_availability();
    let mut checks = Vec::new();
    for (curve, report) in curves.iter().zip(&bounds.reports) {
        write_curve(
            w,
            config,
            &format!("availability_{}", state_tag(report.x0)),
            curve,
        )?;
        checks.push(check_curve(curve, report, a, config.verify.bound_scale));
    }

    let coupling = run_coupling(model, config)?;
    if config.output.csv {
        w.write("sigma.csv", coupling.sigma_csv.as_bytes())?;
    }
    w.write_json("coupling.json", &coupling)?;
    let moment = MomentCheck {
        z1: coupling.z1,
        z2: coupling.z2,
        runs: coupling.runs,
        estimate: coupling.moment.mean,
        upper_ci: coupling.moment.ci.hi,
        constant: coupling.pair_constant,
        pass: coupling.moment.ci.hi <= coupling.pair_constant,
    };

    let ks = marginal_suite(model, config)?;

    let mut failing_t: Vec<f64> = checks
        .iter()
        .flat_map(|c| c.failing_t.iter().copied())
        .collect();
    failing_t.sort_by(f64::total_cmp);
    failing_t.dedup();
    let pass = checks.iter().all(|c| c.pass) && moment.pass && ks.iter().all(|k| k.pass);
    Ok(Verdict {
        overall: if pass { "PASS" } else { "FAIL" },
        rule: VERIFY_RULE,
        alpha: config.bound.alpha,
        limiting_availability: a,
        bound_scale: config.verify.bound_scale,
        ci_level: config.sim.ci_level,
        ks_level: config.verify.ks_level,
        window: bounds.window,
        curves: checks,
        coupling: moment,
        ks,
        failing_t,
    })
}
