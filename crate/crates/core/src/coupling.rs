//! The paired process `Z_t = (Z′_t, Z″_t)`: two copies of the alternating
//! renewal process driven by shared randomness so that they merge in
//! finite time and stay merged afterwards.
//!
//! At each event time one of three rules applies:
//!
//! * states differ and at least one copy is under repair: independent
//!   residual draws;
//! * states differ and both copies work: one uniform drives both residual
//!   draws through the min-density splice `Ξ`, so the draws coincide with
//!   probability `κ_{x,y} = ∫ min(f₁^(x), f₁^(y))`;
//! * states are equal: one shared draw.
//!
//! The copy (or copies) achieving the smaller draw switches regime with
//! elapsed time reset to zero; the other keeps its regime and ages.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bound::{coupling_q, theta0, BoundError, CouplingProbability, Theta0Mode};
use crate::model::{ModelError, ModelParams, Regime, SystemState};
use crate::numerics::{integrate, integrate_semi_infinite, invert_monotone, NumericsError};
use crate::rng::RngStreams;
use crate::stats::{mean_ci, wilson, Interval, MeanEstimate};

pub const DEFAULT_EVENT_CAP: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CouplingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("coupling did not occur within {events} events (clock {clock})")]
    CapExceeded { events: u64, clock: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

type Result<T> = std::result::Result<T, CouplingError>;

/// Min-density decomposition of two residual working-time laws.
///
/// For elapsed times `x` and `y` it provides `φ_{x,y} = min(f₁^(x), f₁^(y))`,
/// its integral `Φ_{x,y}`, the remainder `Φ̂_{x,y} = F₁^(x) − Φ_{x,y}` and the
/// overlap `κ_{x,y} = Φ_{x,y}(∞)`. The splice
///
/// ```text
/// Ξ_{x,y}(u) = Φ⁻¹(u)             for u < κ
///            = Φ̂_{x,y}⁻¹(u − κ)   for u ≥ κ
/// ```
///
/// maps one uniform to a draw from `F₁^(x)`; `Ξ_{x,y}(U)` and `Ξ_{y,x}(U)`
/// coincide exactly when `U < κ`.
#[derive(Debug, Clone)]
pub struct MinDensityKit<'a> {
    model: &'a ModelParams,
    x: f64,
    y: f64,
    backend: Backend,
}

#[derive(Debug, Clone)]
enum Backend {
    Identical,
    /// Pareto residual densities cross exactly once: the density with the
    /// larger elapsed time is the smaller one on `[0, s*]`, the other one
    /// after `s*`.
    Pareto(ParetoSplice),
    Numeric(NumericSplice),
}

#[derive(Debug, Clone)]
struct ParetoSplice {
    k: f64,
    /// `1 + min(x, y)`
    a: f64,
    /// `1 + max(x, y)`
    b: f64,
    crossing: f64,
    /// `F^(max)(s*)`
    fb_cross: f64,
    kappa: f64,
    tol: f64,
}

impl ParetoSplice {
    fn new(k: f64, lo: f64, hi: f64, tol: f64) -> Self {
        let a = 1.0 + lo;
        let b = 1.0 + hi;
        let ln_r = k / (k + 1.0) * (b / a).ln();
        let r_minus_1 = ln_r.exp_m1();
        let crossing = ((b - a) - a * r_minus_1) / r_minus_1;
        let fb_cross = 1.0 - (b / (b + crossing)).powf(k);
        let sa_cross = (a / (a + crossing)).powf(k);
        Self {
            k,
            a,
            b,
            crossing,
            fb_cross,
            kappa: fb_cross + sa_cross,
            tol,
        }
    }

    fn sa(&self, s: f64) -> f64 {
        (self.a / (self.a + s)).powf(self.k)
    }

    fn sb(&self, s: f64) -> f64 {
        (self.b / (self.b + s)).powf(self.k)
    }

    fn pdf(&self, c: f64, s: f64) -> f64 {
        self.k * c.powf(self.k) * (c + s).powf(-self.k - 1.0)
    }

    fn phi(&self, s: f64) -> f64 {
        if s <= self.crossing {
            self.pdf(self.b, s)
        } else {
            self.pdf(self.a, s)
        }
    }

    fn big_phi(&self, s: f64) -> f64 {
        if s <= self.crossing {
            1.0 - self.sb(s)
        } else {
            self.kappa - self.sa(s)
        }
    }

    fn big_phi_inv(&self, u: f64) -> f64 {
        if u <= self.fb_cross {
            self.b * ((1.0 - u).powf(-1.0 / self.k) - 1.0)
        } else {
            let s = self.a * ((self.kappa - u).powf(-1.0 / self.k) - 1.0);
            s.max(self.crossing)
        }
    }

    /// Remainder for the smaller elapsed time: `S^(max) − S^(min)` up to
    /// `s*`, constant after.
    fn hat_lo(&self, s: f64) -> f64 {
        let s = s.min(self.crossing);
        (self.sb(s) - self.sa(s)).max(0.0)
    }

    /// Remainder for the larger elapsed time: zero up to `s*`.
    fn hat_hi(&self, s: f64) -> f64 {
        if s <= self.crossing {
            0.0
        } else {
            (1.0 - self.kappa - (self.sb(s) - self.sa(s))).max(0.0)
        }
    }

    fn hat_lo_inv(&self, v: f64) -> Result<f64> {
        let s = invert_monotone(|s| self.hat_lo(s), v, 0.0, self.crossing, self.tol)?;
        Ok(s.min(self.crossing))
    }

    fn hat_hi_inv(&self, v: f64) -> Result<f64> {
        let hi = 2.0 * self.crossing + self.b;
        Ok(invert_monotone(
            |s| self.hat_hi(s),
            v,
            self.crossing,
            hi,
            self.tol,
        )?)
    }
}

/// Tabulated `Φ` on a geometric grid, refined by quadrature and bisection.
#[derive(Debug, Clone)]
struct NumericSplice {
    lo: f64,
    hi: f64,
    nodes: Vec<f64>,
    cum: Vec<f64>,
    /// `F^(lo) − Φ` and `F^(hi) − Φ` at the nodes (running maxima).
    hat_lo_nodes: Vec<f64>,
    hat_hi_nodes: Vec<f64>,
    kappa: f64,
    quad_tol: f64,
    tol: f64,
}

const NUMERIC_GRID_STEP: f64 = 0.05;
const NUMERIC_TAIL_MASS: f64 = 1e-15;

fn running_max(v: Vec<f64>) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    v.into_iter()
        .map(|x| {
            m = m.max(x);
            m
        })
        .collect()
}

impl NumericSplice {
    fn new(model: &ModelParams, lo: f64, hi: f64) -> Result<Self> {
        let tol = model.tolerances();
        let quad_tol = (tol.quad * 1e-3).max(1e-15);
        let scale = 1.0 + hi;
        let mut nodes = vec![0.0];
        let mut j = 1;
        loop {
            let s = scale * (j as f64 * NUMERIC_GRID_STEP).exp_m1();
            nodes.push(s);
            if model.residual_survival(Regime::Working, lo, s) < NUMERIC_TAIL_MASS
                && model.residual_survival(Regime::Working, hi, s) < NUMERIC_TAIL_MASS
            {
                break;
            }
            j += 1;
        }
        let phi = |s: f64| {
            model
                .residual_pdf_work(lo, s)
                .min(model.residual_pdf_work(hi, s))
        };
        let mut cum = Vec::with_capacity(nodes.len());
        let mut acc = 0.0;
        cum.push(0.0);
        for w in nodes.windows(2) {
            acc += integrate(phi, w[0], w[1], quad_tol)?.value;
            cum.push(acc);
        }
        let last = *nodes.last().expect("grid has nodes");
        let tail = integrate_semi_infinite(phi, last, quad_tol)?.value;
        let kappa = (acc + tail).min(1.0);
        let hat = |x: f64| {
            running_max(
                nodes
                    .iter()
                    .zip(&cum)
                    .map(|(&s, &c)| (model.residual_cdf(Regime::Working, x, s) - c).max(0.0))
                    .collect(),
            )
        };
        Ok(Self {
            lo,
            hi,
            hat_lo_nodes: hat(lo),
            hat_hi_nodes: hat(hi),
            nodes,
            cum,
            kappa,
            quad_tol,
            tol: tol.inversion,
        })
    }

    fn phi(&self, model: &ModelParams, s: f64) -> f64 {
        model
            .residual_pdf_work(self.lo, s)
            .min(model.residual_pdf_work(self.hi, s))
    }

    fn big_phi(&self, model: &ModelParams, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        let j = self.nodes.partition_point(|&n| n <= s) - 1;
        let part = integrate(|r| self.phi(model, r), self.nodes[j], s, self.quad_tol)?.value;
        Ok((self.cum[j] + part).min(self.kappa))
    }

    fn hat(&self, model: &ModelParams, x: f64, s: f64) -> Result<f64> {
        Ok((model.residual_cdf(Regime::Working, x, s) - self.big_phi(model, s)?).max(0.0))
    }

    /// Inverts a nondecreasing function known at the nodes by locating
    /// the bracketing segment first.
    fn invert<F: Fn(f64) -> f64>(&self, table: &[f64], f: F, u: f64) -> Result<f64> {
        let j = table.partition_point(|&c| c < u);
        let (lo, hi) = if j == 0 {
            (0.0, self.nodes[0].max(self.nodes[1]))
        } else if j >= self.nodes.len() {
            let last = *self.nodes.last().expect("grid has nodes");
            (last, 2.0 * last)
        } else {
            (self.nodes[j - 1], self.nodes[j])
        };
        Ok(invert_monotone(f, u, lo, hi, self.tol)?)
    }

    fn big_phi_inv(&self, model: &ModelParams, u: f64) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let s = self.invert(
            &self.cum,
            |s| {
                self.big_phi(model, s).unwrap_or_else(|e| {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                })
            },
            u,
        )?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(s),
        }
    }

    fn hat_inv(&self, model: &ModelParams, x: f64, table: &[f64], v: f64) -> Result<f64> {
        let failure = std::cell::RefCell::new(None);
        let s = self.invert(
            table,
            |s| {
                self.hat(model, x, s).unwrap_or_else(|e| {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                })
            },
            v,
        )?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(s),
        }
    }
}

impl<'a> MinDensityKit<'a> {
    /// Builds the kit, using the closed form for the Pareto working law.
    pub fn new(model: &'a ModelParams, x: f64, y: f64) -> Result<Self> {
        Self::check_elapsed(model, x, y)?;
        let backend = if x == y {
            Backend::Identical
        } else if model.is_pareto(Regime::Working) {
            Backend::Pareto(ParetoSplice::new(
                model.k1(),
                x.min(y),
                x.max(y),
                model.tolerances().inversion,
            ))
        } else {
            Backend::Numeric(NumericSplice::new(model, x.min(y), x.max(y))?)
        };
        Ok(Self {
            model,
            x,
            y,
            backend,
        })
    }

    /// Builds the kit with the quadrature backend regardless of the law.
    pub fn numeric(model: &'a ModelParams, x: f64, y: f64) -> Result<Self> {
        Self::check_elapsed(model, x, y)?;
        let backend = if x == y {
            Backend::Identical
        } else {
            Backend::Numeric(NumericSplice::new(model, x.min(y), x.max(y))?)
        };
        Ok(Self {
            model,
            x,
            y,
            backend,
        })
    }

    fn check_elapsed(model: &ModelParams, x: f64, y: f64) -> Result<()> {
        model.check_state(SystemState::working(x))?;
        model.check_state(SystemState::working(y))?;
        Ok(())
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    /// `κ_{x,y}`
    pub fn kappa(&self) -> f64 {
        match &self.backend {
            Backend::Identical => 1.0,
            Backend::Pareto(p) => p.kappa,
            Backend::Numeric(n) => n.kappa,
        }
    }

    /// Point where the two residual densities cross (Pareto only).
    pub fn crossing(&self) -> Option<f64> {
        match &self.backend {
            Backend::Pareto(p) => Some(p.crossing),
            _ => None,
        }
    }

    /// `φ_{x,y}(s)`
    pub fn phi(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        match &self.backend {
            Backend::Identical => self.model.residual_pdf_work(self.x, s),
            Backend::Pareto(p) => p.phi(s),
            Backend::Numeric(n) => n.phi(self.model, s),
        }
    }

    /// `Φ_{x,y}(s) = ∫₀^s φ_{x,y}`
    pub fn big_phi(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        match &self.backend {
            Backend::Identical => Ok(self.model.residual_cdf(Regime::Working, self.x, s)),
            Backend::Pareto(p) => Ok(p.big_phi(s)),
            Backend::Numeric(n) => n.big_phi(self.model, s),
        }
    }

    fn x_is_lo(&self) -> bool {
        self.x < self.y
    }

    /// `Φ̂_{x,y}(s) = F₁^(x)(s) − Φ_{x,y}(s)`
    pub fn big_phi_hat(&self, s: f64) -> Result<f64> {
        self.hat(self.x_is_lo(), s)
    }

    /// `Φ̂_{y,x}(s) = F₁^(y)(s) − Φ_{x,y}(s)`
    pub fn big_phi_hat_swapped(&self, s: f64) -> Result<f64> {
        self.hat(!self.x_is_lo(), s)
    }

    fn hat(&self, lo_side: bool, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        match &self.backend {
            Backend::Identical => Ok(0.0),
            Backend::Pareto(p) => Ok(if lo_side { p.hat_lo(s) } else { p.hat_hi(s) }),
            Backend::Numeric(n) => n.hat(self.model, if lo_side { n.lo } else { n.hi }, s),
        }
    }

    fn shared(&self, u: f64) -> Result<f64> {
        match &self.backend {
            Backend::Identical => Ok(self.model.residual_quantile(Regime::Working, self.x, u)?),
            Backend::Pareto(p) => Ok(p.big_phi_inv(u)),
            Backend::Numeric(n) => n.big_phi_inv(self.model, u),
        }
    }

    fn remainder(&self, lo_side: bool, v: f64) -> Result<f64> {
        match &self.backend {
            Backend::Identical => unreachable!("κ = 1 leaves no remainder"),
            Backend::Pareto(p) => {
                if lo_side {
                    p.hat_lo_inv(v)
                } else {
                    p.hat_hi_inv(v)
                }
            }
            Backend::Numeric(n) => {
                if lo_side {
                    n.hat_inv(self.model, n.lo, &n.hat_lo_nodes, v)
                } else {
                    n.hat_inv(self.model, n.hi, &n.hat_hi_nodes, v)
                }
            }
        }
    }

    fn splice(&self, lo_side: bool, u: f64) -> Result<f64> {
        check_uniform(u)?;
        let kappa = self.kappa();
        if u < kappa {
            self.shared(u)
        } else {
            self.remainder(lo_side, u - kappa)
        }
    }

    /// `Ξ_{x,y}(u)`, a draw from `F₁^(x)` when `u` is uniform.
    pub fn xi(&self, u: f64) -> Result<f64> {
        self.splice(self.x_is_lo(), u)
    }

    /// `Ξ_{y,x}(u)`, a draw from `F₁^(y)` when `u` is uniform.
    pub fn xi_swapped(&self, u: f64) -> Result<f64> {
        self.splice(!self.x_is_lo(), u)
    }

    /// `(Ξ_{x,y}(u), Ξ_{y,x}(u))`; both entries are the same value when
    /// `u < κ_{x,y}`.
    pub fn draw_pair(&self, u: f64) -> Result<(f64, f64)> {
        check_uniform(u)?;
        if u < self.kappa() {
            let s = self.shared(u)?;
            Ok((s, s))
        } else {
            Ok((self.xi(u)?, self.xi_swapped(u)?))
        }
    }
}

fn check_uniform(u: f64) -> Result<()> {
    if (0.0..1.0).contains(&u) {
        Ok(())
    } else {
        Err(CouplingError::InvalidArgument(format!(
            "uniform {u} outside [0, 1)"
        )))
    }
}

/// Spliced residual working times for elapsed times `x` and `y`, driven
/// by a single uniform.
pub fn sample_coupled_pair<R: Rng + ?Sized>(
    model: &ModelParams,
    x: f64,
    y: f64,
    rng: &mut R,
) -> Result<(f64, f64)> {
    MinDensityKit::new(model, x, y)?.draw_pair(rng.random::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedState {
    pub z1: SystemState,
    pub z2: SystemState,
    pub coupled: bool,
    pub clock: f64,
}

impl PairedState {
    pub fn new(z1: SystemState, z2: SystemState) -> Self {
        Self {
            z1,
            z2,
            coupled: z1 == z2,
            clock: 0.0,
        }
    }

    pub fn component(&self, i: usize) -> SystemState {
        match i {
            0 => self.z1,
            1 => self.z2,
            _ => panic!("paired state has two components"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCase {
    Independent,
    Spliced,
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub state: PairedState,
    pub case: StepCase,
    /// Time to the event, `min(θ′, θ″)`.
    pub dt: f64,
    /// Which components switched regime at the event.
    pub jumped: [bool; 2],
}

fn advance(z: SystemState, theta: f64, dt: f64) -> SystemState {
    if theta == dt {
        SystemState::new(z.regime.other(), 0.0)
    } else {
        SystemState::new(z.regime, z.elapsed + dt)
    }
}

/// One event of the paired process.
pub fn step_paired<R: Rng + ?Sized>(
    model: &ModelParams,
    state: &PairedState,
    rng: &mut R,
) -> Result<StepOutcome> {
    let (z1, z2) = (state.z1, state.z2);
    let (case, t1, t2) = if state.coupled || z1 == z2 {
        let t = model.sample_residual(z1.regime, z1.elapsed, rng)?;
        (StepCase::Shared, t, t)
    } else if z1.regime == Regime::Working && z2.regime == Regime::Working {
        let (t1, t2) = sample_coupled_pair(model, z1.elapsed, z2.elapsed, rng)?;
        (StepCase::Spliced, t1, t2)
    } else {
        let t1 = model.sample_residual(z1.regime, z1.elapsed, rng)?;
        let t2 = model.sample_residual(z2.regime, z2.elapsed, rng)?;
        (StepCase::Independent, t1, t2)
    };
    let dt = t1.min(t2);
    let n1 = advance(z1, t1, dt);
    let n2 = advance(z2, t2, dt);
    Ok(StepOutcome {
        state: PairedState {
            z1: n1,
            z2: n2,
            coupled: state.coupled || n1 == n2,
            clock: state.clock + dt,
        },
        case,
        dt,
        jumped: [t1 == dt, t2 == dt],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRun {
    /// Meeting time `ς = inf{t > 0 : Z′_t = Z″_t}`.
    pub sigma: f64,
    pub events: u64,
}

/// Runs the paired process from `(z1, z2)` until the copies meet.
pub fn coupling_time<R: Rng + ?Sized>(
    model: &ModelParams,
    z1: SystemState,
    z2: SystemState,
    rng: &mut R,
    cap: u64,
) -> Result<CouplingRun> {
    model.check_state(z1)?;
    model.check_state(z2)?;
    let mut state = PairedState::new(z1, z2);
    let mut events = 0;
    while !state.coupled {
        if events >= cap {
            return Err(CouplingError::CapExceeded {
                events,
                clock: state.clock,
            });
        }
        state = step_paired(model, &state, rng)?.state;
        events += 1;
    }
    Ok(CouplingRun {
        sigma: state.clock,
        events,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingStats {
    pub z1: SystemState,
    pub z2: SystemState,
    pub runs: usize,
    pub alpha: f64,
    pub cap: u64,
    pub seed: u64,
    pub sigma: Vec<f64>,
    pub events: Vec<u64>,
    /// Estimate of `E(1+ς)^α`.
    pub moment: MeanEstimate,
    pub mean_sigma: f64,
    pub max_sigma: f64,
    pub max_events: u64,
}

impl CouplingStats {
    /// One-column CSV of the `ς` samples.
    pub fn sigma_csv(&self) -> String {
        let mut out = String::from("sigma\n");
        for s in &self.sigma {
            out.push_str(&format!("{s}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSpec {
    pub runs: usize,
    pub alpha: f64,
    pub cap: u64,
    pub ci_level: f64,
}

/// Independent coupling runs from `(z1, z2)`, one random stream per run.
pub fn coupling_stats(
    model: &ModelParams,
    z1: SystemState,
    z2: SystemState,
    spec: CouplingSpec,
    streams: &RngStreams,
) -> Result<CouplingStats> {
    if spec.runs < 2 {
        return Err(CouplingError::InvalidArgument(
            "need at least two runs".into(),
        ));
    }
    let runs: Vec<CouplingRun> = (0..spec.runs as u64)
        .into_par_iter()
        .map(|i| coupling_time(model, z1, z2, &mut streams.stream("coupling", i), spec.cap))
        .collect::<Result<_>>()?;
    let sigma: Vec<f64> = runs.iter().map(|r| r.sigma).collect();
    let powered: Vec<f64> = sigma.iter().map(|s| (1.0 + s).powf(spec.alpha)).collect();
    Ok(CouplingStats {
        z1,
        z2,
        runs: spec.runs,
        alpha: spec.alpha,
        cap: spec.cap,
        seed: streams.root(),
        moment: mean_ci(&powered, spec.ci_level),
        mean_sigma: sigma.iter().sum::<f64>() / sigma.len() as f64,
        max_sigma: sigma.iter().copied().fold(0.0, f64::max),
        max_events: runs.iter().map(|r| r.events).max().unwrap_or(0),
        events: runs.iter().map(|r| r.events).collect(),
        sigma,
    })
}

/// Complete regime periods observed along paired runs, per component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PeriodSamples {
    pub working: [Vec<f64>; 2],
    pub repair: [Vec<f64>; 2],
}

/// Collects the first `periods` complete regime periods (the initial
/// residual period excluded) of each component over `runs` paired runs,
/// continuing past the meeting time.
pub fn paired_periods(
    model: &ModelParams,
    z1: SystemState,
    z2: SystemState,
    runs: usize,
    periods: usize,
    streams: &RngStreams,
) -> Result<PeriodSamples> {
    model.check_state(z1)?;
    model.check_state(z2)?;
    let per_run: Vec<PeriodSamples> = (0..runs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream("paired-periods", i);
            let mut out = PeriodSamples::default();
            let mut state = PairedState::new(z1, z2);
            let mut started = [false; 2];
            let mut done = [0usize; 2];
            while done[0] < periods || done[1] < periods {
                let before = state;
                let step = step_paired(model, &state, &mut rng)?;
                for c in 0..2 {
                    if !step.jumped[c] {
                        continue;
                    }
                    let z = before.component(c);
                    if started[c] && done[c] < periods {
                        let len = z.elapsed + step.dt;
                        match z.regime {
                            Regime::Working => out.working[c].push(len),
                            Regime::Repair => out.repair[c].push(len),
                        }
                        done[c] += 1;
                    }
                    started[c] = true;
                }
                state = step.state;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut all = PeriodSamples::default();
    for run in per_run {
        for c in 0..2 {
            all.working[c].extend(run.working[c].iter());
            all.repair[c].extend(run.repair[c].iter());
        }
    }
    Ok(all)
}

/// Per-cycle accounting of merges after both copies have regenerated.
///
/// The reference copy is the one whose first entrance to `(1, 0)` comes
/// last; its later entrances `τ_k` delimit cycles. For each cycle that
/// starts unmerged, the audit records the event
/// `𝓔_k = {ϑ′(τ_k) < R and the reference working period lies in (R, NR)}`
/// (`ϑ′` is the wait for the other copy's next entrance to `(1, 0)`) and
/// whether the copies have merged by `τ_{k+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetAudit {
    pub r: f64,
    pub n: f64,
    pub theta0: f64,
    pub bound: CouplingProbability,
    pub runs: usize,
    pub cycles: u64,
    pub window_events: u64,
    pub merges: u64,
    pub merges_in_window: u64,
    pub merge_rate: f64,
    pub merge_ci: Interval,
    pub window_rate: f64,
    pub window_ci: Interval,
    pub ci_level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSpec {
    pub r: f64,
    pub n: f64,
    pub theta0_mode: Theta0Mode,
    pub cycles: u64,
    pub cap: u64,
    pub ci_level: f64,
}

#[derive(Debug, Default, Clone, Copy)]
struct AuditCounts {
    cycles: u64,
    window_events: u64,
    merges: u64,
    merges_in_window: u64,
}

fn audit_run<R: Rng + ?Sized>(
    model: &ModelParams,
    z1: SystemState,
    z2: SystemState,
    r: f64,
    n: f64,
    cap: u64,
    rng: &mut R,
) -> Result<AuditCounts> {
    let mut counts = AuditCounts::default();
    let mut state = PairedState::new(z1, z2);
    let mut events = 0u64;
    let mut step = |state: &PairedState| -> Result<StepOutcome> {
        if events >= cap {
            return Err(CouplingError::CapExceeded {
                events,
                clock: state.clock,
            });
        }
        events += 1;
        step_paired(model, state, rng)
    };
    let enters =
        |o: &StepOutcome, c: usize| o.jumped[c] && o.state.component(c).regime == Regime::Working;

    // first entrance of both copies to (1, 0)
    let mut entered = [false; 2];
    let reference = loop {
        if state.coupled {
            return Ok(counts);
        }
        let o = step(&state)?;
        state = o.state;
        let fresh = [enters(&o, 0) && !entered[0], enters(&o, 1) && !entered[1]];
        entered[0] |= fresh[0];
        entered[1] |= fresh[1];
        if entered[0] && entered[1] {
            break if fresh[1] { 1 } else { 0 };
        }
    };
    let other = 1 - reference;

    while !state.coupled {
        // a cycle of the reference copy starts here, unmerged
        let start = state.clock;
        let mut other_entry: Option<f64> = None;
        let mut work_len: Option<f64> = None;
        loop {
            let o = step(&state)?;
            state = o.state;
            if other_entry.is_none() && enters(&o, other) {
                other_entry = Some(state.clock - start);
            }
            if work_len.is_none() && o.jumped[reference] {
                work_len = Some(state.clock - start);
            }
            if enters(&o, reference) {
                break;
            }
        }
        let window = matches!(other_entry, Some(w) if w < r)
            && matches!(work_len, Some(l) if l > r && l < n * r);
        counts.cycles += 1;
        counts.window_events += u64::from(window);
        if state.coupled {
            counts.merges += 1;
            counts.merges_in_window += u64::from(window);
        }
    }
    Ok(counts)
}

const AUDIT_BATCH: u64 = 256;

/// Empirical per-cycle merge frequency, to be compared with the lower
/// bound `p = π(R,N)κ(NR)`. Whole runs are added in fixed batches until
/// at least `spec.cycles` cycles are recorded.
pub fn meet_rate_audit(
    model: &ModelParams,
    z1: SystemState,
    z2: SystemState,
    spec: AuditSpec,
    streams: &RngStreams,
) -> Result<MeetAudit> {
    let th0 = theta0(model, spec.theta0_mode)?;
    let bound = coupling_q(model, spec.r, spec.n, th0)?;
    model.check_state(z1)?;
    model.check_state(z2)?;
    if spec.cycles == 0 {
        return Err(CouplingError::InvalidArgument(
            "need at least one cycle".into(),
        ));
    }
    let mut total = AuditCounts::default();
    let mut runs = 0u64;
    while total.cycles < spec.cycles {
        let batch: Vec<AuditCounts> = (runs..runs + AUDIT_BATCH)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream("meet-audit", i);
                audit_run(model, z1, z2, spec.r, spec.n, spec.cap, &mut rng)
            })
            .collect::<Result<_>>()?;
        for c in batch {
            total.cycles += c.cycles;
            total.window_events += c.window_events;
            total.merges += c.merges;
            total.merges_in_window += c.merges_in_window;
        }
        runs += AUDIT_BATCH;
    }
    Ok(MeetAudit {
        r: spec.r,
        n: spec.n,
        theta0: th0,
        bound,
        runs: runs as usize,
        cycles: total.cycles,
        window_events: total.window_events,
        merges: total.merges,
        merges_in_window: total.merges_in_window,
        merge_rate: total.merges as f64 / total.cycles as f64,
        merge_ci: wilson(total.merges, total.cycles, spec.ci_level),
        window_rate: total.window_events as f64 / total.cycles as f64,
        window_ci: wilson(total.window_events, total.cycles, spec.ci_level),
        ci_level: spec.ci_level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate, RawParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> ModelParams {
        validate(&RawParams::canonical()).unwrap()
    }

    #[test]
    fn identical_elapsed_gives_full_overlap() {
        let m = canonical();
        let kit = MinDensityKit::new(&m, 1.5, 1.5).unwrap();
        assert_eq!(kit.kappa(), 1.0);
        for s in [0.1, 1.0, 7.0] {
            let f = m.residual_cdf(Regime::Working, 1.5, s);
            assert!((kit.big_phi(s).unwrap() - f).abs() < 1e-15);
        }
        for u in [0.0, 0.3, 0.99] {
            let (a, b) = kit.draw_pair(u).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pareto_densities_cross_once() {
        let m = canonical();
        let kit = MinDensityKit::new(&m, 0.0, 1.0).unwrap();
        let s = kit.crossing().unwrap();
        let fx = |t| m.residual_pdf_work(0.0, t);
        let fy = |t| m.residual_pdf_work(1.0, t);
        assert!((fx(s) / fy(s) - 1.0).abs() < 1e-12);
        assert!(fy(0.5 * s) < fx(0.5 * s));
        assert!(fx(2.0 * s) < fy(2.0 * s));
    }

    #[test]
    fn decomposition_adds_up() {
        let m = canonical();
        for (x, y) in [(0.0, 1.0), (2.0, 5.0), (3.0, 0.5)] {
            let kit = MinDensityKit::new(&m, x, y).unwrap();
            for i in 0..60 {
                let s = 0.05 * i as f64 * (1.0 + i as f64);
                let lhs = kit.big_phi(s).unwrap() + kit.big_phi_hat(s).unwrap();
                assert!((lhs - m.residual_cdf(Regime::Working, x, s)).abs() < 1e-10);
                let lhs = kit.big_phi(s).unwrap() + kit.big_phi_hat_swapped(s).unwrap();
                assert!((lhs - m.residual_cdf(Regime::Working, y, s)).abs() < 1e-10);
            }
            let far = 1e9;
            let total = kit.kappa() + kit.big_phi_hat(far).unwrap();
            assert!((total - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn kappa_matches_quadrature_and_lower_bound() {
        let m = canonical();
        for (x, y) in [(0.0, 1.0), (2.0, 5.0), (0.0, 4.0)] {
            let kit = MinDensityKit::new(&m, x, y).unwrap();
            let q = integrate_semi_infinite(
                |s| m.residual_pdf_work(x, s).min(m.residual_pdf_work(y, s)),
                0.0,
                1e-12,
            )
            .unwrap();
            assert!((kit.kappa() - q.value).abs() < 1e-9, "{x},{y}");
            let lower = crate::bound::kappa(&m, x.max(y)).unwrap();
            assert!(kit.kappa() >= lower);
        }
    }

    #[test]
    fn numeric_backend_agrees_with_closed_form() {
        let m = canonical();
        for (x, y) in [(0.0, 1.0), (5.0, 2.0)] {
            let exact = MinDensityKit::new(&m, x, y).unwrap();
            let num = MinDensityKit::numeric(&m, x, y).unwrap();
            assert!((exact.kappa() - num.kappa()).abs() < 1e-10);
            for u in [
                0.01,
                0.2,
                0.5,
                exact.kappa() - 1e-3,
                exact.kappa() + 1e-3,
                0.99,
            ] {
                let (a1, a2) = exact.draw_pair(u).unwrap();
                let (b1, b2) = num.draw_pair(u).unwrap();
                assert!((a1 - b1).abs() < 1e-6 * (1.0 + a1), "u={u}: {a1} vs {b1}");
                assert!((a2 - b2).abs() < 1e-6 * (1.0 + a2), "u={u}: {a2} vs {b2}");
            }
        }
    }

    #[test]
    fn remainder_draws_straddle_crossing() {
        let m = canonical();
        let kit = MinDensityKit::new(&m, 0.0, 1.0).unwrap();
        let s = kit.crossing().unwrap();
        for i in 0..50 {
            let u = kit.kappa() + (1.0 - kit.kappa()) * (i as f64 + 0.5) / 50.0;
            let (t1, t2) = kit.draw_pair(u).unwrap();
            assert!(t1 <= s && t2 >= s, "u={u}: {t1} {t2} s*={s}");
        }
    }

    #[test]
    fn uniform_outside_unit_interval_rejected() {
        let m = canonical();
        let kit = MinDensityKit::new(&m, 0.0, 1.0).unwrap();
        assert!(kit.xi(1.0).is_err());
        assert!(kit.xi(-0.1).is_err());
    }

    #[test]
    fn shared_case_keeps_states_equal() {
        let m = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = PairedState::new(SystemState::working(0.7), SystemState::working(0.7));
        for _ in 0..100 {
            let o = step_paired(&m, &st, &mut rng).unwrap();
            assert_eq!(o.case, StepCase::Shared);
            assert_eq!(o.state.z1, o.state.z2);
            st = o.state;
        }
    }

    #[test]
    fn merged_pair_starts_shared_repair() {
        let m = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut merged = 0;
        for _ in 0..2000 {
            let st = PairedState::new(SystemState::working(0.0), SystemState::working(0.3));
            let o = step_paired(&m, &st, &mut rng).unwrap();
            assert_eq!(o.case, StepCase::Spliced);
            if o.state.coupled {
                merged += 1;
                assert_eq!(o.state.z1, SystemState::repair(0.0));
                assert_eq!(o.jumped, [true, true]);
            } else {
                assert_eq!(o.jumped.iter().filter(|j| **j).count(), 1);
            }
        }
        let kappa = MinDensityKit::new(&m, 0.0, 0.3).unwrap().kappa();
        let f = merged as f64 / 2000.0;
        let se = (kappa * (1.0 - kappa) / 2000.0).sqrt();
        assert!((f - kappa).abs() < 4.0 * se, "{f} vs {kappa}");
    }

    #[test]
    fn coupling_time_basics() {
        let m = canonical();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = SystemState::working(2.0);
        assert_eq!(coupling_time(&m, z, z, &mut rng, 10).unwrap().sigma, 0.0);
        let run = coupling_time(
            &m,
            SystemState::working(0.0),
            SystemState::repair(0.0),
            &mut rng,
            DEFAULT_EVENT_CAP,
        )
        .unwrap();
        assert!(run.sigma > 0.0 && run.events > 0);
        let err = coupling_time(
            &m,
            SystemState::working(0.0),
            SystemState::repair(0.0),
            &mut rng,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, CouplingError::CapExceeded { .. }));
    }

    #[test]
    fn coupling_stats_are_reproducible() {
        let m = canonical();
        let streams = RngStreams::new(17);
        let spec = CouplingSpec {
            runs: 200,
            alpha: 2.0,
            cap: DEFAULT_EVENT_CAP,
            ci_level: 0.99,
        };
        let a = coupling_stats(
            &m,
            SystemState::working(0.0),
            SystemState::repair(0.0),
            spec,
            &streams,
        )
        .unwrap();
        let b = coupling_stats(
            &m,
            SystemState::working(0.0),
            SystemState::repair(0.0),
            spec,
            &streams,
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.moment.mean >= 1.0);
        assert!(a.sigma.iter().all(|s| s.is_finite()));
        assert!(a.sigma_csv().lines().count() == 201);
    }

    #[test]
    fn audit_refuses_window_below_theta0() {
        let m = canonical();
        let spec = AuditSpec {
            r: 0.5,
            n: 3.0,
            theta0_mode: Theta0Mode::Exact,
            cycles: 10,
            cap: DEFAULT_EVENT_CAP,
            ci_level: 0.99,
        };
        let err = meet_rate_audit(
            &m,
            SystemState::working(0.0),
            SystemState::repair(0.0),
            spec,
            &RngStreams::new(1),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            CouplingError::Bound(BoundError::InvalidWindow { .. })
        ));
    }
}
