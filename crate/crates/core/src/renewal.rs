//! Exact event-driven simulation of the alternating renewal process and
//! Monte Carlo estimation of the availability `A(t) = P{n_t = 1}`.

use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelParams, Regime, SystemState};
use crate::rng::RngStreams;
use crate::stats::{wilson, Interval};

pub const MIN_TRAJECTORIES: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("need at least {MIN_TRAJECTORIES} trajectories, got {0}")]
    TooFewTrajectories(usize),
    #[error("horizon must be positive and finite, got {0}")]
    InvalidHorizon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEvent {
    pub switch_time: f64,
    pub new_regime: Regime,
}

/// One realization of `X_t` on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: SystemState,
    pub horizon: f64,
    /// Regime changes in `(0, horizon]`, in time order.
    pub events: Vec<TrajectoryEvent>,
}

impl Trajectory {
    /// Regime at time `t` (paths are right continuous).
    pub fn regime_at(&self, t: f64) -> Regime {
        let k = self.events.partition_point(|e| e.switch_time <= t);
        if k == 0 {
            self.initial.regime
        } else {
            self.events[k - 1].new_regime
        }
    }

    /// Full state `(n_t, x_t)` at time `t`.
    pub fn state_at(&self, t: f64) -> SystemState {
        let k = self.events.partition_point(|e| e.switch_time <= t);
        if k == 0 {
            SystemState::new(self.initial.regime, self.initial.elapsed + t)
        } else {
            let e = self.events[k - 1];
            SystemState::new(e.new_regime, t - e.switch_time)
        }
    }

    /// Lengths of the regime periods that start and end inside the
    /// horizon, i.e. all complete periods after the first (residual) one.
    pub fn complete_periods(&self) -> impl Iterator<Item = (Regime, f64)> + '_ {
        self.events
            .windows(2)
            .map(|w| (w[0].new_regime, w[1].switch_time - w[0].switch_time))
    }

    /// Time spent working in `[0, horizon]`.
    pub fn working_time(&self) -> f64 {
        let mut total = 0.0;
        let mut start = 0.0;
        let mut regime = self.initial.regime;
        for e in &self.events {
            if regime == Regime::Working {
                total += e.switch_time - start;
            }
            start = e.switch_time;
            regime = e.new_regime;
        }
        if regime == Regime::Working {
            total += self.horizon - start;
        }
        total
    }
}

/// Simulates `X_t` from `x0` up to `horizon`. The first period is drawn
/// from the residual law of the initial regime; later periods alternate
/// with fresh independent draws from `F₁` and `F₂`.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &ModelParams,
    x0: SystemState,
    horizon: f64,
    rng: &mut R,
) -> Result<Trajectory, SimError> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidHorizon(horizon));
    }
    model.check_state(x0)?;
    let mut events = Vec::new();
    let mut regime = x0.regime;
    let mut clock = model.sample_residual(regime, x0.elapsed, rng)?;
    while clock <= horizon {
        regime = regime.other();
        events.push(TrajectoryEvent {
            switch_time: clock,
            new_regime: regime,
        });
        let mut period = model.sample(regime, rng)?;
        // a zero-length period would repeat a switch time; redraw
        while period <= 0.0 {
            period = model.sample(regime, rng)?;
        }
        clock += period;
    }
    Ok(Trajectory {
        initial: x0,
        horizon,
        events,
    })
}

/// Fraction of `[0, horizon]` spent working along one trajectory.
pub fn time_average_availability<R: Rng + ?Sized>(
    model: &ModelParams,
    x0: SystemState,
    horizon: f64,
    rng: &mut R,
) -> Result<f64, SimError> {
    let traj = simulate_trajectory(model, x0, horizon, rng)?;
    Ok(traj.working_time() / horizon)
}

/// How trajectories of a curve start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartLaw {
    Fixed(SystemState),
    Stationary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvailabilityCurve {
    pub start: StartLaw,
    pub grid: Vec<f64>,
    pub working_counts: Vec<u64>,
    pub a_hat: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub ci_half_width: Vec<f64>,
    pub ci_level: f64,
    pub n_traj: usize,
    pub seed: u64,
}

impl AvailabilityCurve {
    fn from_counts(
        start: StartLaw,
        grid: Vec<f64>,
        working_counts: Vec<u64>,
        n_traj: usize,
        ci_level: f64,
        seed: u64,
    ) -> Self {
        let n = n_traj as u64;
        let cis: Vec<Interval> = working_counts
            .iter()
            .map(|&k| wilson(k, n, ci_level))
            .collect();
        Self {
            start,
            a_hat: working_counts
                .iter()
                .map(|&k| k as f64 / n as f64)
                .collect(),
            ci_lo: cis.iter().map(|c| c.lo).collect(),
            ci_hi: cis.iter().map(|c| c.hi).collect(),
            ci_half_width: cis.iter().map(|c| c.half_width()).collect(),
            grid,
            working_counts,
            ci_level,
            n_traj,
            seed,
        }
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval {
            lo: self.ci_lo[i],
            hi: self.ci_hi[i],
        }
    }

    /// `t,a_hat,ci_lo,ci_hi` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,a_hat,ci_lo,ci_hi\n");
        for i in 0..self.grid.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.grid[i], self.a_hat[i], self.ci_lo[i], self.ci_hi[i]
            )
            .expect("writing to a String cannot fail");
        }
        out
    }
}

pub fn check_grid(grid: &[f64]) -> Result<(), SimError> {
    if grid.is_empty() {
        return Err(SimError::InvalidGrid("empty".into()));
    }
    if grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(SimError::InvalidGrid(
            "times must be finite and nonnegative".into(),
        ));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SimError::InvalidGrid(
            "times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub n_traj: usize,
    pub ci_level: f64,
}

fn curve(
    model: &ModelParams,
    start: StartLaw,
    grid: &[f64],
    spec: CurveSpec,
    streams: &RngStreams,
) -> Result<AvailabilityCurve, SimError> {
    check_grid(grid)?;
    if spec.n_traj < MIN_TRAJECTORIES {
        return Err(SimError::TooFewTrajectories(spec.n_traj));
    }
    if let StartLaw::Fixed(x0) = start {
        model.check_state(x0)?;
    }
    let horizon = grid.last().copied().unwrap_or(0.0).max(f64::MIN_POSITIVE);
    let purpose = match start {
        StartLaw::Fixed(_) => "trajectory",
        StartLaw::Stationary => "stationary-trajectory",
    };
    // Every trajectory is read at all grid points (common random numbers);
    // counts are integer sums, so the reduction order does not matter.
    let counts = (0..spec.n_traj as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<u64>, SimError> {
            let mut rng = streams.stream(purpose, i);
            let x0 = match start {
                StartLaw::Fixed(x0) => x0,
                StartLaw::Stationary => model.equilibrium_sample(&mut rng)?,
            };
            let traj = simulate_trajectory(model, x0, horizon, &mut rng)?;
            Ok(grid
                .iter()
                .map(|&t| u64::from(traj.regime_at(t) == Regime::Working))
                .collect())
        })
        .try_reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(AvailabilityCurve::from_counts(
        start,
        grid.to_vec(),
        counts,
        spec.n_traj,
        spec.ci_level,
        streams.root(),
    ))
}

/// Estimates `A(t)` on `grid` from `n_traj` independent trajectories
/// started at `x0`, with per-point Wilson intervals.
pub fn availability_curve(
    model: &ModelParams,
    x0: SystemState,
    grid: &[f64],
    spec: CurveSpec,
    streams: &RngStreams,
) -> Result<AvailabilityCurve, SimError> {
    curve(model, StartLaw::Fixed(x0), grid, spec, streams)
}

/// Same as [`availability_curve`], with each trajectory started from an
/// independent draw of the stationary law; the result should be flat at
/// the limiting availability.
pub fn stationary_start_curve(
    model: &ModelParams,
    grid: &[f64],
    spec: CurveSpec,
    streams: &RngStreams,
) -> Result<AvailabilityCurve, SimError> {
    curve(model, StartLaw::Stationary, grid, spec, streams)
}
