//! Working and repair laws of a binary-state repairable system.
//!
//! The working law is described by its hazard rate `λ(s)` and the repair
//! law by its distribution function `F₂`. Both must satisfy the heavy-tail
//! envelope
//!
//! ```text
//! K₁/(1+s) ≤ λ(s) ≤ Λ,      F₂(s) ≥ 1 − (1+s)^(−K₂),      Λ > K₁ > 3, K₂ > 3
//! ```
//!
//! The canonical family saturates both lower bounds: `λ(s) = K₁/(1+s)` and
//! `F₂(s) = 1 − (1+s)^(−K₂)`, for which every quantity below is available in
//! closed form.

mod tabulated;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{invert_monotone, NumericsError, Tolerances};

pub use tabulated::{read_two_column_csv, CdfTable, HazardTable};

/// Interior points checked per grid segment when validating tabulated laws.
pub const ENVELOPE_REFINEMENT: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("tail exponent {name} = {value} must exceed 3")]
    ExponentTooSmall { name: &'static str, value: f64 },
    #[error("hazard bound Λ = {lambda} must exceed K1 = {k1}")]
    LambdaNotDominating { lambda: f64, k1: f64 },
    #[error("working hazard violates K1/(1+s) <= λ(s) <= Λ at s = {s}: λ = {hazard}, bounds [{lower}, {upper}]")]
    HazardBoundViolated {
        s: f64,
        hazard: f64,
        lower: f64,
        upper: f64,
    },
    #[error("repair law violates F2(s) >= 1 - (1+s)^-K2 at s = {s}: F2 = {cdf}, floor {floor}")]
    RepairTailViolated { s: f64, cdf: f64, floor: f64 },
    #[error("malformed table: {0}")]
    MalformedTable(String),
    #[error("state ({regime:?}, {elapsed}) is outside the support of the regime's law")]
    InvalidState { regime: Regime, elapsed: f64 },
    #[error("inverse transform failed: {0}")]
    InversionFailed(NumericsError),
    #[error(transparent)]
    Numerics(NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Regime {
    Working = 1,
    Repair = 2,
}

impl Regime {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn from_index(n: u8) -> Option<Self> {
        match n {
            1 => Some(Regime::Working),
            2 => Some(Regime::Repair),
            _ => None,
        }
    }

    pub fn other(self) -> Self {
        match self {
            Regime::Working => Regime::Repair,
            Regime::Repair => Regime::Working,
        }
    }
}

/// A point `(n, x)` of the state space: the current regime and the time
/// already spent in it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub regime: Regime,
    pub elapsed: f64,
}

impl SystemState {
    pub fn new(regime: Regime, elapsed: f64) -> Self {
        Self { regime, elapsed }
    }

    pub fn working(elapsed: f64) -> Self {
        Self::new(Regime::Working, elapsed)
    }

    pub fn repair(elapsed: f64) -> Self {
        Self::new(Regime::Repair, elapsed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WorkLawSpec {
    ParetoHazard,
    /// Grid of `(s, λ(s))` pairs.
    TabulatedHazard(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RepairLawSpec {
    Pareto,
    /// Grid of `(s, F₂(s))` pairs; a repeated `s` marks an atom.
    TabulatedCdf(Vec<(f64, f64)>),
}

/// Unvalidated model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawParams {
    pub k1: f64,
    pub k2: f64,
    pub lambda: f64,
    pub work: WorkLawSpec,
    pub repair: RepairLawSpec,
}

impl RawParams {
    /// `K₁ = K₂ = 4`, `Λ = 5`, both laws from the canonical family.
    pub fn canonical() -> Self {
        Self::pareto(4.0, 4.0, 5.0)
    }

    pub fn pareto(k1: f64, k2: f64, lambda: f64) -> Self {
        Self {
            k1,
            k2,
            lambda,
            work: WorkLawSpec::ParetoHazard,
            repair: RepairLawSpec::Pareto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum WorkLaw {
    ParetoHazard,
    Tabulated(HazardTable),
}

#[derive(Debug, Clone, PartialEq)]
enum RepairLaw {
    Pareto,
    Tabulated(CdfTable),
}

/// Validated model. Immutable after construction and shareable across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    k1: f64,
    k2: f64,
    lambda: f64,
    work: WorkLaw,
    repair: RepairLaw,
    mean_work: f64,
    mean_repair: f64,
    tol: Tolerances,
}

pub fn validate(raw: &RawParams) -> Result<ModelParams, ModelError> {
    validate_with(raw, Tolerances::default())
}

pub fn validate_with(raw: &RawParams, tol: Tolerances) -> Result<ModelParams, ModelError> {
    for (name, value) in [("K1", raw.k1), ("K2", raw.k2)] {
        if !(value > 3.0) || !value.is_finite() {
            return Err(ModelError::ExponentTooSmall { name, value });
        }
    }
    if !(raw.lambda > raw.k1) || !raw.lambda.is_finite() {
        return Err(ModelError::LambdaNotDominating {
            lambda: raw.lambda,
            k1: raw.k1,
        });
    }

    let work = match &raw.work {
        WorkLawSpec::ParetoHazard => WorkLaw::ParetoHazard,
        WorkLawSpec::TabulatedHazard(points) => {
            let table = HazardTable::new(points)?;
            for s in table.refined_grid(ENVELOPE_REFINEMENT) {
                let hazard = table.hazard(s);
                let lower = raw.k1 / (1.0 + s);
                if hazard < lower * (1.0 - 1e-12) || hazard > raw.lambda * (1.0 + 1e-12) {
                    return Err(ModelError::HazardBoundViolated {
                        s,
                        hazard,
                        lower,
                        upper: raw.lambda,
                    });
                }
            }
            WorkLaw::Tabulated(table)
        }
    };

    let repair = match &raw.repair {
        RepairLawSpec::Pareto => RepairLaw::Pareto,
        RepairLawSpec::TabulatedCdf(points) => {
            let table = CdfTable::new(points, raw.k2)?;
            let check = |s: f64, cdf: f64| {
                let floor = 1.0 - (1.0 + s).powf(-raw.k2);
                if cdf < floor - 1e-12 {
                    Err(ModelError::RepairTailViolated { s, cdf, floor })
                } else {
                    Ok(())
                }
            };
            for s in table.refined_grid(ENVELOPE_REFINEMENT) {
                check(s, table.cdf(s))?;
            }
            for s in table.atoms() {
                check(s, table.cdf_left(s))?;
            }
            RepairLaw::Tabulated(table)
        }
    };

    let mean_work = match &work {
        WorkLaw::ParetoHazard => 1.0 / (raw.k1 - 1.0),
        WorkLaw::Tabulated(t) => t.total_survival_integral(),
    };
    let mean_repair = match &repair {
        RepairLaw::Pareto => 1.0 / (raw.k2 - 1.0),
        RepairLaw::Tabulated(t) => t.survival_integral(0.0, f64::INFINITY)?,
    };

    Ok(ModelParams {
        k1: raw.k1,
        k2: raw.k2,
        lambda: raw.lambda,
        work,
        repair,
        mean_work,
        mean_repair,
        tol,
    })
}

impl ModelParams {
    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn k2(&self) -> f64 {
        self.k2
    }

    /// `K = min(K₁, K₂)`.
    pub fn k_min(&self) -> f64 {
        self.k1.min(self.k2)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tail_exponent(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Working => self.k1,
            Regime::Repair => self.k2,
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        self.tol
    }

    pub fn is_pareto(&self, regime: Regime) -> bool {
        match regime {
            Regime::Working => matches!(self.work, WorkLaw::ParetoHazard),
            Regime::Repair => matches!(self.repair, RepairLaw::Pareto),
        }
    }

    /// `1 − F_j(s)`.
    pub fn survival(&self, regime: Regime, s: f64) -> f64 {
        match regime {
            Regime::Working => match &self.work {
                WorkLaw::ParetoHazard => (1.0 + s).powf(-self.k1),
                WorkLaw::Tabulated(t) => t.survival(s),
            },
            Regime::Repair => match &self.repair {
                RepairLaw::Pareto => (1.0 + s).powf(-self.k2),
                RepairLaw::Tabulated(t) => t.survival(s),
            },
        }
    }

    pub fn cdf(&self, regime: Regime, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        1.0 - self.survival(regime, s)
    }

    /// Failure intensity `λ(s)` of the working law.
    pub fn hazard(&self, s: f64) -> f64 {
        match &self.work {
            WorkLaw::ParetoHazard => self.k1 / (1.0 + s),
            WorkLaw::Tabulated(t) => t.hazard(s),
        }
    }

    /// Density `f₁(s) = λ(s)(1 − F₁(s))` of the working law.
    pub fn pdf_work(&self, s: f64) -> f64 {
        match &self.work {
            WorkLaw::ParetoHazard => self.k1 * (1.0 + s).powf(-self.k1 - 1.0),
            WorkLaw::Tabulated(t) => t.hazard(s) * t.survival(s),
        }
    }

    /// `1 − F_j^(x)(s) = (1 − F_j(x+s)) / (1 − F_j(x))`.
    pub fn residual_survival(&self, regime: Regime, x: f64, s: f64) -> f64 {
        if s < 0.0 {
            return 1.0;
        }
        if self.is_pareto(regime) {
            let k = self.tail_exponent(regime);
            return ((1.0 + x) / (1.0 + x + s)).powf(k);
        }
        match (regime, &self.work) {
            (Regime::Working, WorkLaw::Tabulated(t)) => {
                (t.cumulative_hazard(x) - t.cumulative_hazard(x + s)).exp()
            }
            _ => self.survival(regime, x + s) / self.survival(regime, x),
        }
    }

    pub fn residual_cdf(&self, regime: Regime, x: f64, s: f64) -> f64 {
        1.0 - self.residual_survival(regime, x, s)
    }

    /// Density `f₁^(x)(s)` of the residual working time.
    pub fn residual_pdf_work(&self, x: f64, s: f64) -> f64 {
        match &self.work {
            WorkLaw::ParetoHazard => {
                let k = self.k1;
                k * (1.0 + x).powf(k) * (1.0 + x + s).powf(-k - 1.0)
            }
            WorkLaw::Tabulated(t) => {
                t.hazard(x + s) * (t.cumulative_hazard(x) - t.cumulative_hazard(x + s)).exp()
            }
        }
    }

    pub fn check_state(&self, state: SystemState) -> Result<(), ModelError> {
        if !(state.elapsed >= 0.0 && state.elapsed.is_finite())
            || self.survival(state.regime, state.elapsed) <= 0.0
        {
            return Err(ModelError::InvalidState {
                regime: state.regime,
                elapsed: state.elapsed,
            });
        }
        Ok(())
    }

    /// Generalized inverse of the residual law `F_j^(x)` at `u ∈ [0, 1)`.
    pub fn residual_quantile(&self, regime: Regime, x: f64, u: f64) -> Result<f64, ModelError> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        if self.is_pareto(regime) {
            let k = self.tail_exponent(regime);
            return Ok((1.0 + x) * ((1.0 - u).powf(-1.0 / k) - 1.0));
        }
        match (regime, &self.work) {
            (Regime::Working, WorkLaw::Tabulated(t)) => {
                // H(x+s) ≥ H(x) − ln(1−u)
                let target = t.cumulative_hazard(x) - (-u).ln_1p();
                invert_monotone(
                    |s| t.cumulative_hazard(x + s),
                    target,
                    0.0,
                    1.0,
                    self.tol.inversion,
                )
                .map_err(ModelError::InversionFailed)
            }
            _ => invert_monotone(
                |s| self.residual_cdf(regime, x, s),
                u,
                0.0,
                1.0,
                self.tol.inversion,
            )
            .map_err(ModelError::InversionFailed),
        }
    }

    pub fn quantile(&self, regime: Regime, u: f64) -> Result<f64, ModelError> {
        self.residual_quantile(regime, 0.0, u)
    }

    /// Draws `ξ` (working) or `η` (repair) by inverse transform.
    pub fn sample<R: Rng + ?Sized>(&self, regime: Regime, rng: &mut R) -> Result<f64, ModelError> {
        self.quantile(regime, rng.random::<f64>())
    }

    /// Draws the residual time `ξ^(x)` or `η^(x)` by inverse transform.
    pub fn sample_residual<R: Rng + ?Sized>(
        &self,
        regime: Regime,
        x: f64,
        rng: &mut R,
    ) -> Result<f64, ModelError> {
        self.residual_quantile(regime, x, rng.random::<f64>())
    }

    pub fn mean_work(&self) -> f64 {
        self.mean_work
    }

    pub fn mean_repair(&self) -> f64 {
        self.mean_repair
    }

    pub fn mean(&self, regime: Regime) -> f64 {
        match regime {
            Regime::Working => self.mean_work,
            Regime::Repair => self.mean_repair,
        }
    }

    /// `A = Eξ / (Eξ + Eη)`.
    pub fn limiting_availability(&self) -> f64 {
        self.mean_work / (self.mean_work + self.mean_repair)
    }

    /// `E ξ^a` or `E η^a = a ∫ s^(a−1) (1 − F(s)) ds`, finite for `a < K_j`.
    pub fn moment(&self, regime: Regime, a: f64) -> Result<f64, ModelError> {
        let k = self.tail_exponent(regime);
        if self.is_pareto(regime) {
            // a B(a, K−a) = Γ(a+1)Γ(K−a)/Γ(K)
            use statrs::function::gamma::ln_gamma;
            return Ok((ln_gamma(a + 1.0) + ln_gamma(k - a) - ln_gamma(k)).exp());
        }
        match (regime, &self.repair) {
            (Regime::Repair, RepairLaw::Tabulated(t)) => t.moment(a),
            _ => crate::numerics::integrate_semi_infinite(
                |s| a * s.powf(a - 1.0) * self.survival(regime, s),
                0.0,
                self.tol.quad,
            )
            .map(|r| r.value)
            .map_err(ModelError::Numerics),
        }
    }

    /// Equilibrium (stationary-excess) distribution of the elapsed time in
    /// regime `j`: `∫₀^x (1 − F_j(u)) du / E_j`.
    pub fn equilibrium_elapsed_cdf(&self, regime: Regime, x: f64) -> Result<f64, ModelError> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        if self.is_pareto(regime) {
            let k = self.tail_exponent(regime);
            return Ok(1.0 - (1.0 + x).powf(1.0 - k));
        }
        let integral = match regime {
            Regime::Working => match &self.work {
                WorkLaw::Tabulated(t) => t.integrated_survival(x)?,
                WorkLaw::ParetoHazard => unreachable!(),
            },
            Regime::Repair => match &self.repair {
                RepairLaw::Tabulated(t) => t.survival_integral(0.0, x)?,
                RepairLaw::Pareto => unreachable!(),
            },
        };
        Ok((integral / self.mean(regime)).min(1.0))
    }

    pub fn equilibrium_elapsed_quantile(&self, regime: Regime, u: f64) -> Result<f64, ModelError> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        if self.is_pareto(regime) {
            let k = self.tail_exponent(regime);
            return Ok((1.0 - u).powf(-1.0 / (k - 1.0)) - 1.0);
        }
        let failure = std::cell::RefCell::new(None);
        let s = invert_monotone(
            |x| match self.equilibrium_elapsed_cdf(regime, x) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            u,
            0.0,
            1.0,
            self.tol.inversion,
        )
        .map_err(ModelError::InversionFailed)?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(s),
        }
    }

    /// Draws a state from the stationary law: the working regime with
    /// probability `A`, and the elapsed time from the equilibrium density
    /// `(1 − F_j(x)) / E_j` of that regime.
    pub fn equilibrium_sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
    ) -> Result<SystemState, ModelError> {
        let regime = if rng.random::<f64>() < self.limiting_availability() {
            Regime::Working
        } else {
            Regime::Repair
        };
        let elapsed = self.equilibrium_elapsed_quantile(regime, rng.random::<f64>())?;
        Ok(SystemState { regime, elapsed })
    }
}
