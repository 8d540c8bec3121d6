//! Explicit constant `Ψ(α, X₀)` in `|A(t) − A| ≤ Ψ(α, X₀)/(1+t)^α`.
//!
//! The constant combines
//!
//! * moment integrals `M_j(k) = k ∫ s^(k−1)/(1+s)^(K_j) ds` and their
//!   conditional versions `M_j^(x)(k)` for the initial state,
//! * closed-form bounds on the same integrals averaged over the stationary
//!   law,
//! * the per-cycle coupling success probability
//!   `p = (1 − Θ₀/R)(e^(−ΛR) − (1+NR)^(−K₁)) κ(NR)`, with
//!   `κ(T) = ∫ K₁e^(−Λs)/(1+T+s) ds`, entering through `q = 1 − p` in the
//!   series `Σ (2i+4)^α q^i (…)`.
//!
//! Two series forms are reported. `psi` sums from `i = 0` with weight
//! `(2i+4)^α q^i`; `psi_derivation_tight` sums from `i = 1` with weight
//! `(2i+4)^(α−1) q^(i−1)`. Both carry the cycle-count terms
//! `(i+1)M₁(α) + i·M₂(α)` inside the sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::model::{ModelError, ModelParams, Regime, SystemState};
use crate::numerics::{integrate_semi_infinite, sum_affine_power_series, NumericsError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("moment order {order} outside [1, {limit})")]
    RangeError { order: f64, limit: f64 },
    #[error("M_{regime}({k}) diverges: need 0 < k < K = {tail}")]
    DivergentMoment { regime: u8, k: f64, tail: f64 },
    #[error("alpha = {alpha} outside (1, {upper})")]
    AlphaOutOfRange { alpha: f64, upper: f64 },
    #[error("invalid window (R = {r}, N = {n}): {reason}")]
    InvalidWindow { r: f64, n: f64, reason: String },
    #[error("series diverges: q = {0} is not below 1")]
    SeriesDivergent(f64),
    #[error("no feasible (R, N) in the search grid")]
    NoFeasiblePoint,
    #[error("invalid search specification: {0}")]
    InvalidSearch(String),
}

/// Which value of `Θ₀ = E(ξ+η)²/(2E(ξ+η))` enters the coupling probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Theta0Mode {
    /// The true value, from the model's moments.
    Exact,
    /// The computable upper bound `(m₁(2) + 2m₁(1)m₂(1) + m₂(2)) / (2μ₁)`.
    Bracket,
}

/// `(α, R, N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub alpha: f64,
    pub r: f64,
    pub n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBounds {
    /// `μ_a = K₁Γ(a)/Λ^a ≤ E ξ^a`
    pub mu_a: f64,
    /// `m₁(a) = a/(K₁−a) > E ξ^a`
    pub m1_a: f64,
    /// `m₂(b) = b/(K₂−b) > E η^b`
    pub m2_b: f64,
}

pub fn moment_bounds(model: &ModelParams, a: f64, b: f64) -> Result<MomentBounds, BoundError> {
    let (k1, k2) = (model.k1(), model.k2());
    if !(1.0..k1).contains(&a) {
        return Err(BoundError::RangeError {
            order: a,
            limit: k1,
        });
    }
    if !(1.0..k2).contains(&b) {
        return Err(BoundError::RangeError {
            order: b,
            limit: k2,
        });
    }
    Ok(MomentBounds {
        mu_a: k1 * gamma(a) / model.lambda().powf(a),
        m1_a: a / (k1 - a),
        m2_b: b / (k2 - b),
    })
}

/// `M_j(k) = k ∫₀^∞ s^(k−1)/(1+s)^(K_j) ds`.
pub fn big_m(model: &ModelParams, regime: Regime, k: f64) -> Result<f64, BoundError> {
    let tail = model.tail_exponent(regime);
    if !(k > 0.0 && k < tail) {
        return Err(BoundError::DivergentMoment {
            regime: regime.index(),
            k,
            tail,
        });
    }
    let r = integrate_semi_infinite(
        |s| k * s.powf(k - 1.0) * (1.0 + s).powf(-tail),
        0.0,
        model.tolerances().quad,
    )?;
    Ok(r.value)
}

/// `M_j^(x)(k) = k/(1−F_j(x)) ∫₀^∞ s^(k−1)/(1+s+x)^(K_j) ds`.
///
/// Substituting `s = (1+x)u` reduces the integral to
/// `(1+x)^(k−K_j) M_j(k)`, which avoids cancellation for large `x`.
pub fn big_m_x(model: &ModelParams, regime: Regime, x: f64, k: f64) -> Result<f64, BoundError> {
    model.check_state(SystemState::new(regime, x))?;
    let tail = model.tail_exponent(regime);
    let base = big_m(model, regime, k)?;
    Ok(base * (1.0 + x).powf(k - tail) / model.survival(regime, x))
}

/// `κ(T) = ∫₀^∞ K₁ e^(−Λs)/(1+T+s) ds`.
pub fn kappa(model: &ModelParams, t: f64) -> Result<f64, BoundError> {
    let (k1, lambda) = (model.k1(), model.lambda());
    let scale = k1 / (lambda * (1.0 + t));
    let r = integrate_semi_infinite(
        |s| k1 * (-lambda * s).exp() / (1.0 + t + s),
        0.0,
        model.tolerances().quad * scale,
    )?;
    Ok(r.value)
}

/// Computable upper bound on `Θ₀`, with `μ_a` taken at `a = 1`.
pub fn theta0_bracket(model: &ModelParams) -> Result<f64, BoundError> {
    let one = moment_bounds(model, 1.0, 1.0)?;
    let two = moment_bounds(model, 2.0, 2.0)?;
    Ok((two.m1_a + 2.0 * one.m1_a * one.m2_b + two.m2_b) / (2.0 * one.mu_a))
}

/// `Θ₀ = E(ξ+η)² / (2(Eξ+Eη))` from the model's own moments.
pub fn theta0_exact(model: &ModelParams) -> Result<f64, BoundError> {
    let (e1, e2) = (model.mean_work(), model.mean_repair());
    let s1 = model.moment(Regime::Working, 2.0)?;
    let s2 = model.moment(Regime::Repair, 2.0)?;
    Ok((s1 + 2.0 * e1 * e2 + s2) / (2.0 * (e1 + e2)))
}

pub fn theta0(model: &ModelParams, mode: Theta0Mode) -> Result<f64, BoundError> {
    match mode {
        Theta0Mode::Exact => theta0_exact(model),
        Theta0Mode::Bracket => theta0_bracket(model),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingProbability {
    /// `κ(NR)`
    pub kappa_nr: f64,
    /// `π(R, N) = (1 − Θ₀/R)(e^(−ΛR) − (1+NR)^(−K₁))`
    pub pi_rn: f64,
    pub p: f64,
    pub q: f64,
}

/// Checks `R > Θ₀` and `e^(−ΛR) > (1+NR)^(−K₁)`.
pub fn check_window(model: &ModelParams, r: f64, n: f64, theta0: f64) -> Result<(), BoundError> {
    let invalid = |reason: String| BoundError::InvalidWindow { r, n, reason };
    if !(n >= 1.0) || !n.is_finite() {
        return Err(invalid("N must be at least 1".into()));
    }
    if !(r > theta0) || !r.is_finite() {
        return Err(invalid(format!("R must exceed Θ₀ = {theta0}")));
    }
    // compare in logs: −ΛR > −K₁ ln(1+NR)
    if !(-model.lambda() * r > -model.k1() * (n * r).ln_1p()) {
        return Err(invalid("need exp(-ΛR) > (1+NR)^(-K1)".into()));
    }
    Ok(())
}

/// Per-cycle lower bound `p` on the probability of a merge, and `q = 1 − p`.
pub fn coupling_q(
    model: &ModelParams,
    r: f64,
    n: f64,
    theta0: f64,
) -> Result<CouplingProbability, BoundError> {
    check_window(model, r, n, theta0)?;
    let gap = (-model.lambda() * r).exp() - (1.0 + n * r).powf(-model.k1());
    let pi_rn = (1.0 - theta0 / r) * gap;
    let kappa_nr = kappa(model, n * r)?;
    let p = pi_rn * kappa_nr;
    debug_assert!(p > 0.0 && p < 1.0);
    Ok(CouplingProbability {
        kappa_nr,
        pi_rn,
        p,
        q: 1.0 - p,
    })
}

/// Terms of `Ψ` that do not depend on the series index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// `M₁(α)`
    pub m1_alpha: f64,
    /// `M₂(α)`
    pub m2_alpha: f64,
    /// `M_{n₀}^(x₀)(α)`
    pub m_x0_alpha: f64,
    /// `1(n₀=1) 2^(α−1)(M₁^(x₀)(α) + M₂(α)) + 1(n₀=2) M₂^(x₀)(α)`
    pub initial_state_term: f64,
    /// `2^(α−1) A (α/((K₁−α)(K₁−α−1)Eξ) + M₂(α))`
    pub stationary_work_term: f64,
    /// `(1−A) α/((K₂−α)(K₂−α−1)Eη)`
    pub stationary_repair_term: f64,
    /// `1 +` the three terms above.
    pub constant_term: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub alpha: f64,
    pub x0: SystemState,
    pub r: f64,
    pub n: f64,
    pub theta0_mode: Theta0Mode,
    /// Computable upper bound on `Θ₀`.
    pub theta0_upper: f64,
    pub theta0_exact: f64,
    /// Value that entered `π(R, N)`.
    pub theta0_used: f64,
    pub mean_work: f64,
    pub mean_repair: f64,
    pub limiting_availability: f64,
    pub kappa_nr: f64,
    pub pi_rn: f64,
    pub p: f64,
    pub q: f64,
    /// `Σ_{i≥0} (2i+4)^α q^i`
    pub series_weight: f64,
    pub breakdown: Breakdown,
    /// `Σ_{i≥0} (2i+4)^α q^i (C + (i+1)M₁(α) + i M₂(α))`
    pub psi: f64,
    /// `Σ_{i≥1} (2i+4)^(α−1) q^(i−1) (C + (i+1)M₁(α) + i M₂(α))`
    pub psi_derivation_tight: f64,
}

impl BoundReport {
    /// `Ψ/(1+t)^α`.
    pub fn bound_at(&self, t: f64) -> f64 {
        self.psi / (1.0 + t).powf(self.alpha)
    }

    pub fn derivation_tight_bound_at(&self, t: f64) -> f64 {
        self.psi_derivation_tight / (1.0 + t).powf(self.alpha)
    }
}

pub fn check_alpha(model: &ModelParams, alpha: f64) -> Result<(), BoundError> {
    let upper = model.k_min() - 1.0;
    if !(alpha > 1.0 && alpha < upper) {
        return Err(BoundError::AlphaOutOfRange { alpha, upper });
    }
    Ok(())
}

/// Index-free part of the bound for initial state `x0`.
pub fn breakdown(
    model: &ModelParams,
    alpha: f64,
    x0: SystemState,
) -> Result<Breakdown, BoundError> {
    check_alpha(model, alpha)?;
    model.check_state(x0)?;
    let (k1, k2) = (model.k1(), model.k2());
    let avail = model.limiting_availability();
    let m1_alpha = big_m(model, Regime::Working, alpha)?;
    let m2_alpha = big_m(model, Regime::Repair, alpha)?;
    let m_x0_alpha = big_m_x(model, x0.regime, x0.elapsed, alpha)?;
    let jensen = 2f64.powf(alpha - 1.0);
    let initial_state_term = initial_term(jensen, x0.regime, m_x0_alpha, m2_alpha);
    let stationary_work_term = jensen
        * avail
        * (alpha / ((k1 - alpha) * (k1 - alpha - 1.0) * model.mean_work()) + m2_alpha);
    let stationary_repair_term =
        (1.0 - avail) * alpha / ((k2 - alpha) * (k2 - alpha - 1.0) * model.mean_repair());
    Ok(Breakdown {
        m1_alpha,
        m2_alpha,
        m_x0_alpha,
        initial_state_term,
        stationary_work_term,
        stationary_repair_term,
        constant_term: 1.0 + initial_state_term + stationary_work_term + stationary_repair_term,
    })
}

/// Bound on `E τ(0)^α` for the first entrance into `(1, 0)` from a state
/// in regime `regime` with conditional moment `m_x`.
fn initial_term(jensen: f64, regime: Regime, m_x: f64, m2: f64) -> f64 {
    match regime {
        Regime::Working => jensen * (m_x + m2),
        Regime::Repair => m_x,
    }
}

/// `Σ_{i≥0} (2i+4)^α q^i (c + (i+1)M₁ + iM₂)`.
pub fn psi_series(
    alpha: f64,
    q: f64,
    c: f64,
    m1: f64,
    m2: f64,
    rel_tol: f64,
) -> Result<f64, BoundError> {
    if !(q < 1.0) {
        return Err(BoundError::SeriesDivergent(q));
    }
    Ok(sum_affine_power_series(
        alpha,
        q,
        c + m1,
        m1 + m2,
        0,
        rel_tol,
    )?)
}

/// `Σ_{i≥1} (2i+4)^(α−1) q^(i−1) (c + (i+1)M₁ + iM₂)`.
pub fn derivation_series(
    alpha: f64,
    q: f64,
    c: f64,
    m1: f64,
    m2: f64,
    rel_tol: f64,
) -> Result<f64, BoundError> {
    if !(q < 1.0) {
        return Err(BoundError::SeriesDivergent(q));
    }
    Ok(sum_affine_power_series(alpha - 1.0, q, c + m1, m1 + m2, 1, rel_tol)? / q)
}

/// Assembles `Ψ(α, X₀)` and every intermediate term.
pub fn psi(
    model: &ModelParams,
    x0: SystemState,
    params: BoundParams,
    mode: Theta0Mode,
) -> Result<BoundReport, BoundError> {
    let alpha = params.alpha;
    let parts = breakdown(model, alpha, x0)?;
    let theta0_upper = theta0_bracket(model)?;
    let theta0_exact = theta0_exact(model)?;
    let theta0_used = match mode {
        Theta0Mode::Exact => theta0_exact,
        Theta0Mode::Bracket => theta0_upper,
    };
    let cp = coupling_q(model, params.r, params.n, theta0_used)?;
    assemble(
        model,
        x0,
        params,
        mode,
        theta0_upper,
        theta0_exact,
        cp,
        parts,
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    model: &ModelParams,
    x0: SystemState,
    params: BoundParams,
    mode: Theta0Mode,
    theta0_upper: f64,
    theta0_exact: f64,
    cp: CouplingProbability,
    parts: Breakdown,
) -> Result<BoundReport, BoundError> {
    let alpha = params.alpha;
    let tol = model.tolerances().series;
    let c = parts.constant_term;
    let (m1, m2) = (parts.m1_alpha, parts.m2_alpha);
    let psi = psi_series(alpha, cp.q, c, m1, m2, tol)?;
    let psi_derivation_tight = derivation_series(alpha, cp.q, c, m1, m2, tol)?;
    let series_weight = sum_affine_power_series(alpha, cp.q, 1.0, 0.0, 0, tol)?;
    Ok(BoundReport {
        alpha,
        x0,
        r: params.r,
        n: params.n,
        theta0_mode: mode,
        theta0_upper,
        theta0_exact,
        theta0_used: match mode {
            Theta0Mode::Exact => theta0_exact,
            Theta0Mode::Bracket => theta0_upper,
        },
        mean_work: model.mean_work(),
        mean_repair: model.mean_repair(),
        limiting_availability: model.limiting_availability(),
        kappa_nr: cp.kappa_nr,
        pi_rn: cp.pi_rn,
        p: cp.p,
        q: cp.q,
        series_weight,
        breakdown: parts,
        psi,
        psi_derivation_tight,
    })
}

/// Bound on `E(1+ς)^α` for two fixed initial states, where `ς` is their
/// first meeting time under the paired construction:
///
/// ```text
/// Σ_{i≥1} q^(i−1)(2i+4)^(α−1) (1 + T(z₁) + T(z₂) + (i+1)M₁(α) + iM₂(α))
/// ```
///
/// with `T((1,x)) = 2^(α−1)(M₁^(x)(α) + M₂(α))` and `T((2,x)) = M₂^(x)(α)`.
pub fn coupling_constant(
    model: &ModelParams,
    alpha: f64,
    z1: SystemState,
    z2: SystemState,
    r: f64,
    n: f64,
    mode: Theta0Mode,
) -> Result<f64, BoundError> {
    check_alpha(model, alpha)?;
    let m1 = big_m(model, Regime::Working, alpha)?;
    let m2 = big_m(model, Regime::Repair, alpha)?;
    let jensen = 2f64.powf(alpha - 1.0);
    let mut c = 1.0;
    for z in [z1, z2] {
        let mx = big_m_x(model, z.regime, z.elapsed, alpha)?;
        c += initial_term(jensen, z.regime, mx, m2);
    }
    let cp = coupling_q(model, r, n, theta0(model, mode)?)?;
    derivation_series(alpha, cp.q, c, m1, m2, model.tolerances().series)
}

/// Grid over `(R, N)` for [`optimize_window`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpec {
    /// Upper end of the log-spaced `R` grid on `(Θ₀, r_max]`.
    pub r_max: f64,
    pub r_points: usize,
    pub n_min: f64,
    pub n_max: f64,
    /// Allow non-integer `N` (on a grid of step `n_step`).
    pub real_n: bool,
    pub n_step: f64,
    /// Local refinement passes around the incumbent.
    pub refine_passes: usize,
    pub refine_points: usize,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            r_max: 3.0,
            r_points: 64,
            n_min: 1.0,
            n_max: 20.0,
            real_n: false,
            n_step: 1.0,
            refine_passes: 3,
            refine_points: 16,
        }
    }
}

impl SearchSpec {
    pub fn r_grid(&self, theta0: f64) -> Vec<f64> {
        let ratio = self.r_max / theta0;
        (1..=self.r_points)
            .map(|i| {
                if i == self.r_points {
                    self.r_max
                } else {
                    theta0 * ratio.powf(i as f64 / self.r_points as f64)
                }
            })
            .collect()
    }

    pub fn n_grid(&self) -> Vec<f64> {
        let step = if self.real_n { self.n_step } else { 1.0 };
        let start = if self.real_n {
            self.n_min
        } else {
            self.n_min.ceil()
        };
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let n = start + k as f64 * step;
            if n > self.n_max + 1e-12 {
                break;
            }
            out.push(n);
            k += 1;
        }
        out
    }

    fn validate(&self, theta0: f64) -> Result<(), BoundError> {
        let bad = |m: &str| Err(BoundError::InvalidSearch(m.to_string()));
        if !(self.r_max > theta0) {
            return bad("r_max must exceed Θ₀");
        }
        if self.r_points == 0 {
            return bad("r_points must be positive");
        }
        if !(self.n_min >= 1.0 && self.n_max >= self.n_min) {
            return bad("need 1 <= n_min <= n_max");
        }
        if self.real_n && !(self.n_step > 0.0) {
            return bad("n_step must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowChoice {
    pub r: f64,
    pub n: f64,
    pub cells_searched: usize,
    pub cells_feasible: usize,
    pub report: BoundReport,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    r: f64,
    n: f64,
    cp: CouplingProbability,
}

/// Deterministic argmin over candidate cells. `Ψ` is strictly increasing
/// in `q` with everything else fixed, so the order `(Ψ, R, N)` coincides
/// with `(q, R, N)`.
fn best_cell(cells: &[Cell]) -> Option<Cell> {
    cells.iter().copied().min_by(|a, b| {
        a.cp.q
            .total_cmp(&b.cp.q)
            .then(a.r.total_cmp(&b.r))
            .then(a.n.total_cmp(&b.n))
    })
}

fn evaluate_cells(
    model: &ModelParams,
    theta0: f64,
    points: &[(f64, f64)],
) -> Result<Vec<Cell>, BoundError> {
    let cells: Result<Vec<Option<Cell>>, BoundError> = points
        .par_iter()
        .map(|&(r, n)| {
            if check_window(model, r, n, theta0).is_err() {
                return Ok(None);
            }
            coupling_q(model, r, n, theta0).map(|cp| Some(Cell { r, n, cp }))
        })
        .collect();
    Ok(cells?.into_iter().flatten().collect())
}

/// Searches `(R, N)` for the smallest `Ψ(α, X₀)`.
pub fn optimize_window(
    model: &ModelParams,
    alpha: f64,
    x0: SystemState,
    spec: &SearchSpec,
    mode: Theta0Mode,
) -> Result<WindowChoice, BoundError> {
    let parts = breakdown(model, alpha, x0)?;
    let theta0_upper = theta0_bracket(model)?;
    let theta0_exact = theta0_exact(model)?;
    let theta0_used = match mode {
        Theta0Mode::Exact => theta0_exact,
        Theta0Mode::Bracket => theta0_upper,
    };
    spec.validate(theta0_used)?;

    let r_grid = spec.r_grid(theta0_used);
    let n_grid = spec.n_grid();
    let points: Vec<(f64, f64)> = r_grid
        .iter()
        .flat_map(|&r| n_grid.iter().map(move |&n| (r, n)))
        .collect();
    let mut searched = points.len();
    let mut cells = evaluate_cells(model, theta0_used, &points)?;
    let mut feasible = cells.len();
    let mut best = best_cell(&cells).ok_or(BoundError::NoFeasiblePoint)?;

    // Refine R locally between the incumbent's grid neighbours, keeping N
    // at the incumbent and its immediate neighbours.
    let mut lo = r_grid
        .iter()
        .copied()
        .filter(|&r| r < best.r)
        .fold(theta0_used, f64::max);
    let mut hi = r_grid
        .iter()
        .copied()
        .filter(|&r| r > best.r)
        .fold(spec.r_max, f64::min);
    for _ in 0..spec.refine_passes {
        let step = if spec.real_n { spec.n_step } else { 1.0 };
        let ns: Vec<f64> = [best.n - step, best.n, best.n + step]
            .into_iter()
            .filter(|&n| n >= spec.n_min && n <= spec.n_max + 1e-12)
            .collect();
        let k = spec.refine_points.max(2);
        let rs: Vec<f64> = (1..k)
            .map(|i| lo + (hi - lo) * i as f64 / k as f64)
            .collect();
        let pts: Vec<(f64, f64)> = rs
            .iter()
            .flat_map(|&r| ns.iter().map(move |&n| (r, n)))
            .collect();
        searched += pts.len();
        let refined = evaluate_cells(model, theta0_used, &pts)?;
        feasible += refined.len();
        cells.extend(refined);
        best = best_cell(&cells).expect("incumbent is feasible");
        let width = (hi - lo) / k as f64;
        lo = (best.r - width).max(theta0_used);
        hi = (best.r + width).min(spec.r_max);
    }

    let params = BoundParams {
        alpha,
        r: best.r,
        n: best.n,
    };
    let report = assemble(
        model,
        x0,
        params,
        mode,
        theta0_upper,
        theta0_exact,
        best.cp,
        parts,
    )?;
    Ok(WindowChoice {
        r: best.r,
        n: best.n,
        cells_searched: searched,
        cells_feasible: feasible,
        report,
    })
}
