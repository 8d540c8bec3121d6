//! Numeric kernels with explicit error control: adaptive Gauss–Kronrod
//! quadrature (finite and semi-infinite), certified summation of the
//! weighted power series that appears in the bound, and generalized
//! inversion of nondecreasing functions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("quadrature did not reach tolerance {tol:e} after {subdivisions} subdivisions (error estimate {estimate:e})")]
    NoConvergence {
        tol: f64,
        estimate: f64,
        subdivisions: usize,
    },
    #[error("series ratio q = {0} outside (0, 1)")]
    RatioOutOfRange(f64),
    #[error("could not bracket target {target} (F(lo) = {f_lo}, F(hi) = {f_hi})")]
    BracketFailure { target: f64, f_lo: f64, f_hi: f64 },
    #[error("non-finite integrand value at {0}")]
    NonFinite(f64),
}

/// Tolerances shared by the numeric kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Absolute tolerance for quadrature.
    pub quad: f64,
    /// Relative tolerance for series summation.
    pub series: f64,
    /// Absolute tolerance (in the argument) for monotone inversion.
    pub inversion: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            quad: 1e-10,
            series: 1e-8,
            inversion: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error_estimate: f64,
    pub evaluations: usize,
}

/// Maximum number of interval bisections in adaptive quadrature.
pub const MAX_SUBDIVISIONS: usize = 4000;

// Gauss–Kronrod 7/15 abscissae and weights on [-1, 1].
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<(f64, f64), NumericsError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(NumericsError::NonFinite(center));
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !f1.is_finite() || !f2.is_finite() {
            return Err(NumericsError::NonFinite(center + dx));
        }
        kronrod += wk * (f1 + f2);
        // Gauss nodes are the odd-indexed Kronrod nodes.
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    Ok((kronrod * half, ((kronrod - gauss) * half).abs()))
}

/// Globally adaptive Gauss–Kronrod quadrature of `f` over the finite
/// interval `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<QuadResult, NumericsError> {
    if a == b {
        return Ok(QuadResult {
            value: 0.0,
            abs_error_estimate: 0.0,
            evaluations: 1,
        });
    }
    let (value, error) = gk15(&f, a, b)?;
    let mut evaluations = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total_err = error;
    let mut subdivisions = 0;
    while total_err > tol {
        if subdivisions >= MAX_SUBDIVISIONS {
            return Err(NumericsError::NoConvergence {
                tol,
                estimate: total_err,
                subdivisions,
            });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval cannot be split further in floating point.
            return Err(NumericsError::NoConvergence {
                tol,
                estimate: total_err,
                subdivisions,
            });
        }
        let (v1, e1) = gk15(&f, worst.a, mid)?;
        let (v2, e2) = gk15(&f, mid, worst.b)?;
        evaluations += 30;
        subdivisions += 1;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
        // Running error sum drifts; re-sum occasionally.
        if subdivisions % 64 == 0 {
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let abs_error_estimate: f64 = heap.iter().map(|s| s.error).sum();
    Ok(QuadResult {
        value,
        abs_error_estimate,
        evaluations,
    })
}

/// Integrates `f` over `[a, ∞)` through the substitution `s = a + u/(1-u)`,
/// which maps the half line onto `[0, 1)`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    tol: f64,
) -> Result<QuadResult, NumericsError> {
    let mapped = |u: f64| {
        let w = 1.0 - u;
        let s = a + u / w;
        if !s.is_finite() {
            return 0.0;
        }
        let v = f(s);
        if v == 0.0 {
            0.0
        } else {
            v / (w * w)
        }
    };
    integrate(mapped, 0.0, 1.0, tol)
}

/// Upper limit on the number of terms in [`sum_affine_power_series`].
pub const MAX_SERIES_TERMS: u64 = 50_000_000;

/// Sums `Σ_{i ≥ start} (2i+4)^alpha · q^i · (a + b·i)` to relative
/// tolerance `rel_tol`.
///
/// The tail after term `i` is bounded by a geometric series whose ratio
/// dominates every later term ratio; summation stops once that certified
/// tail falls below `rel_tol` times the partial sum, and the returned value
/// includes the tail bound so it never underestimates the true sum. When
/// `q` is so close to one that this needs more than
/// [`DIRECT_SERIES_TERMS`] terms, the tail is bounded by an integral instead.
pub fn sum_affine_power_series(
    alpha: f64,
    q: f64,
    a: f64,
    b: f64,
    start: u64,
    rel_tol: f64,
) -> Result<f64, NumericsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(NumericsError::RatioOutOfRange(q));
    }
    debug_assert!(a >= 0.0 && b >= 0.0 && alpha >= 0.0);
    if a == 0.0 && b == 0.0 {
        return Ok(0.0);
    }
    let ln_q = q.ln();
    let mut partial = 0.0;
    let mut compensation = 0.0;
    let mut i = start;
    loop {
        let fi = i as f64;
        let affine = a + b * fi;
        let term = if affine == 0.0 {
            0.0
        } else {
            (alpha * (2.0 * fi + 4.0).ln() + fi * ln_q).exp() * affine
        };
        // Kahan summation: many tiny terms follow a few large ones.
        let y = term - compensation;
        let t = partial + y;
        compensation = (t - partial) - y;
        partial = t;

        if affine > 0.0 {
            let growth = (1.0 + 2.0 / (2.0 * fi + 4.0)).powf(alpha);
            let affine_ratio = 1.0 + b / affine;
            let rho = growth * q * affine_ratio;
            if rho < 1.0 {
                let tail = term * rho / (1.0 - rho);
                if tail <= rel_tol * partial {
                    return Ok(partial + tail);
                }
            }
        }
        i += 1;
        if (i - start).is_multiple_of(DIRECT_SERIES_TERMS) {
            let tail = unimodal_tail_bound(alpha, ln_q, a, b, i)?;
            if tail <= rel_tol * partial || i - start >= MAX_SERIES_TERMS {
                return Ok(partial + tail);
            }
        }
    }
}

/// Block length after which the integral tail bound is tried.
pub const DIRECT_SERIES_TERMS: u64 = 4_000_000;

/// Upper bound on `Σ_{i ≥ m} g(i)` for `g(x) = (2x+4)^α q^x (a + b x)`.
///
/// `g` is log-concave, hence unimodal, so the sum is at most the integral
/// over `[m, ∞)` plus twice the maximum of `g` there.
fn unimodal_tail_bound(
    alpha: f64,
    ln_q: f64,
    a: f64,
    b: f64,
    m: u64,
) -> Result<f64, NumericsError> {
    let ln_g = |x: f64| alpha * (2.0 * x + 4.0).ln() + x * ln_q + (a + b * x).ln();
    let slope = |x: f64| 2.0 * alpha / (2.0 * x + 4.0) + ln_q + b / (a + b * x);
    let m = m as f64;
    let mode = if slope(m) <= 0.0 {
        m
    } else {
        let mut lo = m;
        let mut hi = m + 1.0;
        while slope(hi) > 0.0 {
            lo = hi;
            hi = m + 2.0 * (hi - m);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let ln_max = ln_g(mode);
    let scale = -1.0 / ln_q;
    let normalized = integrate_semi_infinite(|y| (ln_g(m + y * scale) - ln_max).exp(), 0.0, 1e-10)?;
    Ok(ln_max.exp() * ((normalized.value + normalized.abs_error_estimate) * scale + 2.0))
}

/// Maximum number of bracket doublings in [`invert_monotone`].
const MAX_BRACKET_GROWTH: usize = 200;
const MAX_BISECTIONS: usize = 2000;

/// Generalized inverse `inf{s ≥ lo : F(s) ≥ u}` of a nondecreasing `F`.
///
/// `hi` is only an initial guess; the bracket is grown geometrically until
/// `F(hi) ≥ u`. The result is accurate to `tol` in `s`, or to floating
/// point resolution when `tol` is below it.
pub fn invert_monotone<F: Fn(f64) -> f64>(
    f: F,
    u: f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<f64, NumericsError> {
    let f_lo = f(lo);
    if f_lo >= u {
        return Ok(lo);
    }
    let mut lo = lo;
    let mut hi = hi.max(lo + 1.0);
    let mut f_hi = f(hi);
    let mut grown = 0;
    while f_hi < u {
        if grown >= MAX_BRACKET_GROWTH || !hi.is_finite() {
            return Err(NumericsError::BracketFailure {
                target: u,
                f_lo,
                f_hi,
            });
        }
        lo = hi;
        hi = lo + 2.0 * (hi - lo).max(1.0);
        f_hi = f(hi);
        grown += 1;
    }
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= u {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pareto_tail_integral() {
        let r = integrate_semi_infinite(|s| (1.0 + s).powi(-4), 0.0, 1e-10).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-10, "{r:?}");
        assert!(r.abs_error_estimate >= 0.0 && r.evaluations >= 1);
    }

    #[test]
    fn exponential_integral() {
        let r = integrate_semi_infinite(|s| (-5.0 * s).exp(), 0.0, 1e-10).unwrap();
        assert!((r.value - 0.2).abs() < 1e-10);
    }

    #[test]
    fn beta_identity_integral() {
        // 2 ∫ s (1+s)^-4 ds = Γ(3)Γ(2)/Γ(4) = 1/3
        let r = integrate_semi_infinite(|s| 2.0 * s * (1.0 + s).powi(-4), 0.0, 1e-10).unwrap();
        assert!((r.value - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn shifted_lower_limit() {
        let r = integrate_semi_infinite(|s| (1.0 + s).powi(-4), 2.0, 1e-12).unwrap();
        assert!((r.value - 1.0 / 81.0).abs() < 1e-12);
    }

    #[test]
    fn non_integrable_reports_no_convergence() {
        let r = integrate_semi_infinite(|s| 1.0 / (1.0 + s), 0.0, 1e-10);
        assert!(
            matches!(r, Err(NumericsError::NoConvergence { .. })),
            "{r:?}"
        );
    }

    #[test]
    fn geometric_series() {
        let q = 0.3;
        let v = sum_affine_power_series(0.0, q, 1.0, 0.0, 0, 1e-12).unwrap();
        assert!((v - 1.0 / (1.0 - q)).abs() < 1e-11);
    }

    #[test]
    fn arithmetic_geometric_series() {
        // Σ (2i+4) 2^-i = 4/(1-q) + 2q/(1-q)^2 = 12
        let v = sum_affine_power_series(1.0, 0.5, 1.0, 0.0, 0, 1e-12).unwrap();
        assert!((v - 12.0).abs() < 1e-10, "{v}");
    }

    #[test]
    fn series_rejects_divergent_ratio() {
        assert_eq!(
            sum_affine_power_series(1.0, 1.0, 1.0, 0.0, 0, 1e-8),
            Err(NumericsError::RatioOutOfRange(1.0))
        );
        assert!(sum_affine_power_series(1.0, 0.0, 1.0, 0.0, 0, 1e-8).is_err());
    }

    #[test]
    fn series_with_start_offset() {
        // Σ_{i≥1} 2^-i = 1
        let v = sum_affine_power_series(0.0, 0.5, 1.0, 0.0, 1, 1e-13).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invert_identity() {
        let s = invert_monotone(|s: f64| s.clamp(0.0, 1.0), 0.25, 0.0, 1.0, 1e-12).unwrap();
        assert!((s - 0.25).abs() < 1e-12);
    }

    #[test]
    fn invert_pareto() {
        let s =
            invert_monotone(|s: f64| 1.0 - (1.0 + s).powi(-4), 0.9375, 0.0, 0.5, 1e-12).unwrap();
        assert!((s - 1.0).abs() < 1e-11);
    }

    #[test]
    fn invert_at_jump_returns_atom() {
        let f = |s: f64| {
            if s < 2.0 {
                0.3 * s / 2.0
            } else {
                0.7 + 0.3 * (1.0 - (-(s - 2.0)).exp())
            }
        };
        let s = invert_monotone(f, 0.5, 0.0, 1.0, 1e-12).unwrap();
        assert!((s - 2.0).abs() < 1e-11, "{s}");
    }

    #[test]
    fn invert_on_flat_takes_left_end() {
        let f = |s: f64| (s.min(1.0) * 0.5) + (s - 3.0).clamp(0.0, 1.0) * 0.5;
        let s = invert_monotone(f, 0.5, 0.0, 1.0, 1e-12).unwrap();
        assert!((s - 1.0).abs() < 1e-11, "{s}");
    }

    #[test]
    fn invert_unreachable_target_fails() {
        let r = invert_monotone(|_| 0.5, 0.9, 0.0, 1.0, 1e-12);
        assert!(matches!(r, Err(NumericsError::BracketFailure { .. })));
    }
}
