//! User-supplied laws given on a grid, with log-linear interpolation and a
//! power-law tail past the last grid point.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::numerics::{integrate, integrate_semi_infinite};

/// Reads a two-column `(s, value)` CSV. Blank lines, `#` comments and a
/// non-numeric header row are skipped.
pub fn read_two_column_csv(path: &Path) -> Result<Vec<(f64, f64)>, ModelError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ModelError::MalformedTable(format!("{}: {e}", path.display())))?;
    parse_two_column(&text)
        .map_err(|msg| ModelError::MalformedTable(format!("{}: {msg}", path.display())))
}

fn parse_two_column(text: &str) -> Result<Vec<(f64, f64)>, String> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|c| !c.is_empty());
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(format!("line {}: expected two columns", lineno + 1));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(s), Ok(v)) => rows.push((s, v)),
            _ if rows.is_empty() && lineno == 0 => continue, // header
            _ => return Err(format!("line {}: non-numeric entry", lineno + 1)),
        }
    }
    Ok(rows)
}

/// Piecewise log-linear hazard rate `λ(s)` of the working law.
///
/// Past the last grid point `s_n` the hazard continues as
/// `λ(s_n)(1+s_n)/(1+s)`, which keeps the lower envelope `K₁/(1+s)`
/// whenever it holds at `s_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardTable {
    s: Vec<f64>,
    rate: Vec<f64>,
    cum: Vec<f64>,
    // ∫₀^{s_i} exp(-H(u)) du
    cum_survival: Vec<f64>,
}

impl HazardTable {
    pub fn new(points: &[(f64, f64)]) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::MalformedTable(
                "hazard table needs at least two points".into(),
            ));
        }
        if points[0].0 != 0.0 {
            return Err(ModelError::MalformedTable(
                "hazard table must start at s = 0".into(),
            ));
        }
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(ModelError::MalformedTable(format!(
                    "hazard grid must be strictly increasing (at s = {})",
                    w[1].0
                )));
            }
        }
        for &(s, l) in points {
            if !(l.is_finite() && l > 0.0 && s.is_finite()) {
                return Err(ModelError::MalformedTable(format!(
                    "hazard must be positive and finite (at s = {s})"
                )));
            }
        }
        let s: Vec<f64> = points.iter().map(|p| p.0).collect();
        let rate: Vec<f64> = points.iter().map(|p| p.1).collect();
        let mut cum = vec![0.0; s.len()];
        for i in 1..s.len() {
            cum[i] = cum[i - 1] + segment_integral(rate[i - 1], rate[i], s[i] - s[i - 1], 1.0);
        }
        let mut table = Self {
            s,
            rate,
            cum,
            cum_survival: Vec::new(),
        };
        let mut cs = vec![0.0; table.s.len()];
        for i in 1..table.s.len() {
            let piece = integrate(|u| table.survival(u), table.s[i - 1], table.s[i], 1e-13)
                .map_err(ModelError::Numerics)?;
            cs[i] = cs[i - 1] + piece.value;
        }
        table.cum_survival = cs;
        Ok(table)
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s.iter().copied().zip(self.rate.iter().copied())
    }

    fn last(&self) -> usize {
        self.s.len() - 1
    }

    fn tail_coefficient(&self) -> f64 {
        let n = self.last();
        self.rate[n] * (1.0 + self.s[n])
    }

    fn locate(&self, s: f64) -> usize {
        // index i with s_i <= s < s_{i+1}
        self.s.partition_point(|&x| x <= s).saturating_sub(1)
    }

    pub fn hazard(&self, s: f64) -> f64 {
        let n = self.last();
        if s >= self.s[n] {
            return self.tail_coefficient() / (1.0 + s);
        }
        let i = self.locate(s);
        let w = (s - self.s[i]) / (self.s[i + 1] - self.s[i]);
        self.rate[i] * (self.rate[i + 1] / self.rate[i]).powf(w)
    }

    pub fn cumulative_hazard(&self, s: f64) -> f64 {
        let n = self.last();
        if s >= self.s[n] {
            return self.cum[n] + self.tail_coefficient() * ((1.0 + s) / (1.0 + self.s[n])).ln();
        }
        let i = self.locate(s);
        let width = self.s[i + 1] - self.s[i];
        let w = (s - self.s[i]) / width;
        self.cum[i] + segment_integral(self.rate[i], self.rate[i + 1], width, w)
    }

    pub fn survival(&self, s: f64) -> f64 {
        (-self.cumulative_hazard(s)).exp()
    }

    /// `∫₀^x (1 - F₁(u)) du`.
    pub fn integrated_survival(&self, x: f64) -> Result<f64, ModelError> {
        let n = self.last();
        if x >= self.s[n] {
            let c = self.tail_coefficient();
            let sn = self.s[n];
            let surv_n = self.survival(sn);
            // ∫_{s_n}^x S_n ((1+s_n)/(1+u))^c du
            let tail =
                surv_n * (1.0 + sn) / (c - 1.0) * (1.0 - ((1.0 + sn) / (1.0 + x)).powf(c - 1.0));
            return Ok(self.cum_survival[n] + tail);
        }
        let i = self.locate(x);
        let piece =
            integrate(|u| self.survival(u), self.s[i], x, 1e-13).map_err(ModelError::Numerics)?;
        Ok(self.cum_survival[i] + piece.value)
    }

    pub fn total_survival_integral(&self) -> f64 {
        let n = self.last();
        let c = self.tail_coefficient();
        self.cum_survival[n] + self.survival(self.s[n]) * (1.0 + self.s[n]) / (c - 1.0)
    }

    /// Grid points plus `refine - 1` interior points per segment.
    pub fn refined_grid(&self, refine: usize) -> Vec<f64> {
        refined(&self.s, refine)
    }
}

/// `∫₀^{w·width} λ_a (λ_b/λ_a)^{u/width} du`
fn segment_integral(la: f64, lb: f64, width: f64, w: f64) -> f64 {
    let log_ratio = (lb / la).ln();
    if log_ratio.abs() < 1e-12 {
        la * width * w
    } else {
        la * width * (log_ratio * w).exp_m1() / log_ratio
    }
}

fn refined(grid: &[f64], refine: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len() * refine.max(1));
    for w in grid.windows(2) {
        if w[1] == w[0] {
            continue;
        }
        for k in 0..refine.max(1) {
            out.push(w[0] + (w[1] - w[0]) * k as f64 / refine.max(1) as f64);
        }
    }
    out.push(*grid.last().expect("non-empty grid"));
    out
}

/// Piecewise distribution function of the repair law, log-linear in the
/// survival function between grid points.
///
/// A repeated abscissa marks an atom: the first entry is the left limit
/// `F(s-)`, the second the value `F(s)`. Past the last grid point the
/// survival decays as `(1+s)^(-K₂)` from its last value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfTable {
    s: Vec<f64>,
    cdf: Vec<f64>,
    tail_exponent: f64,
}

impl CdfTable {
    pub fn new(points: &[(f64, f64)], tail_exponent: f64) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::MalformedTable(
                "distribution table needs at least two points".into(),
            ));
        }
        if points[0] != (0.0, 0.0) {
            return Err(ModelError::MalformedTable(
                "distribution table must start at (0, 0)".into(),
            ));
        }
        for (k, w) in points.windows(2).enumerate() {
            let (s0, f0) = w[0];
            let (s1, f1) = w[1];
            if !(s1.is_finite() && f1.is_finite()) {
                return Err(ModelError::MalformedTable("non-finite entry".into()));
            }
            if s1 < s0 || (s1 == s0 && k > 0 && points[k - 1].0 == s0) {
                return Err(ModelError::MalformedTable(format!(
                    "grid must be increasing, with at most one repeat per atom (at s = {s1})"
                )));
            }
            if f1 < f0 || f1 > 1.0 {
                return Err(ModelError::MalformedTable(format!(
                    "distribution function must be nondecreasing in [0, 1] (at s = {s1})"
                )));
            }
        }
        Ok(Self {
            s: points.iter().map(|p| p.0).collect(),
            cdf: points.iter().map(|p| p.1).collect(),
            tail_exponent,
        })
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.s.iter().copied().zip(self.cdf.iter().copied())
    }

    fn last(&self) -> usize {
        self.s.len() - 1
    }

    pub fn survival(&self, s: f64) -> f64 {
        let n = self.last();
        if s >= self.s[n] {
            let sn = self.s[n];
            return (1.0 - self.cdf[n]) * ((1.0 + sn) / (1.0 + s)).powf(self.tail_exponent);
        }
        // last index with s_i <= s (the right value at an atom)
        let i = self.s.partition_point(|&x| x <= s) - 1;
        let (s0, s1) = (self.s[i], self.s[i + 1]);
        let w = (s - s0) / (s1 - s0);
        let (q0, q1) = (1.0 - self.cdf[i], 1.0 - self.cdf[i + 1]);
        if q0 > 0.0 && q1 > 0.0 {
            q0 * (q1 / q0).powf(w)
        } else {
            q0 + (q1 - q0) * w
        }
    }

    pub fn cdf(&self, s: f64) -> f64 {
        1.0 - self.survival(s)
    }

    /// Left limit `F(s-)`.
    pub fn cdf_left(&self, s: f64) -> f64 {
        match self.s.iter().position(|&x| x == s) {
            Some(i) => self.cdf[i],
            None => self.cdf(s),
        }
    }

    /// `∫_a^b (1 - F₂(u)) du` for `0 ≤ a ≤ b ≤ ∞`, split at grid points.
    pub fn survival_integral(&self, a: f64, b: f64) -> Result<f64, ModelError> {
        let n = self.last();
        let mut total = 0.0;
        for w in self.s.windows(2) {
            let lo = w[0].max(a);
            let hi = w[1].min(b);
            if hi > lo {
                total += integrate(|u| self.survival(u), lo, hi, 1e-13)
                    .map_err(ModelError::Numerics)?
                    .value;
            }
        }
        let sn = self.s[n];
        let lo = sn.max(a);
        if b > lo {
            let qn = 1.0 - self.cdf[n];
            let k = self.tail_exponent;
            let upper = if b.is_finite() {
                ((1.0 + sn) / (1.0 + b)).powf(k - 1.0)
            } else {
                0.0
            };
            let lower = ((1.0 + sn) / (1.0 + lo)).powf(k - 1.0);
            total += qn * (1.0 + sn) / (k - 1.0) * (lower - upper);
        }
        Ok(total)
    }

    /// `a ∫₀^∞ s^(a-1) (1 - F₂(s)) ds`.
    pub fn moment(&self, a: f64) -> Result<f64, ModelError> {
        let n = self.last();
        let mut total = 0.0;
        for w in self.s.windows(2) {
            if w[1] > w[0] {
                total += integrate(
                    |u| a * u.powf(a - 1.0) * self.survival(u),
                    w[0],
                    w[1],
                    1e-13,
                )
                .map_err(ModelError::Numerics)?
                .value;
            }
        }
        let sn = self.s[n];
        total += integrate_semi_infinite(|u| a * u.powf(a - 1.0) * self.survival(u), sn, 1e-12)
            .map_err(ModelError::Numerics)?
            .value;
        Ok(total)
    }

    pub fn refined_grid(&self, refine: usize) -> Vec<f64> {
        refined(&self.s, refine)
    }

    pub fn atoms(&self) -> impl Iterator<Item = f64> + '_ {
        self.s.windows(2).filter(|w| w[0] == w[1]).map(|w| w[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_header_and_comments() {
        let rows = parse_two_column("s,value\n# comment\n0,1\n1 , 2\n\n2;3\n").unwrap();
        assert_eq!(rows, vec![(0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]);
        assert!(parse_two_column("0,1\nx,2\n").is_err());
        assert!(parse_two_column("0,1,2\n").is_err());
    }

    #[test]
    fn constant_hazard_is_exponential() {
        let t = HazardTable::new(&[(0.0, 2.0), (1.0, 2.0), (3.0, 2.0)]).unwrap();
        assert!((t.cumulative_hazard(2.5) - 5.0).abs() < 1e-12);
        assert!((t.survival(1.5) - (-3.0f64).exp()).abs() < 1e-14);
        assert!(
            (t.integrated_survival(2.0).unwrap() - (1.0 - (-4.0f64).exp()) / 2.0).abs() < 1e-12
        );
    }

    #[test]
    fn pareto_hazard_on_grid_reproduces_closed_form() {
        // log-linear interpolation of K/(1+s) is not exact, but grid values
        // and the tail are.
        let k: f64 = 4.0;
        let pts: Vec<(f64, f64)> = (0..=200)
            .map(|i| {
                let s = i as f64 * 0.05;
                (s, k / (1.0 + s))
            })
            .collect();
        let t = HazardTable::new(&pts).unwrap();
        for &s in &[0.0f64, 3.0, 10.0, 50.0] {
            let exact = (1.0 + s).powf(-k);
            assert!((t.survival(s) / exact - 1.0).abs() < 2e-3, "s={s}");
        }
        assert!((t.hazard(20.0) - k / 21.0).abs() < 1e-14);
    }

    #[test]
    fn hazard_table_rejects_bad_grids() {
        assert!(HazardTable::new(&[(0.0, 1.0)]).is_err());
        assert!(HazardTable::new(&[(0.5, 1.0), (1.0, 1.0)]).is_err());
        assert!(HazardTable::new(&[(0.0, 1.0), (0.0, 1.0)]).is_err());
        assert!(HazardTable::new(&[(0.0, 1.0), (1.0, 0.0)]).is_err());
    }

    #[test]
    fn cdf_table_atoms_and_interpolation() {
        let t = CdfTable::new(&[(0.0, 0.0), (1.0, 0.2), (1.0, 0.6), (2.0, 0.8)], 4.0).unwrap();
        assert!((t.cdf(1.0) - 0.6).abs() < 1e-15);
        assert!((t.cdf_left(1.0) - 0.2).abs() < 1e-15);
        assert!((t.cdf(0.999_999_999) - 0.2).abs() < 1e-8);
        // log-linear survival midpoint: sqrt(0.4 * 0.2)
        assert!((t.survival(1.5) - (0.08f64).sqrt()).abs() < 1e-14);
        assert!((t.survival(5.0) - 0.2 * (3.0f64 / 6.0).powi(4)).abs() < 1e-15);
        assert_eq!(t.atoms().collect::<Vec<_>>(), vec![1.0]);
    }

    #[test]
    fn cdf_table_rejects_bad_grids() {
        assert!(CdfTable::new(&[(0.0, 0.1), (1.0, 0.2)], 4.0).is_err());
        assert!(CdfTable::new(&[(0.0, 0.0), (1.0, 0.5), (0.5, 0.6)], 4.0).is_err());
        assert!(CdfTable::new(&[(0.0, 0.0), (1.0, 0.5), (2.0, 0.4)], 4.0).is_err());
        assert!(CdfTable::new(&[(0.0, 0.0), (1.0, 0.5), (1.0, 0.6), (1.0, 0.7)], 4.0).is_err());
    }

    #[test]
    fn survival_integral_matches_quadrature() {
        let t = CdfTable::new(&[(0.0, 0.0), (1.0, 0.5), (1.0, 0.7), (3.0, 0.99)], 5.0).unwrap();
        let whole = t.survival_integral(0.0, f64::INFINITY).unwrap();
        let direct = t.moment(1.0).unwrap();
        assert!((whole - direct).abs() < 1e-10, "{whole} vs {direct}");
        let split = t.survival_integral(0.0, 2.0).unwrap()
            + t.survival_integral(2.0, f64::INFINITY).unwrap();
        assert!((whole - split).abs() < 1e-12);
    }
}
