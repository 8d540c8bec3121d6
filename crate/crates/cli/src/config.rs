//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma
//! separated; a time grid may also be written `linspace(a, b, n)`.
//! States are written `regime:elapsed`, e.g. `1:0` or `2:3.5`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use avail_bound_core::bound::{SearchSpec, Theta0Mode};
use avail_bound_core::coupling::DEFAULT_EVENT_CAP;
use avail_bound_core::model::{read_two_column_csv, RepairLawSpec, WorkLawSpec};
use avail_bound_core::numerics::Tolerances;
use avail_bound_core::renewal::check_grid;
use avail_bound_core::{RawParams, Regime, SystemState};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Window {
    Search(SearchSpec),
    Fixed { r: f64, n: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundConfig {
    pub alpha: f64,
    pub window: Window,
    pub theta0_mode: Theta0Mode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub x0: Vec<SystemState>,
    pub n_traj: usize,
    pub grid: Vec<f64>,
    pub ci_level: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupleConfig {
    pub runs: usize,
    pub z1: SystemState,
    pub z2: SystemState,
    pub cap: u64,
    pub audit_cycles: u64,
    pub period_runs: usize,
    pub periods: usize,
    pub splice_pairs: Vec<(f64, f64)>,
    pub splice_draws: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    /// Factor applied to `Ψ` before comparison; below 1 only for harness checks.
    pub bound_scale: f64,
    pub ks_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub json: bool,
    pub csv: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub config_sha256: String,
    #[serde(skip)]
    pub model: RawParams,
    pub tolerances: Tolerances,
    pub bound: BoundConfig,
    pub sim: SimConfig,
    pub couple: CoupleConfig,
    pub verify: VerifyConfig,
    pub output: OutputConfig,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(ConfigError::Syntax { line });
            }
            if map
                .insert(key.clone(), (line, value.trim().to_string()))
                .is_some()
            {
                return Err(ConfigError::Duplicate { line, key });
            }
        }
        Ok(Self { map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(_, v)| v)
    }

    fn parse_with<T>(
        &mut self,
        key: &str,
        f: impl FnOnce(&str) -> Result<T, String>,
    ) -> Result<Option<T>, ConfigError> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => f(&v).map(Some).map_err(|reason| ConfigError::Invalid {
                key: key.to_string(),
                reason,
            }),
        }
    }

    fn num<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>, ConfigError> {
        self.parse_with(key, |v| {
            v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
        })
    }

    fn num_or<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        Ok(self.num(key)?.unwrap_or(default))
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.into_iter().next() {
            Some((key, (line, _))) => Err(ConfigError::UnknownKey { line, key }),
            None => Ok(()),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

pub fn parse_state(text: &str) -> Result<SystemState, String> {
    let (n, x) = text
        .trim()
        .split_once(':')
        .ok_or_else(|| format!("state `{text}` is not `regime:elapsed`"))?;
    let regime = n
        .trim()
        .parse::<u8>()
        .ok()
        .and_then(Regime::from_index)
        .ok_or_else(|| format!("regime `{n}` must be 1 or 2"))?;
    let elapsed: f64 = x
        .trim()
        .parse()
        .map_err(|_| format!("elapsed time `{x}` is not a number"))?;
    if !(elapsed >= 0.0 && elapsed.is_finite()) {
        return Err(format!(
            "elapsed time {elapsed} must be finite and nonnegative"
        ));
    }
    Ok(SystemState::new(regime, elapsed))
}

fn parse_list<T>(text: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

fn parse_f64(text: &str) -> Result<f64, String> {
    text.trim()
        .parse()
        .map_err(|_| format!("cannot parse `{text}` as a number"))
}

pub fn parse_grid(text: &str) -> Result<Vec<f64>, String> {
    let t = text.trim();
    if let Some(args) = t
        .strip_prefix("linspace(")
        .and_then(|r| r.strip_suffix(')'))
    {
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err("linspace takes (start, stop, count)".into());
        }
        let a = parse_f64(parts[0])?;
        let b = parse_f64(parts[1])?;
        let n: usize = parts[2]
            .parse()
            .map_err(|_| format!("count `{}` is not an integer", parts[2]))?;
        if n < 2 {
            return Err("linspace needs at least two points".into());
        }
        let grid = (0..n)
            .map(|i| {
                if i + 1 == n {
                    b
                } else {
                    a + (b - a) * i as f64 / (n - 1) as f64
                }
            })
            .collect();
        return Ok(grid);
    }
    parse_list(t, parse_f64)
}

fn parse_pair(text: &str) -> Result<(f64, f64), String> {
    let (x, y) = text
        .split_once(':')
        .ok_or_else(|| format!("pair `{text}` is not `x:y`"))?;
    Ok((parse_f64(x)?, parse_f64(y)?))
}

fn parse_bool(text: &str) -> Result<bool, String> {
    match text {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("`{other}` is not a boolean")),
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses configuration text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let config_sha256 = hex::encode(Sha256::digest(text.as_bytes()));
        let mut e = Entries::parse(text)?;
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };

        let k1 = e.num("model.K1")?.ok_or(ConfigError::Missing("model.K1"))?;
        let k2 = e.num("model.K2")?.ok_or(ConfigError::Missing("model.K2"))?;
        let lambda = e
            .num("model.Lambda")?
            .ok_or(ConfigError::Missing("model.Lambda"))?;
        let work_family = e
            .take("model.work_family")
            .unwrap_or_else(|| "pareto".into());
        let work_csv = e.take("model.work_csv");
        let work = match work_family.as_str() {
            "pareto" => WorkLawSpec::ParetoHazard,
            "tabulated" => {
                let path = resolve(work_csv.ok_or(ConfigError::Missing("model.work_csv"))?);
                WorkLawSpec::TabulatedHazard(
                    read_two_column_csv(&path)
                        .map_err(|err| invalid("model.work_csv", err.to_string()))?,
                )
            }
            other => {
                return Err(invalid(
                    "model.work_family",
                    format!("unknown family `{other}`"),
                ))
            }
        };
        let repair_family = e
            .take("model.repair_family")
            .unwrap_or_else(|| "pareto".into());
        let repair_csv = e.take("model.repair_csv");
        let repair = match repair_family.as_str() {
            "pareto" => RepairLawSpec::Pareto,
            "tabulated" => {
                let path = resolve(repair_csv.ok_or(ConfigError::Missing("model.repair_csv"))?);
                RepairLawSpec::TabulatedCdf(
                    read_two_column_csv(&path)
                        .map_err(|err| invalid("model.repair_csv", err.to_string()))?,
                )
            }
            other => {
                return Err(invalid(
                    "model.repair_family",
                    format!("unknown family `{other}`"),
                ))
            }
        };
        let model = RawParams {
            k1,
            k2,
            lambda,
            work,
            repair,
        };

        let defaults = Tolerances::default();
        let tolerances = Tolerances {
            quad: e.num_or("numerics.quad_tol", defaults.quad)?,
            series: e.num_or("numerics.series_tol", defaults.series)?,
            inversion: e.num_or("numerics.inversion_tol", defaults.inversion)?,
        };

        let alpha = e
            .num("bound.alpha")?
            .ok_or(ConfigError::Missing("bound.alpha"))?;
        let theta0_mode = match e.take("bound.theta0_mode").as_deref() {
            None | Some("exact") => Theta0Mode::Exact,
            Some("bracket") => Theta0Mode::Bracket,
            Some(other) => {
                return Err(invalid(
                    "bound.theta0_mode",
                    format!("`{other}` is not exact|bracket"),
                ))
            }
        };
        let d = SearchSpec::default();
        let search = SearchSpec {
            r_max: e.num_or("bound.search.r_max", d.r_max)?,
            r_points: e.num_or("bound.search.r_points", d.r_points)?,
            n_min: e.num_or("bound.search.n_min", d.n_min)?,
            n_max: e.num_or("bound.search.n_max", d.n_max)?,
            real_n: e
                .parse_with("bound.search.real_n", parse_bool)?
                .unwrap_or(d.real_n),
            n_step: e.num_or("bound.search.n_step", d.n_step)?,
            refine_passes: e.num_or("bound.search.refine_passes", d.refine_passes)?,
            refine_points: e.num_or("bound.search.refine_points", d.refine_points)?,
        };
        let r = e.num::<f64>("bound.R")?;
        let n = e.num::<f64>("bound.N")?;
        let window = match e.take("bound.window").as_deref() {
            None | Some("search") => Window::Search(search),
            Some("fixed") => Window::Fixed {
                r: r.ok_or(ConfigError::Missing("bound.R"))?,
                n: n.ok_or(ConfigError::Missing("bound.N"))?,
            },
            Some(other) => {
                return Err(invalid(
                    "bound.window",
                    format!("`{other}` is not search|fixed"),
                ))
            }
        };

        let x0 = e
            .parse_with("sim.x0", |v| parse_list(v, parse_state))?
            .unwrap_or_else(|| vec![SystemState::working(0.0)]);
        if x0.is_empty() {
            return Err(invalid("sim.x0", "no initial states"));
        }
        let grid = e
            .parse_with("sim.grid", parse_grid)?
            .ok_or(ConfigError::Missing("sim.grid"))?;
        check_grid(&grid).map_err(|err| invalid("sim.grid", err.to_string()))?;
        let ci_level: f64 = e.num_or("sim.ci_level", 0.99)?;
        if !(ci_level > 0.0 && ci_level < 1.0) {
            return Err(invalid("sim.ci_level", "must lie in (0, 1)"));
        }
        let sim = SimConfig {
            x0,
            n_traj: e.num_or("sim.n_traj", 10_000)?,
            grid,
            ci_level,
            seed: e.num("sim.seed")?.ok_or(ConfigError::Missing("sim.seed"))?,
        };

        let couple = CoupleConfig {
            runs: e.num_or("couple.runs", 10_000)?,
            z1: e
                .parse_with("couple.z1", parse_state)?
                .unwrap_or_else(|| SystemState::working(0.0)),
            z2: e
                .parse_with("couple.z2", parse_state)?
                .unwrap_or_else(|| SystemState::repair(0.0)),
            cap: e.num_or("couple.cap", DEFAULT_EVENT_CAP)?,
            audit_cycles: e.num_or("couple.audit_cycles", 0)?,
            period_runs: e.num_or("couple.period_runs", 2000)?,
            periods: e.num_or("couple.periods", 100)?,
            splice_pairs: e
                .parse_with("couple.splice_pairs", |v| parse_list(v, parse_pair))?
                .unwrap_or_else(|| vec![(0.0, 1.0), (2.0, 5.0)]),
            splice_draws: e.num_or("couple.splice_draws", 100_000)?,
        };

        let verify = VerifyConfig {
            bound_scale: e.num_or("verify.bound_scale", 1.0)?,
            ks_level: e.num_or("verify.ks_level", 0.01)?,
        };
        if verify.bound_scale.is_nan() || verify.bound_scale <= 0.0 {
            return Err(invalid("verify.bound_scale", "must be positive"));
        }

        let dir = resolve(e.take("output.dir").unwrap_or_else(|| "out".into()));
        let formats = e
            .parse_with("output.formats", |v| {
                parse_list(v, |f| match f {
                    "json" | "csv" => Ok(f.to_string()),
                    other => Err(format!("unknown format `{other}`")),
                })
            })?
            .unwrap_or_else(|| vec!["json".into(), "csv".into()]);
        let output = OutputConfig {
            dir,
            json: formats.iter().any(|f| f == "json"),
            csv: formats.iter().any(|f| f == "csv"),
        };

        e.finish()?;
        Ok(Self {
            config_sha256,
            model,
            tolerances,
            bound: BoundConfig {
                alpha,
                window,
                theta0_mode,
            },
            sim,
            couple,
            verify,
            output,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "model.K1 = 4\nmodel.K2 = 4\nmodel.Lambda = 5\nbound.alpha = 2\nsim.grid = 0, 1, 2\nsim.seed = 7\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = RunConfig::parse(MINIMAL, Path::new("/tmp")).unwrap();
        assert_eq!(c.model, RawParams::canonical());
        assert_eq!(c.sim.x0, vec![SystemState::working(0.0)]);
        assert_eq!(c.bound.theta0_mode, Theta0Mode::Exact);
        assert!(matches!(c.bound.window, Window::Search(_)));
        assert_eq!(c.output.dir, PathBuf::from("/tmp/out"));
        assert_eq!(c.config_sha256.len(), 64);
    }

    #[test]
    fn seed_is_required() {
        let text = MINIMAL.replace("sim.seed = 7\n", "");
        assert!(matches!(
            RunConfig::parse(&text, Path::new(".")),
            Err(ConfigError::Missing("sim.seed"))
        ));
    }

    #[test]
    fn unknown_and_duplicate_keys_rejected() {
        let text = format!("{MINIMAL}sim.sead = 3\n");
        assert!(matches!(
            RunConfig::parse(&text, Path::new(".")),
            Err(ConfigError::UnknownKey { line: 7, .. })
        ));
        let text = format!("{MINIMAL}sim.seed = 3\n");
        assert!(matches!(
            RunConfig::parse(&text, Path::new(".")),
            Err(ConfigError::Duplicate { .. })
        ));
    }

    #[test]
    fn grids_and_states() {
        assert_eq!(
            parse_grid("linspace(0, 1, 5)").unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(parse_grid("0, 0.5,2").unwrap(), vec![0.0, 0.5, 2.0]);
        assert!(parse_grid("linspace(0, 1)").is_err());
        assert_eq!(parse_state("2:3.5").unwrap(), SystemState::repair(3.5));
        assert!(parse_state("3:0").is_err());
        assert!(parse_state("1:-1").is_err());
        let text = MINIMAL.replace("sim.grid = 0, 1, 2", "sim.grid = 0, 2, 1");
        assert!(matches!(
            RunConfig::parse(&text, Path::new(".")),
            Err(ConfigError::Invalid { .. })
        ));
    }

    #[test]
    fn fixed_window_needs_r_and_n() {
        let text = format!("{MINIMAL}bound.window = fixed\nbound.R = 1\n");
        assert!(matches!(
            RunConfig::parse(&text, Path::new(".")),
            Err(ConfigError::Missing("bound.N"))
        ));
        let text = format!("{MINIMAL}bound.window = fixed\nbound.R = 1\nbound.N = 3\n");
        let c = RunConfig::parse(&text, Path::new(".")).unwrap();
        assert_eq!(c.bound.window, Window::Fixed { r: 1.0, n: 3.0 });
    }

    #[test]
    fn missing_table_file_reported() {
        let text = format!("{MINIMAL}model.work_family = tabulated\nmodel.work_csv = nope.csv\n");
        let err = RunConfig::parse(&text, Path::new("/nonexistent")).unwrap_err();
        assert!(
            matches!(err, ConfigError::Invalid { ref key, .. } if key == "model.work_csv"),
            "{err}"
        );
    }
}
