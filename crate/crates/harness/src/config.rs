//! Experiment configuration, read from TOML.
//!
//! ```toml
//! algorithms = ["diamond", "dsgd"]
//! iterations = 2000
//! seeds = [1, 2, 3]
//!
//! [problem]
//! kind = "quadratic"
//! sigma_f = 0.5
//!
//! [topology]
//! m = 9
//! p_c = 0.3
//!
//! [estimator]
//! k = "auto"
//! ```

use std::fmt;
use std::path::PathBuf;

use diamond_core::algorithms::{Algorithm, Schedule};
use diamond_core::topology::MatrixKind;
use serde::de::{self, Deserializer};
use serde::{Deserialize, Serialize};

/// A configuration that failed to parse or validate.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "invalid config: {}", self.reason)
        } else {
            write!(f, "invalid config key `{}`: {}", self.key, self.reason)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(alias = "algorithm", deserialize_with = "one_or_many")]
    pub algorithms: Vec<Algorithm>,
    pub problem: ProblemSpec,
    pub topology: TopologySpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub estimator: EstimatorSpec,
    /// Horizon `T`.
    pub iterations: u64,
    /// Per-agent upper-level sample budget. When set, each algorithm runs
    /// for as many iterations as the budget allows.
    #[serde(default)]
    pub budget: Option<u64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_cadence")]
    pub cadence: u64,
    /// Window `[t_lo, t_hi]` of the rate fit.
    #[serde(default = "default_slope_window")]
    pub slope_window: [u64; 2],
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_cadence() -> u64 {
    10
}

fn default_slope_window() -> [u64; 2] {
    [100, 10_000]
}

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Algorithm>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(String),
        Many(Vec<String>),
    }
    let names = match OneOrMany::deserialize(d)? {
        OneOrMany::One(s) => vec![s],
        OneOrMany::Many(v) => v,
    };
    names
        .iter()
        .map(|s| s.parse::<Algorithm>().map_err(de::Error::custom))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProblemSpec {
    Quadratic(QuadraticSpec),
    Logistic(LogisticSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadraticSpec {
    /// Seed of the instance draw.
    pub seed: u64,
    pub d_up: usize,
    pub d_low: usize,
    pub conditioning: f64,
    pub mu_g: f64,
    pub rho: f64,
    pub sigma_f: f64,
    pub sigma_g: f64,
    pub coupling: f64,
    pub radius: f64,
    pub realizable: bool,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        let d = diamond_core::problems::QuadraticConfig::default();
        QuadraticSpec {
            seed: 0,
            d_up: d.d_up,
            d_low: d.d_low,
            conditioning: d.conditioning,
            mu_g: d.mu_g,
            rho: d.rho,
            sigma_f: d.sigma_f,
            sigma_g: d.sigma_g,
            coupling: d.coupling,
            radius: d.radius,
            realizable: d.realizable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticSpec {
    /// Seed of the dataset draw and partition.
    pub seed: u64,
    /// LIBSVM file; a synthetic two-class set is drawn when absent.
    pub libsvm_path: Option<PathBuf>,
    /// Feature count `p`; inferred from a LIBSVM file when absent.
    pub features: Option<usize>,
    pub n_per_agent: usize,
    pub separation: f64,
    pub batch_size: usize,
    pub x_clamp: f64,
    pub y_radius: f64,
    pub inner_tol: f64,
}

impl Default for LogisticSpec {
    fn default() -> Self {
        let d = diamond_core::problems::LogisticConfig::default();
        LogisticSpec {
            seed: 0,
            libsvm_path: None,
            features: None,
            n_per_agent: 200,
            separation: 2.0,
            batch_size: d.batch_size,
            x_clamp: d.x_clamp,
            y_radius: d.y_radius,
            inner_tol: d.inner_tol,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySpec {
    pub m: usize,
    pub p_c: f64,
    #[serde(default)]
    pub matrix: MatrixKind,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePreset {
    MetaLearning,
    Hyperopt,
}

/// A preset with optional per-constant overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default)]
    pub preset: Option<SchedulePreset>,
    pub c_alpha: Option<f64>,
    pub omega: Option<f64>,
    pub c_beta: Option<f64>,
    pub c_eta: Option<f64>,
    pub c_gamma: Option<f64>,
    pub unit_momentum: Option<bool>,
}

impl ScheduleSpec {
    pub fn resolve(&self) -> Schedule {
        let base = match self.preset.unwrap_or(SchedulePreset::MetaLearning) {
            SchedulePreset::MetaLearning => Schedule::META_LEARNING,
            SchedulePreset::Hyperopt => Schedule::HYPEROPT,
        };
        Schedule {
            c_alpha: self.c_alpha.unwrap_or(base.c_alpha),
            omega: self.omega.unwrap_or(base.omega),
            c_beta: self.c_beta.unwrap_or(base.c_beta),
            c_eta: self.c_eta.unwrap_or(base.c_eta),
            c_gamma: self.c_gamma.unwrap_or(base.c_gamma),
            unit_momentum: self.unit_momentum.unwrap_or(base.unit_momentum),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum KSetting {
    #[serde(rename = "auto")]
    Auto,
    #[serde(untagged)]
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    #[serde(default = "default_k")]
    pub k: KSetting,
    /// Overrides the problem's `L_g` inside the estimator.
    #[serde(default)]
    pub l_g: Option<f64>,
    #[serde(default)]
    pub mu_g: Option<f64>,
}

fn default_k() -> KSetting {
    KSetting::Fixed(10)
}

impl Default for EstimatorSpec {
    fn default() -> Self {
        EstimatorSpec {
            k: default_k(),
            l_g: None,
            mu_g: None,
        }
    }
}

/// Parses and validates a TOML configuration.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(text);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let key = if key == "." { String::new() } else { key };
        ConfigError::new(key, e.into_inner().message().trim().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Parses a TOML value table, as produced by a sweep override.
pub fn config_from_value(value: toml::Value) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let key = e.path().to_string();
        ConfigError::new(key, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

fn positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be finite and > 0, got {v}")))
    }
}

fn nonnegative(key: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::new(key, format!("must be finite and >= 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.algorithms.is_empty() {
            return Err(ConfigError::new("algorithms", "at least one algorithm is required"));
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::new("seeds", "at least one seed is required"));
        }
        if self.iterations == 0 {
            return Err(ConfigError::new("iterations", "must be >= 1"));
        }
        if self.cadence == 0 {
            return Err(ConfigError::new("cadence", "must be >= 1"));
        }
        if self.budget == Some(0) {
            return Err(ConfigError::new("budget", "must be >= 1"));
        }
        let [lo, hi] = self.slope_window;
        if lo == 0 || hi < lo {
            return Err(ConfigError::new("slope_window", format!("need 1 <= t_lo <= t_hi, got [{lo}, {hi}]")));
        }

        let t = &self.topology;
        if t.m == 0 {
            return Err(ConfigError::new("topology.m", "must be >= 1"));
        }
        if !(0.0..=1.0).contains(&t.p_c) {
            return Err(ConfigError::new("topology.p_c", format!("must be in [0, 1], got {}", t.p_c)));
        }

        match &self.problem {
            ProblemSpec::Quadratic(q) => {
                if q.d_up == 0 {
                    return Err(ConfigError::new("problem.d_up", "must be >= 1"));
                }
                if q.d_low == 0 {
                    return Err(ConfigError::new("problem.d_low", "must be >= 1"));
                }
                if !(q.conditioning >= 1.0 && q.conditioning.is_finite()) {
                    return Err(ConfigError::new("problem.conditioning", format!("must be >= 1, got {}", q.conditioning)));
                }
                positive("problem.mu_g", q.mu_g)?;
                nonnegative("problem.rho", q.rho)?;
                nonnegative("problem.sigma_f", q.sigma_f)?;
                nonnegative("problem.sigma_g", q.sigma_g)?;
                nonnegative("problem.coupling", q.coupling)?;
                nonnegative("problem.radius", q.radius)?;
            }
            ProblemSpec::Logistic(l) => {
                if l.libsvm_path.is_none() {
                    match l.features {
                        Some(p) if p > 0 => {}
                        _ => return Err(ConfigError::new("problem.features", "synthetic data needs features >= 1")),
                    }
                    if l.n_per_agent < 5 {
                        return Err(ConfigError::new("problem.n_per_agent", "must be >= 5"));
                    }
                    nonnegative("problem.separation", l.separation)?;
                }
                if l.batch_size == 0 {
                    return Err(ConfigError::new("problem.batch_size", "must be >= 1"));
                }
                positive("problem.x_clamp", l.x_clamp)?;
                positive("problem.y_radius", l.y_radius)?;
                positive("problem.inner_tol", l.inner_tol)?;
            }
        }

        let s = self.schedule.resolve();
        positive("schedule.c_alpha", s.c_alpha)?;
        if !(s.omega >= 2.0 && s.omega.is_finite()) {
            return Err(ConfigError::new("schedule.omega", format!("must be >= 2, got {}", s.omega)));
        }
        positive("schedule.c_beta", s.c_beta)?;
        nonnegative("schedule.c_eta", s.c_eta)?;
        nonnegative("schedule.c_gamma", s.c_gamma)?;

        if let KSetting::Fixed(0) = self.estimator.k {
            return Err(ConfigError::new("estimator.k", "must be >= 1 or \"auto\""));
        }
        if let Some(v) = self.estimator.l_g {
            positive("estimator.l_g", v)?;
        }
        if let Some(v) = self.estimator.mu_g {
            positive("estimator.mu_g", v)?;
        }
        if let (Some(l), Some(mu)) = (self.estimator.l_g, self.estimator.mu_g) {
            if mu > l {
                return Err(ConfigError::new("estimator.mu_g", "must not exceed estimator.l_g"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        algorithm = "diamond"
        iterations = 100
        seeds = [1]
        [problem]
        kind = "quadratic"
        [topology]
        m = 3
        p_c = 0.5
    "#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.cadence, 10);
        assert_eq!(c.topology.matrix, MatrixKind::Laplacian);
        assert_eq!(c.algorithms, vec![Algorithm::Diamond]);
        assert_eq!(c.schedule.resolve(), Schedule::META_LEARNING);
        assert_eq!(c.estimator.k, KSetting::Fixed(10));
    }

    #[test]
    fn p_c_out_of_range_names_key() {
        let e = parse_config(&MINIMAL.replace("p_c = 0.5", "p_c = 1.5")).unwrap_err();
        assert_eq!(e.key, "topology.p_c");
        assert!(e.to_string().contains("topology.p_c"));
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = parse_config(&MINIMAL.replace("m = 3", "m = 3\nfoo = 1")).unwrap_err();
        assert!(e.reason.contains("foo"), "{e}");
        let e = parse_config(&MINIMAL.replace("kind = \"quadratic\"", "kind = \"quadratic\"\nbar = 2")).unwrap_err();
        assert!(e.reason.contains("bar"), "{e}");
        assert!(parse_config(&MINIMAL.replace("algorithm = \"diamond\"", "algorithm = \"sgd\"")).is_err());
    }

    #[test]
    fn k_auto_and_schedule_overrides() {
        let text = format!("{MINIMAL}\n[estimator]\nk = \"auto\"\n[schedule]\npreset = \"hyperopt\"\nc_alpha = 0.3\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.estimator.k, KSetting::Auto);
        let s = c.schedule.resolve();
        assert_eq!((s.c_alpha, s.c_beta), (0.3, 1.5));
        let bad = format!("{MINIMAL}\n[estimator]\nk = 0\n");
        assert_eq!(parse_config(&bad).unwrap_err().key, "estimator.k");
    }

    #[test]
    fn type_errors_carry_path() {
        let e = parse_config(&MINIMAL.replace("p_c = 0.5", "p_c = \"high\"")).unwrap_err();
        assert_eq!(e.key, "topology.p_c");
    }

    #[test]
    fn round_trips_through_toml_value() {
        let c = parse_config(MINIMAL).unwrap();
        let v = toml::Value::try_from(&c).unwrap();
        assert_eq!(config_from_value(v).unwrap(), c);
    }
}
