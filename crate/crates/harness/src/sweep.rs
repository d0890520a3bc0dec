//! One-axis parameter sweeps over a base config.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use crate::config::{config_from_value, ConfigError, ExperimentConfig};
use crate::experiment::{run_experiment, write_json_atomic, ExperimentSummary};

/// One long-format row: axis value, algorithm, seed, outcome.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub algorithm: String,
    pub seed: u64,
    pub status: String,
    pub final_metric_m: Option<f64>,
    pub rate_slope: Option<f64>,
}

/// Parses a list entry as a TOML scalar, falling back to a bare string.
pub fn parse_value(text: &str) -> toml::Value {
    let text = text.trim();
    match toml::from_str::<toml::Table>(&format!("v = {text}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(text.to_string())),
        Err(_) => toml::Value::String(text.to_string()),
    }
}

/// Splits `"0.3,0.5,0.8"` into values.
pub fn parse_values(list: &str) -> Vec<toml::Value> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(parse_value).collect()
}

fn display_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Returns `base` with the dotted `axis` set to `value`. The axis must name
/// an existing field or an optional field of an existing table.
pub fn with_override(base: &ExperimentConfig, axis: &str, value: toml::Value) -> Result<ExperimentConfig, ConfigError> {
    let invalid = |reason: &str| ConfigError {
        key: axis.to_string(),
        reason: reason.to_string(),
    };
    let mut root = toml::Value::try_from(base).map_err(|e| invalid(&e.to_string()))?;
    let parts: Vec<&str> = axis.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid("empty path segment"));
    }
    let (last, parents) = parts.split_last().ok_or_else(|| invalid("empty axis"))?;
    let mut table = root.as_table_mut().ok_or_else(|| invalid("config is not a table"))?;
    for p in parents {
        table = table
            .get_mut(*p)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| invalid("no such table"))?;
    }
    table.insert(last.to_string(), value);
    config_from_value(root)
}

/// Runs the base config once per value of `axis`. Each value gets its own
/// subdirectory under `out`, and `sweep.csv` collects one row per run.
pub fn sweep(
    base: &ExperimentConfig,
    axis: &str,
    values: &[toml::Value],
    out: Option<&Path>,
) -> Result<(Vec<SweepRow>, Vec<ExperimentSummary>)> {
    if values.is_empty() {
        bail!("sweep over `{axis}` needs at least one value");
    }
    let configs = values
        .iter()
        .map(|v| with_override(base, axis, v.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (v, cfg) in values.iter().zip(&configs) {
        let label = display_value(v);
        let sub = out.map(|d| d.join(format!("{axis}={label}")));
        let (summary, _) = run_experiment(cfg, sub.as_deref())?;
        for r in &summary.runs {
            rows.push(SweepRow {
                axis: axis.to_string(),
                value: label.clone(),
                algorithm: r.algorithm.name().to_string(),
                seed: r.seed,
                status: match &r.status {
                    crate::experiment::RunStatus::Ok => "ok".into(),
                    crate::experiment::RunStatus::Diverged { .. } => "diverged".into(),
                    crate::experiment::RunStatus::Failed { .. } => "failed".into(),
                },
                final_metric_m: r.final_metric_m,
                rate_slope: r.rate_slope,
            });
        }
        summaries.push(summary);
    }
    if let Some(dir) = out {
        let mut w = csv::Writer::from_path(dir.join("sweep.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        write_json_atomic(&dir.join("sweep_summary.json"), &summaries)?;
    }
    Ok((rows, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const BASE: &str = r#"
        algorithm = "diamond"
        iterations = 20
        seeds = [1]
        [problem]
        kind = "quadratic"
        [topology]
        m = 3
        p_c = 0.5
    "#;

    #[test]
    fn values_parse_as_toml_scalars() {
        assert_eq!(parse_values("0.3, 0.5,0.8"), vec![0.3.into(), 0.5.into(), 0.8.into()]);
        assert_eq!(parse_value("5"), toml::Value::Integer(5));
        assert_eq!(parse_value("metropolis"), toml::Value::String("metropolis".into()));
        assert!(parse_values(" , ").is_empty());
    }

    #[test]
    fn override_sets_nested_and_optional_fields() {
        let base = parse_config(BASE).unwrap();
        let c = with_override(&base, "topology.p_c", 0.8.into()).unwrap();
        assert_eq!(c.topology.p_c, 0.8);
        let c = with_override(&base, "estimator.k", 20.into()).unwrap();
        assert_eq!(c.estimator.k, crate::config::KSetting::Fixed(20));
        let c = with_override(&base, "schedule.c_alpha", 0.5.into()).unwrap();
        assert_eq!(c.schedule.resolve().c_alpha, 0.5);
        assert!(with_override(&base, "topology.nope", 1.into()).is_err());
        assert!(with_override(&base, "nothing.p_c", 1.into()).is_err());
        assert_eq!(with_override(&base, "topology.p_c", 1.5.into()).unwrap_err().key, "topology.p_c");
    }

    #[test]
    fn empty_values_rejected() {
        let base = parse_config(BASE).unwrap();
        assert!(sweep(&base, "topology.p_c", &[], None).is_err());
    }

    #[test]
    fn sweep_produces_one_row_per_run() {
        let base = parse_config(BASE).unwrap();
        let (rows, sums) = sweep(&base, "topology.p_c", &parse_values("0.3,0.8"), None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(sums.len(), 2);
        assert_eq!(rows[1].value, "0.8");
        assert!(rows.iter().all(|r| r.status == "ok"));
    }
}
