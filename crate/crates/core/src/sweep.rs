//! Parameter sweeps: run the cross product of one or more config axes and
//! assemble a comparison table.
//!
//! Runs share nothing, so with the `parallel` feature they execute on a
//! rayon pool; the sequential path is always available and produces
//! identical manifests in any order. Each combination gets a derived
//! scenario id (`<base>+<key>=<value>+...`) so outputs stay name-addressed.

use std::path::Path;

use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sim::{run_scenario, RunManifest};

/// One axis: a `section.key` plus the raw value texts to substitute.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    /// Parse `section.key=v1;v2;...` (`;` separates values so lists and
    /// constructors keep their commas).
    pub fn parse(text: &str) -> Result<Axis, ScenarioError> {
        let bad = |message: String| ScenarioError::Validation {
            field: "sweep.axis".to_string(),
            constraint: message,
        };
        let (key, rest) = text
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `section.key=v1;v2`, got `{text}`")))?;
        let key = key.trim();
        if !key.contains('.') {
            return Err(bad(format!("axis key `{key}` must be `section.key`")));
        }
        let values: Vec<String> = rest
            .split(';')
            .map(|v| v.trim().to_string())
            .filter(|v| !v.is_empty())
            .collect();
        if values.is_empty() {
            return Err(bad(format!("axis `{key}` has no values")));
        }
        Ok(Axis {
            key: key.to_string(),
            values,
        })
    }
}

/// One planned run of the sweep.
#[derive(Debug, Clone)]
pub struct Combination {
    pub id: String,
    pub overrides: Vec<(String, String)>,
    pub config: ScenarioConfig,
}

fn sanitize(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    for c in value.chars() {
        if c.is_ascii_alphanumeric() || "._-".contains(c) {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// Expand the cross product of all axes against the base scenario text.
/// Overrides are applied textually (later keys win), so any scenario key
/// can be swept.
pub fn plan(base_text: &str, axes: &[Axis]) -> Result<Vec<Combination>, ScenarioError> {
    let base = ScenarioConfig::parse(base_text)?;
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(combos.len() * axis.values.len());
        for combo in &combos {
            for value in &axis.values {
                let mut extended = combo.clone();
                extended.push((axis.key.clone(), value.clone()));
                next.push(extended);
            }
        }
        combos = next;
    }

    combos
        .into_iter()
        .map(|overrides| {
            let mut text = String::from(base_text);
            let mut id = base.run.id.clone();
            for (key, value) in &overrides {
                let (section, field) = key.split_once('.').expect("validated by Axis::parse");
                text.push_str(&format!("\n[{section}]\n{field} = {value}\n"));
                id.push_str(&format!("+{}={}", field, sanitize(value)));
            }
            text.push_str(&format!("\n[run]\nid = \"{id}\"\n"));
            let config = ScenarioConfig::parse(&text)?;
            Ok(Combination {
                id,
                overrides,
                config,
            })
        })
        .collect()
}

/// Outcome of one run within a sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub id: String,
    pub result: Result<RunManifest, String>,
}

fn run_one(combo: &Combination, out_root: &Path) -> SweepRun {
    let outcome = std::panic::catch_unwind(|| run_scenario(&combo.config, out_root));
    let result = match outcome {
        Ok(Ok(manifest)) => Ok(manifest),
        Ok(Err(e)) => Err(e.to_string()),
        Err(panic) => Err(panic_message(&panic)),
    };
    SweepRun {
        id: combo.id.clone(),
        result,
    }
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("invariant breach: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("invariant breach: {s}")
    } else {
        "invariant breach".to_string()
    }
}

/// Execute all combinations sequentially, in plan order.
pub fn run_sequential(combos: &[Combination], out_root: &Path) -> Vec<SweepRun> {
    combos.iter().map(|c| run_one(c, out_root)).collect()
}

/// Execute all combinations on a rayon pool of `parallelism` workers.
/// Results come back in plan order regardless of completion order.
#[cfg(feature = "parallel")]
pub fn run_parallel(combos: &[Combination], out_root: &Path, parallelism: usize) -> Vec<SweepRun> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .expect("rayon pool");
    pool.install(|| combos.par_iter().map(|c| run_one(c, out_root)).collect())
}

/// Dispatch on the requested parallelism (and the `parallel` feature).
pub fn run(combos: &[Combination], out_root: &Path, parallelism: usize) -> Vec<SweepRun> {
    #[cfg(feature = "parallel")]
    {
        if parallelism > 1 {
            return run_parallel(combos, out_root, parallelism);
        }
    }
    let _ = parallelism;
    run_sequential(combos, out_root)
}

/// Comparison table: one row per run with the evenness and latency figures
/// a sweep is usually read for.
pub fn comparison_csv(runs: &[SweepRun]) -> String {
    let mut out = String::from(
        "scenario_id,status,evenness_cv,mean_wait_s,utilization_min,utilization_max,utilization_spread\n",
    );
    for run in runs {
        match &run.result {
            Ok(m) => {
                let utils: Vec<f64> = m.summary.per_server.iter().map(|s| s.utilization).collect();
                let min = utils.iter().copied().fold(f64::MAX, f64::min);
                let max = utils.iter().copied().fold(f64::MIN, f64::max);
                let cv = m
                    .evenness_cv
                    .map(|v| v.to_string())
                    .unwrap_or_else(|| "undefined".to_string());
                out.push_str(&format!(
                    "{},ok,{},{},{},{},{}\n",
                    run.id,
                    cv,
                    m.mean_wait_s,
                    min,
                    max,
                    m.utilization_spread
                ));
            }
            Err(e) => {
                out.push_str(&format!(
                    "{},\"error: {}\",,,,,\n",
                    run.id,
                    e.replace('"', "'")
                ));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing_splits_on_semicolons() {
        let axis = Axis::parse("routing.policy=flow_weighted;round_robin").unwrap();
        assert_eq!(axis.key, "routing.policy");
        assert_eq!(axis.values, vec!["flow_weighted", "round_robin"]);

        let lists =
            Axis::parse("servers.speed_factors=[1, 1];[1, 0.5]").unwrap();
        assert_eq!(lists.values, vec!["[1, 1]", "[1, 0.5]"]);
    }

    #[test]
    fn axis_requires_section_qualified_key() {
        assert!(Axis::parse("policy=a;b").is_err());
        assert!(Axis::parse("routing.policy=").is_err());
    }

    #[test]
    fn plan_builds_cross_product_with_derived_ids() {
        let axes = vec![
            Axis::parse("routing.policy=flow_weighted;round_robin").unwrap(),
            Axis::parse("run.seed=1;2;3").unwrap(),
        ];
        let combos = plan("", &axes).unwrap();
        assert_eq!(combos.len(), 6);
        assert_eq!(combos[0].id, "reference+policy=flow_weighted+seed=1");
        assert_eq!(combos[5].id, "reference+policy=round_robin+seed=3");
        let ids: std::collections::HashSet<_> = combos.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn invalid_axis_value_fails_at_plan_time() {
        let axes = vec![Axis::parse("routing.policy=flow_weighted;bogus").unwrap()];
        assert!(plan("", &axes).is_err());
    }

    #[test]
    fn sanitize_keeps_ids_path_safe() {
        assert_eq!(sanitize("[1, 0.5]"), "1-0.5");
        assert_eq!(sanitize("response_time_weighted(0.1)"), "response_time_weighted-0.1");
    }
}
