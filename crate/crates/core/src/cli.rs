//! Scenario-driven batch runner.
//!
//! Exit codes: 0 success, 2 scenario parse failure, 3 validation failure,
//! 4 runtime invariant breach, 1 anything else (I/O and such).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::metrics::mdl_wait_oracle;
use crate::scenario::{ScenarioConfig, ScenarioError};
use crate::sim::{run_scenario, simulate, SimError};
use crate::sweep::{self, Axis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "olapsim",
    version,
    about = "Discrete-event simulator for OLAP dashboard load on a partitioned database array"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write its metric artifacts and manifest.
    Run {
        /// Scenario file; omit to run the built-in reference scenario.
        scenario: Option<PathBuf>,
        /// Override the run seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the event-count cap.
        #[arg(long)]
        max_events: Option<u64>,
        /// Override the routing policy (e.g. round_robin,
        /// response_time_weighted(0.1)).
        #[arg(long)]
        policy: Option<String>,
        /// Override the virtual end time in seconds.
        #[arg(long)]
        end_time: Option<f64>,
        /// Override the scenario id (names the output directory).
        #[arg(long)]
        id: Option<String>,
        /// Output root; artifacts land under <out>/<scenario id>/.
        #[arg(long, env = "OLAPSIM_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Run the cross product of one or more config axes and write a
    /// comparison table.
    Sweep {
        /// Base scenario file; omit for the reference scenario.
        scenario: Option<PathBuf>,
        /// Axis spec `section.key=v1;v2;...`; repeat for a cross product.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        /// Concurrent runs (runs share nothing; results merge in order).
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long, env = "OLAPSIM_OUT", default_value = "runs")]
        out: PathBuf,
    },
    /// Run the built-in queueing validation scenarios and report pass/fail.
    Oracle,
}

fn read_scenario(path: &Option<PathBuf>) -> Result<String, i32> {
    match path {
        None => Ok(String::new()),
        Some(p) => std::fs::read_to_string(p).map_err(|e| {
            eprintln!("error: cannot read {}: {e}", p.display());
            EXIT_ERROR
        }),
    }
}

fn scenario_exit(err: &ScenarioError) -> i32 {
    match err {
        ScenarioError::Parse { .. } => EXIT_PARSE,
        ScenarioError::Validation { .. } => EXIT_VALIDATION,
    }
}

fn sim_exit(err: &SimError) -> i32 {
    match err {
        SimError::Scenario(e) => scenario_exit(e),
        SimError::Cluster(_) | SimError::Topology(_) => EXIT_VALIDATION,
        SimError::Metrics(_) | SimError::Io { .. } => EXIT_ERROR,
    }
}

fn parse_with_overrides(base: &str, overrides: &[String]) -> Result<ScenarioConfig, i32> {
    let mut text = String::from(base);
    for fragment in overrides {
        text.push('\n');
        text.push_str(fragment);
    }
    ScenarioConfig::parse(&text).map_err(|e| {
        eprintln!("error: {e}");
        scenario_exit(&e)
    })
}

fn guarded_run(config: &ScenarioConfig, out: &Path) -> i32 {
    let result = std::panic::catch_unwind(|| run_scenario(config, out));
    match result {
        Ok(Ok(manifest)) => {
            println!(
                "{}: {} events, t={}s, wrote {}",
                manifest.scenario_id,
                manifest.events_processed,
                manifest.final_time_s,
                out.join(&manifest.scenario_id).display()
            );
            EXIT_OK
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            sim_exit(&e)
        }
        Err(_) => {
            eprintln!("error: runtime invariant breach (details above)");
            EXIT_INVARIANT
        }
    }
}

/// One validation scenario outcome for `olapsim oracle`.
#[derive(Debug)]
pub struct OracleCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn dd1_scenario() -> ScenarioConfig {
    ScenarioConfig::parse(
        "[topology]\nlans = 1\nusers_per_lan = 1\ngateways = 1\nolap_servers = 1\n\
         [workload]\nload = duty_cycle(1)\n\
         [servers]\ncount = 1\npartitions = 1\n\
         [run]\nid = \"oracle-dd1\"\nend_time = 200\nseed = 7\n",
    )
    .expect("built-in scenario parses")
}

fn md1_scenario() -> ScenarioConfig {
    // 200 sessions, each Poisson at 1/8 q/s: merged arrivals are Poisson
    // at 25 q/s; with 20 ms deterministic service, rho = 0.5
    ScenarioConfig::parse(
        "[topology]\nlans = 1\nusers_per_lan = 200\ngateways = 1\nolap_servers = 1\n\
         [workload]\nload = duty_cycle(1)\ninterarrival = exponential(8)\n\
         [servers]\ncount = 1\npartitions = 1\n\
         [run]\nid = \"oracle-md1\"\nend_time = 1100\nseed = 7\n",
    )
    .expect("built-in scenario parses")
}

/// Run both built-in validation scenarios.
///
/// The first drives a single always-on session into one server: constant
/// spacing at rho << 1, so every query after the first must wait exactly
/// zero. The second merges 200 sparse Poisson sessions into rho = 0.5 on
/// one server and compares the measured mean wait with the closed-form
/// deterministic-service queue at a 10% tolerance.
pub fn oracle_checks() -> Vec<OracleCheck> {
    let mut checks = Vec::new();

    let dd1 = simulate(&dd1_scenario()).expect("oracle scenario runs");
    let max_wait = dd1.collector.max_wait_after_first[0];
    let completed = dd1.manifest.conservation.completed;
    checks.push(OracleCheck {
        name: "deterministic-arrivals zero wait",
        pass: completed > 100 && max_wait == 0.0,
        detail: format!("{completed} queries, max wait after first = {max_wait}"),
    });

    let md1 = simulate(&md1_scenario()).expect("oracle scenario runs");
    let measured = md1.manifest.mean_wait_s;
    let expected = mdl_wait_oracle(25.0, 0.02).expect("rho < 1");
    let rel = (measured - expected).abs() / expected;
    checks.push(OracleCheck {
        name: "poisson-arrivals mean wait vs closed form",
        pass: rel < 0.10,
        detail: format!("measured {measured:.6}s, expected {expected:.6}s, rel err {rel:.3}"),
    });

    checks
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    dispatch(cli)
}

fn dispatch(cli: Cli) -> i32 {
    match cli.command {
        Command::Run {
            scenario,
            seed,
            max_events,
            policy,
            end_time,
            id,
            out,
        } => {
            let base = match read_scenario(&scenario) {
                Ok(text) => text,
                Err(code) => return code,
            };
            let mut overrides = Vec::new();
            if let Some(seed) = seed {
                overrides.push(format!("[run]\nseed = {seed}"));
            }
            if let Some(cap) = max_events {
                overrides.push(format!("[run]\nmax_events = {cap}"));
            }
            if let Some(end) = end_time {
                overrides.push(format!("[run]\nend_time = {end}"));
            }
            if let Some(policy) = policy {
                overrides.push(format!("[routing]\npolicy = {policy}"));
            }
            if let Some(id) = id {
                overrides.push(format!("[run]\nid = \"{id}\""));
            }
            let config = match parse_with_overrides(&base, &overrides) {
                Ok(c) => c,
                Err(code) => return code,
            };
            guarded_run(&config, &out)
        }
        Command::Sweep {
            scenario,
            axes,
            parallelism,
            out,
        } => {
            let base = match read_scenario(&scenario) {
                Ok(text) => text,
                Err(code) => return code,
            };
            let parsed_axes: Result<Vec<Axis>, _> = axes.iter().map(|a| Axis::parse(a)).collect();
            let parsed_axes = match parsed_axes {
                Ok(a) => a,
                Err(e) => {
                    eprintln!("error: {e}");
                    return EXIT_VALIDATION;
                }
            };
            let combos = match sweep::plan(&base, &parsed_axes) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return scenario_exit(&e);
                }
            };
            let runs = sweep::run(&combos, &out, parallelism.max(1));
            let table = sweep::comparison_csv(&runs);
            let table_path = out.join("comparison.csv");
            if let Err(e) = std::fs::create_dir_all(&out)
                .and_then(|()| std::fs::write(&table_path, &table))
            {
                eprintln!("error: {}: {e}", table_path.display());
                return EXIT_ERROR;
            }
            print!("{table}");
            let failures = runs.iter().filter(|r| r.result.is_err()).count();
            if failures > 0 {
                eprintln!("error: {failures} of {} runs failed", runs.len());
                EXIT_INVARIANT
            } else {
                EXIT_OK
            }
        }
        Command::Oracle => {
            let checks = std::panic::catch_unwind(oracle_checks);
            match checks {
                Ok(checks) => {
                    let mut all_pass = true;
                    for check in &checks {
                        println!(
                            "{}: {} ({})",
                            check.name,
                            if check.pass { "PASS" } else { "FAIL" },
                            check.detail
                        );
                        all_pass &= check.pass;
                    }
                    if all_pass {
                        EXIT_OK
                    } else {
                        EXIT_INVARIANT
                    }
                }
                Err(_) => {
                    eprintln!("error: runtime invariant breach (details above)");
                    EXIT_INVARIANT
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_scenarios_parse_and_are_stable() {
        let dd1 = dd1_scenario();
        assert_eq!(dd1.servers.count, 1);
        assert!(dd1.run.end_time.is_some());
        let md1 = md1_scenario();
        assert_eq!(md1.total_users(), 200);
    }

    #[test]
    fn exit_codes_distinguish_parse_and_validation() {
        assert_eq!(
            scenario_exit(&ScenarioError::Parse {
                line: 1,
                message: String::new()
            }),
            EXIT_PARSE
        );
        assert_eq!(
            scenario_exit(&ScenarioError::Validation {
                field: String::new(),
                constraint: String::new()
            }),
            EXIT_VALIDATION
        );
    }
}
