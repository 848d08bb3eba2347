//! Cross-module behavior: sweep independence, routing predictions checked
//! against full simulations, and stability of the loaded reference array.

use olapsim::scenario::ScenarioConfig;
use olapsim::sim::simulate;
use olapsim::sweep::{self, Axis};
use proptest::prelude::*;

fn manifest_minus_wall(path: &std::path::Path) -> serde_json::Value {
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    value.as_object_mut().unwrap().remove("wall_clock_s");
    value
}

const SMALL_SWEEP_BASE: &str = "[topology]
lans = 2
users_per_lan = 50
gateways = 1
olap_servers = 2
[workload]
load = duty_cycle(1)
[servers]
count = 4
partitions = 4
[run]
end_time = 200
";

#[test]
fn sweep_runs_are_order_independent() {
    let axes = vec![
        Axis::parse("routing.policy=flow_weighted;least_outstanding").unwrap(),
        Axis::parse("run.seed=1;2").unwrap(),
    ];
    let mut combos = sweep::plan(SMALL_SWEEP_BASE, &axes).unwrap();

    let dir_a = tempfile::tempdir().unwrap();
    let runs = sweep::run_sequential(&combos, dir_a.path());
    assert!(runs.iter().all(|r| r.result.is_ok()));

    combos.reverse();
    let dir_b = tempfile::tempdir().unwrap();
    let reversed = sweep::run_sequential(&combos, dir_b.path());
    assert!(reversed.iter().all(|r| r.result.is_ok()));

    for run in &runs {
        let a = manifest_minus_wall(&dir_a.path().join(&run.id).join("manifest.json"));
        let b = manifest_minus_wall(&dir_b.path().join(&run.id).join("manifest.json"));
        assert_eq!(a, b, "run {} differs with order", run.id);
    }
}

#[cfg(feature = "parallel")]
#[test]
fn parallel_sweep_matches_sequential() {
    let axes = vec![Axis::parse("run.seed=1;2;3;4").unwrap()];
    let combos = sweep::plan(SMALL_SWEEP_BASE, &axes).unwrap();

    let dir_seq = tempfile::tempdir().unwrap();
    let dir_par = tempfile::tempdir().unwrap();
    let seq = sweep::run_sequential(&combos, dir_seq.path());
    let par = sweep::run_parallel(&combos, dir_par.path(), 4);
    assert_eq!(seq.len(), par.len());
    for (s, p) in seq.iter().zip(&par) {
        assert_eq!(s.id, p.id, "parallel results must come back in plan order");
        let a = manifest_minus_wall(&dir_seq.path().join(&s.id).join("manifest.json"));
        let b = manifest_minus_wall(&dir_par.path().join(&p.id).join("manifest.json"));
        assert_eq!(a, b);
    }
}

#[test]
fn both_policies_stay_even_on_identical_hardware() {
    for policy in ["flow_weighted", "response_time_weighted(0.1)"] {
        let config = ScenarioConfig::parse(&format!(
            "[routing]\npolicy = {policy}\n[run]\nend_time = 600\n"
        ))
        .unwrap();
        let out = simulate(&config).unwrap();
        let cv = out.manifest.evenness_cv.unwrap();
        assert!(cv <= 0.05, "{policy}: CV {cv}");
    }
}

#[test]
fn static_flows_double_slow_server_utilization_when_stable() {
    // 120 q/s against (4x1.0, 4x0.5): per-server 15 q/s, so rho is 0.3 on
    // fast servers and 0.6 on slow ones
    let config = ScenarioConfig::parse(
        "[workload]\nload = target_aggregate(120)\n\
         [servers]\nspeed_factors = [1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5]\n\
         [run]\nend_time = 600\n",
    )
    .unwrap();
    let out = simulate(&config).unwrap();
    let utils: Vec<f64> = out
        .manifest
        .summary
        .per_server
        .iter()
        .map(|s| s.utilization)
        .collect();
    let fast = utils[..4].iter().sum::<f64>() / 4.0;
    let slow = utils[4..].iter().sum::<f64>() / 4.0;
    let ratio = slow / fast;
    assert!((ratio - 2.0).abs() < 0.2, "slow/fast utilization ratio {ratio}");
}

#[test]
fn response_time_shares_track_speed_at_light_load() {
    // two servers at speeds (1, 2), aggregate 12 q/s: utilization stays
    // under 0.3 and completed-query shares approach the (1/3, 2/3)
    // steady-share prediction
    let config = ScenarioConfig::parse(
        "[topology]\nlans = 1\nusers_per_lan = 100\ngateways = 1\nolap_servers = 1\n\
         [workload]\nload = duty_cycle(0.12)\n\
         [servers]\ncount = 2\nspeed_factors = [1, 2]\npartitions = 2\n\
         [routing]\npolicy = response_time_weighted(0.1)\n\
         [run]\nend_time = 900\n",
    )
    .unwrap();
    let out = simulate(&config).unwrap();
    let per_server = &out.manifest.summary.per_server;
    assert!(per_server.iter().all(|s| s.utilization < 0.3));
    let total: u64 = per_server.iter().map(|s| s.completions_total).sum();
    let share_slow = per_server[0].completions_total as f64 / total as f64;
    let predicted = olapsim::routing::steady_share(
        &olapsim::routing::PolicyKind::ResponseTimeWeighted { ewma_alpha: 0.1 },
        &[1.0, 2.0],
        &[0.5, 0.5],
    )
    .unwrap();
    assert!(
        (share_slow - predicted[0]).abs() < 0.05,
        "share {share_slow} vs predicted {}",
        predicted[0]
    );
}

#[test]
fn faster_server_completes_more_queries_in_two_server_contrast() {
    // directional claim at moderate load: speeds (1.0, 2.0), rho around
    // 0.5 on the slower server under even split
    let config = ScenarioConfig::parse(
        "[topology]\nlans = 1\nusers_per_lan = 50\ngateways = 1\nolap_servers = 1\n\
         [workload]\nload = duty_cycle(1)\n\
         [servers]\ncount = 2\nspeed_factors = [1, 2]\npartitions = 2\n\
         [routing]\npolicy = response_time_weighted(0.1)\n\
         [run]\nend_time = 600\n",
    )
    .unwrap();
    let out = simulate(&config).unwrap();
    let counts: Vec<u64> = out
        .manifest
        .summary
        .per_server
        .iter()
        .map(|s| s.completions_total)
        .collect();
    assert!(counts[1] > counts[0], "fast server should complete more: {counts:?}");
}

#[test]
fn active_session_issues_exactly_one_query_per_second() {
    let config = ScenarioConfig::parse(
        "[topology]\nlans = 1\nusers_per_lan = 1\ngateways = 1\nolap_servers = 1\n\
         [workload]\nload = duty_cycle(1)\n\
         [servers]\ncount = 1\npartitions = 1\n\
         [run]\nend_time = 200\n",
    )
    .unwrap();
    let out = simulate(&config).unwrap();
    // one transaction per second: any 60 whole buckets inside the active
    // span hold exactly 60 arrivals
    let sixty: f64 = out.collector.arrivals.window_sum(0, 70, 130);
    assert_eq!(sixty, 60.0);
    // ten object refreshes per page redraw
    let dispatches = out.manifest.event_counts["query_dispatch"] as i64;
    let pages = out.manifest.event_counts["page_refresh"] as i64;
    assert!(
        (pages * 10 - dispatches).abs() <= 10,
        "{pages} page redraws vs {dispatches} dispatches"
    );
}

#[test]
fn heavier_query_size_variant_is_expressible() {
    // sizes drawn in [10240, 12288) scale service time up to 1.2x
    let config = ScenarioConfig::parse(
        "[topology]\nlans = 1\nusers_per_lan = 1\ngateways = 1\nolap_servers = 1\n\
         [workload]\nload = duty_cycle(1)\ntransaction_size = uniform(10240, 12288)\n\
         [servers]\ncount = 1\npartitions = 1\n\
         [run]\nend_time = 300\n",
    )
    .unwrap();
    let out = simulate(&config).unwrap();
    let mean = out.manifest.summary.per_server[0].mean_processing;
    assert!(
        mean > 0.02 && mean < 0.024,
        "mean processing {mean} outside the 1.0-1.2x service band"
    );
}

#[test]
fn arrival_series_totals_match_conservation_counters() {
    let config = ScenarioConfig::parse("[run]\nend_time = 300\n").unwrap();
    let out = simulate(&config).unwrap();
    let recorded: f64 = (0..8).map(|s| out.collector.arrivals.total(s)).sum();
    let c = out.manifest.conservation;
    // every dispatched query either arrived somewhere or is still in flight
    assert_eq!(recorded as u64 + c.in_flight, c.dispatched);
}

#[test]
fn loaded_reference_array_queues_stay_bounded() {
    let config = ScenarioConfig::parse("[run]\nend_time = 900\n").unwrap();
    let out = simulate(&config).unwrap();
    // time-averaged queue depth over the third quarter vs the final
    // quarter: a stable queue fluctuates instead of growing
    let mean_depth = |from: usize, to: usize| {
        let total: f64 = (0..8)
            .map(|s| out.collector.queue_len.window_sum(s, from, to))
            .sum();
        total / ((to - from) as f64 * 8.0)
    };
    let third = mean_depth(450, 675);
    let fourth = mean_depth(675, 900);
    assert!(
        fourth < third + 2.0,
        "queue depth grew from {third:.2} to {fourth:.2} over the run's second half"
    );
}

fn distribution_strategy() -> impl Strategy<Value = olapsim::DistributionSpec> {
    prop_oneof![
        (0.1..100.0).prop_map(olapsim::DistributionSpec::Constant),
        (0.1..100.0, 0.0..100.0).prop_map(|(lo, span): (f64, f64)| {
            olapsim::DistributionSpec::Uniform(lo, lo + span)
        }),
        (0.1..100.0).prop_map(|mean| olapsim::DistributionSpec::Exponential { mean }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenario_text_roundtrips_for_generated_configs(
        seed in 0u64..u64::MAX / 2,
        count in 1usize..12,
        duty in 0.01f64..1.0,
        interarrival in distribution_strategy(),
        size in distribution_strategy(),
        alpha in 0.01f64..1.0,
    ) {
        let mut config = ScenarioConfig::default();
        config.run.seed = seed;
        config.servers.count = count;
        config.servers.partitions = count;
        config.servers.speed_factors = vec![1.0; count];
        config.workload.load = olapsim::scenario::LoadSpec::DutyCycle(duty);
        config.workload.tx.interarrival = interarrival;
        config.workload.tx.size = size;
        config.policy = olapsim::routing::PolicyKind::ResponseTimeWeighted { ewma_alpha: alpha };
        prop_assume!(config.validate().is_ok());
        let text = config.canonical_text();
        let reparsed = ScenarioConfig::parse(&text).unwrap();
        prop_assert_eq!(reparsed, config);
    }
}
