//! End-to-end simulation of one scenario: builds the topology, workload,
//! server array and routing policy from a [`ScenarioConfig`], drives the
//! event loop, and produces metrics plus a run manifest.
//!
//! The event flow per query: an active session's object refresh emits a
//! `QueryDispatch` at its OLAP server, the routing policy picks an
//! eligible RDBMS server, the query arrives after the deterministic
//! network transfer delay, waits in FIFO order, is served for
//! `base_service_time * size/reference / speed`, and its processing time
//! (wait + service) feeds both the metrics and the policy's response-time
//! estimate.

use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{
    custom_partition_map, make_partition_map, Conservation, OlapServer, PartitionMap,
    PlacementStrategy, Query, RdbmsServer,
};
use crate::engine::{
    DistributionSpec, Event, EventHandler, EventKind, EventQueue, OlapId, QueryId, RandomStreams,
    RdbmsId, RunLimits, RunSummary, SessionId, SimTime, StreamId,
};
use crate::metrics::{self, Collector, MetricsError, Summary};
use crate::routing::{pick, PolicyKind, PolicyState};
use crate::scenario::{PlacementSpec, ScenarioConfig, ScenarioError};
use crate::topology::{build_topology, Topology};
use crate::workload::{spawn_sessions, Session, SessionMode};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Cluster(#[from] crate::cluster::ClusterError),
    #[error("topology invalid: {}", .0.join("; "))]
    Topology(Vec<String>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Machine-readable record of one completed run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub scenario_id: String,
    pub config_hash: String,
    pub seed: u64,
    pub tool_version: String,
    pub events_processed: u64,
    pub event_counts: std::collections::BTreeMap<String, u64>,
    pub final_time_s: f64,
    pub wall_clock_s: f64,
    /// Hash of the full (time, kind) event trace.
    pub trace_hash: String,
    /// Hash of the workload's dispatch trace alone; invariant under
    /// routing-policy changes.
    pub dispatch_hash: String,
    pub conservation: Conservation,
    pub olap_http_bytes: Vec<f64>,
    pub summary: Summary,
    pub evenness_cv: Option<f64>,
    pub mean_wait_s: f64,
    pub utilization_spread: f64,
}

#[derive(Debug)]
pub struct SimOutput {
    pub manifest: RunManifest,
    pub collector: Collector,
    pub run: RunSummary,
}

struct World<'a> {
    config: &'a ScenarioConfig,
    topology: Topology,
    /// Per (olap, rdbms): (summed latency, summed 1/bandwidth); transfer
    /// delay for b bytes is `lat + 8 b * inv_bw`.
    delay: Vec<Vec<(f64, f64)>>,
    sessions: Vec<Session>,
    /// On/off mode: activity deadline per session (infinity when always on).
    active_until: Vec<SimTime>,
    olap: Vec<OlapServer>,
    policy_states: Vec<PolicyState>,
    rdbms: Vec<RdbmsServer>,
    in_service: Vec<Option<(QueryId, SimTime, SimTime)>>,
    partition_map: PartitionMap,
    streams: RandomStreams,
    collector: Collector,
    conservation: Conservation,
    queries: HashMap<u64, Query>,
    next_query: u64,
    ewma_alpha: f64,
    dispatch_hash: u64,
}

const DISPATCH_HASH_OFFSET: u64 = 0xcbf29ce484222325;

fn fold_dispatch_hash(state: &mut u64, time: SimTime, session: SessionId) {
    const PRIME: u64 = 0x100000001b3;
    for byte in time
        .to_bits()
        .to_le_bytes()
        .into_iter()
        .chain(session.0.to_le_bytes())
    {
        *state = (*state ^ u64::from(byte)).wrapping_mul(PRIME);
    }
}

impl<'a> World<'a> {
    fn activate(&mut self, session: SessionId, now: SimTime, queue: &mut EventQueue) {
        let s = &mut self.sessions[session.0 as usize];
        s.active = true;
        s.epoch += 1;
        let epoch = s.epoch;
        if let SessionMode::OnOff { mean_on } = self.config.workload.session_mode {
            let on = DistributionSpec::Exponential { mean: mean_on }
                .sample(self.streams.stream(StreamId::InterRepetition));
            self.active_until[session.0 as usize] = now + on;
        }
        self.draw_page(session);
        let gap = self
            .config
            .workload
            .tx
            .interarrival
            .sample(self.streams.stream(StreamId::TxInterarrival));
        queue.schedule(now + gap, EventKind::ObjectRefresh(session, epoch));
        queue.schedule(
            now + self.config.workload.page.page_refresh,
            EventKind::PageRefresh(session, epoch),
        );
    }

    fn draw_page(&mut self, session: SessionId) {
        let page = &self.config.workload.page;
        let count = page
            .objects_per_page
            .sample_count(self.streams.stream(StreamId::ObjectCount));
        let mut bytes = 0.0;
        for _ in 0..count {
            bytes += page.object_size.sample(self.streams.stream(StreamId::ObjectSize));
        }
        let olap = self.sessions[session.0 as usize].olap;
        self.olap[olap.0 as usize].http_bytes_served += bytes;
    }

    fn session_live(&self, session: SessionId, epoch: u32) -> bool {
        let s = &self.sessions[session.0 as usize];
        s.active && s.epoch == epoch
    }

    fn dispatch(&mut self, session: SessionId, now: SimTime, queue: &mut EventQueue) {
        let tx = &self.config.workload.tx;
        let size = tx.size.sample(self.streams.stream(StreamId::TxSize));
        let partition = crate::workload::assign_partition(
            self.config.workload.partition_skew,
            self.partition_map.partitions(),
            self.streams.stream(StreamId::PartitionAssign),
        );
        let source = self.sessions[session.0 as usize].olap;
        let eligible = self
            .partition_map
            .hosts(partition)
            .expect("validated at config time");
        let flow_row = &self.topology.flow.rows[source.0 as usize];
        let server = pick(
            &self.config.policy,
            &mut self.policy_states[source.0 as usize],
            flow_row,
            eligible,
            self.streams.stream(StreamId::Policy),
        );
        self.policy_states[source.0 as usize].note_forwarded(server);

        let id = QueryId(self.next_query);
        self.next_query += 1;
        self.queries.insert(
            id.0,
            Query {
                id,
                session,
                size_bytes: size,
                source,
                target_partition: partition,
                server,
                created_at: now,
                dispatched_at: now,
                arrived_at: 0.0,
                service_start: 0.0,
                completed_at: 0.0,
            },
        );
        self.conservation.dispatched += 1;
        self.conservation.in_flight += 1;
        fold_dispatch_hash(&mut self.dispatch_hash, now, session);

        let (lat, inv_bw) = self.delay[source.0 as usize][server.0 as usize];
        queue.schedule(now + lat + size * 8.0 * inv_bw, EventKind::QueryArrival(id, server));
    }
}

impl EventHandler for World<'_> {
    fn handle(&mut self, event: &Event, queue: &mut EventQueue) {
        let now = event.time;
        match event.kind {
            EventKind::SessionStart(session) => {
                self.activate(session, now, queue);
                if self.config.workload.session_mode != SessionMode::AlwaysOn
                    && self.config.workload.profile.repetitions_unlimited
                {
                    let gap = self
                        .config
                        .workload
                        .profile
                        .inter_repetition
                        .sample(self.streams.stream(StreamId::InterRepetition));
                    queue.schedule(now + gap, EventKind::SessionRepetition(session));
                }
            }
            EventKind::SessionRepetition(session) => {
                // concurrent pattern: a repetition while active merges into
                // the running state; an idle session restarts
                if !self.sessions[session.0 as usize].active {
                    self.activate(session, now, queue);
                }
                if self.config.workload.profile.repetitions_unlimited {
                    let gap = self
                        .config
                        .workload
                        .profile
                        .inter_repetition
                        .sample(self.streams.stream(StreamId::InterRepetition));
                    queue.schedule(now + gap, EventKind::SessionRepetition(session));
                }
            }
            EventKind::PageRefresh(session, epoch) => {
                if self.session_live(session, epoch) {
                    self.draw_page(session);
                    queue.schedule(
                        now + self.config.workload.page.page_refresh,
                        EventKind::PageRefresh(session, epoch),
                    );
                }
            }
            EventKind::ObjectRefresh(session, epoch) => {
                if !self.session_live(session, epoch) {
                    return;
                }
                if now >= self.active_until[session.0 as usize] {
                    self.sessions[session.0 as usize].active = false;
                    return;
                }
                let mix = self.config.workload.tx.query_mix;
                let carries_query = mix >= 1.0
                    || rand::Rng::gen::<f64>(self.streams.stream(StreamId::QueryMix)) < mix;
                if carries_query {
                    queue.schedule(now, EventKind::QueryDispatch(session));
                }
                let gap = self
                    .config
                    .workload
                    .tx
                    .interarrival
                    .sample(self.streams.stream(StreamId::TxInterarrival));
                queue.schedule(now + gap, EventKind::ObjectRefresh(session, epoch));
            }
            EventKind::QueryDispatch(session) => self.dispatch(session, now, queue),
            EventKind::QueryArrival(id, server) => {
                let query = self.queries.get_mut(&id.0).expect("arrival for unknown query");
                query.arrived_at = now;
                self.conservation.in_flight -= 1;
                self.conservation.queued += 1;
                self.collector.record_arrival(server.0 as usize, now);
                if self.rdbms[server.0 as usize].on_arrival(id) {
                    queue.schedule(now, EventKind::ServiceStart(server));
                }
            }
            EventKind::ServiceStart(server) => {
                let id = self.rdbms[server.0 as usize].on_service_start();
                let query = self.queries.get_mut(&id.0).expect("service for unknown query");
                query.service_start = now;
                self.conservation.queued -= 1;
                self.conservation.in_service += 1;
                let noise = self.config.servers.service_noise;
                let factor = if noise > 0.0 {
                    DistributionSpec::Uniform(1.0 - noise, 1.0 + noise)
                        .sample(self.streams.stream(StreamId::ServiceNoise))
                } else {
                    1.0
                };
                let duration =
                    self.rdbms[server.0 as usize].service_duration(query.size_bytes, factor);
                self.in_service[server.0 as usize] = Some((id, now, duration));
                queue.schedule(now + duration, EventKind::ServiceComplete(id, server));
            }
            EventKind::ServiceComplete(id, server) => {
                let query = self.queries.remove(&id.0).expect("completion for unknown query");
                assert!(
                    self.partition_map.is_hosted_by(query.target_partition, server),
                    "{server} served partition {} it does not host",
                    query.target_partition
                );
                let (_, start, duration) = self.in_service[server.0 as usize]
                    .take()
                    .expect("completion without service record");
                let wait = query.service_start - query.arrived_at;
                let processing = wait + duration;
                self.conservation.in_service -= 1;
                self.conservation.completed += 1;
                self.collector.record_busy(server.0 as usize, start, now);
                // reservoir sampling has its own stream; split the borrow
                let (collector, streams) = (&mut self.collector, &mut self.streams);
                collector.record_processing(
                    server.0 as usize,
                    now,
                    processing,
                    wait,
                    streams.stream(StreamId::Reservoir),
                );
                self.policy_states[query.source.0 as usize].observe_completion(
                    server,
                    processing,
                    self.ewma_alpha,
                );
                if self.rdbms[server.0 as usize].on_service_complete(id, duration) {
                    queue.schedule(now, EventKind::ServiceStart(server));
                }
            }
            EventKind::MetricTick => {
                for (i, server) in self.rdbms.iter().enumerate() {
                    let depth = server.queue_len() + usize::from(server.in_service().is_some());
                    self.collector.record_queue_len(i, now, depth);
                }
                self.conservation.check();
                queue.schedule(now + self.config.run.bucket_width, EventKind::MetricTick);
            }
            EventKind::SimEnd => {
                // close out the busy interval of any query still on a server
                for (i, slot) in self.in_service.iter().enumerate() {
                    if let Some((_, start, duration)) = slot {
                        self.collector.record_busy(i, *start, (start + duration).min(now));
                    }
                }
                self.conservation.check();
            }
        }
    }
}

/// Run one scenario in memory. Deterministic: equal configs and seeds give
/// bit-identical manifests up to the wall-clock field.
pub fn simulate(config: &ScenarioConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let duty_cycle = config.effective_duty_cycle()?;

    let topology = build_topology(&config.topology_params());
    let violations = topology.validate();
    if !violations.is_empty() {
        return Err(SimError::Topology(violations));
    }

    let partition_map = match &config.servers.placement {
        PlacementSpec::OnePerServer => make_partition_map(
            PlacementStrategy::OnePerServer,
            config.servers.count,
            config.servers.partitions,
        )?,
        PlacementSpec::ReplicatedAll => make_partition_map(
            PlacementStrategy::ReplicatedAll,
            config.servers.count,
            config.servers.partitions,
        )?,
        PlacementSpec::Custom(rows) => {
            let hosts = rows
                .iter()
                .map(|hosts| hosts.iter().map(|&h| RdbmsId(h - 1)).collect())
                .collect();
            custom_partition_map(hosts, config.servers.count)?
        }
    };

    let mut streams = RandomStreams::new(config.run.seed);
    let spawned = spawn_sessions(&config.workload.profile, duty_cycle, &topology, &mut streams);
    if spawned.is_empty() {
        return Err(ScenarioError::Validation {
            field: "workload.load".to_string(),
            constraint: "resolves to zero sessions".to_string(),
        }
        .into());
    }

    let mut queue = EventQueue::new();
    let mut olap: Vec<OlapServer> = topology
        .olap_nodes
        .iter()
        .enumerate()
        .map(|(i, _)| OlapServer::new(OlapId(i as u32)))
        .collect();
    let mut sessions = Vec::with_capacity(spawned.len());
    for (session, start) in spawned {
        olap[session.olap.0 as usize].sessions.push(session.id);
        queue.schedule(start, EventKind::SessionStart(session.id));
        sessions.push(session);
    }

    let delay: Vec<Vec<(f64, f64)>> = topology
        .olap_nodes
        .iter()
        .map(|&olap_node| {
            topology
                .rdbms_nodes
                .iter()
                .map(|&rdbms_node| {
                    let path = topology
                        .path(olap_node, rdbms_node)
                        .expect("validated topology is connected");
                    let lat: f64 = path.iter().map(|&l| topology.links[l].latency).sum();
                    let inv_bw: f64 = path.iter().map(|&l| 1.0 / topology.links[l].bandwidth).sum();
                    (lat, inv_bw)
                })
                .collect()
        })
        .collect();

    let rdbms: Vec<RdbmsServer> = (0..config.servers.count)
        .map(|i| {
            RdbmsServer::new(
                RdbmsId(i as u32),
                config.servers.speed_factors[i],
                config.servers.base_service_time,
            )
        })
        .collect();

    let ewma_alpha = match config.policy {
        PolicyKind::ResponseTimeWeighted { ewma_alpha } => ewma_alpha,
        _ => 0.1,
    };
    let olap_count = olap.len();
    let server_count = rdbms.len();
    let mut world = World {
        config,
        topology,
        delay,
        active_until: vec![SimTime::INFINITY; sessions.len()],
        sessions,
        olap,
        policy_states: vec![PolicyState::new(server_count); olap_count],
        rdbms,
        in_service: vec![None; server_count],
        partition_map,
        streams,
        collector: Collector::new(server_count, config.run.bucket_width, config.run.warmup),
        conservation: Conservation::default(),
        queries: HashMap::new(),
        next_query: 0,
        ewma_alpha,
        dispatch_hash: DISPATCH_HASH_OFFSET,
    };

    queue.schedule(config.run.bucket_width, EventKind::MetricTick);

    let started = Instant::now();
    let run = queue.run(
        RunLimits {
            max_events: config.run.max_events,
            end_time: config.run.end_time,
        },
        &mut world,
    );
    let wall_clock_s = started.elapsed().as_secs_f64();

    let horizon = config.run.end_time.unwrap_or(run.final_time);
    let summary = world.collector.summarize(horizon);
    let evenness_cv = if summary.per_server.len() >= 2 {
        summary.evenness_of(|s| s.arrivals_total as f64).ok()
    } else {
        None
    };
    let event_counts = (0..EventKind::COUNT)
        .map(|i| (EventKind::name(i).to_string(), run.counts_by_kind[i]))
        .collect();

    let manifest = RunManifest {
        scenario_id: config.run.id.clone(),
        config_hash: config.hash(),
        seed: config.run.seed,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        events_processed: run.events_processed,
        event_counts,
        final_time_s: run.final_time,
        wall_clock_s,
        trace_hash: format!("{:016x}", run.trace_hash),
        dispatch_hash: format!("{:016x}", world.dispatch_hash),
        conservation: world.conservation,
        olap_http_bytes: world.olap.iter().map(|o| o.http_bytes_served).collect(),
        mean_wait_s: summary.mean_wait(),
        utilization_spread: summary.utilization_spread(),
        evenness_cv,
        summary,
    };

    Ok(SimOutput {
        manifest,
        collector: world.collector,
        run,
    })
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SimError + '_ {
    move |source| SimError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Per-bucket mean processing time, derived from sums and counts.
fn mean_processing_series(collector: &Collector) -> metrics::SeriesSet {
    let mut out = metrics::SeriesSet::new(
        collector.processing_sum.servers(),
        collector.processing_sum.width,
    );
    for server in 0..collector.processing_sum.servers() {
        for bucket in 0..collector.processing_sum.max_bucket() {
            let count = collector.completions.value(server, bucket);
            if count > 0.0 {
                let mean = collector.processing_sum.value(server, bucket) / count;
                out.add(server, bucket as f64 * out.width, mean);
            }
        }
    }
    out
}

/// Run a scenario and write its artifacts under `out_root/<scenario id>/`:
/// one CSV per statistic, the two SVG charts, and `manifest.json` (written
/// atomically). Re-running the same config and seed rewrites identical
/// bytes.
pub fn run_scenario(config: &ScenarioConfig, out_root: &Path) -> Result<RunManifest, SimError> {
    let output = simulate(config)?;
    let dir = out_root.join(&config.run.id);
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    let collector = &output.collector;
    metrics::export_csv(&collector.arrivals, &dir.join("arrival_rate.csv"))?;
    let processing = mean_processing_series(collector);
    metrics::export_csv(&processing, &dir.join("processing_time.csv"))?;
    metrics::export_csv(&collector.busy, &dir.join("utilization.csv"))?;
    metrics::export_csv(&collector.queue_len, &dir.join("queue_length.csv"))?;
    metrics::export_svg(
        &collector.arrivals,
        "query arrivals per second",
        &dir.join("arrival_rate.svg"),
    )?;
    metrics::export_svg(
        &processing,
        "query task processing time (s)",
        &dir.join("processing_time.svg"),
    )?;

    let manifest_path = dir.join("manifest.json");
    let tmp_path = dir.join("manifest.json.tmp");
    let json = serde_json::to_string_pretty(&output.manifest).expect("manifest serializes");
    std::fs::write(&tmp_path, json).map_err(io_err(&tmp_path))?;
    std::fs::rename(&tmp_path, &manifest_path).map_err(io_err(&manifest_path))?;
    Ok(output.manifest)
}
