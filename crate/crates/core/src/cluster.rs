//! Server-side behavior: OLAP application servers forwarding transactions
//! toward partitions, RDBMS servers modeled as FIFO queueing stations with
//! a configurable speed factor, and the partition-to-server placement map.
//!
//! Service time for a query is
//! `base_service_time * (size / reference_size) / speed_factor`, so cost
//! scales linearly with the bytes a query touches. There is no service
//! randomness by default; a multiplicative noise factor can be enabled for
//! sensitivity runs.

use std::collections::VecDeque;

use thiserror::Error;

use crate::engine::{QueryId, RdbmsId, SessionId, SimTime};

/// Query bytes that cost exactly `base_service_time` on a speed-1 server.
pub const REFERENCE_QUERY_BYTES: f64 = 10_240.0;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("partition {0} has no hosting server")]
    NoEligibleServer(usize),
    #[error("one-per-server placement needs equal counts, got {servers} servers and {partitions} partitions")]
    ShapeMismatch { servers: usize, partitions: usize },
}

/// Partition id -> hosting servers (replicas), each list sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMap {
    hosts: Vec<Vec<RdbmsId>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PlacementStrategy {
    /// Partition i on server i; requires equal counts.
    OnePerServer,
    /// Every partition on every server, so routing alone decides the split.
    ReplicatedAll,
}

pub fn make_partition_map(
    strategy: PlacementStrategy,
    servers: usize,
    partitions: usize,
) -> Result<PartitionMap, ClusterError> {
    assert!(servers >= 1 && partitions >= 1);
    match strategy {
        PlacementStrategy::OnePerServer => {
            if servers != partitions {
                return Err(ClusterError::ShapeMismatch { servers, partitions });
            }
            Ok(PartitionMap {
                hosts: (0..partitions).map(|i| vec![RdbmsId(i as u32)]).collect(),
            })
        }
        PlacementStrategy::ReplicatedAll => {
            let all: Vec<RdbmsId> = (0..servers as u32).map(RdbmsId).collect();
            Ok(PartitionMap {
                hosts: vec![all; partitions],
            })
        }
    }
}

pub fn custom_partition_map(
    hosts: Vec<Vec<RdbmsId>>,
    servers: usize,
) -> Result<PartitionMap, ClusterError> {
    let map = PartitionMap { hosts };
    for (partition, hosting) in map.hosts.iter().enumerate() {
        if hosting.is_empty() {
            return Err(ClusterError::NoEligibleServer(partition));
        }
    }
    for server in 0..servers as u32 {
        let placed = map.hosts.iter().any(|h| h.contains(&RdbmsId(server)));
        if !placed {
            return Err(ClusterError::ShapeMismatch {
                servers,
                partitions: map.hosts.len(),
            });
        }
    }
    Ok(map)
}

impl PartitionMap {
    pub fn partitions(&self) -> usize {
        self.hosts.len()
    }

    pub fn hosts(&self, partition: usize) -> Result<&[RdbmsId], ClusterError> {
        match self.hosts.get(partition) {
            Some(h) if !h.is_empty() => Ok(h),
            _ => Err(ClusterError::NoEligibleServer(partition)),
        }
    }

    pub fn is_hosted_by(&self, partition: usize, server: RdbmsId) -> bool {
        self.hosts
            .get(partition)
            .is_some_and(|h| h.contains(&server))
    }
}

/// One query in flight through the array.
#[derive(Debug, Clone, Copy)]
pub struct Query {
    pub id: QueryId,
    pub session: SessionId,
    pub size_bytes: f64,
    pub source: crate::engine::OlapId,
    pub target_partition: usize,
    pub server: RdbmsId,
    pub created_at: SimTime,
    pub dispatched_at: SimTime,
    pub arrived_at: SimTime,
    pub service_start: SimTime,
    pub completed_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ServerPhase {
    Idle,
    /// A `ServiceStart` event is scheduled but not yet processed.
    StartPending,
    Busy,
}

/// An RDBMS server: FIFO queue plus the service-time model.
#[derive(Debug, Clone)]
pub struct RdbmsServer {
    pub id: RdbmsId,
    pub speed_factor: f64,
    pub base_service_time: SimTime,
    queue: VecDeque<QueryId>,
    phase: ServerPhase,
    in_service: Option<QueryId>,
    /// Cumulative seconds spent serving since t=0.
    pub busy_time: SimTime,
    pub arrivals: u64,
    pub completions: u64,
}

impl RdbmsServer {
    pub fn new(id: RdbmsId, speed_factor: f64, base_service_time: SimTime) -> Self {
        assert!(speed_factor > 0.0);
        Self {
            id,
            speed_factor,
            base_service_time,
            queue: VecDeque::new(),
            phase: ServerPhase::Idle,
            in_service: None,
            busy_time: 0.0,
            arrivals: 0,
            completions: 0,
        }
    }

    /// Deterministic service duration for a query of `size_bytes`;
    /// `noise` is a multiplicative factor (1.0 when noise is disabled).
    pub fn service_duration(&self, size_bytes: f64, noise: f64) -> SimTime {
        self.base_service_time * (size_bytes / REFERENCE_QUERY_BYTES) / self.speed_factor * noise
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_busy(&self) -> bool {
        self.phase == ServerPhase::Busy
    }

    pub fn in_service(&self) -> Option<QueryId> {
        self.in_service
    }

    /// Enqueue an arriving query. Returns true when the caller must
    /// schedule a `ServiceStart` now (server was idle).
    pub fn on_arrival(&mut self, query: QueryId) -> bool {
        self.arrivals += 1;
        self.queue.push_back(query);
        if self.phase == ServerPhase::Idle {
            self.phase = ServerPhase::StartPending;
            true
        } else {
            false
        }
    }

    /// Take the head of the queue into service. Returns the query to serve;
    /// the caller computes the duration and schedules the completion.
    pub fn on_service_start(&mut self) -> QueryId {
        assert_eq!(self.phase, ServerPhase::StartPending, "{}: spurious service start", self.id);
        let query = self.queue.pop_front().expect("start scheduled for empty queue");
        self.phase = ServerPhase::Busy;
        self.in_service = Some(query);
        query
    }

    /// Finish the in-service query. Returns true when the caller must
    /// schedule the next `ServiceStart` (queue non-empty).
    pub fn on_service_complete(&mut self, query: QueryId, service_duration: SimTime) -> bool {
        assert_eq!(self.in_service, Some(query), "{}: completion for wrong query", self.id);
        self.in_service = None;
        self.completions += 1;
        self.busy_time += service_duration;
        if self.queue.is_empty() {
            self.phase = ServerPhase::Idle;
            false
        } else {
            self.phase = ServerPhase::StartPending;
            true
        }
    }

    /// Busy fraction over a measurement window, in `[0, 1]`. Windowed
    /// (post-warmup) utilization comes from the metrics busy series; this
    /// is the whole-run figure.
    pub fn utilization(&self, window: SimTime) -> f64 {
        assert!(window > 0.0);
        (self.busy_time / window).min(1.0)
    }
}

/// An OLAP application server: the sessions it serves plus per-policy
/// forwarding state (held separately by the simulation, keyed by this id).
#[derive(Debug, Clone)]
pub struct OlapServer {
    pub id: crate::engine::OlapId,
    pub sessions: Vec<SessionId>,
    pub http_bytes_served: f64,
}

impl OlapServer {
    pub fn new(id: crate::engine::OlapId) -> Self {
        Self {
            id,
            sessions: Vec::new(),
            http_bytes_served: 0.0,
        }
    }
}

/// Query-lifecycle counters; the books must balance at every instant.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct Conservation {
    pub dispatched: u64,
    pub completed: u64,
    pub in_flight: u64,
    pub queued: u64,
    pub in_service: u64,
}

impl Conservation {
    pub fn check(&self) {
        assert!(
            self.dispatched == self.completed + self.in_flight + self.queued + self.in_service,
            "conservation violated: {self:?}"
        );
    }

    pub fn in_system(&self) -> u64 {
        self.in_flight + self.queued + self.in_service
    }
}
