//! OLAP load generation: session lifecycle, dashboard page/object traffic,
//! and the per-transaction sizing that turns dashboard refreshes into
//! database query load.
//!
//! Each active session issues one database transaction per object-refresh
//! interval and redraws its page layout (object count and sizes) on every
//! page refresh. Aggregate offered load is calibrated through a duty
//! cycle: the fraction of provisioned users whose dashboard is open. The
//! reference scenario keeps calibrated sessions always on, which matches
//! the flat steady load the array is sized against; an on/off mode with
//! exponentially distributed re-activation exists for burstier studies.

use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution as _;
use thiserror::Error;

use crate::engine::{DistributionSpec, OlapId, RandomStreams, SessionId, SimTime, StreamId};
use crate::topology::Topology;

/// Session profile timing. Defaults: start uniform(50, 55) plus an offset
/// of uniform(5, 10), unlimited concurrent repetitions with exponential(300)
/// inter-repetition gaps.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub start_time: DistributionSpec,
    pub start_offset: DistributionSpec,
    pub inter_repetition: DistributionSpec,
    pub repetitions_unlimited: bool,
    pub pattern: RepetitionPattern,
}

/// Overlapping repetitions merge into one active state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepetitionPattern {
    Concurrent,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            start_time: DistributionSpec::Uniform(50.0, 55.0),
            start_offset: DistributionSpec::Uniform(5.0, 10.0),
            inter_repetition: DistributionSpec::Exponential { mean: 300.0 },
            repetitions_unlimited: true,
            pattern: RepetitionPattern::Concurrent,
        }
    }
}

/// Dashboard page structure: 7..=10 objects of 5120..10240 bytes,
/// refreshed object-by-object every second and page-wide every 10 seconds
/// (ten object refreshes per page redraw).
#[derive(Debug, Clone, PartialEq)]
pub struct PageModel {
    pub objects_per_page: DistributionSpec,
    pub object_size: DistributionSpec,
    pub object_refresh: SimTime,
    pub page_refresh: SimTime,
}

impl Default for PageModel {
    fn default() -> Self {
        Self {
            objects_per_page: DistributionSpec::Uniform(7.0, 10.0),
            object_size: DistributionSpec::Uniform(5120.0, 10240.0),
            object_refresh: 1.0,
            page_refresh: 10.0,
        }
    }
}

/// Database transaction stream: all transactions are queries, issued once
/// per second at 10240 bytes each.
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionModel {
    pub query_mix: f64,
    pub interarrival: DistributionSpec,
    pub size: DistributionSpec,
}

impl Default for TransactionModel {
    fn default() -> Self {
        Self {
            query_mix: 1.0,
            interarrival: DistributionSpec::Constant(1.0),
            size: DistributionSpec::Constant(10_240.0),
        }
    }
}

/// Whether sessions stay on for the whole run or alternate on/off periods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SessionMode {
    AlwaysOn,
    /// Active for an exponential period with the given mean, then idle
    /// until an inter-repetition timer re-activates.
    OnOff { mean_on: SimTime },
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: SessionId,
    pub lan: usize,
    pub olap: OlapId,
    pub active: bool,
    pub duty_cycle: f64,
    /// Bumped at each activation boundary so stale refresh ticks are dropped.
    pub epoch: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum WorkloadError {
    #[error("target aggregate {target} q/s needs duty cycle {required:.4} > 1 ({users} users at {per_session} q/s each)")]
    Infeasible {
        target: f64,
        users: u32,
        per_session: f64,
        required: f64,
    },
}

/// Duty cycle that makes `users` sessions offer `target_aggregate` queries
/// per second in aggregate, given the per-session transaction cadence.
pub fn calibrate_duty_cycle(
    target_aggregate: f64,
    users: u32,
    tx: &TransactionModel,
) -> Result<f64, WorkloadError> {
    assert!(target_aggregate > 0.0 && users > 0);
    let per_session = 1.0 / tx.interarrival.mean();
    let required = target_aggregate / (f64::from(users) * per_session);
    if required > 1.0 {
        return Err(WorkloadError::Infeasible {
            target: target_aggregate,
            users,
            per_session,
            required,
        });
    }
    Ok(required)
}

fn round_half_up(x: f64) -> u32 {
    (x + 0.5).floor() as u32
}

/// Create one session per `users * duty_cycle` (rounded half-up) per LAN,
/// each with a sampled start time and an OLAP server assigned round-robin
/// over the LAN's destination preferences. Returns sessions with their
/// start times, in creation order.
pub fn spawn_sessions(
    profile: &ProfileConfig,
    duty_cycle: f64,
    topology: &Topology,
    streams: &mut RandomStreams,
) -> Vec<(Session, SimTime)> {
    assert!(duty_cycle > 0.0 && duty_cycle <= 1.0);
    let mut sessions = Vec::new();
    for (lan_pos, &lan_node) in topology.lan_nodes.iter().enumerate() {
        let users = match topology.nodes[lan_node].kind {
            crate::topology::NodeKind::LanSegment { users } => users,
            _ => unreachable!("lan_nodes always index LAN segments"),
        };
        let count = round_half_up(f64::from(users) * duty_cycle);
        let prefs = &topology.client_prefs[lan_pos];
        for k in 0..count {
            let olap_node = prefs[k as usize % prefs.len()];
            let olap_pos = topology
                .olap_nodes
                .iter()
                .position(|&n| n == olap_node)
                .expect("preference lists only name OLAP servers");
            let start = profile.start_time.sample(streams.stream(StreamId::SessionStart))
                + profile.start_offset.sample(streams.stream(StreamId::SessionStart));
            let id = SessionId(sessions.len() as u32);
            sessions.push((
                Session {
                    id,
                    lan: lan_pos,
                    olap: OlapId(olap_pos as u32),
                    active: false,
                    duty_cycle,
                    epoch: 0,
                },
                start,
            ));
        }
    }
    sessions
}

/// How queries spread over warehouse partitions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionSkew {
    Uniform,
    /// Zipf with exponent `s`: partition 0 most popular.
    Zipf { s: f64 },
}

pub fn assign_partition(
    skew: PartitionSkew,
    partition_count: usize,
    rng: &mut ChaCha12Rng,
) -> usize {
    assert!(partition_count >= 1);
    if partition_count == 1 {
        return 0;
    }
    match skew {
        PartitionSkew::Uniform => rand::Rng::gen_range(rng, 0..partition_count),
        PartitionSkew::Zipf { s } => {
            let zipf = rand_distr::Zipf::new(partition_count as u64, s)
                .expect("validated at config time");
            zipf.sample(rng) as usize - 1
        }
    }
}
