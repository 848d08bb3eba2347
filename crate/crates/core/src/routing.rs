//! Pluggable server-selection policies, from the static flow-weighted
//! split to response-time-aware routing that steers load away from slow
//! servers.
//!
//! Policy state lives per OLAP server: there is no shared global balancer,
//! so each forwarder works only from what it has itself observed.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

use crate::engine::RdbmsId;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyKind {
    /// Weighted random choice over the flow-table row, renormalized to the
    /// eligible set.
    FlowWeighted,
    RoundRobin,
    /// Fewest outstanding queries, ties to the lowest server id.
    LeastOutstanding,
    /// Weighted random choice with weight proportional to 1/EWMA of the
    /// observed processing time; servers with no observation yet get the
    /// mean weight of the observed ones.
    ResponseTimeWeighted { ewma_alpha: f64 },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::FlowWeighted => "flow_weighted",
            PolicyKind::RoundRobin => "round_robin",
            PolicyKind::LeastOutstanding => "least_outstanding",
            PolicyKind::ResponseTimeWeighted { .. } => "response_time_weighted",
        }
    }
}

/// One OLAP server's forwarding scratch state.
#[derive(Debug, Clone)]
pub struct PolicyState {
    /// Last server id picked by round-robin (picks continue in id order).
    cursor: Option<u32>,
    outstanding: Vec<u64>,
    ewma: Vec<Option<f64>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("steady-share fixed point did not converge after {0} iterations")]
    NonConvergence(usize),
}

impl PolicyState {
    pub fn new(rdbms_count: usize) -> Self {
        Self {
            cursor: None,
            outstanding: vec![0; rdbms_count],
            ewma: vec![None; rdbms_count],
        }
    }

    pub fn outstanding(&self, server: RdbmsId) -> u64 {
        self.outstanding[server.0 as usize]
    }

    pub fn ewma(&self, server: RdbmsId) -> Option<f64> {
        self.ewma[server.0 as usize]
    }

    /// Record that a query was forwarded to `server`.
    pub fn note_forwarded(&mut self, server: RdbmsId) {
        self.outstanding[server.0 as usize] += 1;
    }

    /// Fold one observed processing time into the per-server estimate and
    /// release the outstanding slot. Decrementing below zero means the
    /// caller lost track of a query, which is a fatal accounting bug.
    pub fn observe_completion(&mut self, server: RdbmsId, processing_time: f64, alpha: f64) {
        let idx = server.0 as usize;
        assert!(
            self.outstanding[idx] > 0,
            "outstanding count for {server} would drop below zero"
        );
        assert!(processing_time > 0.0);
        self.outstanding[idx] -= 1;
        self.ewma[idx] = Some(match self.ewma[idx] {
            None => processing_time,
            Some(prev) => alpha * processing_time + (1.0 - alpha) * prev,
        });
    }
}

/// Choose one server from the eligible set (never empty; the caller
/// enforces partition eligibility before asking).
pub fn pick(
    policy: &PolicyKind,
    state: &mut PolicyState,
    flow_row: &[f64],
    eligible: &[RdbmsId],
    rng: &mut ChaCha12Rng,
) -> RdbmsId {
    debug_assert!(!eligible.is_empty());
    if eligible.len() == 1 {
        let chosen = eligible[0];
        if let PolicyKind::RoundRobin = policy {
            state.cursor = Some(chosen.0);
        }
        return chosen;
    }
    match policy {
        PolicyKind::FlowWeighted => {
            let weights: Vec<f64> = eligible.iter().map(|s| flow_row[s.0 as usize]).collect();
            eligible[weighted_choice(&weights, rng)]
        }
        PolicyKind::RoundRobin => {
            // next eligible id strictly after the cursor, wrapping
            let chosen = match state.cursor {
                None => eligible[0],
                Some(last) => *eligible
                    .iter()
                    .find(|s| s.0 > last)
                    .unwrap_or(&eligible[0]),
            };
            state.cursor = Some(chosen.0);
            chosen
        }
        PolicyKind::LeastOutstanding => *eligible
            .iter()
            .min_by_key(|s| (state.outstanding[s.0 as usize], s.0))
            .unwrap(),
        PolicyKind::ResponseTimeWeighted { .. } => {
            let observed: Vec<f64> = eligible
                .iter()
                .filter_map(|s| state.ewma[s.0 as usize])
                .map(|t| 1.0 / t)
                .collect();
            let fallback = if observed.is_empty() {
                1.0
            } else {
                observed.iter().sum::<f64>() / observed.len() as f64
            };
            let weights: Vec<f64> = eligible
                .iter()
                .map(|s| state.ewma[s.0 as usize].map_or(fallback, |t| 1.0 / t))
                .collect();
            eligible[weighted_choice(&weights, rng)]
        }
    }
}

fn weighted_choice(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        // all-zero row after renormalization: fall back to the first entry
        return 0;
    }
    let mut x = rng.gen_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        x -= w;
        if x < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

const STEADY_SHARE_MAX_ITERS: usize = 10_000;

/// Predicted long-run per-server share vector.
///
/// For the flow-weighted policy this is just the weight row. For
/// response-time-weighted routing it is the fixed point of
/// `share ∝ 1 / expected processing time` with service time inversely
/// proportional to speed (the light-load prediction), iterated to 1e-9.
pub fn steady_share(policy: &PolicyKind, speed_factors: &[f64], flow_row: &[f64])
    -> Result<Vec<f64>, RoutingError>
{
    match policy {
        PolicyKind::FlowWeighted => Ok(flow_row.to_vec()),
        PolicyKind::ResponseTimeWeighted { .. } => {
            let expected_time: Vec<f64> = speed_factors.iter().map(|&s| 1.0 / s).collect();
            let n = expected_time.len() as f64;
            let mut share = vec![1.0 / n; expected_time.len()];
            for _ in 0..STEADY_SHARE_MAX_ITERS {
                let raw: Vec<f64> = expected_time.iter().map(|&t| 1.0 / t).collect();
                let total: f64 = raw.iter().sum();
                let next: Vec<f64> = raw.iter().map(|&w| w / total).collect();
                let delta = share
                    .iter()
                    .zip(&next)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                share = next;
                if delta < 1e-9 {
                    return Ok(share);
                }
            }
            Err(RoutingError::NonConvergence(STEADY_SHARE_MAX_ITERS))
        }
        _ => Ok(flow_row.to_vec()),
    }
}
