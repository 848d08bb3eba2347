//! Deterministic discrete-event simulator for business-intelligence query
//! load on a cloud-hosted, massively parallel database array.
//!
//! Thousands of dashboard sessions on corporate LAN segments drive OLAP
//! application servers, which fan heavy per-second query transactions onto
//! an array of RDBMS servers, each hosting one or more warehouse
//! partitions. The simulator measures per-server query arrival rates,
//! processing times and utilization, checks cross-server evenness, and
//! validates its queueing behavior against closed-form oracles.
//!
//! Runs are fully deterministic for a given scenario and seed (pinned
//! ChaCha12 random streams, one per stochastic concern). Individual runs
//! are single-threaded; parameter sweeps fan out across a rayon pool when
//! the `parallel` feature (default) is enabled.

pub mod cli;
pub mod cluster;
pub mod engine;
pub mod metrics;
pub mod routing;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod topology;
pub mod workload;

pub use engine::{DistributionSpec, Event, EventKind, EventQueue, RandomStreams, StreamId};
pub use scenario::ScenarioConfig;
pub use sim::{run_scenario, simulate, RunManifest, SimOutput};
