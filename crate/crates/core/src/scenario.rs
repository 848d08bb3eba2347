//! Scenario files: a flat, sectioned key=value format with typed values
//! (numbers, distribution constructors like `uniform(50, 55)`, lists).
//!
//! Every key has a default and the empty file resolves to the reference
//! scenario: the 6x500-user extranet, 4 application servers, an array of 8
//! equal-speed database servers with fully replicated partitions, even
//! flow weights, and aggregate load calibrated to 320 queries/second.
//! Later assignments win, so overrides can simply be appended.
//!
//! [`ScenarioConfig::canonical_text`] dumps the resolved config in a fixed
//! key order; the dump re-parses to the same config, and its SHA-256 is
//! the config hash (stable across comment and whitespace edits).

use sha2::{Digest, Sha256};
use thiserror::Error;


use crate::engine::DistributionSpec;
use crate::routing::PolicyKind;
use crate::topology::{TopologyParams, FLOW_SUM_TOLERANCE};
use crate::workload::{
    calibrate_duty_cycle, PageModel, PartitionSkew, ProfileConfig, SessionMode, TransactionModel,
};

pub const DEFAULT_MAX_EVENTS: u64 = 50_000_000;
pub const DEFAULT_TARGET_AGGREGATE: f64 = 320.0;
pub const DEFAULT_WARMUP: f64 = 100.0;

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid {field}: {constraint}")]
    Validation { field: String, constraint: String },
}

fn invalid(field: &str, constraint: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.to_string(),
        constraint: constraint.into(),
    }
}

/// How aggregate offered load is specified.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LoadSpec {
    DutyCycle(f64),
    /// Queries per second across the whole array; resolved to a duty cycle
    /// against the provisioned user count.
    TargetAggregate(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadConfig {
    pub profile: ProfileConfig,
    pub page: PageModel,
    pub tx: TransactionModel,
    pub load: LoadSpec,
    pub partition_skew: PartitionSkew,
    pub session_mode: SessionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlacementSpec {
    OnePerServer,
    ReplicatedAll,
    /// Partition -> 1-based server ids.
    Custom(Vec<Vec<u32>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub count: usize,
    pub speed_factors: Vec<f64>,
    pub base_service_time: f64,
    pub service_noise: f64,
    pub placement: PlacementSpec,
    pub partitions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub id: String,
    pub seed: u64,
    pub max_events: u64,
    pub end_time: Option<f64>,
    pub warmup: f64,
    pub bucket_width: f64,
    pub output_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub topology: TopologyParams,
    pub workload: WorkloadConfig,
    pub servers: ServerConfig,
    pub policy: PolicyKind,
    pub run: RunConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            topology: TopologyParams::default(),
            workload: WorkloadConfig {
                profile: ProfileConfig::default(),
                page: PageModel::default(),
                tx: TransactionModel::default(),
                load: LoadSpec::TargetAggregate(DEFAULT_TARGET_AGGREGATE),
                partition_skew: PartitionSkew::Uniform,
                session_mode: SessionMode::AlwaysOn,
            },
            servers: ServerConfig {
                count: 8,
                speed_factors: vec![1.0; 8],
                base_service_time: 0.020,
                service_noise: 0.0,
                placement: PlacementSpec::ReplicatedAll,
                partitions: 8,
            },
            policy: PolicyKind::FlowWeighted,
            run: RunConfig {
                id: "reference".to_string(),
                seed: 1,
                max_events: DEFAULT_MAX_EVENTS,
                end_time: None,
                warmup: DEFAULT_WARMUP,
                bucket_width: 1.0,
                output_dir: None,
            },
        }
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let entries = parse_raw(text)?;
        let mut config = ScenarioConfig::default();
        let mut explicit_speed_factors = false;
        let mut flow_rows: Vec<(usize, Vec<f64>, usize)> = Vec::new();
        for entry in &entries {
            apply(
                &mut config,
                entry,
                &mut explicit_speed_factors,
                &mut flow_rows,
            )?;
        }
        if !explicit_speed_factors {
            config.servers.speed_factors = vec![1.0; config.servers.count];
        }
        if !flow_rows.is_empty() {
            let mut rows = vec![
                vec![1.0 / config.servers.count as f64; config.servers.count];
                config.topology.olap_servers
            ];
            for (row_idx, row, line) in flow_rows {
                if row_idx == 0 || row_idx > rows.len() {
                    return Err(ScenarioError::Parse {
                        line,
                        message: format!(
                            "flow_row_{row_idx} out of range for {} OLAP servers",
                            rows.len()
                        ),
                    });
                }
                rows[row_idx - 1] = row;
            }
            config.topology.flow_rows = Some(rows);
        }
        config.validate()?;
        Ok(config)
    }

    /// Topology build parameters with the database-server count taken from
    /// the servers section (the single source of truth for array size).
    pub fn topology_params(&self) -> TopologyParams {
        TopologyParams {
            rdbms_servers: self.servers.count,
            ..self.topology.clone()
        }
    }

    /// Negated comparisons are deliberate: NaN values must fail too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let t = &self.topology;
        if t.lans == 0 {
            return Err(invalid("topology.lans", "must be at least 1"));
        }
        if t.gateways == 0 {
            return Err(invalid("topology.gateways", "must be at least 1"));
        }
        if t.olap_servers == 0 {
            return Err(invalid("topology.olap_servers", "must be at least 1"));
        }
        if t.users_per_lan == 0 {
            return Err(invalid("topology.users_per_lan", "must be at least 1"));
        }
        for (field, value) in [
            ("topology.cloud_bandwidth", t.cloud_bandwidth),
            ("topology.extranet_bandwidth", t.extranet_bandwidth),
        ] {
            if !(value > 0.0) {
                return Err(invalid(field, "must be positive"));
            }
        }
        for (field, value) in [
            ("topology.cloud_latency", t.cloud_latency),
            ("topology.extranet_latency", t.extranet_latency),
        ] {
            if value < 0.0 {
                return Err(invalid(field, "must be non-negative"));
            }
        }
        if let Some(rows) = &t.flow_rows {
            for (i, row) in rows.iter().enumerate() {
                let field = format!("topology.flow_row_{}", i + 1);
                if row.len() != self.servers.count {
                    return Err(invalid(
                        &field,
                        format!("needs {} weights, got {}", self.servers.count, row.len()),
                    ));
                }
                if row.iter().any(|&w| w < 0.0) {
                    return Err(invalid(&field, "weights must be non-negative"));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > FLOW_SUM_TOLERANCE {
                    return Err(invalid(&field, format!("weights sum to {sum}, not 1")));
                }
            }
        }

        let w = &self.workload;
        for (field, dist) in [
            ("workload.start_time", &w.profile.start_time),
            ("workload.start_offset", &w.profile.start_offset),
            ("workload.inter_repetition", &w.profile.inter_repetition),
            ("workload.objects_per_page", &w.page.objects_per_page),
            ("workload.object_size", &w.page.object_size),
            ("workload.interarrival", &w.tx.interarrival),
            ("workload.transaction_size", &w.tx.size),
        ] {
            dist.validate()
                .map_err(|e| invalid(field, e.to_string()))?;
        }
        if matches!(w.page.objects_per_page, DistributionSpec::Exponential { .. }) {
            return Err(invalid(
                "workload.objects_per_page",
                "must be constant or uniform (integer-valued)",
            ));
        }
        if !(w.page.object_refresh > 0.0) {
            return Err(invalid("workload.object_refresh", "must be positive"));
        }
        let ratio = w.page.page_refresh / w.page.object_refresh;
        if !(w.page.page_refresh > 0.0) || (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(invalid(
                "workload.page_refresh",
                "object_refresh must divide page_refresh",
            ));
        }
        if !(0.0..=1.0).contains(&w.tx.query_mix) {
            return Err(invalid("workload.query_mix", "must lie in [0, 1]"));
        }
        if !(w.tx.interarrival.mean() > 0.0) {
            return Err(invalid("workload.interarrival", "mean must be positive"));
        }
        if !(w.tx.size.mean() > 0.0) {
            return Err(invalid("workload.transaction_size", "mean must be positive"));
        }
        match w.load {
            LoadSpec::DutyCycle(d) => {
                if !(d > 0.0 && d <= 1.0) {
                    return Err(invalid("workload.load", "duty cycle must lie in (0, 1]"));
                }
            }
            LoadSpec::TargetAggregate(target) => {
                if !(target > 0.0) {
                    return Err(invalid("workload.load", "target aggregate must be positive"));
                }
            }
        }
        if let PartitionSkew::Zipf { s } = w.partition_skew {
            if !(s > 0.0) {
                return Err(invalid("workload.partition_skew", "zipf exponent must be positive"));
            }
        }
        if let SessionMode::OnOff { mean_on } = w.session_mode {
            if !(mean_on > 0.0) {
                return Err(invalid("workload.session_mode", "mean on-duration must be positive"));
            }
        }

        let s = &self.servers;
        if s.count == 0 {
            return Err(invalid("servers.count", "must be at least 1"));
        }
        if s.speed_factors.len() != s.count {
            return Err(invalid(
                "servers.speed_factors",
                format!("needs {} entries, got {}", s.count, s.speed_factors.len()),
            ));
        }
        if s.speed_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(invalid("servers.speed_factors", "factors must be positive"));
        }
        if !(s.base_service_time > 0.0) {
            return Err(invalid("servers.base_service_time", "must be positive"));
        }
        if !(0.0..1.0).contains(&s.service_noise) {
            return Err(invalid("servers.service_noise", "must lie in [0, 1)"));
        }
        if s.partitions == 0 {
            return Err(invalid("servers.partitions", "must be at least 1"));
        }
        match &s.placement {
            PlacementSpec::OnePerServer => {
                if s.partitions != s.count {
                    return Err(invalid(
                        "servers.placement",
                        format!(
                            "one_per_server needs partitions == count, got {} and {}",
                            s.partitions, s.count
                        ),
                    ));
                }
            }
            PlacementSpec::Custom(map) => {
                if map.len() != s.partitions {
                    return Err(invalid(
                        "servers.partition_map",
                        format!("needs {} partitions, got {}", s.partitions, map.len()),
                    ));
                }
                for (p, hosts) in map.iter().enumerate() {
                    if hosts.is_empty() {
                        return Err(invalid(
                            "servers.partition_map",
                            format!("partition {} has no hosting server", p + 1),
                        ));
                    }
                    for &h in hosts {
                        if h == 0 || h as usize > s.count {
                            return Err(invalid(
                                "servers.partition_map",
                                format!("server id {h} out of range 1..={}", s.count),
                            ));
                        }
                    }
                }
                for server in 1..=s.count as u32 {
                    if !map.iter().any(|hosts| hosts.contains(&server)) {
                        return Err(invalid(
                            "servers.partition_map",
                            format!("server {server} hosts no partition"),
                        ));
                    }
                }
            }
            PlacementSpec::ReplicatedAll => {}
        }

        if let PolicyKind::ResponseTimeWeighted { ewma_alpha } = self.policy {
            if !(ewma_alpha > 0.0 && ewma_alpha <= 1.0) {
                return Err(invalid("routing.policy", "ewma alpha must lie in (0, 1]"));
            }
        }

        let r = &self.run;
        if r.max_events == 0 {
            return Err(invalid("run.max_events", "must be at least 1"));
        }
        if let Some(end) = r.end_time {
            if !(end > 0.0) {
                return Err(invalid("run.end_time", "must be positive"));
            }
        }
        if r.warmup < 0.0 {
            return Err(invalid("run.warmup", "must be non-negative"));
        }
        if !(r.bucket_width > 0.0) {
            return Err(invalid("run.bucket_width", "must be positive"));
        }
        if r.id.is_empty() {
            return Err(invalid("run.id", "must not be empty"));
        }

        // calibration feasibility is a config-time property
        self.effective_duty_cycle()?;
        Ok(())
    }

    pub fn total_users(&self) -> u32 {
        self.topology.users_per_lan * self.topology.lans as u32
    }

    /// Duty cycle after resolving a target-aggregate calibration.
    pub fn effective_duty_cycle(&self) -> Result<f64, ScenarioError> {
        match self.workload.load {
            LoadSpec::DutyCycle(d) => Ok(d),
            LoadSpec::TargetAggregate(target) => {
                calibrate_duty_cycle(target, self.total_users(), &self.workload.tx)
                    .map_err(|e| invalid("workload.load", e.to_string()))
            }
        }
    }

    /// Resolved dump in fixed key order; re-parses to an equal config.
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        let t = &self.topology;
        out.push_str("[topology]\n");
        out.push_str(&format!("lans = {}\n", t.lans));
        out.push_str(&format!("users_per_lan = {}\n", t.users_per_lan));
        out.push_str(&format!("gateways = {}\n", t.gateways));
        out.push_str(&format!("olap_servers = {}\n", t.olap_servers));
        out.push_str(&format!("cloud_bandwidth = {}\n", t.cloud_bandwidth));
        out.push_str(&format!("cloud_latency = {}\n", t.cloud_latency));
        out.push_str(&format!("extranet_bandwidth = {}\n", t.extranet_bandwidth));
        out.push_str(&format!("extranet_latency = {}\n", t.extranet_latency));
        match &t.flow_rows {
            None => out.push_str("flow_weights = uniform\n"),
            Some(rows) => {
                for (i, row) in rows.iter().enumerate() {
                    out.push_str(&format!("flow_row_{} = {}\n", i + 1, fmt_list(row)));
                }
            }
        }

        let w = &self.workload;
        out.push_str("\n[workload]\n");
        out.push_str(&format!("start_time = {}\n", w.profile.start_time));
        out.push_str(&format!("start_offset = {}\n", w.profile.start_offset));
        out.push_str(&format!("inter_repetition = {}\n", w.profile.inter_repetition));
        out.push_str("repetitions = unlimited\n");
        out.push_str("pattern = concurrent\n");
        out.push_str(&format!("objects_per_page = {}\n", w.page.objects_per_page));
        out.push_str(&format!("object_size = {}\n", w.page.object_size));
        out.push_str(&format!("object_refresh = {}\n", w.page.object_refresh));
        out.push_str(&format!("page_refresh = {}\n", w.page.page_refresh));
        out.push_str(&format!("query_mix = {}\n", w.tx.query_mix));
        out.push_str(&format!("interarrival = {}\n", w.tx.interarrival));
        out.push_str(&format!("transaction_size = {}\n", w.tx.size));
        match w.load {
            LoadSpec::DutyCycle(d) => out.push_str(&format!("load = duty_cycle({d})\n")),
            LoadSpec::TargetAggregate(t) => {
                out.push_str(&format!("load = target_aggregate({t})\n"))
            }
        }
        match w.partition_skew {
            PartitionSkew::Uniform => out.push_str("partition_skew = uniform\n"),
            PartitionSkew::Zipf { s } => out.push_str(&format!("partition_skew = zipf({s})\n")),
        }
        match w.session_mode {
            SessionMode::AlwaysOn => out.push_str("session_mode = always_on\n"),
            SessionMode::OnOff { mean_on } => {
                out.push_str(&format!("session_mode = on_off({mean_on})\n"))
            }
        }

        let s = &self.servers;
        out.push_str("\n[servers]\n");
        out.push_str(&format!("count = {}\n", s.count));
        out.push_str(&format!("speed_factors = {}\n", fmt_list(&s.speed_factors)));
        out.push_str(&format!("base_service_time = {}\n", s.base_service_time));
        out.push_str(&format!("service_noise = {}\n", s.service_noise));
        match &s.placement {
            PlacementSpec::ReplicatedAll => out.push_str("placement = replicated_all\n"),
            PlacementSpec::OnePerServer => out.push_str("placement = one_per_server\n"),
            PlacementSpec::Custom(map) => {
                out.push_str("placement = custom\n");
                let rows: Vec<String> = map
                    .iter()
                    .map(|hosts| {
                        let items: Vec<String> = hosts.iter().map(u32::to_string).collect();
                        format!("[{}]", items.join(", "))
                    })
                    .collect();
                out.push_str(&format!("partition_map = [{}]\n", rows.join(", ")));
            }
        }
        out.push_str(&format!("partitions = {}\n", s.partitions));

        out.push_str("\n[routing]\n");
        match self.policy {
            PolicyKind::ResponseTimeWeighted { ewma_alpha } => {
                out.push_str(&format!("policy = response_time_weighted({ewma_alpha})\n"))
            }
            ref p => out.push_str(&format!("policy = {}\n", p.name())),
        }

        let r = &self.run;
        out.push_str("\n[run]\n");
        out.push_str(&format!("id = \"{}\"\n", r.id));
        out.push_str(&format!("seed = {}\n", r.seed));
        out.push_str(&format!("max_events = {}\n", r.max_events));
        match r.end_time {
            None => out.push_str("end_time = none\n"),
            Some(t) => out.push_str(&format!("end_time = {t}\n")),
        }
        out.push_str(&format!("warmup = {}\n", r.warmup));
        out.push_str(&format!("bucket_width = {}\n", r.bucket_width));
        match &r.output_dir {
            None => out.push_str("output_dir = none\n"),
            Some(d) => out.push_str(&format!("output_dir = \"{d}\"\n")),
        }
        out
    }

    /// SHA-256 of the canonical dump; whitespace-only source edits hash
    /// identically.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_text().as_bytes());
        format!("sha256:{digest:x}")
    }
}

fn fmt_list(values: &[f64]) -> String {
    let items: Vec<String> = values.iter().map(f64::to_string).collect();
    format!("[{}]", items.join(", "))
}

/// A parsed right-hand side before typing. Numbers keep their source text
/// so 64-bit integers (seeds) survive beyond f64 precision.
#[derive(Debug, Clone, PartialEq)]
pub enum RawValue {
    Number(f64, String),
    Ident(String),
    Call(String, Vec<RawValue>),
    List(Vec<RawValue>),
    Str(String),
}

#[derive(Debug)]
struct Entry {
    section: String,
    key: String,
    value: RawValue,
    line: usize,
}

fn parse_raw(text: &str) -> Result<Vec<Entry>, ScenarioError> {
    let mut entries = Vec::new();
    let mut section = String::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw_line.split('#').next().unwrap_or("").trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ScenarioError::Parse {
                line,
                message: "unterminated section header".to_string(),
            })?;
            section = name.trim().to_string();
            continue;
        }
        let (key, rest) = trimmed.split_once('=').ok_or(ScenarioError::Parse {
            line,
            message: format!("expected `key = value`, got `{trimmed}`"),
        })?;
        if section.is_empty() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("key `{}` appears before any [section]", key.trim()),
            });
        }
        let mut lexer = Lexer {
            chars: rest.trim().chars().collect(),
            pos: 0,
            line,
        };
        let value = lexer.value()?;
        lexer.skip_ws();
        if lexer.pos < lexer.chars.len() {
            return Err(ScenarioError::Parse {
                line,
                message: format!("trailing input after value: `{}`", rest.trim()),
            });
        }
        entries.push(Entry {
            section: section.clone(),
            key: key.trim().to_string(),
            value,
            line,
        });
    }
    Ok(entries)
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Lexer {
    fn err(&self, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn value(&mut self) -> Result<RawValue, ScenarioError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.err("expected a value")),
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(']') => {
                            self.pos += 1;
                            return Ok(RawValue::List(items));
                        }
                        None => return Err(self.err("unterminated list")),
                        _ => {}
                    }
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {}
                        _ => return Err(self.err("expected `,` or `]` in list")),
                    }
                }
            }
            Some('"') => {
                self.pos += 1;
                let start = self.pos;
                while let Some(c) = self.peek() {
                    if c == '"' {
                        let s: String = self.chars[start..self.pos].iter().collect();
                        self.pos += 1;
                        return Ok(RawValue::Str(s));
                    }
                    self.pos += 1;
                }
                Err(self.err("unterminated string"))
            }
            Some(c) if c.is_ascii_digit() || c == '-' || c == '+' || c == '.' => {
                let start = self.pos;
                while matches!(
                    self.peek(),
                    Some(c) if c.is_ascii_alphanumeric() || "+-._".contains(c)
                ) {
                    self.pos += 1;
                }
                let text: String = self.chars[start..self.pos]
                    .iter()
                    .filter(|&&c| c != '_')
                    .collect();
                text.parse::<f64>()
                    .map(|value| RawValue::Number(value, text.clone()))
                    .map_err(|_| self.err(format!("invalid number `{text}`")))
            }
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {
                let start = self.pos;
                while matches!(
                    self.peek(),
                    Some(c) if c.is_ascii_alphanumeric() || c == '_'
                ) {
                    self.pos += 1;
                }
                let name: String = self.chars[start..self.pos].iter().collect();
                self.skip_ws();
                if self.peek() == Some('(') {
                    self.pos += 1;
                    let mut args = Vec::new();
                    loop {
                        self.skip_ws();
                        match self.peek() {
                            Some(')') => {
                                self.pos += 1;
                                return Ok(RawValue::Call(name, args));
                            }
                            None => return Err(self.err("unterminated call")),
                            _ => {}
                        }
                        args.push(self.value()?);
                        self.skip_ws();
                        match self.peek() {
                            Some(',') => self.pos += 1,
                            Some(')') => {}
                            _ => return Err(self.err("expected `,` or `)` in call")),
                        }
                    }
                }
                Ok(RawValue::Ident(name))
            }
            Some(c) => Err(self.err(format!("unexpected character `{c}`"))),
        }
    }
}

impl RawValue {
    fn type_name(&self) -> &'static str {
        match self {
            RawValue::Number(..) => "number",
            RawValue::Ident(_) => "identifier",
            RawValue::Call(..) => "constructor",
            RawValue::List(_) => "list",
            RawValue::Str(_) => "string",
        }
    }
}

struct Field<'a> {
    name: String,
    value: &'a RawValue,
    line: usize,
}

impl Field<'_> {
    fn err(&self, constraint: impl Into<String>) -> ScenarioError {
        ScenarioError::Parse {
            line: self.line,
            message: format!("{}: {}", self.name, constraint.into()),
        }
    }

    fn number(&self) -> Result<f64, ScenarioError> {
        match self.value {
            RawValue::Number(n, _) => Ok(*n),
            other => Err(self.err(format!("expected a number, got {}", other.type_name()))),
        }
    }

    fn count(&self) -> Result<u64, ScenarioError> {
        let RawValue::Number(n, text) = self.value else {
            return Err(self.err(format!("expected a number, got {}", self.value.type_name())));
        };
        // integers wider than f64's 53-bit mantissa come from the text
        if let Ok(exact) = text.parse::<u64>() {
            return Ok(exact);
        }
        if *n < 0.0 || n.fract() != 0.0 || *n > u64::MAX as f64 {
            return Err(self.err(format!("expected a non-negative integer, got {n}")));
        }
        Ok(*n as u64)
    }

    fn string(&self) -> Result<String, ScenarioError> {
        match self.value {
            RawValue::Str(s) => Ok(s.clone()),
            RawValue::Ident(s) => Ok(s.clone()),
            other => Err(self.err(format!("expected a string, got {}", other.type_name()))),
        }
    }

    fn numbers(&self) -> Result<Vec<f64>, ScenarioError> {
        match self.value {
            RawValue::List(items) => items
                .iter()
                .map(|item| match item {
                    RawValue::Number(n, _) => Ok(*n),
                    other => {
                        Err(self.err(format!("expected numbers in list, got {}", other.type_name())))
                    }
                })
                .collect(),
            other => Err(self.err(format!("expected a list, got {}", other.type_name()))),
        }
    }

    fn distribution(&self) -> Result<DistributionSpec, ScenarioError> {
        let RawValue::Call(name, args) = self.value else {
            return Err(self.err(format!(
                "expected constant(c), uniform(lo, hi) or exponential(mean), got {}",
                self.value.type_name()
            )));
        };
        let arg = |i: usize| -> Result<f64, ScenarioError> {
            match args.get(i) {
                Some(RawValue::Number(n, _)) => Ok(*n),
                _ => Err(self.err(format!("{name} expects numeric argument {}", i + 1))),
            }
        };
        let dist = match (name.as_str(), args.len()) {
            ("constant", 1) => DistributionSpec::Constant(arg(0)?),
            ("uniform", 2) => DistributionSpec::Uniform(arg(0)?, arg(1)?),
            ("exponential", 1) => DistributionSpec::Exponential { mean: arg(0)? },
            _ => {
                return Err(self.err(format!(
                    "unknown distribution `{name}` with {} args",
                    args.len()
                )))
            }
        };
        Ok(dist)
    }
}

fn apply(
    config: &mut ScenarioConfig,
    entry: &Entry,
    explicit_speed_factors: &mut bool,
    flow_rows: &mut Vec<(usize, Vec<f64>, usize)>,
) -> Result<(), ScenarioError> {
    let field = Field {
        name: format!("{}.{}", entry.section, entry.key),
        value: &entry.value,
        line: entry.line,
    };
    match (entry.section.as_str(), entry.key.as_str()) {
        ("topology", "lans") => config.topology.lans = field.count()? as usize,
        ("topology", "users_per_lan") => config.topology.users_per_lan = field.count()? as u32,
        ("topology", "gateways") => config.topology.gateways = field.count()? as usize,
        ("topology", "olap_servers") => config.topology.olap_servers = field.count()? as usize,
        ("topology", "cloud_bandwidth") => config.topology.cloud_bandwidth = field.number()?,
        ("topology", "cloud_latency") => config.topology.cloud_latency = field.number()?,
        ("topology", "extranet_bandwidth") => config.topology.extranet_bandwidth = field.number()?,
        ("topology", "extranet_latency") => config.topology.extranet_latency = field.number()?,
        ("topology", "flow_weights") => match &entry.value {
            RawValue::Ident(name) if name == "uniform" => config.topology.flow_rows = None,
            _ => return Err(field.err("expected `uniform` (or per-row flow_row_N keys)")),
        },
        ("topology", key) if key.starts_with("flow_row_") => {
            let idx: usize = key["flow_row_".len()..]
                .parse()
                .map_err(|_| field.err("row index must be an integer"))?;
            flow_rows.push((idx, field.numbers()?, entry.line));
        }

        ("workload", "start_time") => config.workload.profile.start_time = field.distribution()?,
        ("workload", "start_offset") => config.workload.profile.start_offset = field.distribution()?,
        ("workload", "inter_repetition") => {
            config.workload.profile.inter_repetition = field.distribution()?
        }
        ("workload", "repetitions") => match field.string()?.as_str() {
            "unlimited" => config.workload.profile.repetitions_unlimited = true,
            other => return Err(field.err(format!("only `unlimited` is supported, got `{other}`"))),
        },
        ("workload", "pattern") => match field.string()?.as_str() {
            "concurrent" => {}
            other => return Err(field.err(format!("only `concurrent` is supported, got `{other}`"))),
        },
        ("workload", "objects_per_page") => {
            config.workload.page.objects_per_page = field.distribution()?
        }
        ("workload", "object_size") => config.workload.page.object_size = field.distribution()?,
        ("workload", "object_refresh") => config.workload.page.object_refresh = field.number()?,
        ("workload", "page_refresh") => config.workload.page.page_refresh = field.number()?,
        ("workload", "query_mix") => config.workload.tx.query_mix = field.number()?,
        ("workload", "interarrival") => config.workload.tx.interarrival = field.distribution()?,
        ("workload", "transaction_size") => config.workload.tx.size = field.distribution()?,
        ("workload", "load") => match &entry.value {
            RawValue::Call(name, args) if name == "duty_cycle" && args.len() == 1 => {
                let RawValue::Number(d, _) = args[0] else {
                    return Err(field.err("duty_cycle expects a number"));
                };
                config.workload.load = LoadSpec::DutyCycle(d);
            }
            RawValue::Call(name, args) if name == "target_aggregate" && args.len() == 1 => {
                let RawValue::Number(t, _) = args[0] else {
                    return Err(field.err("target_aggregate expects a number"));
                };
                config.workload.load = LoadSpec::TargetAggregate(t);
            }
            _ => return Err(field.err("expected duty_cycle(d) or target_aggregate(qps)")),
        },
        ("workload", "partition_skew") => match &entry.value {
            RawValue::Ident(name) if name == "uniform" => {
                config.workload.partition_skew = PartitionSkew::Uniform
            }
            RawValue::Call(name, args) if name == "zipf" && args.len() == 1 => {
                let RawValue::Number(s, _) = args[0] else {
                    return Err(field.err("zipf expects a number"));
                };
                config.workload.partition_skew = PartitionSkew::Zipf { s };
            }
            _ => return Err(field.err("expected uniform or zipf(s)")),
        },
        ("workload", "session_mode") => match &entry.value {
            RawValue::Ident(name) if name == "always_on" => {
                config.workload.session_mode = SessionMode::AlwaysOn
            }
            RawValue::Call(name, args) if name == "on_off" && args.len() == 1 => {
                let RawValue::Number(mean_on, _) = args[0] else {
                    return Err(field.err("on_off expects a number"));
                };
                config.workload.session_mode = SessionMode::OnOff { mean_on };
            }
            _ => return Err(field.err("expected always_on or on_off(mean_on)")),
        },

        ("servers", "count") => config.servers.count = field.count()? as usize,
        ("servers", "speed_factors") => {
            config.servers.speed_factors = field.numbers()?;
            *explicit_speed_factors = true;
        }
        ("servers", "base_service_time") => config.servers.base_service_time = field.number()?,
        ("servers", "service_noise") => config.servers.service_noise = field.number()?,
        ("servers", "placement") => match field.string()?.as_str() {
            "replicated_all" => config.servers.placement = PlacementSpec::ReplicatedAll,
            "one_per_server" => config.servers.placement = PlacementSpec::OnePerServer,
            "custom" => {
                if !matches!(config.servers.placement, PlacementSpec::Custom(_)) {
                    config.servers.placement = PlacementSpec::Custom(Vec::new());
                }
            }
            other => {
                return Err(field.err(format!(
                    "expected replicated_all, one_per_server or custom, got `{other}`"
                )))
            }
        },
        ("servers", "partition_map") => {
            let RawValue::List(rows) = &entry.value else {
                return Err(field.err("expected a list of server-id lists"));
            };
            let mut map = Vec::new();
            for row in rows {
                let RawValue::List(items) = row else {
                    return Err(field.err("expected a list of server-id lists"));
                };
                let mut hosts = Vec::new();
                for item in items {
                    let RawValue::Number(n, _) = item else {
                        return Err(field.err("server ids must be numbers"));
                    };
                    if *n < 1.0 || n.fract() != 0.0 {
                        return Err(field.err(format!("server id {n} must be a positive integer")));
                    }
                    hosts.push(*n as u32);
                }
                map.push(hosts);
            }
            config.servers.placement = PlacementSpec::Custom(map);
        }
        ("servers", "partitions") => config.servers.partitions = field.count()? as usize,

        ("routing", "policy") => match &entry.value {
            RawValue::Ident(name) => {
                config.policy = match name.as_str() {
                    "flow_weighted" => PolicyKind::FlowWeighted,
                    "round_robin" => PolicyKind::RoundRobin,
                    "least_outstanding" => PolicyKind::LeastOutstanding,
                    "response_time_weighted" => {
                        PolicyKind::ResponseTimeWeighted { ewma_alpha: 0.1 }
                    }
                    other => return Err(field.err(format!("unknown policy `{other}`"))),
                }
            }
            RawValue::Call(name, args) if name == "response_time_weighted" && args.len() == 1 => {
                let RawValue::Number(alpha, _) = args[0] else {
                    return Err(field.err("response_time_weighted expects a numeric alpha"));
                };
                config.policy = PolicyKind::ResponseTimeWeighted { ewma_alpha: alpha };
            }
            _ => return Err(field.err("expected a policy name")),
        },

        ("run", "id") => config.run.id = field.string()?,
        ("run", "seed") => config.run.seed = field.count()?,
        ("run", "max_events") => config.run.max_events = field.count()?,
        ("run", "end_time") => match &entry.value {
            RawValue::Ident(name) if name == "none" => config.run.end_time = None,
            RawValue::Number(t, _) => config.run.end_time = Some(*t),
            _ => return Err(field.err("expected a number or none")),
        },
        ("run", "warmup") => config.run.warmup = field.number()?,
        ("run", "bucket_width") => config.run.bucket_width = field.number()?,
        ("run", "output_dir") => match &entry.value {
            RawValue::Ident(name) if name == "none" => config.run.output_dir = None,
            _ => config.run.output_dir = Some(field.string()?),
        },

        (section, key) => {
            return Err(ScenarioError::Parse {
                line: entry.line,
                message: format!("unknown key `{key}` in section [{section}]"),
            })
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_reference_scenario() {
        let config = ScenarioConfig::parse("").unwrap();
        assert_eq!(config, ScenarioConfig::default());
        assert_eq!(config.total_users(), 3000);
        assert_eq!(config.servers.count, 8);
        assert_eq!(config.run.max_events, 50_000_000);
        let duty = config.effective_duty_cycle().unwrap();
        assert!((duty - 320.0 / 3000.0).abs() < 1e-12);
    }

    #[test]
    fn interarrival_constructor_override_is_accepted() {
        let config = ScenarioConfig::parse("[workload]\ninterarrival = constant(0.5)\n").unwrap();
        assert_eq!(config.workload.tx.interarrival, DistributionSpec::Constant(0.5));
    }

    #[test]
    fn speed_factor_length_mismatch_is_a_validation_error() {
        let err = ScenarioConfig::parse("[servers]\nspeed_factors = [1, 1, 1]\n").unwrap_err();
        match err {
            ScenarioError::Validation { field, constraint } => {
                assert_eq!(field, "servers.speed_factors");
                assert!(constraint.contains("8"), "{constraint}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn zero_duty_cycle_is_rejected() {
        let err = ScenarioConfig::parse("[workload]\nload = duty_cycle(0)\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "workload.load"));
    }

    #[test]
    fn infeasible_target_is_rejected_at_config_time() {
        let err = ScenarioConfig::parse("[workload]\nload = target_aggregate(3200)\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "workload.load"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ScenarioConfig::parse("[workload]\n\ninterarrival = constant(\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ScenarioConfig::parse("[workload]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }));
    }

    #[test]
    fn later_assignments_win() {
        let config =
            ScenarioConfig::parse("[run]\nseed = 1\n[run]\nseed = 9\n").unwrap();
        assert_eq!(config.run.seed, 9);
    }

    #[test]
    fn canonical_text_roundtrips() {
        let config = ScenarioConfig::default();
        let text = config.canonical_text();
        let reparsed = ScenarioConfig::parse(&text).unwrap();
        assert_eq!(reparsed, config);

        let custom = ScenarioConfig::parse(
            "[servers]\ncount = 2\nspeed_factors = [1, 2]\nplacement = one_per_server\npartitions = 2\n\
             [routing]\npolicy = response_time_weighted(0.2)\n\
             [run]\nend_time = 600\n",
        )
        .unwrap();
        let reparsed = ScenarioConfig::parse(&custom.canonical_text()).unwrap();
        assert_eq!(reparsed, custom);
    }

    #[test]
    fn hash_is_stable_across_whitespace_and_comments() {
        let a = ScenarioConfig::parse("[run]\nseed = 5\n").unwrap();
        let b = ScenarioConfig::parse("# a comment\n\n[run]\n   seed   =   5   # same\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = ScenarioConfig::parse("[run]\nseed = 6\n").unwrap();
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn flow_row_overrides_merge_with_uniform_rows() {
        let config = ScenarioConfig::parse(
            "[topology]\nflow_row_1 = [0.5, 0.5, 0, 0, 0, 0, 0, 0]\n",
        )
        .unwrap();
        let rows = config.topology.flow_rows.as_ref().unwrap();
        assert_eq!(rows[0][0], 0.5);
        assert!((rows[1][0] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn bad_flow_row_sum_is_a_validation_error() {
        let err = ScenarioConfig::parse(
            "[topology]\nflow_row_2 = [0.5, 0.4, 0, 0, 0, 0, 0, 0]\n",
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "topology.flow_row_2"));
    }

    #[test]
    fn custom_placement_requires_full_coverage() {
        let err = ScenarioConfig::parse(
            "[servers]\ncount = 2\nplacement = custom\npartition_map = [[1], [1]]\npartitions = 2\n",
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "servers.partition_map"));
    }

    #[test]
    fn count_change_rescales_default_speed_factors() {
        let config = ScenarioConfig::parse("[servers]\ncount = 3\npartitions = 3\n").unwrap();
        assert_eq!(config.servers.speed_factors, vec![1.0; 3]);
    }

    #[test]
    fn one_per_server_with_unequal_counts_is_rejected() {
        let err = ScenarioConfig::parse(
            "[servers]\ncount = 8\nplacement = one_per_server\npartitions = 6\n",
        )
        .unwrap_err();
        assert!(matches!(err, ScenarioError::Validation { ref field, .. } if field == "servers.placement"));
    }

    #[test]
    fn underscored_numbers_parse() {
        let config = ScenarioConfig::parse("[run]\nmax_events = 50_000_000\n").unwrap();
        assert_eq!(config.run.max_events, 50_000_000);
    }
}
