//! Static model of the two-domain network: corporate LAN segments behind
//! ISP gateways on one side, and the cloud fabric (ingress switch, an
//! application-server switch, two database switches) on the other, with
//! per-link bandwidth/latency and the application-to-database traffic flow
//! weights.
//!
//! The reference build wires 6 LAN segments of 500 users through 3
//! gateways into an ingress switch, which feeds the switch serving 4
//! application servers; two more switches serve 4 database servers each.
//! Links add deterministic store-and-forward delay; link queueing is not
//! modeled (the bottleneck under study is the servers).

use std::collections::VecDeque;

use thiserror::Error;

/// Index into `Topology::nodes`.
pub type NodeIdx = usize;
/// Index into `Topology::links`.
pub type LinkIdx = usize;

#[derive(Debug, Clone, PartialEq)]
pub enum NodeKind {
    LanSegment { users: u32 },
    IspGateway,
    CloudSwitch,
    OlapServer,
    RdbmsServer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub a: NodeIdx,
    pub b: NodeIdx,
    /// Bits per second.
    pub bandwidth: f64,
    /// Propagation plus switching delay, seconds.
    pub latency: f64,
}

/// Per (OLAP server, RDBMS server) forwarding weight. Each row (one OLAP
/// server's weights over all RDBMS servers) sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTable {
    pub rows: Vec<Vec<f64>>,
}

impl FlowTable {
    pub fn uniform(olap_count: usize, rdbms_count: usize) -> Self {
        let w = 1.0 / rdbms_count as f64;
        Self {
            rows: vec![vec![w; rdbms_count]; olap_count],
        }
    }
}

pub const FLOW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    pub flow: FlowTable,
    /// LAN index -> OLAP server nodes its users may target, in preference order.
    pub client_prefs: Vec<Vec<NodeIdx>>,
    pub lan_nodes: Vec<NodeIdx>,
    pub olap_nodes: Vec<NodeIdx>,
    pub rdbms_nodes: Vec<NodeIdx>,
    adjacency: Vec<Vec<(NodeIdx, LinkIdx)>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("no route from {src} to {dst}")]
    NoRoute { src: String, dst: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
}

/// Everything the topology builder can vary; defaults reproduce the
/// reference network.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologyParams {
    pub lans: usize,
    pub users_per_lan: u32,
    pub gateways: usize,
    pub olap_servers: usize,
    pub rdbms_servers: usize,
    pub cloud_bandwidth: f64,
    pub cloud_latency: f64,
    pub extranet_bandwidth: f64,
    pub extranet_latency: f64,
    /// None means uniform 1/N rows.
    pub flow_rows: Option<Vec<Vec<f64>>>,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            lans: 6,
            users_per_lan: 500,
            gateways: 3,
            olap_servers: 4,
            rdbms_servers: 8,
            cloud_bandwidth: 1e9,
            cloud_latency: 50e-6,
            extranet_bandwidth: 100e6,
            extranet_latency: 5e-3,
            flow_rows: None,
        }
    }
}

/// Build the reference network: 6 LAN segments of 500 users, 3 ISP
/// gateways serving two LANs each, 4 cloud switches (switch 4 ingress,
/// switch 2 in front of the 4 OLAP servers, switches 1 and 3 in front of
/// 4 RDBMS servers each), uniform 1/8 flow weights, and every LAN
/// preferring all 4 OLAP servers.
pub fn build_reference_topology() -> Topology {
    build_topology(&TopologyParams::default())
}

pub fn build_topology(params: &TopologyParams) -> Topology {
    let mut nodes = Vec::new();
    let mut links = Vec::new();

    let lan_nodes: Vec<NodeIdx> = (0..params.lans)
        .map(|i| {
            nodes.push(Node {
                id: format!("lan{}", i + 1),
                kind: NodeKind::LanSegment {
                    users: params.users_per_lan,
                },
            });
            nodes.len() - 1
        })
        .collect();
    let gateway_nodes: Vec<NodeIdx> = (0..params.gateways)
        .map(|i| {
            nodes.push(Node {
                id: format!("gw{}", i + 1),
                kind: NodeKind::IspGateway,
            });
            nodes.len() - 1
        })
        .collect();
    let switch_nodes: Vec<NodeIdx> = (0..4)
        .map(|i| {
            nodes.push(Node {
                id: format!("sw{}", i + 1),
                kind: NodeKind::CloudSwitch,
            });
            nodes.len() - 1
        })
        .collect();
    let olap_nodes: Vec<NodeIdx> = (0..params.olap_servers)
        .map(|i| {
            nodes.push(Node {
                id: format!("olap{}", i + 1),
                kind: NodeKind::OlapServer,
            });
            nodes.len() - 1
        })
        .collect();
    let rdbms_nodes: Vec<NodeIdx> = (0..params.rdbms_servers)
        .map(|i| {
            nodes.push(Node {
                id: format!("rdbms{}", i + 1),
                kind: NodeKind::RdbmsServer,
            });
            nodes.len() - 1
        })
        .collect();

    let extranet = |a, b, links: &mut Vec<Link>| {
        links.push(Link {
            a,
            b,
            bandwidth: params.extranet_bandwidth,
            latency: params.extranet_latency,
        })
    };
    let cloud = |a, b, links: &mut Vec<Link>| {
        links.push(Link {
            a,
            b,
            bandwidth: params.cloud_bandwidth,
            latency: params.cloud_latency,
        })
    };

    // LANs spread round-robin over the gateways (two each in the reference
    // build); gateways uplink to the ingress switch sw4.
    for (i, &lan) in lan_nodes.iter().enumerate() {
        extranet(lan, gateway_nodes[i % params.gateways], &mut links);
    }
    for &gw in &gateway_nodes {
        extranet(gw, switch_nodes[3], &mut links);
    }
    // sw4 -> sw2 (application tier); sw2 -> sw1 and sw3 (database tier).
    cloud(switch_nodes[3], switch_nodes[1], &mut links);
    cloud(switch_nodes[1], switch_nodes[0], &mut links);
    cloud(switch_nodes[1], switch_nodes[2], &mut links);
    for &olap in &olap_nodes {
        cloud(switch_nodes[1], olap, &mut links);
    }
    // First half of the array behind sw1, the rest behind sw3.
    let half = params.rdbms_servers.div_ceil(2);
    for (i, &rdbms) in rdbms_nodes.iter().enumerate() {
        let sw = if i < half { switch_nodes[0] } else { switch_nodes[2] };
        cloud(sw, rdbms, &mut links);
    }

    let flow = match &params.flow_rows {
        Some(rows) => FlowTable { rows: rows.clone() },
        None => FlowTable::uniform(params.olap_servers, params.rdbms_servers),
    };
    let client_prefs = vec![olap_nodes.clone(); params.lans];

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (li, link) in links.iter().enumerate() {
        adjacency[link.a].push((link.b, li));
        adjacency[link.b].push((link.a, li));
    }

    Topology {
        nodes,
        links,
        flow,
        client_prefs,
        lan_nodes,
        olap_nodes,
        rdbms_nodes,
        adjacency,
    }
}

impl Topology {
    pub fn node_index(&self, id: &str) -> Result<NodeIdx, TopologyError> {
        self.nodes
            .iter()
            .position(|n| n.id == id)
            .ok_or_else(|| TopologyError::UnknownNode(id.to_string()))
    }

    /// Shortest hop path as an ordered link list. The network is tree-like,
    /// so the shortest path is unique; BFS over the fixed adjacency order
    /// keeps it deterministic regardless.
    pub fn path(&self, src: NodeIdx, dst: NodeIdx) -> Result<Vec<LinkIdx>, TopologyError> {
        if src == dst {
            return Ok(Vec::new());
        }
        let mut prev: Vec<Option<(NodeIdx, LinkIdx)>> = vec![None; self.nodes.len()];
        let mut visited = vec![false; self.nodes.len()];
        visited[src] = true;
        let mut frontier = VecDeque::from([src]);
        while let Some(node) = frontier.pop_front() {
            for &(next, link) in &self.adjacency[node] {
                if !visited[next] {
                    visited[next] = true;
                    prev[next] = Some((node, link));
                    if next == dst {
                        let mut path = Vec::new();
                        let mut cur = dst;
                        while let Some((p, l)) = prev[cur] {
                            path.push(l);
                            cur = p;
                        }
                        path.reverse();
                        return Ok(path);
                    }
                    frontier.push_back(next);
                }
            }
        }
        Err(TopologyError::NoRoute {
            src: self.nodes[src].id.clone(),
            dst: self.nodes[dst].id.clone(),
        })
    }

    /// Store-and-forward delay: sum over links of latency + bits/bandwidth.
    pub fn transfer_delay(&self, path: &[LinkIdx], size_bytes: f64) -> f64 {
        path.iter()
            .map(|&l| {
                let link = &self.links[l];
                link.latency + size_bytes * 8.0 / link.bandwidth
            })
            .sum()
    }

    /// Empty iff all structural invariants hold; otherwise one line per
    /// violation.
    pub fn validate(&self) -> Vec<String> {
        let mut violations = Vec::new();

        let mut seen = std::collections::HashSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.as_str()) {
                violations.push(format!("duplicate node id {}", node.id));
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            if link.bandwidth <= 0.0 {
                violations.push(format!("link {i} has non-positive bandwidth"));
            }
            if link.latency < 0.0 {
                violations.push(format!("link {i} has negative latency"));
            }
            if link.a == link.b {
                violations.push(format!("link {i} is a self-loop"));
            }
            if link.a >= self.nodes.len() || link.b >= self.nodes.len() {
                violations.push(format!("link {i} references a missing node"));
            }
        }

        if !self.nodes.is_empty() {
            let mut visited = vec![false; self.nodes.len()];
            let mut frontier = VecDeque::from([0usize]);
            visited[0] = true;
            while let Some(node) = frontier.pop_front() {
                for &(next, _) in &self.adjacency[node] {
                    if !visited[next] {
                        visited[next] = true;
                        frontier.push_back(next);
                    }
                }
            }
            for (i, ok) in visited.iter().enumerate() {
                if !ok {
                    violations.push(format!("node {} is disconnected", self.nodes[i].id));
                }
            }
        }

        for (lan_pos, prefs) in self.client_prefs.iter().enumerate() {
            if prefs.is_empty() {
                violations.push(format!(
                    "{} has no OLAP destination preference",
                    self.nodes[self.lan_nodes[lan_pos]].id
                ));
            }
        }

        if self.flow.rows.len() != self.olap_nodes.len() {
            violations.push(format!(
                "flow table has {} rows for {} OLAP servers",
                self.flow.rows.len(),
                self.olap_nodes.len()
            ));
        }
        for (olap_pos, row) in self.flow.rows.iter().enumerate() {
            let olap_id = &self.nodes[self.olap_nodes[olap_pos]].id;
            if row.len() != self.rdbms_nodes.len() {
                violations.push(format!(
                    "flow row for {olap_id} has {} weights for {} RDBMS servers",
                    row.len(),
                    self.rdbms_nodes.len()
                ));
                continue;
            }
            if row.iter().any(|&w| w < 0.0) {
                violations.push(format!("flow row for {olap_id} has a negative weight"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > FLOW_SUM_TOLERANCE {
                violations.push(format!("flow weights for {olap_id} sum to {sum}, not 1"));
            }
            if !row.iter().any(|&w| w > 0.0) {
                violations.push(format!("{olap_id} has no positive-weight RDBMS flow"));
            }
        }
        for (rdbms_pos, &rdbms) in self.rdbms_nodes.iter().enumerate() {
            let orphan = self
                .flow
                .rows
                .iter()
                .all(|row| row.get(rdbms_pos).copied().unwrap_or(0.0) <= 0.0);
            if orphan {
                violations.push(format!(
                    "{} receives no incoming flow from any OLAP server",
                    self.nodes[rdbms].id
                ));
            }
        }

        violations
    }
}
