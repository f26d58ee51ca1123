//! Trusted-relay key routing between surplus and deficit nodes.
//!
//! Each link carries routed key in either direction up to its current
//! yield. Per-domain transit caps bound the total flow over links touching a
//! domain. Plain max-flow answers the problem when no domain cap binds;
//! otherwise the bundle constraints are handed to an LP.

use std::collections::{BTreeMap, VecDeque};

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::{Deserialize, Serialize};

use super::maxflow::FlowGraph;
use crate::error::{Error, Result};
use crate::model::ValidatedModel;

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_nodes: usize,
    pub links: Vec<(usize, usize)>,
    /// Domains whose transit cap each link counts against.
    pub link_domains: Vec<Vec<usize>>,
    pub n_domains: usize,
    pub node_names: Vec<String>,
}

impl Topology {
    pub fn from_model(m: &ValidatedModel) -> Self {
        Self {
            n_nodes: m.nodes().len(),
            links: m.link_ends().to_vec(),
            link_domains: m.link_domains().to_vec(),
            n_domains: m.domains().len(),
            node_names: m.nodes().iter().map(|n| n.id.clone()).collect(),
        }
    }

    /// Bare topology without domains, for tests and tooling.
    pub fn simple(n_nodes: usize, links: Vec<(usize, usize)>) -> Self {
        let k = links.len();
        Self {
            n_nodes,
            links,
            link_domains: vec![Vec::new(); k],
            n_domains: 0,
            node_names: (0..n_nodes).map(|i| format!("n{i}")).collect(),
        }
    }

    fn components(&self) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.n_nodes];
        for &(u, v) in &self.links {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut comp = vec![usize::MAX; self.n_nodes];
        let mut next = 0;
        for s in 0..self.n_nodes {
            if comp[s] != usize::MAX {
                continue;
            }
            comp[s] = next;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = next;
                        q.push_back(v);
                    }
                }
            }
            next += 1;
        }
        comp
    }

    /// Edge list, one `from to` pair per line, for debugging dumps.
    pub fn edge_list(&self) -> String {
        self.links
            .iter()
            .map(|&(u, v)| format!("{} {}\n", self.node_names[u], self.node_names[v]))
            .collect()
    }
}

/// Net routed bits per link; positive means `from -> to`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyFlows {
    pub link_flows: Vec<i64>,
}

impl KeyFlows {
    pub fn zero(n_links: usize) -> Self {
        Self {
            link_flows: vec![0; n_links],
        }
    }

    /// Nonzero flows keyed by directed node pair.
    pub fn directed(&self, topo: &Topology) -> BTreeMap<(usize, usize), u64> {
        let mut out = BTreeMap::new();
        for (&(u, v), &f) in topo.links.iter().zip(&self.link_flows) {
            let (a, b) = if f >= 0 { (u, v) } else { (v, u) };
            if f != 0 {
                *out.entry((a, b)).or_insert(0) += f.unsigned_abs();
            }
        }
        out
    }

    /// Per-node `(routed_in, routed_out)`.
    pub fn node_io(&self, topo: &Topology) -> Vec<(u64, u64)> {
        let mut io = vec![(0u64, 0u64); topo.n_nodes];
        for (&(u, v), &f) in topo.links.iter().zip(&self.link_flows) {
            let (a, b) = if f >= 0 { (u, v) } else { (v, u) };
            let x = f.unsigned_abs();
            io[a].1 += x;
            io[b].0 += x;
        }
        io
    }

    pub fn total(&self) -> u64 {
        self.link_flows.iter().map(|f| f.unsigned_abs()).sum()
    }

    pub fn domain_usage(&self, topo: &Topology) -> Vec<u64> {
        let mut use_ = vec![0u64; topo.n_domains];
        for (ds, &f) in topo.link_domains.iter().zip(&self.link_flows) {
            for &d in ds {
                use_[d] += f.unsigned_abs();
            }
        }
        use_
    }
}

/// Why routing could not cover every deficit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InfeasibilityCertificate {
    /// Network nodes on the source side of the minimum cut.
    pub source_side: Vec<usize>,
    /// Links saturated across the cut.
    pub cut_links: Vec<usize>,
    /// Domains whose transit cap binds.
    pub binding_domains: Vec<usize>,
    /// `(node, bits)` of uncovered demand.
    pub shortfall: Vec<(usize, u64)>,
}

impl InfeasibilityCertificate {
    pub fn total_shortfall(&self) -> u64 {
        self.shortfall.iter().map(|s| s.1).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RoutingOutcome {
    Feasible(KeyFlows),
    /// Best partial routing plus the certificate.
    Infeasible {
        flows: KeyFlows,
        certificate: InfeasibilityCertificate,
    },
}

impl RoutingOutcome {
    pub fn flows(&self) -> &KeyFlows {
        match self {
            RoutingOutcome::Feasible(f) => f,
            RoutingOutcome::Infeasible { flows, .. } => flows,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, RoutingOutcome::Feasible(_))
    }
}

/// Routes key from surplus nodes (`net_demand < 0`) to deficit nodes
/// (`net_demand > 0`) under link yields and domain transit caps.
///
/// `domain_caps` may be empty to disable the caps.
pub fn route_keys(
    topo: &Topology,
    yields: &[u64],
    net_demand: &[i64],
    domain_caps: &[u64],
) -> Result<RoutingOutcome> {
    assert_eq!(yields.len(), topo.links.len());
    assert_eq!(net_demand.len(), topo.n_nodes);
    check_connectivity(topo, net_demand)?;

    let n = topo.n_nodes;
    let (s, t) = (n, n + 1);
    let mut g = FlowGraph::new(n + 2);
    let mut arc_ids = Vec::with_capacity(topo.links.len());
    for (&(u, v), &cap) in topo.links.iter().zip(yields) {
        let fwd = g.add_arc(u, v, cap as i64);
        let bwd = g.add_arc(v, u, cap as i64);
        arc_ids.push((fwd, bwd));
    }
    let mut demand_total = 0i64;
    for (u, &d) in net_demand.iter().enumerate() {
        if d < 0 {
            g.add_arc(s, u, -d);
        } else if d > 0 {
            g.add_arc(u, t, d);
            demand_total += d;
        }
    }
    let routed = g.max_flow(s, t);
    let flows = KeyFlows {
        link_flows: arc_ids.iter().map(|&(f, b)| g.flow(f) - g.flow(b)).collect(),
    };

    let caps_ok = domain_caps.is_empty()
        || flows
            .domain_usage(topo)
            .iter()
            .zip(domain_caps)
            .all(|(u, c)| u <= c);

    if caps_ok {
        debug_check(topo, yields, domain_caps, &flows);
        if routed == demand_total {
            return Ok(RoutingOutcome::Feasible(flows));
        }
        let reach = g.reachable(s);
        let certificate = certificate_from(topo, net_demand, &flows, &reach, &[]);
        return Ok(RoutingOutcome::Infeasible { flows, certificate });
    }

    let mut flows = route_lp(topo, yields, net_demand, domain_caps);
    repair_balance(topo, net_demand, &mut flows);
    debug_check(topo, yields, domain_caps, &flows);
    let received = received_by_node(topo, &flows, net_demand);
    if received.iter().zip(net_demand).all(|(r, &d)| d <= 0 || *r >= d) {
        return Ok(RoutingOutcome::Feasible(flows));
    }
    let usage = flows.domain_usage(topo);
    let binding: Vec<usize> = usage
        .iter()
        .zip(domain_caps)
        .enumerate()
        .filter(|(_, (u, c))| **u + 1 >= **c)
        .map(|(d, _)| d)
        .collect();
    let reach = residual_reach(topo, yields, net_demand, &flows, &binding);
    let certificate = certificate_from(topo, net_demand, &flows, &reach, &binding);
    Ok(RoutingOutcome::Infeasible { flows, certificate })
}

fn check_connectivity(topo: &Topology, net_demand: &[i64]) -> Result<()> {
    if !net_demand.iter().any(|&d| d < 0) {
        return Ok(());
    }
    let comp = topo.components();
    let mut has_supply = vec![false; topo.n_nodes];
    for (u, &d) in net_demand.iter().enumerate() {
        if d < 0 {
            has_supply[comp[u]] = true;
        }
    }
    for (u, &d) in net_demand.iter().enumerate() {
        if d > 0 && !has_supply[comp[u]] {
            return Err(Error::Topology {
                node: topo.node_names[u].clone(),
            });
        }
    }
    Ok(())
}

/// Net inflow per node, i.e. what deficit nodes received.
fn received_by_node(topo: &Topology, flows: &KeyFlows, net_demand: &[i64]) -> Vec<i64> {
    let io = flows.node_io(topo);
    io.iter()
        .zip(net_demand)
        .map(|(&(i, o), _)| i as i64 - o as i64)
        .collect()
}

fn certificate_from(
    topo: &Topology,
    net_demand: &[i64],
    flows: &KeyFlows,
    reach: &[bool],
    binding: &[usize],
) -> InfeasibilityCertificate {
    let received = received_by_node(topo, flows, net_demand);
    let shortfall = net_demand
        .iter()
        .zip(&received)
        .enumerate()
        .filter(|(_, (&d, &r))| d > 0 && r < d)
        .map(|(u, (&d, &r))| (u, (d - r.max(0)) as u64))
        .collect();
    let source_side = (0..topo.n_nodes).filter(|&u| reach[u]).collect();
    let cut_links = topo
        .links
        .iter()
        .enumerate()
        .filter(|(_, &(u, v))| reach[u] != reach[v])
        .map(|(e, _)| e)
        .collect();
    InfeasibilityCertificate {
        source_side,
        cut_links,
        binding_domains: binding.to_vec(),
        shortfall,
    }
}

/// Residual reachability from the super-source given a fixed flow, treating
/// links in binding domains as saturated.
fn residual_reach(
    topo: &Topology,
    yields: &[u64],
    net_demand: &[i64],
    flows: &KeyFlows,
    binding: &[usize],
) -> Vec<bool> {
    let io = flows.node_io(topo);
    let mut seen = vec![false; topo.n_nodes];
    let mut q = VecDeque::new();
    for (u, &d) in net_demand.iter().enumerate() {
        let sent = io[u].1 as i64 - io[u].0 as i64;
        if d < 0 && sent < -d {
            seen[u] = true;
            q.push_back(u);
        }
    }
    let mut adj = vec![Vec::new(); topo.n_nodes];
    for (e, &(u, v)) in topo.links.iter().enumerate() {
        if topo.link_domains[e].iter().any(|d| binding.contains(d)) {
            continue;
        }
        let f = flows.link_flows[e];
        let cap = yields[e] as i64;
        if f < cap {
            adj[u].push(v);
        }
        if -f < cap {
            adj[v].push(u);
        }
    }
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                q.push_back(v);
            }
        }
    }
    seen
}

/// Max-flow with bundle constraints as an LP; flows floored to integers.
fn route_lp(topo: &Topology, yields: &[u64], net_demand: &[i64], domain_caps: &[u64]) -> KeyFlows {
    // A tiny per-unit flow cost keeps the LP from circulating key in loops.
    let eps = 1e-6;
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let mut fwd = Vec::with_capacity(topo.links.len());
    let mut bwd = Vec::with_capacity(topo.links.len());
    for &g in yields {
        fwd.push(lp.add_var(-eps, (0.0, g as f64)));
        bwd.push(lp.add_var(-eps, (0.0, g as f64)));
    }
    let mut balance: Vec<Vec<(minilp::Variable, f64)>> = vec![Vec::new(); topo.n_nodes];
    for (e, &(u, v)) in topo.links.iter().enumerate() {
        lp.add_constraint(&[(fwd[e], 1.0), (bwd[e], 1.0)], ComparisonOp::Le, yields[e] as f64);
        balance[u].push((fwd[e], -1.0));
        balance[u].push((bwd[e], 1.0));
        balance[v].push((fwd[e], 1.0));
        balance[v].push((bwd[e], -1.0));
    }
    for (u, &d) in net_demand.iter().enumerate() {
        if d < 0 {
            let s = lp.add_var(0.0, (0.0, (-d) as f64));
            balance[u].push((s, 1.0));
        } else if d > 0 {
            let r = lp.add_var(1.0, (0.0, d as f64));
            balance[u].push((r, -1.0));
        }
        lp.add_constraint(&balance[u], ComparisonOp::Eq, 0.0);
    }
    for (d, &cap) in domain_caps.iter().enumerate() {
        let terms: Vec<_> = topo
            .link_domains
            .iter()
            .enumerate()
            .filter(|(_, ds)| ds.contains(&d))
            .flat_map(|(e, _)| [(fwd[e], 1.0), (bwd[e], 1.0)])
            .collect();
        if !terms.is_empty() {
            lp.add_constraint(&terms, ComparisonOp::Le, cap as f64);
        }
    }
    match lp.solve() {
        Ok(sol) => KeyFlows {
            link_flows: fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| {
                    let net = sol[f] - sol[b];
                    (net.abs() + 1e-7).floor().copysign(net) as i64
                })
                .collect(),
        },
        // The zero flow is always feasible, so the solver cannot report
        // infeasibility; fall back to it on numerical trouble.
        Err(_) => KeyFlows::zero(topo.links.len()),
    }
}

/// Flooring LP flows can leave a node sending more than it receives plus its
/// surplus. Trims outgoing flow until every node balances.
fn repair_balance(topo: &Topology, net_demand: &[i64], flows: &mut KeyFlows) {
    loop {
        let io = flows.node_io(topo);
        let mut changed = false;
        for (u, &(i, o)) in io.iter().enumerate() {
            let allowed = (-net_demand[u]).max(0);
            let mut excess = o as i64 - i as i64 - allowed;
            if excess <= 0 {
                continue;
            }
            for (e, &(a, b)) in topo.links.iter().enumerate() {
                let f = &mut flows.link_flows[e];
                let leaving = if a == u && *f > 0 {
                    *f
                } else if b == u && *f < 0 {
                    -*f
                } else {
                    0
                };
                let cut = leaving.min(excess);
                if cut > 0 {
                    *f -= cut * f.signum();
                    excess -= cut;
                    changed = true;
                }
                if excess == 0 {
                    break;
                }
            }
        }
        if !changed {
            return;
        }
    }
}

fn debug_check(topo: &Topology, yields: &[u64], domain_caps: &[u64], flows: &KeyFlows) {
    if cfg!(debug_assertions) {
        for (f, g) in flows.link_flows.iter().zip(yields) {
            assert!(f.unsigned_abs() <= *g, "link flow {f} exceeds yield {g}");
        }
        if !domain_caps.is_empty() {
            for (u, c) in flows.domain_usage(topo).iter().zip(domain_caps) {
                assert!(u <= c, "domain usage {u} exceeds cap {c}");
            }
        }
    }
}
