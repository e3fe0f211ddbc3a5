//! Clouds, links, VM catalog and machines.
//!
//! Links are delay functions, not packet queues: each one is an M/D/1 server
//! whose sojourn time depends only on the current arrival and service rates.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};
use crate::model::{InstanceId, ResourceDemand, ServiceId};

pub type NodeId = usize;
pub type MachineId = usize;

const CAPACITY_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VmType {
    pub name: String,
    pub memory_gb: f64,
    pub cores: u32,
    /// MB/s.
    pub max_bandwidth_mbps: f64,
    /// Dollars per hour.
    pub hourly_cost: f64,
}

impl VmType {
    pub fn new(name: &str, memory_gb: f64, cores: u32, max_bandwidth_mbps: f64, hourly_cost: f64) -> Self {
        VmType {
            name: name.to_string(),
            memory_gb,
            cores,
            max_bandwidth_mbps,
            hourly_cost,
        }
    }

    pub fn fits(&self, demand: &ResourceDemand) -> bool {
        demand.memory_gb <= self.memory_gb + CAPACITY_EPS && demand.cores <= self.cores
    }
}

/// EC2 on-demand configurations used for provisioning.
pub fn default_catalog() -> Vec<VmType> {
    vec![
        VmType::new("t2.small", 2.0, 1, 25.0, 0.034),
        VmType::new("t2.medium", 4.0, 2, 25.0, 0.068),
        VmType::new("t2.large", 8.0, 2, 25.0, 0.136),
        VmType::new("m4.large", 8.0, 2, 56.25, 0.140),
    ]
}

/// Cheapest catalog type covering the demand; ties by name.
pub fn nearest_vm_type(memory_gb: f64, cores: u32, catalog: &[VmType]) -> Result<&VmType> {
    let demand = ResourceDemand::new(memory_gb, cores);
    catalog
        .iter()
        .filter(|t| t.fits(&demand))
        .min_by(|a, b| {
            a.hourly_cost
                .total_cmp(&b.hourly_cost)
                .then_with(|| a.name.cmp(&b.name))
        })
        .ok_or(SchedError::NoFeasibleType { memory_gb, cores })
}

/// Sojourn time in seconds of an M/D/1 link with arrival rate `lambda_pps`
/// and deterministic service rate `mu_pps`.
pub fn link_delay(lambda_pps: f64, mu_pps: f64) -> Result<f64> {
    if !(mu_pps > 0.0) {
        return Err(SchedError::NonPositiveRate(mu_pps));
    }
    if !(lambda_pps >= 0.0) || lambda_pps >= mu_pps {
        return Err(SchedError::UnstableQueue {
            lambda: lambda_pps,
            mu: mu_pps,
        });
    }
    let rho = lambda_pps / mu_pps;
    Ok((1.0 / (2.0 * mu_pps)) * (2.0 - rho) / (1.0 - rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudKind {
    Micro,
    Core,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudNode {
    pub node_id: NodeId,
    pub kind: CloudKind,
    pub vm_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Link {
    pub endpoints: (NodeId, NodeId),
    pub mu_pps: f64,
    #[serde(default)]
    pub lambda_pps: f64,
}

/// Cloud nodes joined by links, with min-hop routes precomputed.
#[derive(Debug, Clone)]
pub struct Topology {
    nodes: Vec<CloudNode>,
    links: Vec<Link>,
    /// routes[src][dst] = link indices along the min-hop path.
    routes: Vec<Vec<Option<Vec<usize>>>>,
}

impl Topology {
    /// Node ids must be `0..nodes.len()` in order.
    pub fn new(nodes: Vec<CloudNode>, links: Vec<Link>) -> Result<Self> {
        for (i, n) in nodes.iter().enumerate() {
            if n.node_id != i {
                return Err(SchedError::validation(
                    format!("topology.nodes[{i}].node_id"),
                    format!("expected {i}, got {}", n.node_id),
                ));
            }
            if n.vm_slots == 0 {
                return Err(SchedError::validation(
                    format!("topology.nodes[{i}].vm_slots"),
                    "must be positive",
                ));
            }
        }
        for (i, l) in links.iter().enumerate() {
            let (a, b) = l.endpoints;
            if a >= nodes.len() || b >= nodes.len() || a == b {
                return Err(SchedError::validation(
                    format!("topology.links[{i}].endpoints"),
                    format!("({a}, {b}) must join two distinct known nodes"),
                ));
            }
            if !(l.mu_pps > 0.0) {
                return Err(SchedError::validation(format!("topology.links[{i}].mu_pps"), "must be positive"));
            }
            if !(l.lambda_pps >= 0.0) {
                return Err(SchedError::validation(
                    format!("topology.links[{i}].lambda_pps"),
                    "must be nonnegative",
                ));
            }
        }

        let n = nodes.len();
        let mut adjacency: Vec<Vec<(NodeId, usize)>> = vec![Vec::new(); n];
        for (i, l) in links.iter().enumerate() {
            let (a, b) = l.endpoints;
            adjacency[a].push((b, i));
            adjacency[b].push((a, i));
        }
        for adj in &mut adjacency {
            adj.sort_unstable();
        }

        // BFS from every source; neighbours are visited in ascending id order
        // so equal-hop routes resolve the same way on every run.
        let mut routes = vec![vec![None; n]; n];
        for src in 0..n {
            let mut via: Vec<Option<(NodeId, usize)>> = vec![None; n];
            let mut seen = vec![false; n];
            seen[src] = true;
            let mut queue = VecDeque::from([src]);
            while let Some(u) = queue.pop_front() {
                for &(v, link) in &adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        via[v] = Some((u, link));
                        queue.push_back(v);
                    }
                }
            }
            for dst in 0..n {
                if !seen[dst] {
                    continue;
                }
                let mut path = Vec::new();
                let mut cur = dst;
                while let Some((prev, link)) = via[cur] {
                    path.push(link);
                    cur = prev;
                }
                path.reverse();
                routes[src][dst] = Some(path);
            }
        }

        Ok(Topology { nodes, links, routes })
    }

    pub fn nodes(&self) -> &[CloudNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Option<&CloudNode> {
        self.nodes.get(id)
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn links_mut(&mut self) -> &mut [Link] {
        &mut self.links
    }

    /// Link indices along the min-hop route from `src` to `dst`.
    pub fn route(&self, src: NodeId, dst: NodeId) -> Result<&[usize]> {
        if src >= self.nodes.len() {
            return Err(SchedError::UnknownNode(src));
        }
        if dst >= self.nodes.len() {
            return Err(SchedError::UnknownNode(dst));
        }
        self.routes[src][dst]
            .as_deref()
            .ok_or(SchedError::NoPath { from: src, to: dst })
    }

    pub fn hops(&self, src: NodeId, dst: NodeId) -> Result<usize> {
        self.route(src, dst).map(<[usize]>::len)
    }

    /// Sum of link delays (seconds) along the min-hop route at each link's
    /// stored arrival rate.
    pub fn path_delay(&self, src: NodeId, dst: NodeId) -> Result<f64> {
        self.route(src, dst)?
            .iter()
            .map(|&l| link_delay(self.links[l].lambda_pps, self.links[l].mu_pps))
            .sum()
    }

    /// Like [`Topology::path_delay`] but with per-link arrival rates supplied
    /// by the caller and utilization capped at `max_rho`.
    pub fn path_delay_at(&self, src: NodeId, dst: NodeId, lambda: &[f64], max_rho: f64) -> Result<f64> {
        Ok(self
            .route(src, dst)?
            .iter()
            .map(|&l| {
                let mu = self.links[l].mu_pps;
                let capped = lambda[l].min(max_rho * mu);
                link_delay(capped, mu).expect("utilization capped below one")
            })
            .sum())
    }
}

/// Link rates and capacities of the default edge/core layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologySpec {
    pub micro_clouds: usize,
    pub core_clouds: usize,
    pub micro_vm_slots: usize,
    pub core_vm_slots: usize,
    pub core_core_mu_pps: f64,
    pub core_micro_mu_pps: f64,
    /// Explicit layout; replaces the generated one when present.
    pub nodes: Option<Vec<CloudNode>>,
    pub links: Option<Vec<Link>>,
    /// Machines present before the first request arrives.
    pub machines: Vec<InitialMachine>,
    /// Size of one link packet; transfers are split into packets of this size.
    pub packet_kb: f64,
    /// Window over which scheduled traffic is averaged into link arrival rates.
    pub load_window_ms: f64,
    /// Utilization cap applied when scheduled traffic saturates a link.
    pub max_link_utilization: f64,
    /// Boot time of a freshly provisioned machine.
    pub provision_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialMachine {
    pub node: NodeId,
    pub vm_type: String,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec {
            micro_clouds: 16,
            core_clouds: 4,
            micro_vm_slots: 4,
            core_vm_slots: 32,
            core_core_mu_pps: 12_500.0,
            core_micro_mu_pps: 3_125.0,
            nodes: None,
            links: None,
            machines: Vec::new(),
            packet_kb: 4.0,
            load_window_ms: 1000.0,
            max_link_utilization: 0.99,
            provision_latency_ms: 10.0,
        }
    }
}

impl TopologySpec {
    /// Micro clouds take ids `0..micro_clouds`, cores follow. Cores form a
    /// full mesh and each core serves a contiguous block of micro clouds.
    pub fn build(&self) -> Result<Topology> {
        if let (Some(nodes), Some(links)) = (&self.nodes, &self.links) {
            return Topology::new(nodes.clone(), links.clone());
        }
        if self.nodes.is_some() != self.links.is_some() {
            return Err(SchedError::validation(
                "topology",
                "explicit `nodes` and `links` must be given together",
            ));
        }
        if self.core_clouds == 0 {
            return Err(SchedError::validation("topology.core_clouds", "must be positive"));
        }
        let mut nodes = Vec::with_capacity(self.micro_clouds + self.core_clouds);
        for i in 0..self.micro_clouds {
            nodes.push(CloudNode {
                node_id: i,
                kind: CloudKind::Micro,
                vm_slots: self.micro_vm_slots,
            });
        }
        for c in 0..self.core_clouds {
            nodes.push(CloudNode {
                node_id: self.micro_clouds + c,
                kind: CloudKind::Core,
                vm_slots: self.core_vm_slots,
            });
        }
        let mut links = Vec::new();
        for a in 0..self.core_clouds {
            for b in a + 1..self.core_clouds {
                links.push(Link {
                    endpoints: (self.micro_clouds + a, self.micro_clouds + b),
                    mu_pps: self.core_core_mu_pps,
                    lambda_pps: 0.0,
                });
            }
        }
        let per_core = self.micro_clouds.div_ceil(self.core_clouds).max(1);
        for m in 0..self.micro_clouds {
            links.push(Link {
                endpoints: (m, self.micro_clouds + m / per_core),
                mu_pps: self.core_micro_mu_pps,
                lambda_pps: 0.0,
            });
        }
        Topology::new(nodes, links)
    }
}

/// Lifecycle of one hosted (instance, service) on a machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HostedState {
    /// Holds its full demand; reserved, resuming or executing.
    Running,
    /// Finished but not yet buffered; still holds its demand.
    Idle,
    /// Storage-only residual, counted as zero compute.
    Buffered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MachineState {
    Active,
    Buffered,
}

#[derive(Debug, Clone)]
struct Hosted {
    demand: ResourceDemand,
    state: HostedState,
}

#[derive(Debug, Clone)]
pub struct Machine {
    pub machine_id: MachineId,
    pub node_id: NodeId,
    pub vm_type: VmType,
    used_memory_gb: f64,
    used_cores: u32,
    hosted: BTreeMap<(InstanceId, ServiceId), Hosted>,
}

impl Machine {
    fn new(machine_id: MachineId, node_id: NodeId, vm_type: VmType) -> Self {
        Machine {
            machine_id,
            node_id,
            vm_type,
            used_memory_gb: 0.0,
            used_cores: 0,
            hosted: BTreeMap::new(),
        }
    }

    pub fn used_memory_gb(&self) -> f64 {
        self.used_memory_gb
    }

    pub fn used_cores(&self) -> u32 {
        self.used_cores
    }

    /// Max over memory and cores of the used fraction.
    pub fn utilization(&self) -> f64 {
        let mem = self.used_memory_gb / self.vm_type.memory_gb;
        let cores = f64::from(self.used_cores) / f64::from(self.vm_type.cores);
        mem.max(cores).clamp(0.0, 1.0)
    }

    pub fn remaining_fraction(&self) -> f64 {
        1.0 - self.utilization()
    }

    pub fn fits(&self, demand: &ResourceDemand) -> bool {
        self.used_memory_gb + demand.memory_gb <= self.vm_type.memory_gb + CAPACITY_EPS
            && self.used_cores + demand.cores <= self.vm_type.cores
    }

    pub fn state(&self) -> MachineState {
        if self.hosted.values().any(|h| h.state != HostedState::Buffered) {
            MachineState::Active
        } else {
            MachineState::Buffered
        }
    }

    pub fn hosts(&self, instance: InstanceId, service: ServiceId) -> bool {
        self.hosted.contains_key(&(instance, service))
    }

    pub fn hosted_state(&self, instance: InstanceId, service: ServiceId) -> Option<HostedState> {
        self.hosted.get(&(instance, service)).map(|h| h.state)
    }

    pub fn hosted(&self) -> impl Iterator<Item = ((InstanceId, ServiceId), HostedState)> + '_ {
        self.hosted.iter().map(|(&k, h)| (k, h.state))
    }

    pub fn is_empty(&self) -> bool {
        self.hosted.is_empty()
    }

    fn acquire(&mut self, demand: &ResourceDemand) -> Result<()> {
        if !self.fits(demand) {
            return Err(SchedError::InsufficientCapacity {
                machine: self.machine_id,
            });
        }
        self.used_memory_gb += demand.memory_gb;
        self.used_cores += demand.cores;
        Ok(())
    }

    fn release(&mut self, demand: &ResourceDemand) {
        self.used_memory_gb = (self.used_memory_gb - demand.memory_gb).max(0.0);
        self.used_cores -= demand.cores;
    }

    /// Places a service and holds its full demand from now on.
    pub fn host(&mut self, instance: InstanceId, service: ServiceId, demand: ResourceDemand) -> Result<()> {
        self.acquire(&demand)?;
        self.hosted.insert(
            (instance, service),
            Hosted {
                demand,
                state: HostedState::Running,
            },
        );
        Ok(())
    }

    /// Marks a running service as finished; it keeps its demand until buffered.
    pub fn finish(&mut self, instance: InstanceId, service: ServiceId) -> Result<()> {
        match self.hosted.get_mut(&(instance, service)) {
            Some(h) if h.state == HostedState::Running => {
                h.state = HostedState::Idle;
                Ok(())
            }
            _ => Err(SchedError::validation(
                format!("machine[{}]", self.machine_id),
                format!("({instance}, {service}) is not running"),
            )),
        }
    }

    /// Drops an idle service to its storage residual, releasing its compute.
    pub fn buffer_idle(&mut self, instance: InstanceId, service: ServiceId) -> Result<()> {
        let h = self
            .hosted
            .get_mut(&(instance, service))
            .ok_or(SchedError::NotIdle { instance, service })?;
        if h.state != HostedState::Idle {
            return Err(SchedError::NotIdle { instance, service });
        }
        h.state = HostedState::Buffered;
        let demand = h.demand;
        self.release(&demand);
        Ok(())
    }

    /// Brings a buffered service back to full demand. Returns the time at
    /// which it is up again.
    pub fn resume(
        &mut self,
        instance: InstanceId,
        service: ServiceId,
        now_ms: f64,
        resume_latency_ms: f64,
    ) -> Result<f64> {
        let demand = match self.hosted.get(&(instance, service)) {
            Some(h) if h.state == HostedState::Buffered => h.demand,
            _ => return Err(SchedError::NotBuffered { instance, service }),
        };
        self.acquire(&demand)?;
        self.hosted.get_mut(&(instance, service)).expect("checked").state = HostedState::Running;
        Ok(now_ms + resume_latency_ms)
    }

    /// Forgets buffered residuals of a finished instance.
    pub fn evict_instance(&mut self, instance: InstanceId) {
        self.hosted
            .retain(|&(inst, _), h| inst != instance || h.state != HostedState::Buffered);
    }
}

/// Provisioned machines and per-node slot usage.
#[derive(Debug, Clone)]
pub struct Cluster {
    machines: BTreeMap<MachineId, Machine>,
    slots_used: Vec<usize>,
    slot_limits: Vec<usize>,
    next_id: MachineId,
    /// Every machine ever provisioned, with its hourly rate.
    leases: Vec<(MachineId, String, f64)>,
}

impl Cluster {
    pub fn new(topology: &Topology) -> Self {
        Cluster {
            machines: BTreeMap::new(),
            slots_used: vec![0; topology.nodes().len()],
            slot_limits: topology.nodes().iter().map(|n| n.vm_slots).collect(),
            next_id: 0,
            leases: Vec::new(),
        }
    }

    pub fn provision_machine(&mut self, node: NodeId, vm_type: &VmType) -> Result<MachineId> {
        let limit = *self.slot_limits.get(node).ok_or(SchedError::UnknownNode(node))?;
        if self.slots_used[node] >= limit {
            return Err(SchedError::NodeFull(node));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.slots_used[node] += 1;
        self.machines.insert(id, Machine::new(id, node, vm_type.clone()));
        self.leases.push((id, vm_type.name.clone(), vm_type.hourly_cost));
        Ok(id)
    }

    pub fn release_machine(&mut self, id: MachineId) -> Result<()> {
        let machine = self.machines.get(&id).ok_or(SchedError::UnknownMachine(id))?;
        if !machine.is_empty() {
            return Err(SchedError::MachineBusy(id));
        }
        let node = machine.node_id;
        self.machines.remove(&id);
        self.slots_used[node] -= 1;
        Ok(())
    }

    pub fn has_free_slot(&self, node: NodeId) -> bool {
        self.slots_used.get(node).zip(self.slot_limits.get(node)).is_some_and(|(u, l)| u < l)
    }

    pub fn slots_used(&self, node: NodeId) -> usize {
        self.slots_used[node]
    }

    pub fn machine(&self, id: MachineId) -> Option<&Machine> {
        self.machines.get(&id)
    }

    pub fn machine_mut(&mut self, id: MachineId) -> Option<&mut Machine> {
        self.machines.get_mut(&id)
    }

    /// Machines in ascending id order.
    pub fn machines(&self) -> impl Iterator<Item = &Machine> {
        self.machines.values()
    }

    pub fn machines_mut(&mut self) -> impl Iterator<Item = &mut Machine> {
        self.machines.values_mut()
    }

    pub fn leases(&self) -> &[(MachineId, String, f64)] {
        &self.leases
    }
}
