//! Micro-services, service function chains and per-request chain instances.
//!
//! A [`ServiceChain`] is a precedence DAG over micro-service ids. An edge
//! `(pred, succ)` means `succ` may only start after `pred` has finished.
//! Chains are immutable once built and are shared behind [`Arc`] by every
//! [`ChainInstance`] created for a request.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SchedError};

pub type ServiceId = u32;
pub type ChainId = u32;
pub type RequestId = u64;
pub type InstanceId = u64;

/// Compute and memory a running service instance occupies on its machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceDemand {
    pub memory_gb: f64,
    pub cores: u32,
}

impl ResourceDemand {
    pub const ZERO: ResourceDemand = ResourceDemand {
        memory_gb: 0.0,
        cores: 0,
    };

    pub fn new(memory_gb: f64, cores: u32) -> Self {
        ResourceDemand { memory_gb, cores }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroServiceDef {
    pub id: ServiceId,
    pub exec_time_ms: f64,
    /// Data handed to each successor per handled request.
    pub data_out_kb: f64,
    /// Requests per second one instance handles at average load.
    pub capacity_rps: f64,
    pub demand: ResourceDemand,
}

/// Sampling ranges for generated service definitions. Bounds are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceRanges {
    pub exec_time_ms: (f64, f64),
    pub data_out_kb: (f64, f64),
    pub capacity_rps: (f64, f64),
    pub memory_gb: (f64, f64),
    pub cores: (u32, u32),
}

impl Default for ServiceRanges {
    fn default() -> Self {
        ServiceRanges {
            exec_time_ms: (10.0, 100.0),
            data_out_kb: (5.0, 20.0),
            capacity_rps: (20.0, 100.0),
            memory_gb: (0.5, 4.0),
            cores: (1, 2),
        }
    }
}

impl ServiceRanges {
    /// Samples one definition. Memory is drawn on a 0.5 GB grid so demands
    /// map cleanly onto catalog sizes.
    pub fn sample<R: Rng + ?Sized>(&self, id: ServiceId, rng: &mut R) -> MicroServiceDef {
        let uniform = |rng: &mut R, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        };
        let exec_time_ms = uniform(rng, self.exec_time_ms);
        let data_out_kb = uniform(rng, self.data_out_kb);
        let capacity_rps = uniform(rng, self.capacity_rps);
        let (mlo, mhi) = self.memory_gb;
        let steps = ((mhi - mlo) / 0.5).floor().max(0.0) as u32;
        let memory_gb = mlo + 0.5 * f64::from(rng.random_range(0..=steps));
        let cores = rng.random_range(self.cores.0..=self.cores.1);
        MicroServiceDef {
            id,
            exec_time_ms,
            data_out_kb,
            capacity_rps,
            demand: ResourceDemand::new(memory_gb, cores),
        }
    }
}

/// Service definitions keyed by id, shared by every chain of a scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ServiceDefs(BTreeMap<ServiceId, MicroServiceDef>);

impl ServiceDefs {
    pub fn new() -> Self {
        ServiceDefs(BTreeMap::new())
    }

    pub fn insert(&mut self, def: MicroServiceDef) {
        self.0.insert(def.id, def);
    }

    pub fn get(&self, id: ServiceId) -> Option<&MicroServiceDef> {
        self.0.get(&id)
    }

    /// Panicking lookup for ids already validated against the chain set.
    pub fn def(&self, id: ServiceId) -> &MicroServiceDef {
        self.0
            .get(&id)
            .unwrap_or_else(|| panic!("no definition for service {id}"))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MicroServiceDef> {
        self.0.values()
    }

    /// Samples a definition for every service of `chains` in ascending id order.
    pub fn sample<R: Rng + ?Sized>(
        chains: &[Arc<ServiceChain>],
        ranges: &ServiceRanges,
        rng: &mut R,
    ) -> Self {
        let ids: BTreeSet<ServiceId> = chains.iter().flat_map(|c| c.nodes().iter().copied()).collect();
        let mut defs = ServiceDefs::new();
        for id in ids {
            defs.insert(ranges.sample(id, rng));
        }
        defs
    }
}

/// A validated precedence DAG of micro-services.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceChain {
    id: ChainId,
    nodes: Vec<ServiceId>,
    edges: Vec<(ServiceId, ServiceId)>,
    preds: BTreeMap<ServiceId, Vec<ServiceId>>,
    succs: BTreeMap<ServiceId, Vec<ServiceId>>,
}

/// Builds and validates a chain. Duplicate nodes and edges are collapsed.
pub fn build_chain(
    chain_id: ChainId,
    nodes: &[ServiceId],
    edges: &[(ServiceId, ServiceId)],
) -> Result<ServiceChain> {
    let node_set: BTreeSet<ServiceId> = nodes.iter().copied().collect();
    if node_set.is_empty() {
        return Err(SchedError::EmptyChain { chain: chain_id });
    }
    let edge_set: BTreeSet<(ServiceId, ServiceId)> = edges.iter().copied().collect();
    for &(from, to) in &edge_set {
        if !node_set.contains(&from) || !node_set.contains(&to) {
            return Err(SchedError::DanglingEdge {
                chain: chain_id,
                from,
                to,
            });
        }
    }

    let mut preds: BTreeMap<ServiceId, Vec<ServiceId>> =
        node_set.iter().map(|&n| (n, Vec::new())).collect();
    let mut succs = preds.clone();
    for &(from, to) in &edge_set {
        succs.get_mut(&from).expect("validated").push(to);
        preds.get_mut(&to).expect("validated").push(from);
    }

    // Kahn's algorithm; anything left unvisited sits on a cycle.
    let mut indegree: BTreeMap<ServiceId, usize> =
        preds.iter().map(|(&n, p)| (n, p.len())).collect();
    let mut queue: VecDeque<ServiceId> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut visited = 0;
    while let Some(n) = queue.pop_front() {
        visited += 1;
        for &s in &succs[&n] {
            let d = indegree.get_mut(&s).expect("validated");
            *d -= 1;
            if *d == 0 {
                queue.push_back(s);
            }
        }
    }
    if visited != node_set.len() {
        return Err(SchedError::CycleDetected { chain: chain_id });
    }

    if let Some(&(from, to)) = edge_set.iter().find(|(from, to)| from >= to) {
        return Err(SchedError::OrderViolation {
            chain: chain_id,
            from,
            to,
        });
    }

    Ok(ServiceChain {
        id: chain_id,
        nodes: node_set.into_iter().collect(),
        edges: edge_set.into_iter().collect(),
        preds,
        succs,
    })
}

impl ServiceChain {
    pub fn id(&self) -> ChainId {
        self.id
    }

    /// Service ids in ascending order.
    pub fn nodes(&self) -> &[ServiceId] {
        &self.nodes
    }

    /// Edges in ascending order.
    pub fn edges(&self) -> &[(ServiceId, ServiceId)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, service: ServiceId) -> bool {
        self.preds.contains_key(&service)
    }

    pub fn predecessors(&self, service: ServiceId) -> &[ServiceId] {
        self.preds.get(&service).map_or(&[], Vec::as_slice)
    }

    pub fn successors(&self, service: ServiceId) -> &[ServiceId] {
        self.succs.get(&service).map_or(&[], Vec::as_slice)
    }

    pub fn sources(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.preds.iter().filter(|(_, p)| p.is_empty()).map(|(&n, _)| n)
    }

    /// Number of distinct services reachable from `service`, excluding itself.
    pub fn transitive_dependents(&self, service: ServiceId) -> Result<usize> {
        if !self.contains(service) {
            return Err(SchedError::UnknownService {
                chain: self.id,
                service,
            });
        }
        let mut seen = BTreeSet::new();
        let mut stack = vec![service];
        while let Some(n) = stack.pop() {
            for &s in self.successors(n) {
                if seen.insert(s) {
                    stack.push(s);
                }
            }
        }
        Ok(seen.len())
    }

    pub fn immediate_dependents(&self, service: ServiceId) -> Result<usize> {
        if !self.contains(service) {
            return Err(SchedError::UnknownService {
                chain: self.id,
                service,
            });
        }
        Ok(self.successors(service).len())
    }

    /// Longest path through the chain weighted by `weight` per service.
    pub fn critical_path(&self, weight: impl Fn(ServiceId) -> f64) -> f64 {
        // Ids ascend along every edge, so ascending id order is topological.
        let mut finish: BTreeMap<ServiceId, f64> = BTreeMap::new();
        for &n in &self.nodes {
            let ready = self
                .predecessors(n)
                .iter()
                .map(|p| finish[p])
                .fold(0.0, f64::max);
            finish.insert(n, ready + weight(n));
        }
        finish.values().copied().fold(0.0, f64::max)
    }
}

/// Chain id, nodes and edges.
pub type ChainShape = (ChainId, Vec<ServiceId>, Vec<(ServiceId, ServiceId)>);

/// Node and edge lists of the four canonical chains over services 1..=20.
pub fn canonical_chain_specs() -> Vec<ChainShape> {
    vec![
        (1, (1..=5).collect(), vec![(1, 2), (2, 3), (3, 4), (3, 5)]),
        (
            2,
            (6..=10).collect(),
            vec![(6, 7), (6, 8), (7, 9), (8, 9), (9, 10)],
        ),
        (3, (11..=14).collect(), vec![(11, 12), (12, 13), (12, 14)]),
        (
            4,
            (15..=20).collect(),
            vec![(15, 16), (15, 17), (16, 18), (17, 18), (18, 19), (18, 20)],
        ),
    ]
}

/// The four evaluation chains covering services 1..=20.
pub fn canonical_sfcs() -> Vec<ServiceChain> {
    canonical_chain_specs()
        .into_iter()
        .map(|(id, nodes, edges)| build_chain(id, &nodes, &edges).expect("canonical chains are valid"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ServiceStatus {
    Waiting,
    Ready,
    Running,
    Done,
}

/// Runtime progress of one request through its chain.
#[derive(Debug, Clone)]
pub struct ChainInstance {
    pub instance_id: InstanceId,
    pub request_id: RequestId,
    chain: Arc<ServiceChain>,
    status: BTreeMap<ServiceId, ServiceStatus>,
}

impl ChainInstance {
    pub fn new(instance_id: InstanceId, request_id: RequestId, chain: Arc<ServiceChain>) -> Self {
        let status = chain
            .nodes()
            .iter()
            .map(|&n| (n, ServiceStatus::Waiting))
            .collect();
        ChainInstance {
            instance_id,
            request_id,
            chain,
            status,
        }
    }

    pub fn chain(&self) -> &Arc<ServiceChain> {
        &self.chain
    }

    pub fn chain_id(&self) -> ChainId {
        self.chain.id()
    }

    pub fn status(&self, service: ServiceId) -> Option<ServiceStatus> {
        self.status.get(&service).copied()
    }

    /// Waiting services whose predecessors are all done. Marks nothing.
    pub fn ready_services(&self) -> Vec<ServiceId> {
        self.status
            .iter()
            .filter(|(_, &st)| st == ServiceStatus::Waiting)
            .filter(|(&n, _)| {
                self.chain
                    .predecessors(n)
                    .iter()
                    .all(|p| self.status[p] == ServiceStatus::Done)
            })
            .map(|(&n, _)| n)
            .collect()
    }

    /// Moves `service` one step forward. Only `waiting -> ready -> running ->
    /// done` is accepted, and `ready` requires every predecessor done.
    pub fn advance(&mut self, service: ServiceId, to: ServiceStatus) -> Result<()> {
        let from = self.status(service).ok_or(SchedError::UnknownService {
            chain: self.chain.id(),
            service,
        })?;
        let legal = matches!(
            (from, to),
            (ServiceStatus::Waiting, ServiceStatus::Ready)
                | (ServiceStatus::Ready, ServiceStatus::Running)
                | (ServiceStatus::Running, ServiceStatus::Done)
        );
        let preds_done = self
            .chain
            .predecessors(service)
            .iter()
            .all(|p| self.status[p] == ServiceStatus::Done);
        if !legal || !preds_done {
            return Err(SchedError::validation(
                format!("instance[{}].service[{service}]", self.instance_id),
                format!("illegal transition {from:?} -> {to:?}"),
            ));
        }
        self.status.insert(service, to);
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.status.values().all(|&s| s == ServiceStatus::Done)
    }

    pub fn services_in(&self, wanted: ServiceStatus) -> impl Iterator<Item = ServiceId> + '_ {
        self.status
            .iter()
            .filter(move |(_, &s)| s == wanted)
            .map(|(&n, _)| n)
    }
}

/// An arriving demand for one chain with its delay and cost tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRequest {
    pub request_id: RequestId,
    pub chain_id: ChainId,
    pub arrival_time_ms: f64,
    pub delay_sla_ms: f64,
    pub cost_sla: f64,
}

impl UserRequest {
    pub fn new(
        request_id: RequestId,
        chain_id: ChainId,
        arrival_time_ms: f64,
        delay_sla_ms: f64,
        cost_sla: f64,
    ) -> Result<Self> {
        if !(arrival_time_ms >= 0.0) {
            return Err(SchedError::validation("arrival_time_ms", "must be nonnegative"));
        }
        if !(delay_sla_ms > 0.0) {
            return Err(SchedError::validation("delay_sla_ms", "must be positive"));
        }
        if !(cost_sla > 0.0) {
            return Err(SchedError::validation("cost_sla", "must be positive"));
        }
        Ok(UserRequest {
            request_id,
            chain_id,
            arrival_time_ms,
            delay_sla_ms,
            cost_sla,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sfc(i: usize) -> Arc<ServiceChain> {
        Arc::new(canonical_sfcs().swap_remove(i))
    }

    #[test]
    fn sfc1_branches_after_three() {
        let chain = build_chain(1, &[1, 2, 3, 4, 5], &[(1, 2), (2, 3), (3, 4), (3, 5)]).unwrap();
        assert_eq!(chain.successors(3), &[4, 5]);
        assert_eq!(chain.predecessors(4), &[3]);
        assert_eq!(chain.sources().collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn singleton_chain_is_valid() {
        let chain = build_chain(9, &[7], &[]).unwrap();
        assert_eq!(chain.nodes(), &[7]);
        assert!(chain.edges().is_empty());
    }

    #[test]
    fn rejects_cycles_and_dangling_edges() {
        assert_eq!(
            build_chain(1, &[1, 2], &[(1, 2), (2, 1)]),
            Err(SchedError::CycleDetected { chain: 1 })
        );
        assert_eq!(
            build_chain(1, &[1], &[(1, 1)]),
            Err(SchedError::CycleDetected { chain: 1 })
        );
        assert_eq!(
            build_chain(1, &[1, 2], &[(1, 3)]),
            Err(SchedError::DanglingEdge { chain: 1, from: 1, to: 3 })
        );
        assert_eq!(build_chain(1, &[], &[]), Err(SchedError::EmptyChain { chain: 1 }));
        assert!(matches!(
            build_chain(1, &[1, 2, 3], &[(1, 3), (3, 2)]),
            Err(SchedError::OrderViolation { from: 3, to: 2, .. })
        ));
    }

    #[test]
    fn canonical_chain_shapes() {
        let chains = canonical_sfcs();
        assert_eq!(chains.len(), 4);
        let c1 = &chains[0];
        for w in [1, 2, 3, 4].windows(2) {
            assert!(c1.successors(w[0]).contains(&w[1]));
        }
        assert!(c1.successors(3).contains(&5));
        let c2 = &chains[1];
        assert_eq!(c2.predecessors(9), &[7, 8]);
        let c4 = &chains[3];
        // 15 -> 17 -> 18 -> 20
        assert!(c4.successors(15).contains(&17));
        assert!(c4.successors(17).contains(&18));
        assert!(c4.successors(18).contains(&20));
    }

    #[test]
    fn canonical_ids_partition_one_to_twenty() {
        let mut seen = BTreeSet::new();
        for chain in canonical_sfcs() {
            for &n in chain.nodes() {
                assert!(seen.insert(n), "service {n} appears in two chains");
            }
        }
        assert_eq!(seen, (1..=20).collect());
    }

    #[test]
    fn ready_services_follow_precedence() {
        let mut inst = ChainInstance::new(0, 0, sfc(0));
        assert_eq!(inst.ready_services(), vec![1]);
        for s in [1, 2] {
            inst.advance(s, ServiceStatus::Ready).unwrap();
            inst.advance(s, ServiceStatus::Running).unwrap();
            inst.advance(s, ServiceStatus::Done).unwrap();
        }
        assert_eq!(inst.ready_services(), vec![3]);
        for st in [ServiceStatus::Ready, ServiceStatus::Running, ServiceStatus::Done] {
            inst.advance(3, st).unwrap();
        }
        assert_eq!(inst.ready_services(), vec![4, 5]);
        // Querying does not mark anything.
        assert_eq!(inst.status(4), Some(ServiceStatus::Waiting));
    }

    #[test]
    fn fresh_sfc2_instance_exposes_only_its_source() {
        let inst = ChainInstance::new(3, 3, sfc(1));
        assert_eq!(inst.ready_services(), vec![6]);
    }

    #[test]
    fn illegal_transitions_are_rejected() {
        let mut inst = ChainInstance::new(0, 0, sfc(0));
        assert!(inst.advance(1, ServiceStatus::Running).is_err());
        assert!(inst.advance(2, ServiceStatus::Ready).is_err());
        inst.advance(1, ServiceStatus::Ready).unwrap();
        assert!(inst.advance(1, ServiceStatus::Ready).is_err());
    }

    #[test]
    fn dependents_counts() {
        let chains = canonical_sfcs();
        assert_eq!(chains[0].transitive_dependents(3), Ok(2));
        assert_eq!(chains[0].transitive_dependents(4), Ok(0));
        assert_eq!(chains[1].transitive_dependents(6), Ok(4));
        assert_eq!(chains[1].immediate_dependents(6), Ok(2));
        assert_eq!(
            chains[0].transitive_dependents(6),
            Err(SchedError::UnknownService { chain: 1, service: 6 })
        );
    }

    #[test]
    fn critical_path_of_sfc1() {
        let c1 = &canonical_sfcs()[0];
        let w = |s: ServiceId| f64::from(s) * 10.0;
        // 10 + 20 + 30 + max(40, 50)
        assert_eq!(c1.critical_path(w), 110.0);
    }

    #[test]
    fn request_sla_bounds_must_be_positive() {
        assert!(UserRequest::new(0, 1, 0.0, 0.0, 1.0).is_err());
        assert!(UserRequest::new(0, 1, 0.0, 1.0, 0.0).is_err());
        assert!(UserRequest::new(0, 1, 0.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn sampled_defs_respect_ranges() {
        use rand::SeedableRng;
        let chains: Vec<_> = canonical_sfcs().into_iter().map(Arc::new).collect();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let defs = ServiceDefs::sample(&chains, &ServiceRanges::default(), &mut rng);
        assert_eq!(defs.len(), 20);
        for d in defs.iter() {
            assert!((10.0..=100.0).contains(&d.exec_time_ms));
            assert!((5.0..=20.0).contains(&d.data_out_kb));
            assert!((20.0..=100.0).contains(&d.capacity_rps));
            assert!((0.5..=4.0).contains(&d.demand.memory_gb));
            assert!((1..=2).contains(&d.demand.cores));
        }
    }
}
